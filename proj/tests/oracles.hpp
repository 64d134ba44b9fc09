// Reference implementations used only by the tests. Each one avoids the code
// path it checks: brute-force search, naive loops, elimination by hand.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

inline double max_abs_diff(const MatrixXd& a, const MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline double max_rel_diff(const MatrixXd& a, const MatrixXd& b, double floor = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double scale = std::max({std::abs(a(i, j)), std::abs(b(i, j)), floor});
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / scale);
    }
  }
  return worst;
}

// Central differences, step 1e-6 * max(1, |x_j|).
inline MatrixXd fd_jacobian(const std::function<VectorXd(const VectorXd&)>& f, const VectorXd& x) {
  const VectorXd f0 = f(x);
  MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
    VectorXd xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    jac.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return jac;
}

inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x) {
  return fd_jacobian([&](const VectorXd& v) { return VectorXd::Constant(1, f(v)); }, x).row(0).transpose();
}

// Gauss-Jordan inverse with partial pivoting.
inline MatrixXd gauss_jordan_inverse(MatrixXd a) {
  const Eigen::Index n = a.rows();
  MatrixXd inv = MatrixXd::Identity(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index piv = c;
    for (Eigen::Index r = c + 1; r < n; ++r) {
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    }
    a.row(c).swap(a.row(piv));
    inv.row(c).swap(inv.row(piv));
    const double d = a(c, c);
    a.row(c) /= d;
    inv.row(c) /= d;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      a.row(r) -= f * a.row(c);
      inv.row(r) -= f * inv.row(c);
    }
  }
  return inv;
}

// Rank by Gaussian elimination with full pivoting.
inline Eigen::Index pivoted_rank(MatrixXd a, double rel_tol) {
  const double scale = a.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0;
  Eigen::Index rank = 0;
  const Eigen::Index steps = std::min(a.rows(), a.cols());
  for (Eigen::Index k = 0; k < steps; ++k) {
    Eigen::Index pr = k, pc = k;
    double best = 0.0;
    for (Eigen::Index r = k; r < a.rows(); ++r) {
      for (Eigen::Index c = k; c < a.cols(); ++c) {
        if (std::abs(a(r, c)) > best) {
          best = std::abs(a(r, c));
          pr = r;
          pc = c;
        }
      }
    }
    if (best <= rel_tol * scale) break;
    a.row(k).swap(a.row(pr));
    a.col(k).swap(a.col(pc));
    for (Eigen::Index r = k + 1; r < a.rows(); ++r) a.row(r) -= (a(r, k) / a(k, k)) * a.row(k);
    ++rank;
  }
  return rank;
}

// Nelder-Mead simplex minimizer.
inline VectorXd nelder_mead(const std::function<double(const VectorXd&)>& f, const VectorXd& x0, double step,
                            double ftol, int max_evals) {
  const Eigen::Index n = x0.size();
  std::vector<VectorXd> pts{x0};
  for (Eigen::Index j = 0; j < n; ++j) {
    VectorXd p = x0;
    p(j) += step;
    pts.push_back(p);
  }
  std::vector<double> vals;
  for (const auto& p : pts) vals.push_back(f(p));
  int evals = static_cast<int>(pts.size());
  std::vector<std::size_t> idx(pts.size());
  while (evals < max_evals) {
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = idx.front(), worst = idx.back(), second = idx[idx.size() - 2];
    if (std::abs(vals[worst] - vals[best]) <= ftol * (std::abs(vals[best]) + 1e-300) + 1e-300) {
      double spread = 0.0;
      for (const auto& p : pts) spread = std::max(spread, (p - pts[best]).cwiseAbs().maxCoeff());
      if (spread < 1e-12) break;
    }
    VectorXd centroid = VectorXd::Zero(n);
    for (std::size_t i : idx) {
      if (i != worst) centroid += pts[i];
    }
    centroid /= static_cast<double>(n);
    const VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = f(xr);
    ++evals;
    if (fr < vals[best]) {
      const VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = f(xe);
      ++evals;
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
    } else if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
    } else {
      const VectorXd xc = centroid + 0.5 * (pts[worst] - centroid);
      const double fc = f(xc);
      ++evals;
      if (fc < vals[worst]) {
        pts[worst] = xc;
        vals[worst] = fc;
      } else {
        for (std::size_t i : idx) {
          if (i == best) continue;
          pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
          vals[i] = f(pts[i]);
          ++evals;
        }
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < vals.size(); ++i) {
    if (vals[i] < vals[best]) best = i;
  }
  return pts[best];
}

// Newton root finder on a finite-difference Jacobian.
inline VectorXd fd_newton_root(const std::function<VectorXd(const VectorXd&)>& f, VectorXd x, double tol,
                               int max_iter) {
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd fx = f(x);
    if (fx.cwiseAbs().maxCoeff() < tol) break;
    const MatrixXd j = fd_jacobian(f, x);
    x -= gauss_jordan_inverse(j) * fx;
  }
  return x;
}

// Nested grid refinement maximizer in two dimensions.
inline Eigen::Vector2d grid_argmax2(const std::function<double(double, double)>& f, Eigen::Vector2d center,
                                    double half_width, int levels) {
  const int m = 40;
  for (int level = 0; level < levels; ++level) {
    double best = -INFINITY;
    Eigen::Vector2d arg = center;
    for (int i = -m; i <= m; ++i) {
      for (int j = -m; j <= m; ++j) {
        const double a = center(0) + half_width * i / m;
        const double b = center(1) + half_width * j / m;
        const double v = f(a, b);
        if (v > best) {
          best = v;
          arg = {a, b};
        }
      }
    }
    center = arg;
    half_width *= 2.0 / m;
  }
  return center;
}

inline MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(rng);
  }
  return m;
}

inline MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index d, double ridge = 0.1) {
  const MatrixXd a = random_matrix(rng, d, d);
  return a * a.transpose() / static_cast<double>(d) + ridge * MatrixXd::Identity(d, d);
}

// Design with a leading column of ones.
inline MatrixXd random_design(std::mt19937_64& rng, Eigen::Index n, Eigen::Index p) {
  MatrixXd x = random_matrix(rng, n, p);
  x.col(0).setOnes();
  return x;
}

}  // namespace oracle
