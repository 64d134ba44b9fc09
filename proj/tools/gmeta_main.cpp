#include <iostream>

#include "gmeta/cli.hpp"

int main(int argc, char** argv) { return gmeta::run_cli(argc, argv, std::cout, std::cerr); }
