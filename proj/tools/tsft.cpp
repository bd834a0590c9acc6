#include <iostream>

#include "tsft/cli.hpp"

int main(int argc, char** argv) { return tsft::run_cli(argc, argv, std::cout, std::cerr); }
