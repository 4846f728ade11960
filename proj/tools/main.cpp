#include <iostream>

#include "m4c/cli/cli.hpp"

int main(int argc, char** argv) { return m4c::cli::run(argc, argv, std::cout, std::cerr); }
