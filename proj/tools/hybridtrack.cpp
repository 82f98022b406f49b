#include <iostream>

#include "hybridtrack/cli.hpp"

int main(int argc, char** argv) { return hybridtrack::cli::run(argc, argv, std::cout, std::cerr); }
