#include <iostream>

#include "sonotrap/cli.hpp"

int main(int argc, char** argv) { return sonotrap::run_cli(argc, argv, std::cout, std::cerr); }
