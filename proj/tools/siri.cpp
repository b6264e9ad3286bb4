#include "siri/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return siri::run_cli(argc, argv, std::cout, std::cerr); }
