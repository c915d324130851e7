#include "jarvis/cli/commands.hpp"

#include <iostream>

int main(int argc, char** argv) { return jarvis::run_cli(argc, argv, std::cout, std::cerr); }
