#include <iostream>

#include "gaze/cli.hpp"

int main(int argc, char** argv) { return gaze::run_cli(argc, argv, std::cout, std::cerr); }
