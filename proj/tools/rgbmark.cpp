#include <iostream>

#include "rgbmark/cli/cli.hpp"

int main(int argc, char** argv) { return rgbmark::cli::run(argc, argv, std::cout, std::cerr); }
