#include <iostream>

#include "spreadout/cli.hpp"

int main(int argc, char** argv) { return spreadout::cli::run(argc, argv, std::cout, std::cerr); }
