#include <iostream>

#include "itct/cli.hpp"

int main(int argc, char** argv) { return itct::cli::run(argc, argv, std::cout, std::cerr); }
