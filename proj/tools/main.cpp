#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return featclust::cli::run_cli(argc, argv, std::cerr); }
