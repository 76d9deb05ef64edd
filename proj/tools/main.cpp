#include <iostream>

#include "cli/cli.hpp"

int main(int argc, char** argv) {
  return polypforge::cli::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
