#include <iostream>

#include "ucvm/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ucvm::cli::run(args, std::cout, std::cerr);
}
