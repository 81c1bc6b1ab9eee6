#include <iostream>
#include <string>
#include <vector>

#include "pclda/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pclda::cli::run(args, std::cerr);
}
