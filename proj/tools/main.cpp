#include <iostream>
#include <string>
#include <vector>

#include "compress/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return compress::cli::run(args, std::cout, std::cerr);
}
