#include <iostream>
#include <string>
#include <vector>

#include "rceed/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rceed::cli::run(args, std::cout, std::cerr);
}
