#include <iostream>
#include <string>
#include <vector>

#include "mmfl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return mmfl::run_cli(args, std::cout, std::cerr);
}
