#include <iostream>
#include <string>
#include <vector>

#include "hrank/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hrank::run_cli(args, std::cout, std::cerr);
}
