#include <iostream>
#include <string>
#include <vector>

#include "cds/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return cds::run_cli(args, std::cout, std::cerr);
}
