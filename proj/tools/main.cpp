#include <iostream>
#include <string>
#include <vector>

#include "hyneter/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hyneter::cli_dispatch(args, std::cout, std::cerr);
}
