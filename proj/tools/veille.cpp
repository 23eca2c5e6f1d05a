#include <iostream>
#include <string>
#include <vector>

#include "veille/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return veille::execute(args, std::cout, std::cerr);
}
