#include "vlconn/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return vlconn::cli::dispatch(args, std::cout, std::cerr);
}
