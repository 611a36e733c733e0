#include <iostream>
#include <string>
#include <vector>

#include "mtsf/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return mtsf::cli::run(args, std::cout, std::cerr);
}
