#include <iostream>
#include <string>
#include <vector>

#include "twostage/cli.hpp"

int main(int argc, char** argv) {
  return twostage::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
