#include <iostream>
#include <string>
#include <vector>

#include "slr/cli.hpp"
#include "slr/runtime.hpp"

int main(int argc, char** argv) {
  slr::configure_allocator();
  return slr::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
