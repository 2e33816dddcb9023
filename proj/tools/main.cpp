#include "cli.hpp"

#include "rcnn/memory.hpp"

#include <iostream>

int main(int argc, char** argv) {
  rcnn::keep_large_allocations_on_heap();
  return rcnn::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
