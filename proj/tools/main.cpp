#include <iostream>

#include "dreid/cli.hpp"

int main(int argc, char** argv) {
  return dreid::cli::dispatch({argv + 1, argv + argc}, std::cout, std::cerr);
}
