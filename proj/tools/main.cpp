#include <vector>

#include "mvoc/cli.hpp"

int main(int argc, char** argv) {
  return mvoc::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
