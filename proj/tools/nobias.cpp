#include <string>
#include <vector>

#include "nobias/cli.hpp"

int main(int argc, char** argv) {
  return nobias::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
