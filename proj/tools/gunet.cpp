#include <string>
#include <vector>

#include "gunet/cli.hpp"

int main(int argc, char** argv) {
  return gunet::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
