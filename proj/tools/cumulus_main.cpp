#include <string>
#include <vector>

#include "cumulus/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cumulus::run_cli(args);
}
