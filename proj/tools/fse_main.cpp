#include <string>
#include <vector>

#include "fse/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fse::run_cli(std::move(args));
}
