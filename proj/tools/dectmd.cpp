// dectmd: batch CLI for image-domain dual-energy CT material decomposition.
// See README.md for the config key schema of each subcommand.

#include "multra/cli.hpp"

#include <string>
#include <vector>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return multra::cli::run(args);
}
