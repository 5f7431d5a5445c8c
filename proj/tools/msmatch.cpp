#include "msmatch/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return msmatch::cli::run_cli(args, std::cout, std::cerr);
}
