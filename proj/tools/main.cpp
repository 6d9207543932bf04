#include <cstdlib>
#include <vector>
#include <string>

#include "voxseg/cli.hpp"

int main(int argc, char** argv) {
  setenv("OPENBLAS_NUM_THREADS", "1", 1);
  std::vector<std::string> args(argv + 1, argv + argc);
  return voxseg::run_cli(args);
}
