#include <iostream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "gramtex/cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Keep large activation buffers on the heap instead of fresh mmaps per evaluation.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  std::vector<std::string> args(argv + 1, argv + argc);
  return gramtex::run_cli(args, std::cout, std::cerr);
}
