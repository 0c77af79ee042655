#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "ritini/bench.hpp"

int main(int argc, char** argv) {
  ritini::bench::tune_allocator();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
