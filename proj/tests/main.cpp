#include <cstdlib>

#include <gtest/gtest.h>

int main(int argc, char** argv) {
  // Single-threaded BLAS keeps floating-point accumulation order fixed.
  setenv("OPENBLAS_NUM_THREADS", "1", 1);
  ::testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
