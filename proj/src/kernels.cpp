#include "hpm/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hpm::kern {

namespace {
#ifdef _OPENMP
bool g_parallel = true;
#else
bool g_parallel = false;
#endif
}  // namespace

void set_parallel(bool on) {
#ifdef _OPENMP
  g_parallel = on;
#else
  g_parallel = false;
  (void)on;
#endif
}

bool parallel_enabled() { return g_parallel; }

void set_thread_cap(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace hpm::kern
