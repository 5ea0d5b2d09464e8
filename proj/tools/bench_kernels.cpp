// Times every dual-flavor kernel in both flavors and checks that the OpenMP
// variant reproduces the serial reference bit for bit. Usage:
//
//   hpm_bench [--reps N]
//
// Prints one table row per kernel: best-of-N wall time for each flavor, the
// speedup, and the bitwise agreement verdict (any mismatch exits nonzero).

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hpm/kernels.hpp"
#include "hpm/rng.hpp"

using hpm::Rng;
using hpm::kern::i64;

namespace {

std::vector<float> random_vec(Rng& rng, i64 n) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

double time_best_of(int reps, const std::function<void()>& fn) {
  fn();  // warm-up, also fills caches comparably for both flavors
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

struct Row {
  std::string name, dims;
  double serial_ms = 0, par_ms = 0;
  bool bitwise = false;
};

int failures = 0;
std::vector<Row> rows;

void report(const std::string& name, const std::string& dims, int reps,
            const std::function<void()>& serial_fn, const std::function<void()>& par_fn,
            const std::vector<float>& serial_out, const std::vector<float>& par_out) {
  Row row;
  row.name = name;
  row.dims = dims;
  row.serial_ms = time_best_of(reps, serial_fn);
  row.par_ms = time_best_of(reps, par_fn);
  row.bitwise = serial_out.size() == par_out.size() &&
                std::memcmp(serial_out.data(), par_out.data(),
                            serial_out.size() * sizeof(float)) == 0;
  if (!row.bitwise) ++failures;
  rows.push_back(row);
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--reps" && i + 1 < argc) {
      reps = std::atoi(argv[++i]);
      ++i;
    } else if (std::string(argv[i]) == "--help") {
      std::printf("usage: hpm_bench [--reps N]\n");
      return 0;
    }
  }
  if (reps < 1) reps = 1;

  Rng rng(42);
  namespace ks = hpm::kern::serial;
  namespace kp = hpm::kern::par;

  {
    const i64 m = 256, k = 256, n = 256;
    auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
    std::vector<float> cs(static_cast<std::size_t>(m * n)), cp(cs);
    report("gemm_nn", "256x256x256", reps,
           [&] { ks::gemm_nn(m, k, n, a.data(), b.data(), cs.data(), false); },
           [&] { kp::gemm_nn(m, k, n, a.data(), b.data(), cp.data(), false); }, cs, cp);
    report("gemm_nt", "256x256x256", reps,
           [&] { ks::gemm_nt(m, k, n, a.data(), b.data(), cs.data(), false); },
           [&] { kp::gemm_nt(m, k, n, a.data(), b.data(), cp.data(), false); }, cs, cp);
    report("gemm_tn", "256x256x256", reps,
           [&] { ks::gemm_tn(m, k, n, a.data(), b.data(), cs.data(), false); },
           [&] { kp::gemm_tn(m, k, n, a.data(), b.data(), cp.data(), false); }, cs, cp);
  }
  {
    const i64 g = 64, m = 64, k = 16, n = 64;  // attention-score shape
    auto a = random_vec(rng, g * m * k), b = random_vec(rng, g * n * k);
    std::vector<float> cs(static_cast<std::size_t>(g * m * n)), cp(cs);
    report("bgemm_nt", "64 groups of 64x16x64", reps,
           [&] { ks::bgemm_nt(g, m, k, n, a.data(), b.data(), cs.data(), false); },
           [&] { kp::bgemm_nt(g, m, k, n, a.data(), b.data(), cp.data(), false); }, cs, cp);
  }
  {
    const i64 rws = 8192, n = 64;
    auto x = random_vec(rng, rws * n);
    std::vector<float> ys(static_cast<std::size_t>(rws * n)), yp(ys);
    report("softmax_rows", "8192x64", reps,
           [&] { ks::softmax_rows(rws, n, x.data(), ys.data()); },
           [&] { kp::softmax_rows(rws, n, x.data(), yp.data()); }, ys, yp);

    auto dy = random_vec(rng, rws * n);
    std::vector<float> dxs(static_cast<std::size_t>(rws * n), 0.0f), dxp(dxs);
    ks::softmax_rows(rws, n, x.data(), ys.data());
    report("softmax_rows_bwd", "8192x64", reps,
           [&] {
             std::fill(dxs.begin(), dxs.end(), 0.0f);
             ks::softmax_rows_bwd(rws, n, ys.data(), dy.data(), dxs.data());
           },
           [&] {
             std::fill(dxp.begin(), dxp.end(), 0.0f);
             kp::softmax_rows_bwd(rws, n, ys.data(), dy.data(), dxp.data());
           },
           dxs, dxp);
  }
  {
    const i64 rws = 8192, n = 64;
    auto x = random_vec(rng, rws * n);
    auto gamma = random_vec(rng, n), beta = random_vec(rng, n);
    std::vector<float> ys(static_cast<std::size_t>(rws * n)), yp(ys);
    std::vector<float> mean(static_cast<std::size_t>(rws)), rstd(mean);
    report("layernorm_rows", "8192x64", reps,
           [&] {
             ks::layernorm_rows(rws, n, x.data(), gamma.data(), beta.data(), 1e-6f, ys.data(),
                                mean.data(), rstd.data());
           },
           [&] {
             kp::layernorm_rows(rws, n, x.data(), gamma.data(), beta.data(), 1e-6f, yp.data(),
                                mean.data(), rstd.data());
           },
           ys, yp);

    auto dy = random_vec(rng, rws * n);
    std::vector<float> dxs(static_cast<std::size_t>(rws * n), 0.0f), dxp(dxs);
    std::vector<float> dg(static_cast<std::size_t>(n), 0.0f), db(dg);
    report("layernorm_rows_bwd", "8192x64", reps,
           [&] {
             std::fill(dxs.begin(), dxs.end(), 0.0f);
             std::fill(dg.begin(), dg.end(), 0.0f);
             std::fill(db.begin(), db.end(), 0.0f);
             ks::layernorm_rows_bwd(rws, n, x.data(), gamma.data(), mean.data(), rstd.data(),
                                    dy.data(), dxs.data(), dg.data(), db.data());
           },
           [&] {
             std::fill(dxp.begin(), dxp.end(), 0.0f);
             std::fill(dg.begin(), dg.end(), 0.0f);
             std::fill(db.begin(), db.end(), 0.0f);
             kp::layernorm_rows_bwd(rws, n, x.data(), gamma.data(), mean.data(), rstd.data(),
                                    dy.data(), dxp.data(), dg.data(), db.data());
           },
           dxs, dxp);
  }
  {
    const i64 rws = 8192, n = 64;
    auto x = random_vec(rng, rws * n);
    std::vector<float> ys(static_cast<std::size_t>(rws * n)), yp(ys);
    std::vector<float> norm(static_cast<std::size_t>(rws));
    report("l2norm_rows", "8192x64", reps,
           [&] { ks::l2norm_rows(rws, n, x.data(), 1e-6f, ys.data(), norm.data()); },
           [&] { kp::l2norm_rows(rws, n, x.data(), 1e-6f, yp.data(), norm.data()); }, ys, yp);
  }
  {
    const i64 n = 1 << 22;
    auto x = random_vec(rng, n);
    std::vector<float> ys(static_cast<std::size_t>(n)), yp(ys);
    report("gelu", "4M elements", reps, [&] { ks::gelu(n, x.data(), ys.data()); },
           [&] { kp::gelu(n, x.data(), yp.data()); }, ys, yp);

    auto dy = random_vec(rng, n);
    std::vector<float> dxs(static_cast<std::size_t>(n), 0.0f), dxp(dxs);
    report("gelu_bwd", "4M elements", reps,
           [&] {
             std::fill(dxs.begin(), dxs.end(), 0.0f);
             ks::gelu_bwd(n, x.data(), dy.data(), dxs.data());
           },
           [&] {
             std::fill(dxp.begin(), dxp.end(), 0.0f);
             kp::gelu_bwd(n, x.data(), dy.data(), dxp.data());
           },
           dxs, dxp);
  }
  {
    const i64 outer = 64, rn = 4096, inner = 16;
    auto x = random_vec(rng, outer * rn * inner);
    std::vector<float> ys(static_cast<std::size_t>(outer * inner)), yp(ys);
    report("reduce_axis_sum", "64x4096x16", reps,
           [&] { ks::reduce_axis_sum(outer, rn, inner, x.data(), ys.data(), false); },
           [&] { kp::reduce_axis_sum(outer, rn, inner, x.data(), yp.data(), false); }, ys, yp);
  }

#ifdef _OPENMP
  std::printf("threads: up to %d (OpenMP)\n", omp_get_max_threads());
#else
  std::printf("threads: OpenMP not enabled in this build\n");
#endif
  std::printf("reps: best of %d\n\n", reps);
  std::printf("%-20s %-24s %10s %10s %9s  %s\n", "kernel", "shape", "serial ms", "omp ms",
              "speedup", "bitwise");
  std::printf("%-20s %-24s %10s %10s %9s  %s\n", "------", "-----", "---------", "------",
              "-------", "-------");
  for (const auto& r : rows)
    std::printf("%-20s %-24s %10.3f %10.3f %8.2fx  %s\n", r.name.c_str(), r.dims.c_str(),
                r.serial_ms, r.par_ms, r.serial_ms / r.par_ms, r.bitwise ? "yes" : "NO");
  if (failures > 0) {
    std::printf("\n%d kernel(s) disagree between flavors\n", failures);
    return 1;
  }
  return 0;
}
