#pragma once

// Numeric kernels underneath the tensor ops, in two flavors:
//
//   kern::serial  reference implementations, plain loops, canonical
//                 index-ascending accumulation order
//   kern::par     OpenMP variants, parallel only ACROSS output elements;
//                 each output element accumulates in the same canonical
//                 order as the serial kernel, so results are bit-identical
//                 between flavors
//
// Top-level kern::* dispatchers pick a flavor from a process-wide flag.
// Deterministic mode pins the serial flavor; the parallel flavor is engineered
// to match it bit for bit anyway (tests assert this, tools/bench_kernels.cpp
// measures the speed difference). Pure data-movement kernels (gather, concat,
// head split/merge) have a single implementation shared by both flavors.
//
// Only float and double are instantiated.

#include <cstdint>

namespace hpm::kern {

using i64 = std::int64_t;
using i32 = std::int32_t;

void set_parallel(bool on);
bool parallel_enabled();
// Caps OpenMP threads (also settable via the HPM_THREADS env var at CLI level).
void set_thread_cap(int n);

#define HPM_KERNEL_DECLS                                                                      \
  /* c[m,n] (+)= a[m,k] * b[k,n] */                                                           \
  template <typename T> void gemm_nn(i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc); \
  /* c[m,n] (+)= a[m,k] * b[n,k]^T */                                                         \
  template <typename T> void gemm_nt(i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc); \
  /* c[m,n] (+)= a[r,m]^T * b[r,n] */                                                         \
  template <typename T> void gemm_tn(i64 r, i64 m, i64 n, const T* a, const T* b, T* c, bool acc); \
  template <typename T> void bgemm_nn(i64 g, i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc); \
  template <typename T> void bgemm_nt(i64 g, i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc); \
  template <typename T> void bgemm_tn(i64 g, i64 r, i64 m, i64 n, const T* a, const T* b, T* c, bool acc); \
  template <typename T> void softmax_rows(i64 rows, i64 n, const T* x, T* y);                 \
  /* dx += y * (dy - sum(y*dy)) */                                                           \
  template <typename T> void softmax_rows_bwd(i64 rows, i64 n, const T* y, const T* dy, T* dx); \
  template <typename T> void layernorm_rows(i64 rows, i64 n, const T* x, const T* gamma, const T* beta, T eps, T* y, T* mean, T* rstd); \
  template <typename T> void layernorm_rows_bwd(i64 rows, i64 n, const T* x, const T* gamma, const T* mean, const T* rstd, const T* dy, T* dx, T* dgamma, T* dbeta); \
  /* y = x / max(||x||_2, eps); norm saved per row */                                         \
  template <typename T> void l2norm_rows(i64 rows, i64 n, const T* x, T eps, T* y, T* norm);  \
  template <typename T> void l2norm_rows_bwd(i64 rows, i64 n, const T* y, const T* norm, T eps, const T* dy, T* dx); \
  /* y[o,i] (+)= sum_r x[o,r,i] */                                                            \
  template <typename T> void reduce_axis_sum(i64 outer, i64 rn, i64 inner, const T* x, T* y, bool acc); \
  /* dx += broadcast of dy along the reduced axis, times alpha */                             \
  template <typename T> void broadcast_axis_add(i64 outer, i64 rn, i64 inner, T alpha, const T* dy, T* dx); \
  template <typename T> void ew_add(i64 n, const T* a, const T* b, T* y);                     \
  template <typename T> void ew_sub(i64 n, const T* a, const T* b, T* y);                     \
  template <typename T> void ew_mul(i64 n, const T* a, const T* b, T* y);                     \
  /* y += alpha * x */                                                                        \
  template <typename T> void axpy_acc(i64 n, T alpha, const T* x, T* y);                      \
  /* y += a * b */                                                                            \
  template <typename T> void mul_acc(i64 n, const T* a, const T* b, T* y);                    \
  template <typename T> void scale(i64 n, T alpha, const T* x, T* y);                         \
  template <typename T> void add_scalar(i64 n, T alpha, const T* x, T* y);                    \
  template <typename T> void gelu(i64 n, const T* x, T* y);                                   \
  template <typename T> void gelu_bwd(i64 n, const T* x, const T* dy, T* dx);                 \
  template <typename T> void sigmoid(i64 n, const T* x, T* y);                                \
  template <typename T> void sigmoid_bwd(i64 n, const T* y, const T* dy, T* dx);              \
  template <typename T> void softplus(i64 n, const T* x, T* y);                               \
  template <typename T> void softplus_bwd(i64 n, const T* x, const T* dy, T* dx);

namespace serial {
HPM_KERNEL_DECLS
// dgamma/dbeta accumulation for layernorm_rows_bwd. Reduces across rows, so
// both flavors share this sequential implementation (instruction selection
// for fused multiply-adds would otherwise break bitwise parity).
template <typename T> void ln_affine_grads(i64 rows, i64 n, const T* x, const T* mean, const T* rstd, const T* dy, T* dgamma, T* dbeta);
template <typename T> T sum_all(i64 n, const T* x);
template <typename T> void copy(i64 n, const T* x, T* y);
template <typename T> void fill(i64 n, T alpha, T* y);
// y[g,v,:] = x[g, idx[g*v0+v], :], x has r rows per group
template <typename T> void gather_rows(i64 g, i64 v, i64 r, i64 d, const i32* idx, const T* x, T* y);
template <typename T> void scatter_rows_add(i64 g, i64 v, i64 r, i64 d, const i32* idx, const T* dy, T* dx);
// y[g] = [a_g (r1 rows); b_g (r2 rows)]
template <typename T> void concat_rows(i64 g, i64 r1, i64 r2, i64 d, const T* a, const T* b, T* y);
template <typename T> void split_rows_acc(i64 g, i64 r1, i64 r2, i64 d, const T* dy, T* da, T* db);
template <typename T> void repeat_row(i64 reps, i64 d, const T* row, T* y);
template <typename T> void repeat_row_acc(i64 reps, i64 d, const T* dy, T* drow);
// x[b, r, h*dh] -> y[b*h, r, dh]
template <typename T> void split_heads(i64 b, i64 r, i64 h, i64 dh, const T* x, T* y);
template <typename T> void merge_heads(i64 b, i64 r, i64 h, i64 dh, const T* x, T* y);
template <typename T> void split_heads_acc(i64 b, i64 r, i64 h, i64 dh, const T* dy, T* dx);
template <typename T> void merge_heads_acc(i64 b, i64 r, i64 h, i64 dh, const T* dy, T* dx);
// y[i,j] = v[i] - v[j]
template <typename T> void pairwise_diff(i64 k, const T* v, T* y);
template <typename T> void pairwise_diff_bwd(i64 k, const T* dy, T* dv);
}  // namespace serial

namespace par {
HPM_KERNEL_DECLS
}  // namespace par

#undef HPM_KERNEL_DECLS

#define HPM_DISPATCH(fn, ...) \
  (parallel_enabled() ? par::fn(__VA_ARGS__) : serial::fn(__VA_ARGS__))

template <typename T> inline void gemm_nn(i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc = false) { HPM_DISPATCH(gemm_nn, m, k, n, a, b, c, acc); }
template <typename T> inline void gemm_nt(i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc = false) { HPM_DISPATCH(gemm_nt, m, k, n, a, b, c, acc); }
template <typename T> inline void gemm_tn(i64 r, i64 m, i64 n, const T* a, const T* b, T* c, bool acc = false) { HPM_DISPATCH(gemm_tn, r, m, n, a, b, c, acc); }
template <typename T> inline void bgemm_nn(i64 g, i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc = false) { HPM_DISPATCH(bgemm_nn, g, m, k, n, a, b, c, acc); }
template <typename T> inline void bgemm_nt(i64 g, i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc = false) { HPM_DISPATCH(bgemm_nt, g, m, k, n, a, b, c, acc); }
template <typename T> inline void bgemm_tn(i64 g, i64 r, i64 m, i64 n, const T* a, const T* b, T* c, bool acc = false) { HPM_DISPATCH(bgemm_tn, g, r, m, n, a, b, c, acc); }
template <typename T> inline void softmax_rows(i64 rows, i64 n, const T* x, T* y) { HPM_DISPATCH(softmax_rows, rows, n, x, y); }
template <typename T> inline void softmax_rows_bwd(i64 rows, i64 n, const T* y, const T* dy, T* dx) { HPM_DISPATCH(softmax_rows_bwd, rows, n, y, dy, dx); }
template <typename T> inline void layernorm_rows(i64 rows, i64 n, const T* x, const T* gamma, const T* beta, T eps, T* y, T* mean, T* rstd) { HPM_DISPATCH(layernorm_rows, rows, n, x, gamma, beta, eps, y, mean, rstd); }
template <typename T> inline void layernorm_rows_bwd(i64 rows, i64 n, const T* x, const T* gamma, const T* mean, const T* rstd, const T* dy, T* dx, T* dgamma, T* dbeta) { HPM_DISPATCH(layernorm_rows_bwd, rows, n, x, gamma, mean, rstd, dy, dx, dgamma, dbeta); }
template <typename T> inline void l2norm_rows(i64 rows, i64 n, const T* x, T eps, T* y, T* norm) { HPM_DISPATCH(l2norm_rows, rows, n, x, eps, y, norm); }
template <typename T> inline void l2norm_rows_bwd(i64 rows, i64 n, const T* y, const T* norm, T eps, const T* dy, T* dx) { HPM_DISPATCH(l2norm_rows_bwd, rows, n, y, norm, eps, dy, dx); }
template <typename T> inline void reduce_axis_sum(i64 outer, i64 rn, i64 inner, const T* x, T* y, bool acc = false) { HPM_DISPATCH(reduce_axis_sum, outer, rn, inner, x, y, acc); }
template <typename T> inline void broadcast_axis_add(i64 outer, i64 rn, i64 inner, T alpha, const T* dy, T* dx) { HPM_DISPATCH(broadcast_axis_add, outer, rn, inner, alpha, dy, dx); }
template <typename T> inline void ew_add(i64 n, const T* a, const T* b, T* y) { HPM_DISPATCH(ew_add, n, a, b, y); }
template <typename T> inline void ew_sub(i64 n, const T* a, const T* b, T* y) { HPM_DISPATCH(ew_sub, n, a, b, y); }
template <typename T> inline void ew_mul(i64 n, const T* a, const T* b, T* y) { HPM_DISPATCH(ew_mul, n, a, b, y); }
template <typename T> inline void axpy_acc(i64 n, T alpha, const T* x, T* y) { HPM_DISPATCH(axpy_acc, n, alpha, x, y); }
template <typename T> inline void mul_acc(i64 n, const T* a, const T* b, T* y) { HPM_DISPATCH(mul_acc, n, a, b, y); }
template <typename T> inline void scale(i64 n, T alpha, const T* x, T* y) { HPM_DISPATCH(scale, n, alpha, x, y); }
template <typename T> inline void add_scalar(i64 n, T alpha, const T* x, T* y) { HPM_DISPATCH(add_scalar, n, alpha, x, y); }
template <typename T> inline void gelu(i64 n, const T* x, T* y) { HPM_DISPATCH(gelu, n, x, y); }
template <typename T> inline void gelu_bwd(i64 n, const T* x, const T* dy, T* dx) { HPM_DISPATCH(gelu_bwd, n, x, dy, dx); }
template <typename T> inline void sigmoid(i64 n, const T* x, T* y) { HPM_DISPATCH(sigmoid, n, x, y); }
template <typename T> inline void sigmoid_bwd(i64 n, const T* y, const T* dy, T* dx) { HPM_DISPATCH(sigmoid_bwd, n, y, dy, dx); }
template <typename T> inline void softplus(i64 n, const T* x, T* y) { HPM_DISPATCH(softplus, n, x, y); }
template <typename T> inline void softplus_bwd(i64 n, const T* x, const T* dy, T* dx) { HPM_DISPATCH(softplus_bwd, n, x, dy, dx); }

#undef HPM_DISPATCH

// Scalar reductions and data movement have one implementation; both flavors use it.
template <typename T> inline T sum_all(i64 n, const T* x) { return serial::sum_all(n, x); }
template <typename T> inline void copy(i64 n, const T* x, T* y) { serial::copy(n, x, y); }
template <typename T> inline void fill(i64 n, T alpha, T* y) { serial::fill(n, alpha, y); }
template <typename T> inline void gather_rows(i64 g, i64 v, i64 r, i64 d, const i32* idx, const T* x, T* y) { serial::gather_rows(g, v, r, d, idx, x, y); }
template <typename T> inline void scatter_rows_add(i64 g, i64 v, i64 r, i64 d, const i32* idx, const T* dy, T* dx) { serial::scatter_rows_add(g, v, r, d, idx, dy, dx); }
template <typename T> inline void concat_rows(i64 g, i64 r1, i64 r2, i64 d, const T* a, const T* b, T* y) { serial::concat_rows(g, r1, r2, d, a, b, y); }
template <typename T> inline void split_rows_acc(i64 g, i64 r1, i64 r2, i64 d, const T* dy, T* da, T* db) { serial::split_rows_acc(g, r1, r2, d, dy, da, db); }
template <typename T> inline void repeat_row(i64 reps, i64 d, const T* row, T* y) { serial::repeat_row(reps, d, row, y); }
template <typename T> inline void repeat_row_acc(i64 reps, i64 d, const T* dy, T* drow) { serial::repeat_row_acc(reps, d, dy, drow); }
template <typename T> inline void split_heads(i64 b, i64 r, i64 h, i64 dh, const T* x, T* y) { serial::split_heads(b, r, h, dh, x, y); }
template <typename T> inline void merge_heads(i64 b, i64 r, i64 h, i64 dh, const T* x, T* y) { serial::merge_heads(b, r, h, dh, x, y); }
template <typename T> inline void split_heads_acc(i64 b, i64 r, i64 h, i64 dh, const T* dy, T* dx) { serial::split_heads_acc(b, r, h, dh, dy, dx); }
template <typename T> inline void merge_heads_acc(i64 b, i64 r, i64 h, i64 dh, const T* dy, T* dx) { serial::merge_heads_acc(b, r, h, dh, dy, dx); }
template <typename T> inline void pairwise_diff(i64 k, const T* v, T* y) { serial::pairwise_diff(k, v, y); }
template <typename T> inline void pairwise_diff_bwd(i64 k, const T* dy, T* dv) { serial::pairwise_diff_bwd(k, dy, dv); }

}  // namespace hpm::kern
