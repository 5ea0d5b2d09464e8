// Reference kernels. Every accumulation runs in canonical index-ascending
// order; the OpenMP flavor in kernels_omp.cpp reproduces these bit for bit.
// The gemm family routes through the register-blocked panels in
// gemm_panel.hpp, which both flavors share so the guarantee holds there too.

#include "hpm/kernels.hpp"

#include <cmath>
#include <vector>

#include "act_math.hpp"
#include "gemm_panel.hpp"

namespace hpm::kern::serial {

namespace {

// B^T scratch for the *_nt kernels. Transposing once and running the nn loop
// beats a strided dot-product loop for every shape this model uses.
template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
void transpose(i64 rows, i64 cols, const T* x, T* y) {
  for (i64 i = 0; i < rows; ++i)
    for (i64 j = 0; j < cols; ++j) y[j * rows + i] = x[i * cols + j];
}

}  // namespace

template <typename T>
void gemm_nn(i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc) {
  detail::gemm_nn_rows(0, m, k, n, a, b, c, acc);
}

template <typename T>
void gemm_nt(i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc) {
  auto& bt = scratch<T>();
  bt.resize(static_cast<std::size_t>(k * n));
  transpose(n, k, b, bt.data());
  gemm_nn(m, k, n, a, bt.data(), c, acc);
}

template <typename T>
void gemm_tn(i64 r, i64 m, i64 n, const T* a, const T* b, T* c, bool acc) {
  detail::gemm_tn_rows(0, m, r, m, n, a, b, c, acc);
}

template <typename T>
void bgemm_nn(i64 g, i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc) {
  for (i64 gg = 0; gg < g; ++gg)
    gemm_nn(m, k, n, a + gg * m * k, b + gg * k * n, c + gg * m * n, acc);
}

template <typename T>
void bgemm_nt(i64 g, i64 m, i64 k, i64 n, const T* a, const T* b, T* c, bool acc) {
  for (i64 gg = 0; gg < g; ++gg)
    gemm_nt(m, k, n, a + gg * m * k, b + gg * n * k, c + gg * m * n, acc);
}

template <typename T>
void bgemm_tn(i64 g, i64 r, i64 m, i64 n, const T* a, const T* b, T* c, bool acc) {
  for (i64 gg = 0; gg < g; ++gg)
    gemm_tn(r, m, n, a + gg * r * m, b + gg * r * n, c + gg * m * n, acc);
}

template <typename T>
void softmax_rows(i64 rows, i64 n, const T* x, T* y) {
  for (i64 i = 0; i < rows; ++i) {
    const T* xi = x + i * n;
    T* yi = y + i * n;
    T mx = xi[0];
    for (i64 j = 1; j < n; ++j) mx = xi[j] > mx ? xi[j] : mx;
    T sum = T(0);
    for (i64 j = 0; j < n; ++j) {
      yi[j] = detail::exp_fast(xi[j] - mx);
      sum += yi[j];
    }
    const T inv = T(1) / sum;
    for (i64 j = 0; j < n; ++j) yi[j] *= inv;
  }
}

template <typename T>
void softmax_rows_bwd(i64 rows, i64 n, const T* y, const T* dy, T* dx) {
  for (i64 i = 0; i < rows; ++i) {
    const T* yi = y + i * n;
    const T* di = dy + i * n;
    T* gi = dx + i * n;
    T s = T(0);
    for (i64 j = 0; j < n; ++j) s += yi[j] * di[j];
    for (i64 j = 0; j < n; ++j) gi[j] += yi[j] * (di[j] - s);
  }
}

template <typename T>
void layernorm_rows(i64 rows, i64 n, const T* x, const T* gamma, const T* beta, T eps,
                    T* y, T* mean, T* rstd) {
  for (i64 i = 0; i < rows; ++i) {
    const T* xi = x + i * n;
    T* yi = y + i * n;
    T mu = T(0);
    for (i64 j = 0; j < n; ++j) mu += xi[j];
    mu /= T(n);
    T var = T(0);
    for (i64 j = 0; j < n; ++j) {
      const T d = xi[j] - mu;
      var += d * d;
    }
    var /= T(n);
    const T rs = T(1) / std::sqrt(var + eps);
    mean[i] = mu;
    rstd[i] = rs;
    for (i64 j = 0; j < n; ++j) yi[j] = gamma[j] * ((xi[j] - mu) * rs) + beta[j];
  }
}

template <typename T>
void ln_affine_grads(i64 rows, i64 n, const T* x, const T* mean, const T* rstd,
                     const T* dy, T* dgamma, T* dbeta) {
  for (i64 i = 0; i < rows; ++i) {
    const T* xi = x + i * n;
    const T* di = dy + i * n;
    const T mu = mean[i];
    const T rs = rstd[i];
    for (i64 j = 0; j < n; ++j) {
      dgamma[j] += di[j] * ((xi[j] - mu) * rs);
      dbeta[j] += di[j];
    }
  }
}

template <typename T>
void layernorm_rows_bwd(i64 rows, i64 n, const T* x, const T* gamma, const T* mean,
                        const T* rstd, const T* dy, T* dx, T* dgamma, T* dbeta) {
  for (i64 i = 0; i < rows; ++i) {
    const T* xi = x + i * n;
    const T* di = dy + i * n;
    T* gi = dx + i * n;
    const T mu = mean[i];
    const T rs = rstd[i];
    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
    for (i64 j = 0; j < n; ++j) {
      const T xhat = (xi[j] - mu) * rs;
      const T dxhat = di[j] * gamma[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    const T inv_n = T(1) / T(n);
    for (i64 j = 0; j < n; ++j) {
      const T xhat = (xi[j] - mu) * rs;
      const T dxhat = di[j] * gamma[j];
      gi[j] += rs * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
    }
  }
  ln_affine_grads(rows, n, x, mean, rstd, dy, dgamma, dbeta);
}

template <typename T>
void l2norm_rows(i64 rows, i64 n, const T* x, T eps, T* y, T* norm) {
  for (i64 i = 0; i < rows; ++i) {
    const T* xi = x + i * n;
    T* yi = y + i * n;
    T ss = T(0);
    for (i64 j = 0; j < n; ++j) ss += xi[j] * xi[j];
    const T nr = std::sqrt(ss);
    norm[i] = nr;
    const T inv = T(1) / (nr > eps ? nr : eps);
    for (i64 j = 0; j < n; ++j) yi[j] = xi[j] * inv;
  }
}

template <typename T>
void l2norm_rows_bwd(i64 rows, i64 n, const T* y, const T* norm, T eps, const T* dy, T* dx) {
  for (i64 i = 0; i < rows; ++i) {
    const T* yi = y + i * n;
    const T* di = dy + i * n;
    T* gi = dx + i * n;
    if (norm[i] > eps) {
      const T inv = T(1) / norm[i];
      T s = T(0);
      for (i64 j = 0; j < n; ++j) s += yi[j] * di[j];
      for (i64 j = 0; j < n; ++j) gi[j] += inv * (di[j] - yi[j] * s);
    } else {
      // Below the guard the map is linear: y = x / eps.
      const T inv = T(1) / eps;
      for (i64 j = 0; j < n; ++j) gi[j] += inv * di[j];
    }
  }
}

template <typename T>
void reduce_axis_sum(i64 outer, i64 rn, i64 inner, const T* x, T* y, bool acc) {
  for (i64 o = 0; o < outer; ++o) {
    T* yo = y + o * inner;
    if (!acc)
      for (i64 i = 0; i < inner; ++i) yo[i] = T(0);
    const T* xo = x + o * rn * inner;
    for (i64 r = 0; r < rn; ++r) {
      const T* xr = xo + r * inner;
      for (i64 i = 0; i < inner; ++i) yo[i] += xr[i];
    }
  }
}

template <typename T>
void broadcast_axis_add(i64 outer, i64 rn, i64 inner, T alpha, const T* dy, T* dx) {
  for (i64 o = 0; o < outer; ++o) {
    const T* dyo = dy + o * inner;
    T* dxo = dx + o * rn * inner;
    for (i64 r = 0; r < rn; ++r) {
      T* dxr = dxo + r * inner;
      for (i64 i = 0; i < inner; ++i) dxr[i] += alpha * dyo[i];
    }
  }
}

template <typename T> void ew_add(i64 n, const T* a, const T* b, T* y) {
  for (i64 i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
template <typename T> void ew_sub(i64 n, const T* a, const T* b, T* y) {
  for (i64 i = 0; i < n; ++i) y[i] = a[i] - b[i];
}
template <typename T> void ew_mul(i64 n, const T* a, const T* b, T* y) {
  for (i64 i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
template <typename T> void axpy_acc(i64 n, T alpha, const T* x, T* y) {
  for (i64 i = 0; i < n; ++i) y[i] += alpha * x[i];
}
template <typename T> void mul_acc(i64 n, const T* a, const T* b, T* y) {
  for (i64 i = 0; i < n; ++i) y[i] += a[i] * b[i];
}
template <typename T> void scale(i64 n, T alpha, const T* x, T* y) {
  for (i64 i = 0; i < n; ++i) y[i] = alpha * x[i];
}
template <typename T> void add_scalar(i64 n, T alpha, const T* x, T* y) {
  for (i64 i = 0; i < n; ++i) y[i] = x[i] + alpha;
}

template <typename T> void gelu(i64 n, const T* x, T* y) {
  const T inv_sqrt2 = T(0.7071067811865475244);
  for (i64 i = 0; i < n; ++i) y[i] = T(0.5) * x[i] * (T(1) + detail::erf_fast(x[i] * inv_sqrt2));
}
template <typename T> void gelu_bwd(i64 n, const T* x, const T* dy, T* dx) {
  const T inv_sqrt2 = T(0.7071067811865475244);
  const T inv_sqrt2pi = T(0.3989422804014326779);
  for (i64 i = 0; i < n; ++i) {
    const T cdf = T(0.5) * (T(1) + detail::erf_fast(x[i] * inv_sqrt2));
    const T pdf = inv_sqrt2pi * detail::exp_fast(T(-0.5) * x[i] * x[i]);
    dx[i] += dy[i] * (cdf + x[i] * pdf);
  }
}

template <typename T> void sigmoid(i64 n, const T* x, T* y) {
  for (i64 i = 0; i < n; ++i) {
    if (x[i] >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-x[i]));
    } else {
      const T e = std::exp(x[i]);
      y[i] = e / (T(1) + e);
    }
  }
}
template <typename T> void sigmoid_bwd(i64 n, const T* y, const T* dy, T* dx) {
  for (i64 i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
}

// softplus(x) = max(x, 0) + log1p(exp(-|x|)): exact and overflow-free, and
// -softplus(-z) is the log-sigmoid this codebase uses instead of log(sigmoid).
template <typename T> void softplus(i64 n, const T* x, T* y) {
  for (i64 i = 0; i < n; ++i) {
    const T pos = x[i] > T(0) ? x[i] : T(0);
    const T absx = x[i] > T(0) ? x[i] : -x[i];
    y[i] = pos + std::log1p(std::exp(-absx));
  }
}
template <typename T> void softplus_bwd(i64 n, const T* x, const T* dy, T* dx) {
  for (i64 i = 0; i < n; ++i) {
    T s;
    if (x[i] >= T(0)) {
      s = T(1) / (T(1) + std::exp(-x[i]));
    } else {
      const T e = std::exp(x[i]);
      s = e / (T(1) + e);
    }
    dx[i] += dy[i] * s;
  }
}

template <typename T> T sum_all(i64 n, const T* x) {
  T s = T(0);
  for (i64 i = 0; i < n; ++i) s += x[i];
  return s;
}
template <typename T> void copy(i64 n, const T* x, T* y) {
  for (i64 i = 0; i < n; ++i) y[i] = x[i];
}
template <typename T> void fill(i64 n, T alpha, T* y) {
  for (i64 i = 0; i < n; ++i) y[i] = alpha;
}

template <typename T>
void gather_rows(i64 g, i64 v, i64 r, i64 d, const i32* idx, const T* x, T* y) {
  for (i64 gg = 0; gg < g; ++gg)
    for (i64 vv = 0; vv < v; ++vv) {
      const T* src = x + (gg * r + idx[gg * v + vv]) * d;
      T* dst = y + (gg * v + vv) * d;
      for (i64 j = 0; j < d; ++j) dst[j] = src[j];
    }
}

template <typename T>
void scatter_rows_add(i64 g, i64 v, i64 r, i64 d, const i32* idx, const T* dy, T* dx) {
  for (i64 gg = 0; gg < g; ++gg)
    for (i64 vv = 0; vv < v; ++vv) {
      const T* src = dy + (gg * v + vv) * d;
      T* dst = dx + (gg * r + idx[gg * v + vv]) * d;
      for (i64 j = 0; j < d; ++j) dst[j] += src[j];
    }
}

template <typename T>
void concat_rows(i64 g, i64 r1, i64 r2, i64 d, const T* a, const T* b, T* y) {
  for (i64 gg = 0; gg < g; ++gg) {
    copy(r1 * d, a + gg * r1 * d, y + gg * (r1 + r2) * d);
    copy(r2 * d, b + gg * r2 * d, y + gg * (r1 + r2) * d + r1 * d);
  }
}

template <typename T>
void split_rows_acc(i64 g, i64 r1, i64 r2, i64 d, const T* dy, T* da, T* db) {
  for (i64 gg = 0; gg < g; ++gg) {
    const T* top = dy + gg * (r1 + r2) * d;
    const T* bot = top + r1 * d;
    T* dag = da + gg * r1 * d;
    T* dbg = db + gg * r2 * d;
    for (i64 i = 0; i < r1 * d; ++i) dag[i] += top[i];
    for (i64 i = 0; i < r2 * d; ++i) dbg[i] += bot[i];
  }
}

template <typename T>
void repeat_row(i64 reps, i64 d, const T* row, T* y) {
  for (i64 i = 0; i < reps; ++i) copy(d, row, y + i * d);
}

template <typename T>
void repeat_row_acc(i64 reps, i64 d, const T* dy, T* drow) {
  for (i64 i = 0; i < reps; ++i)
    for (i64 j = 0; j < d; ++j) drow[j] += dy[i * d + j];
}

template <typename T>
void split_heads(i64 b, i64 r, i64 h, i64 dh, const T* x, T* y) {
  for (i64 bb = 0; bb < b; ++bb)
    for (i64 hh = 0; hh < h; ++hh)
      for (i64 rr = 0; rr < r; ++rr) {
        const T* src = x + (bb * r + rr) * h * dh + hh * dh;
        T* dst = y + ((bb * h + hh) * r + rr) * dh;
        for (i64 j = 0; j < dh; ++j) dst[j] = src[j];
      }
}

template <typename T>
void merge_heads(i64 b, i64 r, i64 h, i64 dh, const T* x, T* y) {
  for (i64 bb = 0; bb < b; ++bb)
    for (i64 rr = 0; rr < r; ++rr)
      for (i64 hh = 0; hh < h; ++hh) {
        const T* src = x + ((bb * h + hh) * r + rr) * dh;
        T* dst = y + (bb * r + rr) * h * dh + hh * dh;
        for (i64 j = 0; j < dh; ++j) dst[j] = src[j];
      }
}

template <typename T>
void split_heads_acc(i64 b, i64 r, i64 h, i64 dh, const T* dy, T* dx) {
  // dy in [b*h, r, dh] layout, dx in [b, r, h*dh] layout.
  for (i64 bb = 0; bb < b; ++bb)
    for (i64 hh = 0; hh < h; ++hh)
      for (i64 rr = 0; rr < r; ++rr) {
        const T* src = dy + ((bb * h + hh) * r + rr) * dh;
        T* dst = dx + (bb * r + rr) * h * dh + hh * dh;
        for (i64 j = 0; j < dh; ++j) dst[j] += src[j];
      }
}

template <typename T>
void merge_heads_acc(i64 b, i64 r, i64 h, i64 dh, const T* dy, T* dx) {
  // dy in [b, r, h*dh] layout, dx in [b*h, r, dh] layout.
  for (i64 bb = 0; bb < b; ++bb)
    for (i64 rr = 0; rr < r; ++rr)
      for (i64 hh = 0; hh < h; ++hh) {
        const T* src = dy + (bb * r + rr) * h * dh + hh * dh;
        T* dst = dx + ((bb * h + hh) * r + rr) * dh;
        for (i64 j = 0; j < dh; ++j) dst[j] += src[j];
      }
}

template <typename T>
void pairwise_diff(i64 k, const T* v, T* y) {
  for (i64 i = 0; i < k; ++i)
    for (i64 j = 0; j < k; ++j) y[i * k + j] = v[i] - v[j];
}

template <typename T>
void pairwise_diff_bwd(i64 k, const T* dy, T* dv) {
  for (i64 i = 0; i < k; ++i) {
    T s = T(0);
    for (i64 j = 0; j < k; ++j) s += dy[i * k + j] - dy[j * k + i];
    dv[i] += s;
  }
}

#define HPM_INSTANTIATE_SERIAL(T)                                                             \
  template void gemm_nn<T>(i64, i64, i64, const T*, const T*, T*, bool);                      \
  template void gemm_nt<T>(i64, i64, i64, const T*, const T*, T*, bool);                      \
  template void gemm_tn<T>(i64, i64, i64, const T*, const T*, T*, bool);                      \
  template void bgemm_nn<T>(i64, i64, i64, i64, const T*, const T*, T*, bool);                \
  template void bgemm_nt<T>(i64, i64, i64, i64, const T*, const T*, T*, bool);                \
  template void bgemm_tn<T>(i64, i64, i64, i64, const T*, const T*, T*, bool);                \
  template void softmax_rows<T>(i64, i64, const T*, T*);                                      \
  template void softmax_rows_bwd<T>(i64, i64, const T*, const T*, T*);                        \
  template void layernorm_rows<T>(i64, i64, const T*, const T*, const T*, T, T*, T*, T*);     \
  template void layernorm_rows_bwd<T>(i64, i64, const T*, const T*, const T*, const T*, const T*, T*, T*, T*); \
  template void ln_affine_grads<T>(i64, i64, const T*, const T*, const T*, const T*, T*, T*);                   \
  template void l2norm_rows<T>(i64, i64, const T*, T, T*, T*);                                \
  template void l2norm_rows_bwd<T>(i64, i64, const T*, const T*, T, const T*, T*);            \
  template void reduce_axis_sum<T>(i64, i64, i64, const T*, T*, bool);                        \
  template void broadcast_axis_add<T>(i64, i64, i64, T, const T*, T*);                        \
  template void ew_add<T>(i64, const T*, const T*, T*);                                       \
  template void ew_sub<T>(i64, const T*, const T*, T*);                                       \
  template void ew_mul<T>(i64, const T*, const T*, T*);                                       \
  template void axpy_acc<T>(i64, T, const T*, T*);                                            \
  template void mul_acc<T>(i64, const T*, const T*, T*);                                      \
  template void scale<T>(i64, T, const T*, T*);                                               \
  template void add_scalar<T>(i64, T, const T*, T*);                                          \
  template void gelu<T>(i64, const T*, T*);                                                   \
  template void gelu_bwd<T>(i64, const T*, const T*, T*);                                     \
  template void sigmoid<T>(i64, const T*, T*);                                                \
  template void sigmoid_bwd<T>(i64, const T*, const T*, T*);                                  \
  template void softplus<T>(i64, const T*, T*);                                               \
  template void softplus_bwd<T>(i64, const T*, const T*, T*);                                 \
  template T sum_all<T>(i64, const T*);                                                       \
  template void copy<T>(i64, const T*, T*);                                                   \
  template void fill<T>(i64, T, T*);                                                          \
  template void gather_rows<T>(i64, i64, i64, i64, const i32*, const T*, T*);                 \
  template void scatter_rows_add<T>(i64, i64, i64, i64, const i32*, const T*, T*);            \
  template void concat_rows<T>(i64, i64, i64, i64, const T*, const T*, T*);                   \
  template void split_rows_acc<T>(i64, i64, i64, i64, const T*, T*, T*);                      \
  template void repeat_row<T>(i64, i64, const T*, T*);                                        \
  template void repeat_row_acc<T>(i64, i64, const T*, T*);                                    \
  template void split_heads<T>(i64, i64, i64, i64, const T*, T*);                             \
  template void merge_heads<T>(i64, i64, i64, i64, const T*, T*);                             \
  template void split_heads_acc<T>(i64, i64, i64, i64, const T*, T*);                         \
  template void merge_heads_acc<T>(i64, i64, i64, i64, const T*, T*);                         \
  template void pairwise_diff<T>(i64, const T*, T*);                                          \
  template void pairwise_diff_bwd<T>(i64, const T*, T*);

HPM_INSTANTIATE_SERIAL(float)
HPM_INSTANTIATE_SERIAL(double)

}  // namespace hpm::kern::serial
