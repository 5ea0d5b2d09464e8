// Register-blocked gemm row panels shared by both kernel flavors. The serial
// flavor walks panels sequentially; the OpenMP flavor hands whole panels to
// threads. Because the panel is the unit of work in both, and every
// accumulation is an explicit std::fma in k-ascending order, the two flavors
// are bit-identical by construction (and stay so under any thread count).
//
// Shapes here are tall-skinny (rows = batch*tokens, k,n <= a few hundred), so
// a 4-row by 32-column accumulator block is enough to go from memory-bound to
// ~3x of the plain loops; deeper cache blocking buys nothing at these sizes.
#pragma once

#include <cmath>

#include "hpm/kernels.hpp"

namespace hpm::kern::detail {

inline constexpr i64 kPanelRows = 4;

// C rows [i0,i1) for row-major A[m,k] * B[k,n]. acc=false overwrites.
template <typename T>
inline void gemm_nn_rows(i64 i0, i64 i1, i64 k, i64 n, const T* a, const T* b, T* c, bool acc) {
  constexpr i64 JT = 32;
  i64 i = i0;
  for (; i + kPanelRows <= i1; i += kPanelRows) {
    const T *a0 = a + i * k, *a1 = a0 + k, *a2 = a1 + k, *a3 = a2 + k;
    T *c0 = c + i * n, *c1 = c0 + n, *c2 = c1 + n, *c3 = c2 + n;
    i64 j = 0;
    for (; j + JT <= n; j += JT) {
      T s0[JT], s1[JT], s2[JT], s3[JT];
      for (i64 t = 0; t < JT; ++t) {
        s0[t] = acc ? c0[j + t] : T(0);
        s1[t] = acc ? c1[j + t] : T(0);
        s2[t] = acc ? c2[j + t] : T(0);
        s3[t] = acc ? c3[j + t] : T(0);
      }
      for (i64 p = 0; p < k; ++p) {
        const T* bp = b + p * n + j;
        const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
        for (i64 t = 0; t < JT; ++t) {
          const T bv = bp[t];
          s0[t] = std::fma(x0, bv, s0[t]);
          s1[t] = std::fma(x1, bv, s1[t]);
          s2[t] = std::fma(x2, bv, s2[t]);
          s3[t] = std::fma(x3, bv, s3[t]);
        }
      }
      for (i64 t = 0; t < JT; ++t) {
        c0[j + t] = s0[t];
        c1[j + t] = s1[t];
        c2[j + t] = s2[t];
        c3[j + t] = s3[t];
      }
    }
    for (; j < n; ++j) {
      T s0 = acc ? c0[j] : T(0), s1 = acc ? c1[j] : T(0);
      T s2 = acc ? c2[j] : T(0), s3 = acc ? c3[j] : T(0);
      for (i64 p = 0; p < k; ++p) {
        const T bv = b[p * n + j];
        s0 = std::fma(a0[p], bv, s0);
        s1 = std::fma(a1[p], bv, s1);
        s2 = std::fma(a2[p], bv, s2);
        s3 = std::fma(a3[p], bv, s3);
      }
      c0[j] = s0;
      c1[j] = s1;
      c2[j] = s2;
      c3[j] = s3;
    }
  }
  for (; i < i1; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    i64 j = 0;
    for (; j + JT <= n; j += JT) {
      T s[JT];
      for (i64 t = 0; t < JT; ++t) s[t] = acc ? ci[j + t] : T(0);
      for (i64 p = 0; p < k; ++p) {
        const T x = ai[p];
        const T* bp = b + p * n + j;
        for (i64 t = 0; t < JT; ++t) s[t] = std::fma(x, bp[t], s[t]);
      }
      for (i64 t = 0; t < JT; ++t) ci[j + t] = s[t];
    }
    for (; j < n; ++j) {
      T s = acc ? ci[j] : T(0);
      for (i64 p = 0; p < k; ++p) s = std::fma(ai[p], b[p * n + j], s);
      ci[j] = s;
    }
  }
}

// C rows [i0,i1) for A[r,m]^T * B[r,n]; the four a reads per step are the
// contiguous a[p*m + i .. i+3].
template <typename T>
inline void gemm_tn_rows(i64 i0, i64 i1, i64 r, i64 m, i64 n, const T* a, const T* b, T* c,
                         bool acc) {
  constexpr i64 JT = 32;
  i64 i = i0;
  for (; i + kPanelRows <= i1; i += kPanelRows) {
    T *c0 = c + i * n, *c1 = c0 + n, *c2 = c1 + n, *c3 = c2 + n;
    i64 j = 0;
    for (; j + JT <= n; j += JT) {
      T s0[JT], s1[JT], s2[JT], s3[JT];
      for (i64 t = 0; t < JT; ++t) {
        s0[t] = acc ? c0[j + t] : T(0);
        s1[t] = acc ? c1[j + t] : T(0);
        s2[t] = acc ? c2[j + t] : T(0);
        s3[t] = acc ? c3[j + t] : T(0);
      }
      for (i64 p = 0; p < r; ++p) {
        const T* ap = a + p * m + i;
        const T* bp = b + p * n + j;
        const T x0 = ap[0], x1 = ap[1], x2 = ap[2], x3 = ap[3];
        for (i64 t = 0; t < JT; ++t) {
          const T bv = bp[t];
          s0[t] = std::fma(x0, bv, s0[t]);
          s1[t] = std::fma(x1, bv, s1[t]);
          s2[t] = std::fma(x2, bv, s2[t]);
          s3[t] = std::fma(x3, bv, s3[t]);
        }
      }
      for (i64 t = 0; t < JT; ++t) {
        c0[j + t] = s0[t];
        c1[j + t] = s1[t];
        c2[j + t] = s2[t];
        c3[j + t] = s3[t];
      }
    }
    for (; j < n; ++j) {
      T s0 = acc ? c0[j] : T(0), s1 = acc ? c1[j] : T(0);
      T s2 = acc ? c2[j] : T(0), s3 = acc ? c3[j] : T(0);
      for (i64 p = 0; p < r; ++p) {
        const T* ap = a + p * m + i;
        const T bv = b[p * n + j];
        s0 = std::fma(ap[0], bv, s0);
        s1 = std::fma(ap[1], bv, s1);
        s2 = std::fma(ap[2], bv, s2);
        s3 = std::fma(ap[3], bv, s3);
      }
      c0[j] = s0;
      c1[j] = s1;
      c2[j] = s2;
      c3[j] = s3;
    }
  }
  for (; i < i1; ++i) {
    T* ci = c + i * n;
    i64 j = 0;
    for (; j + JT <= n; j += JT) {
      T s[JT];
      for (i64 t = 0; t < JT; ++t) s[t] = acc ? ci[j + t] : T(0);
      for (i64 p = 0; p < r; ++p) {
        const T x = a[p * m + i];
        const T* bp = b + p * n + j;
        for (i64 t = 0; t < JT; ++t) s[t] = std::fma(x, bp[t], s[t]);
      }
      for (i64 t = 0; t < JT; ++t) ci[j + t] = s[t];
    }
    for (; j < n; ++j) {
      T s = acc ? ci[j] : T(0);
      for (i64 p = 0; p < r; ++p) s = std::fma(a[p * m + i], b[p * n + j], s);
      ci[j] = s;
    }
  }
}

inline i64 panel_count(i64 m) { return (m + kPanelRows - 1) / kPanelRows; }

}  // namespace hpm::kern::detail
