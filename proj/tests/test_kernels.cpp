// Two angles on the kernel layer: values against naive reference loops
// written here (accumulating in double), and bit-level agreement between the
// serial and OpenMP flavors.

#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "hpm/kernels.hpp"
#include "hpm/rng.hpp"

namespace k = hpm::kern;
using k::i64;

namespace {

template <typename T>
std::vector<T> randv(hpm::Rng& r, i64 n, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(r.uniform(lo, hi));
  return v;
}

template <typename T>
void naive_gemm_nn(i64 m, i64 k_, i64 n, const T* a, const T* b, T* c) {
  for (i64 i = 0; i < m; ++i)
    for (i64 j = 0; j < n; ++j) {
      double s = 0.0;
      for (i64 p = 0; p < k_; ++p) s += double(a[i * k_ + p]) * double(b[p * n + j]);
      c[i * n + j] = static_cast<T>(s);
    }
}

template <typename T>
bool bits_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE_TEMPLATE("gemm_nn matches naive reference", T, float, double) {
  hpm::Rng r(101);
  const i64 m = 17, kk = 23, n = 19;
  auto a = randv<T>(r, m * kk), b = randv<T>(r, kk * n);
  std::vector<T> c(m * n), ref(m * n);
  k::serial::gemm_nn(m, kk, n, a.data(), b.data(), c.data(), false);
  naive_gemm_nn(m, kk, n, a.data(), b.data(), ref.data());
  for (i64 i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE_TEMPLATE("gemm_nt and gemm_tn match transposed naive", T, float, double) {
  hpm::Rng r(102);
  const i64 m = 9, kk = 13, n = 11;
  auto a = randv<T>(r, m * kk);
  auto b_nt = randv<T>(r, n * kk);  // [n,k]
  std::vector<T> c(m * n), bt(kk * n);
  for (i64 i = 0; i < n; ++i)
    for (i64 j = 0; j < kk; ++j) bt[j * n + i] = b_nt[i * kk + j];
  std::vector<T> ref(m * n);
  naive_gemm_nn(m, kk, n, a.data(), bt.data(), ref.data());
  k::serial::gemm_nt(m, kk, n, a.data(), b_nt.data(), c.data(), false);
  for (i64 i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-5));

  // tn: c[m,n] = a2[r,m]^T b2[r,n]
  const i64 rr = 15;
  auto a2 = randv<T>(r, rr * m);
  auto b2 = randv<T>(r, rr * n);
  std::vector<T> at(m * rr);
  for (i64 i = 0; i < rr; ++i)
    for (i64 j = 0; j < m; ++j) at[j * rr + i] = a2[i * m + j];
  std::vector<T> ref2(m * n), c2(m * n);
  naive_gemm_nn(m, rr, n, at.data(), b2.data(), ref2.data());
  k::serial::gemm_tn(rr, m, n, a2.data(), b2.data(), c2.data(), false);
  for (i64 i = 0; i < m * n; ++i) CHECK(c2[i] == doctest::Approx(ref2[i]).epsilon(1e-5));
}

TEST_CASE("gemm accumulate flag adds on top") {
  hpm::Rng r(103);
  const i64 m = 4, kk = 5, n = 3;
  auto a = randv<float>(r, m * kk), b = randv<float>(r, kk * n);
  std::vector<float> c0(m * n, 0.0f), c1(m * n, 1.0f);
  k::serial::gemm_nn(m, kk, n, a.data(), b.data(), c0.data(), false);
  k::serial::gemm_nn(m, kk, n, a.data(), b.data(), c1.data(), true);
  for (i64 i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c0[i] + 1.0f).epsilon(1e-6));
}

TEST_CASE_TEMPLATE("serial and parallel flavors are bit-identical", T, float, double) {
  hpm::Rng r(104);
  const i64 m = 33, kk = 17, n = 29, g = 3, rows = 21;

  SUBCASE("gemm family") {
    auto a = randv<T>(r, g * m * kk), b = randv<T>(r, g * kk * n), bnt = randv<T>(r, g * n * kk);
    std::vector<T> cs(g * m * n), cp(g * m * n);
    k::serial::gemm_nn(m, kk, n, a.data(), b.data(), cs.data(), false);
    k::par::gemm_nn(m, kk, n, a.data(), b.data(), cp.data(), false);
    CHECK(bits_equal(cs, cp));
    k::serial::gemm_nt(m, kk, n, a.data(), bnt.data(), cs.data(), false);
    k::par::gemm_nt(m, kk, n, a.data(), bnt.data(), cp.data(), false);
    CHECK(bits_equal(cs, cp));
    auto a_tn = randv<T>(r, kk * m);
    k::serial::gemm_tn(kk, m, n, a_tn.data(), b.data(), cs.data(), false);
    k::par::gemm_tn(kk, m, n, a_tn.data(), b.data(), cp.data(), false);
    CHECK(bits_equal(cs, cp));
    k::serial::bgemm_nn(g, m, kk, n, a.data(), b.data(), cs.data(), false);
    k::par::bgemm_nn(g, m, kk, n, a.data(), b.data(), cp.data(), false);
    CHECK(bits_equal(cs, cp));
    k::serial::bgemm_nt(g, m, kk, n, a.data(), bnt.data(), cs.data(), false);
    k::par::bgemm_nt(g, m, kk, n, a.data(), bnt.data(), cp.data(), false);
    CHECK(bits_equal(cs, cp));
    std::vector<T> ctn(g * kk * n, T(0)), ctn2(g * kk * n, T(0));
    k::serial::bgemm_tn(g, m, kk, n, a.data(), b.data(), ctn.data(), true);
    k::par::bgemm_tn(g, m, kk, n, a.data(), b.data(), ctn2.data(), true);
    CHECK(bits_equal(ctn, ctn2));
  }

  SUBCASE("row normalizations") {
    auto x = randv<T>(r, rows * n, -4.0, 4.0);
    auto gamma = randv<T>(r, n, 0.5, 1.5);
    auto beta = randv<T>(r, n);
    auto dy = randv<T>(r, rows * n);
    std::vector<T> ys(rows * n), yp(rows * n), ms(rows), mp(rows), rs(rows), rp(rows);
    k::serial::softmax_rows(rows, n, x.data(), ys.data());
    k::par::softmax_rows(rows, n, x.data(), yp.data());
    CHECK(bits_equal(ys, yp));
    std::vector<T> dxs(rows * n, T(0.5)), dxp(rows * n, T(0.5));
    k::serial::softmax_rows_bwd(rows, n, ys.data(), dy.data(), dxs.data());
    k::par::softmax_rows_bwd(rows, n, yp.data(), dy.data(), dxp.data());
    CHECK(bits_equal(dxs, dxp));

    k::serial::layernorm_rows(rows, n, x.data(), gamma.data(), beta.data(), T(1e-6), ys.data(), ms.data(), rs.data());
    k::par::layernorm_rows(rows, n, x.data(), gamma.data(), beta.data(), T(1e-6), yp.data(), mp.data(), rp.data());
    CHECK(bits_equal(ys, yp));
    CHECK(bits_equal(ms, mp));
    CHECK(bits_equal(rs, rp));
    std::vector<T> dgs(n, T(0)), dgp(n, T(0)), dbs(n, T(0)), dbp(n, T(0));
    std::fill(dxs.begin(), dxs.end(), T(0));
    std::fill(dxp.begin(), dxp.end(), T(0));
    k::serial::layernorm_rows_bwd(rows, n, x.data(), gamma.data(), ms.data(), rs.data(), dy.data(), dxs.data(), dgs.data(), dbs.data());
    k::par::layernorm_rows_bwd(rows, n, x.data(), gamma.data(), mp.data(), rp.data(), dy.data(), dxp.data(), dgp.data(), dbp.data());
    CHECK(bits_equal(dxs, dxp));
    CHECK(bits_equal(dgs, dgp));
    CHECK(bits_equal(dbs, dbp));

    k::serial::l2norm_rows(rows, n, x.data(), T(1e-8), ys.data(), ms.data());
    k::par::l2norm_rows(rows, n, x.data(), T(1e-8), yp.data(), mp.data());
    CHECK(bits_equal(ys, yp));
  }

  SUBCASE("elementwise, activations, reductions") {
    const i64 nn = 4321;
    auto a = randv<T>(r, nn, -5.0, 5.0), b = randv<T>(r, nn);
    std::vector<T> ys(nn), yp(nn);
    k::serial::ew_add(nn, a.data(), b.data(), ys.data());
    k::par::ew_add(nn, a.data(), b.data(), yp.data());
    CHECK(bits_equal(ys, yp));
    k::serial::ew_mul(nn, a.data(), b.data(), ys.data());
    k::par::ew_mul(nn, a.data(), b.data(), yp.data());
    CHECK(bits_equal(ys, yp));
    k::serial::gelu(nn, a.data(), ys.data());
    k::par::gelu(nn, a.data(), yp.data());
    CHECK(bits_equal(ys, yp));
    k::serial::sigmoid(nn, a.data(), ys.data());
    k::par::sigmoid(nn, a.data(), yp.data());
    CHECK(bits_equal(ys, yp));
    k::serial::softplus(nn, a.data(), ys.data());
    k::par::softplus(nn, a.data(), yp.data());
    CHECK(bits_equal(ys, yp));
    std::vector<T> dxs(nn, T(0)), dxp(nn, T(0));
    k::serial::gelu_bwd(nn, a.data(), b.data(), dxs.data());
    k::par::gelu_bwd(nn, a.data(), b.data(), dxp.data());
    CHECK(bits_equal(dxs, dxp));

    const i64 outer = 6, rn = 7, inner = 8;
    auto x = randv<T>(r, outer * rn * inner);
    std::vector<T> rs(outer * inner), rp(outer * inner);
    k::serial::reduce_axis_sum(outer, rn, inner, x.data(), rs.data(), false);
    k::par::reduce_axis_sum(outer, rn, inner, x.data(), rp.data(), false);
    CHECK(bits_equal(rs, rp));
    std::vector<T> bs(outer * rn * inner, T(1)), bp(outer * rn * inner, T(1));
    k::serial::broadcast_axis_add(outer, rn, inner, T(0.5), rs.data(), bs.data());
    k::par::broadcast_axis_add(outer, rn, inner, T(0.5), rp.data(), bp.data());
    CHECK(bits_equal(bs, bp));
  }
}

TEST_CASE("softmax rows are normalized and shift-invariant") {
  hpm::Rng r(105);
  const i64 rows = 5, n = 9;
  auto x = randv<double>(r, rows * n, -3.0, 3.0);
  std::vector<double> y(rows * n), y2(rows * n), xs(x);
  k::serial::softmax_rows(rows, n, x.data(), y.data());
  for (auto& v : xs) v += 123.0;
  k::serial::softmax_rows(rows, n, xs.data(), y2.data());
  for (i64 i = 0; i < rows; ++i) {
    double s = 0.0;
    for (i64 j = 0; j < n; ++j) {
      CHECK(y[i * n + j] > 0.0);
      s += y[i * n + j];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (i64 i = 0; i < rows * n; ++i) CHECK(y[i] == doctest::Approx(y2[i]).epsilon(1e-9));
}

TEST_CASE("layernorm output has zero mean and unit variance") {
  hpm::Rng r(106);
  const i64 rows = 4, n = 32;
  auto x = randv<double>(r, rows * n, -2.0, 7.0);
  std::vector<double> gamma(n, 1.0), beta(n, 0.0), y(rows * n), mean(rows), rstd(rows);
  k::serial::layernorm_rows(rows, n, x.data(), gamma.data(), beta.data(), 1e-12, y.data(), mean.data(), rstd.data());
  for (i64 i = 0; i < rows; ++i) {
    double mu = 0.0, var = 0.0;
    for (i64 j = 0; j < n; ++j) mu += y[i * n + j];
    mu /= n;
    for (i64 j = 0; j < n; ++j) var += (y[i * n + j] - mu) * (y[i * n + j] - mu);
    var /= n;
    CHECK(mu == doctest::Approx(0.0).epsilon(1).scale(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("activation extremes stay finite") {
  const std::vector<double> x{-100.0, -20.0, 0.0, 20.0, 100.0};
  std::vector<double> y(x.size());
  k::serial::softplus(5, x.data(), y.data());
  CHECK(y[0] == doctest::Approx(0.0).epsilon(1).scale(1e-30));
  CHECK(y[2] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(y[4] == doctest::Approx(100.0).epsilon(1e-12));
  k::serial::sigmoid(5, x.data(), y.data());
  CHECK(y[0] >= 0.0);
  CHECK(y[0] < 1e-40);
  CHECK(y[4] == doctest::Approx(1.0).epsilon(1e-12));
  k::serial::gelu(5, x.data(), y.data());
  CHECK(std::isfinite(y[0]));
  CHECK(y[4] == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("gather and scatter round-trip") {
  hpm::Rng r(107);
  const i64 g = 2, v = 3, rr = 5, d = 4;
  auto x = randv<float>(r, g * rr * d);
  std::vector<k::i32> idx{4, 0, 2, 1, 3, 0};
  std::vector<float> y(g * v * d);
  k::serial::gather_rows(g, v, rr, d, idx.data(), x.data(), y.data());
  for (i64 gg = 0; gg < g; ++gg)
    for (i64 vv = 0; vv < v; ++vv)
      for (i64 j = 0; j < d; ++j)
        CHECK(y[(gg * v + vv) * d + j] == x[(gg * rr + idx[gg * v + vv]) * d + j]);

  // Scatter of ones counts how many times each row was gathered.
  std::vector<float> ones(g * v * d, 1.0f), acc(g * rr * d, 0.0f);
  k::serial::scatter_rows_add(g, v, rr, d, idx.data(), ones.data(), acc.data());
  CHECK(acc[(0 * rr + 4) * d] == 1.0f);
  CHECK(acc[(1 * rr + 0) * d] == 1.0f);
  CHECK(acc[(0 * rr + 1) * d] == 0.0f);
}

TEST_CASE("head split and merge are inverses") {
  hpm::Rng r(108);
  const i64 b = 2, rr = 3, h = 4, dh = 5;
  auto x = randv<float>(r, b * rr * h * dh);
  std::vector<float> y(x.size()), back(x.size());
  k::serial::split_heads(b, rr, h, dh, x.data(), y.data());
  k::serial::merge_heads(b, rr, h, dh, y.data(), back.data());
  CHECK(bits_equal(x, back));
}

TEST_CASE("pairwise_diff layout and backward") {
  const std::vector<double> v{1.0, 3.0, -2.0};
  std::vector<double> d(9);
  k::serial::pairwise_diff(3, v.data(), d.data());
  CHECK(d[0 * 3 + 1] == doctest::Approx(-2.0));
  CHECK(d[1 * 3 + 0] == doctest::Approx(2.0));
  CHECK(d[2 * 3 + 1] == doctest::Approx(-5.0));
  CHECK(d[0] == 0.0);

  // dv_i = sum_j dy_ij - sum_j dy_ji
  std::vector<double> dy(9);
  for (int i = 0; i < 9; ++i) dy[i] = i + 1;
  std::vector<double> dv(3, 0.0);
  k::serial::pairwise_diff_bwd(3, dy.data(), dv.data());
  CHECK(dv[0] == doctest::Approx((1 + 2 + 3) - (1 + 4 + 7)));
  CHECK(dv[1] == doctest::Approx((4 + 5 + 6) - (2 + 5 + 8)));
  CHECK(dv[2] == doctest::Approx((7 + 8 + 9) - (3 + 6 + 9)));
}

}  // TEST_SUITE
