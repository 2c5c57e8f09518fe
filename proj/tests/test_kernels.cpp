#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "safl/kernels.hpp"
#include "safl/rng.hpp"

#include "test_util.hpp"

using namespace safl;
using kernels::ConvShape;
using kernels::Ops;

namespace {

std::vector<double> rand_vec(size_t n, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ConvShape random_shape(std::mt19937_64& rng, bool stride_one) {
  std::uniform_int_distribution<int> small(1, 4);
  std::uniform_int_distribution<int> hw(3, 9);
  ConvShape s;
  s.batch = small(rng);
  s.in_c = small(rng);
  s.out_c = small(rng);
  s.in_h = hw(rng);
  s.in_w = hw(rng);
  s.k_h = 3;
  s.k_w = 3;
  s.stride = stride_one ? 1 : 2;
  s.pad = std::uniform_int_distribution<int>(0, 2)(rng);
  if (s.out_h() < 1 || s.out_w() < 1) s.pad = 1;
  return s;
}

}  // namespace

TEST_CASE("conv forward matches the seven-loop reference") {
  auto rng = make_rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const ConvShape s = random_shape(rng, trial % 2 == 0);
    const auto x = rand_vec(
        static_cast<size_t>(s.batch) * s.in_c * s.in_h * s.in_w, rng);
    auto w = rand_vec(static_cast<size_t>(s.out_c) * s.in_c * s.k_h * s.k_w,
                      rng);
    const auto b = rand_vec(static_cast<size_t>(s.out_c), rng);
    if (trial % 3 == 0)  // masked channels exercise the zero-weight skip
      for (size_t i = 0; i < w.size() / 2; ++i) w[i] = 0.0;
    const size_t ylen =
        static_cast<size_t>(s.batch) * s.out_c * s.out_h() * s.out_w();
    std::vector<double> want(ylen, 0.0), got(ylen, 0.0);
    testutil::naive_conv_forward(s, x.data(), w.data(), b.data(), want.data());
    kernels::scalar_ops().conv2d_forward(s, x.data(), w.data(), b.data(),
                                         got.data());
    CHECK(max_abs_diff(want, got) < 1e-12);
  }
}

TEST_CASE("conv backward passes match finite differences of the reference") {
  auto rng = make_rng(12);
  for (int trial = 0; trial < 8; ++trial) {
    const ConvShape s = random_shape(rng, trial % 2 == 0);
    const size_t xlen = static_cast<size_t>(s.batch) * s.in_c * s.in_h * s.in_w;
    const size_t wlen = static_cast<size_t>(s.out_c) * s.in_c * s.k_h * s.k_w;
    const size_t ylen =
        static_cast<size_t>(s.batch) * s.out_c * s.out_h() * s.out_w();
    auto x = rand_vec(xlen, rng);
    auto w = rand_vec(wlen, rng);
    const auto b = rand_vec(static_cast<size_t>(s.out_c), rng);
    const auto dy = rand_vec(ylen, rng);

    const auto loss_at = [&] {
      std::vector<double> y(ylen, 0.0);
      testutil::naive_conv_forward(s, x.data(), w.data(), b.data(), y.data());
      double v = 0;
      for (size_t i = 0; i < ylen; ++i) v += y[i] * dy[i];
      return v;
    };

    std::vector<double> dx(xlen, 0.0), dw(wlen, 0.0),
        db(static_cast<size_t>(s.out_c), 0.0);
    kernels::scalar_ops().conv2d_backward_input(s, dy.data(), w.data(),
                                                dx.data());
    kernels::scalar_ops().conv2d_backward_params(s, x.data(), dy.data(),
                                                 dw.data(), db.data());

    const double eps = 1e-6;
    for (size_t j = 0; j < xlen; j += 7) {
      const double v0 = x[j];
      x[j] = v0 + eps;
      const double vp = loss_at();
      x[j] = v0 - eps;
      const double vm = loss_at();
      x[j] = v0;
      CHECK(std::abs((vp - vm) / (2 * eps) - dx[j]) < 1e-6);
    }
    for (size_t j = 0; j < wlen; j += 5) {
      const double v0 = w[j];
      w[j] = v0 + eps;
      const double vp = loss_at();
      w[j] = v0 - eps;
      const double vm = loss_at();
      w[j] = v0;
      CHECK(std::abs((vp - vm) / (2 * eps) - dw[j]) < 1e-6);
    }
  }
}

TEST_CASE("linear ops match hand math") {
  // y = x W^T + b with W=[[1,2],[3,4]], b=0, x=[1,1] -> [3, 7]
  const double x[2] = {1, 1};
  const double w[4] = {1, 2, 3, 4};
  const double b[2] = {0, 0};
  double y[2] = {};
  kernels::scalar_ops().linear_forward(1, 2, 2, x, w, b, y);
  CHECK(y[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(7.0).epsilon(1e-15));

  // dL/dy = [1,1] -> dx = W^T dy = [4, 6]; dw = dy^T x = all ones pattern
  const double dy[2] = {1, 1};
  double dx[2] = {};
  double dw[4] = {};
  double db[2] = {};
  kernels::scalar_ops().linear_backward_input(1, 2, 2, dy, w, dx);
  kernels::scalar_ops().linear_backward_params(1, 2, 2, x, dy, dw, db);
  CHECK(dx[0] == doctest::Approx(4.0));
  CHECK(dx[1] == doctest::Approx(6.0));
  for (double v : dw) CHECK(v == doctest::Approx(1.0));
  for (double v : db) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("primitive ops match straightforward loops") {
  auto rng = make_rng(13);
  for (size_t n : {1u, 2u, 3u, 7u, 8u, 15u, 64u, 97u}) {
    const auto x = rand_vec(n, rng);
    const auto q = rand_vec(n, rng);
    auto y = rand_vec(n, rng);
    auto y2 = y;
    kernels::scalar_ops().axpy(n, 0.37, x.data(), y.data());
    for (size_t i = 0; i < n; ++i) y2[i] += 0.37 * x[i];
    CHECK(max_abs_diff(y, y2) == 0.0);

    double dot_ref = 0, sum_ref = 0;
    for (size_t i = 0; i < n; ++i) {
      dot_ref += x[i] * q[i];
      sum_ref += x[i];
    }
    CHECK(kernels::scalar_ops().dot(n, x.data(), q.data()) ==
          doctest::Approx(dot_ref).epsilon(1e-13));
    CHECK(kernels::scalar_ops().reduce_sum(n, x.data()) ==
          doctest::Approx(sum_ref).epsilon(1e-13));

    std::vector<double> aff(n), tri(n);
    kernels::scalar_ops().affine(n, 2.0, x.data(), -0.5, aff.data());
    kernels::scalar_ops().triad(n, 2.0, x.data(), -3.0, q.data(), 0.25,
                                tri.data());
    for (size_t i = 0; i < n; ++i) {
      CHECK(aff[i] == doctest::Approx(2.0 * x[i] - 0.5));
      CHECK(tri[i] == doctest::Approx(2.0 * x[i] - 3.0 * q[i] + 0.25));
    }

    std::vector<double> r(n), rb(n);
    kernels::scalar_ops().relu_forward(n, x.data(), r.data());
    kernels::scalar_ops().relu_backward(n, x.data(), q.data(), rb.data());
    for (size_t i = 0; i < n; ++i) {
      CHECK(r[i] == (x[i] > 0 ? x[i] : 0.0));
      CHECK(rb[i] == (x[i] > 0 ? q[i] : 0.0));
    }
  }
}

TEST_CASE("avx2 table agrees with the scalar table when present") {
  const Ops* avx = kernels::avx2_ops();
  if (!avx) {
    MESSAGE("avx2 backend unavailable on this machine, nothing to compare");
    return;
  }
  auto rng = make_rng(14);
  const Ops& ref = kernels::scalar_ops();

  for (int trial = 0; trial < 30; ++trial) {
    const ConvShape s = random_shape(rng, trial % 4 != 0);
    const size_t xlen = static_cast<size_t>(s.batch) * s.in_c * s.in_h * s.in_w;
    const size_t wlen = static_cast<size_t>(s.out_c) * s.in_c * s.k_h * s.k_w;
    const size_t ylen =
        static_cast<size_t>(s.batch) * s.out_c * s.out_h() * s.out_w();
    const auto x = rand_vec(xlen, rng);
    const auto w = rand_vec(wlen, rng);
    const auto b = rand_vec(static_cast<size_t>(s.out_c), rng);
    const auto dy = rand_vec(ylen, rng);

    std::vector<double> ya(ylen, 0.0), yb(ylen, 0.0);
    ref.conv2d_forward(s, x.data(), w.data(), b.data(), ya.data());
    avx->conv2d_forward(s, x.data(), w.data(), b.data(), yb.data());
    CHECK(max_abs_diff(ya, yb) < 1e-11);

    std::vector<double> dxa(xlen, 0.0), dxb(xlen, 0.0);
    ref.conv2d_backward_input(s, dy.data(), w.data(), dxa.data());
    avx->conv2d_backward_input(s, dy.data(), w.data(), dxb.data());
    CHECK(max_abs_diff(dxa, dxb) < 1e-11);

    std::vector<double> dwa(wlen, 0.0), dwb(wlen, 0.0);
    std::vector<double> dba(static_cast<size_t>(s.out_c), 0.0), dbb = dba;
    ref.conv2d_backward_params(s, x.data(), dy.data(), dwa.data(), dba.data());
    avx->conv2d_backward_params(s, x.data(), dy.data(), dwb.data(),
                                dbb.data());
    CHECK(max_abs_diff(dwa, dwb) < 1e-11);
    CHECK(max_abs_diff(dba, dbb) < 1e-11);
  }

  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> dim(1, 33);
    const int n = dim(rng), in_f = dim(rng), out_f = dim(rng);
    const auto x = rand_vec(static_cast<size_t>(n) * in_f, rng);
    const auto w = rand_vec(static_cast<size_t>(out_f) * in_f, rng);
    const auto b = rand_vec(static_cast<size_t>(out_f), rng);
    const auto dy = rand_vec(static_cast<size_t>(n) * out_f, rng);

    std::vector<double> ya(static_cast<size_t>(n) * out_f),
        yb(static_cast<size_t>(n) * out_f);
    ref.linear_forward(n, in_f, out_f, x.data(), w.data(), b.data(),
                       ya.data());
    avx->linear_forward(n, in_f, out_f, x.data(), w.data(), b.data(),
                        yb.data());
    CHECK(max_abs_diff(ya, yb) < 1e-11);

    std::vector<double> dxa(static_cast<size_t>(n) * in_f, 0.0), dxb = dxa;
    ref.linear_backward_input(n, in_f, out_f, dy.data(), w.data(), dxa.data());
    avx->linear_backward_input(n, in_f, out_f, dy.data(), w.data(),
                               dxb.data());
    CHECK(max_abs_diff(dxa, dxb) < 1e-11);

    std::vector<double> dwa(static_cast<size_t>(out_f) * in_f, 0.0), dwb = dwa;
    std::vector<double> dba(static_cast<size_t>(out_f), 0.0), dbb = dba;
    ref.linear_backward_params(n, in_f, out_f, x.data(), dy.data(), dwa.data(),
                               dba.data());
    avx->linear_backward_params(n, in_f, out_f, x.data(), dy.data(),
                                dwb.data(), dbb.data());
    CHECK(max_abs_diff(dwa, dwb) < 1e-11);
    CHECK(max_abs_diff(dba, dbb) < 1e-11);
  }

  for (size_t n : {1u, 3u, 4u, 5u, 17u, 64u, 101u}) {
    const auto x = rand_vec(n, rng);
    const auto q = rand_vec(n, rng);
    CHECK(std::abs(ref.dot(n, x.data(), q.data()) -
                   avx->dot(n, x.data(), q.data())) < 1e-11);
    CHECK(std::abs(ref.reduce_sum(n, x.data()) -
                   avx->reduce_sum(n, x.data())) < 1e-11);
    std::vector<double> ra(n), rb(n);
    ref.relu_forward(n, x.data(), ra.data());
    avx->relu_forward(n, x.data(), rb.data());
    CHECK(max_abs_diff(ra, rb) == 0.0);
    ref.relu_backward(n, x.data(), q.data(), ra.data());
    avx->relu_backward(n, x.data(), q.data(), rb.data());
    CHECK(max_abs_diff(ra, rb) == 0.0);
    std::vector<double> ta(n), tb(n);
    ref.triad(n, 1.5, x.data(), -2.5, q.data(), 0.125, ta.data());
    avx->triad(n, 1.5, x.data(), -2.5, q.data(), 0.125, tb.data());
    CHECK(max_abs_diff(ta, tb) < 1e-12);
  }
}

TEST_CASE("backend selection round-trips") {
  const kernels::Backend before = kernels::active_backend();
  CHECK(kernels::active().name == kernels::backend_name());
  kernels::set_backend(kernels::Backend::Scalar);
  CHECK(kernels::backend_name() == "scalar");
  CHECK(kernels::active().dot != nullptr);
  if (kernels::avx2_ops()) {
    kernels::set_backend(kernels::Backend::Avx2);
    CHECK(kernels::backend_name() == "avx2");
  }
  kernels::set_backend(before);
}
