#include "doctest.h"
#include "gradcheck.hpp"

#include "kinr/error.hpp"
#include "kinr/kspace.hpp"

#include <cmath>

using namespace kinr::nn;
using testing::gradcheck;
using testing::probe;
using testing::random_param;
using testing::VarD;

TEST_CASE("matmul and linear gradients")
{
  auto a = random_param({3, 4}, 1);
  auto b = random_param({4, 5}, 2);
  auto bias = random_param({5}, 3);
  CHECK(gradcheck({a, b}, [&] { return probe(matmul(a, b)); }) < 1e-6);
  CHECK(gradcheck({a, b, bias}, [&] { return probe(linear(a, b, bias)); }) < 1e-6);
  CHECK(gradcheck({a, b}, [&] { return probe(linear(a, b, VarD{})); }) < 1e-6);
}

TEST_CASE("elementwise gradients")
{
  auto a = random_param({2, 3, 4}, 4);
  auto b = random_param({2, 3, 4}, 5);
  CHECK(gradcheck({a, b}, [&] { return probe(add(a, b)); }) < 1e-6);
  CHECK(gradcheck({a, b}, [&] { return probe(sub(a, b)); }) < 1e-6);
  CHECK(gradcheck({a, b}, [&] { return probe(mul(a, b)); }) < 1e-6);
  CHECK(gradcheck({a}, [&] { return probe(scale(a, -2.5)); }) < 1e-6);
  CHECK(gradcheck({a}, [&] { return probe(silu(a)); }) < 1e-6);
  CHECK(gradcheck({a}, [&] { return probe(sigmoid(a)); }) < 1e-6);
  CHECK(gradcheck({a}, [&] { return probe(reshape(a, {6, 4})); }) < 1e-6);
}

TEST_CASE("layer norm matches definition and gradients")
{
  auto x = random_param({5, 8}, 6, 2.0);
  auto g = random_param({8}, 7);
  auto b = random_param({8}, 8);
  auto y = layer_norm(x, g, b);
  for (int r = 0; r < 5; ++r) {
    double mean = 0;
    double var = 0;
    for (int j = 0; j < 8; ++j) {
      mean += x.value()[r * 8 + j] / 8;
    }
    for (int j = 0; j < 8; ++j) {
      var += std::pow(x.value()[r * 8 + j] - mean, 2) / 8;
    }
    for (int j = 0; j < 8; ++j) {
      double const want = (x.value()[r * 8 + j] - mean) / std::sqrt(var + 1e-5) * g.value()[j] + b.value()[j];
      CHECK(y.value()[r * 8 + j] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  CHECK(gradcheck({x, g, b}, [&] { return probe(layer_norm(x, g, b)); }) < 1e-5);
}

namespace {

// Direct softmax(QK^T/sqrt(dh)) V per head.
std::vector<double> naive_attention(VarD const &q, VarD const &k, VarD const &v, int heads)
{
  int const n = q.dim(0);
  int const m = k.dim(0);
  int const d = q.dim(1);
  int const dh = d / heads;
  std::vector<double> out(static_cast<std::size_t>(n) * d, 0.0);
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < n; ++i) {
      std::vector<double> s(m);
      double mx = -1e300;
      for (int j = 0; j < m; ++j) {
        double dot = 0;
        for (int t = 0; t < dh; ++t) {
          dot += q.value()[i * d + h * dh + t] * k.value()[j * d + h * dh + t];
        }
        s[j] = dot / std::sqrt(double(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto &x : s) {
        x = std::exp(x - mx);
        z += x;
      }
      for (int j = 0; j < m; ++j) {
        for (int t = 0; t < dh; ++t) {
          out[i * d + h * dh + t] += s[j] / z * v.value()[j * d + h * dh + t];
        }
      }
    }
  }
  return out;
}

} // namespace

TEST_CASE("attention matches direct softmax and is chunk invariant")
{
  auto q = random_param({7, 8}, 9, 2.0);
  auto k = random_param({5, 8}, 10, 2.0);
  auto v = random_param({5, 8}, 11);
  auto const want = naive_attention(q, k, v, 2);
  for (int chunk : {1, 3, 7, 100}) {
    auto y = attention(q, k, v, 2, chunk);
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(y.value()[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
  for (int chunk : {2, 7}) {
    CHECK(gradcheck({q, k, v}, [&] { return probe(attention(q, k, v, 2, chunk)); }) < 1e-5);
  }
}

TEST_CASE("attention gradients do not depend on chunk size")
{
  auto q = random_param({6, 4}, 12);
  auto k = random_param({9, 4}, 13);
  auto v = random_param({9, 4}, 14);
  std::vector<std::vector<double>> grads;
  for (int chunk : {1, 4, 6}) {
    q.zero_grad();
    k.zero_grad();
    backward(probe(attention(q, k, v, 1, chunk)));
    grads.emplace_back(q.grad().begin(), q.grad().end());
    grads.back().insert(grads.back().end(), k.grad().begin(), k.grad().end());
  }
  for (std::size_t i = 0; i < grads[0].size(); ++i) {
    CHECK(grads[1][i] == doctest::Approx(grads[0][i]).epsilon(1e-12));
    CHECK(grads[2][i] == doctest::Approx(grads[0][i]).epsilon(1e-12));
  }
}

TEST_CASE("attention rejects bad head counts")
{
  auto q = random_param({3, 6}, 1);
  CHECK_THROWS_AS(attention(q, q, q, 4, 2), kinr::ShapeError);
}

TEST_CASE("conv2d matches a direct loop and has correct gradients")
{
  for (auto [stride, pad, ksz] : {std::tuple{1, 1, 3}, std::tuple{2, 1, 3}, std::tuple{1, 0, 1}, std::tuple{1, 3, 7}}) {
    auto x = random_param({3, 8, 6}, 20);
    auto w = random_param({4, 3, ksz, ksz}, 21);
    auto b = random_param({4}, 22);
    auto y = conv2d(x, w, b, stride, pad);
    int const ho = y.dim(1);
    int const wo = y.dim(2);
    CHECK(ho == (8 + 2 * pad - ksz) / stride + 1);
    for (int o = 0; o < 4; ++o) {
      for (int r = 0; r < ho; ++r) {
        for (int c = 0; c < wo; ++c) {
          double acc = b.value()[o];
          for (int ch = 0; ch < 3; ++ch) {
            for (int i = 0; i < ksz; ++i) {
              for (int j = 0; j < ksz; ++j) {
                int const iy = r * stride - pad + i;
                int const ix = c * stride - pad + j;
                if (iy >= 0 && iy < 8 && ix >= 0 && ix < 6) {
                  acc += w.value()[((o * 3 + ch) * ksz + i) * ksz + j] * x.value()[(ch * 8 + iy) * 6 + ix];
                }
              }
            }
          }
          CHECK(y.value()[(o * ho + r) * wo + c] == doctest::Approx(acc).epsilon(1e-12));
        }
      }
    }
    CHECK(gradcheck({x, w, b}, [&] { return probe(conv2d(x, w, b, stride, pad)); }) < 1e-5);
  }
}

TEST_CASE("bilinear upsampling preserves constants and interpolates")
{
  auto c = VarD::constant({1, 3, 4}, std::vector<double>(12, 2.5));
  auto up = upsample2x(c);
  CHECK(up.shape() == Shape{1, 6, 8});
  for (double v : up.value()) {
    CHECK(v == doctest::Approx(2.5));
  }
  // A linear ramp in columns stays linear away from the clamped edges.
  std::vector<double> ramp;
  for (int r = 0; r < 2; ++r) {
    for (int col = 0; col < 4; ++col) {
      ramp.push_back(col);
    }
  }
  auto y = upsample2x(VarD::constant({1, 2, 4}, ramp));
  CHECK(y.value()[1] == doctest::Approx(0.25));
  CHECK(y.value()[2] == doctest::Approx(0.75));
  CHECK(y.value()[7] == doctest::Approx(3.0));
  auto x = random_param({2, 3, 5}, 23);
  CHECK(gradcheck({x}, [&] { return probe(upsample2x(x)); }) < 1e-6);
}

TEST_CASE("channel and spatial attention helpers")
{
  auto x = random_param({3, 4, 5}, 30);
  auto s = random_param({3}, 31);
  auto m = random_param({1, 4, 5}, 32);
  CHECK(gradcheck({x}, [&] { return probe(global_avg_pool(x)); }) < 1e-6);
  CHECK(gradcheck({x, s}, [&] { return probe(scale_channels(x, s)); }) < 1e-6);
  CHECK(gradcheck({x, m}, [&] { return probe(scale_spatial(x, m)); }) < 1e-6);
  CHECK(gradcheck({x, s}, [&] { return probe(add_channel_bias(x, s)); }) < 1e-6);
  CHECK(gradcheck({x}, [&] { return probe(channel_mean_max(x)); }) < 1e-6);
  auto gap = global_avg_pool(x);
  double mean0 = 0;
  for (int i = 0; i < 20; ++i) {
    mean0 += x.value()[i] / 20;
  }
  CHECK(gap.value()[0] == doctest::Approx(mean0));
}

TEST_CASE("fft ops agree with the grid transform and are adjoint")
{
  auto x = random_param({2, 6, 4}, 40);
  auto y = fft2c(x);
  kinr::ComplexImage img(6, 4, std::vector<double>(x.value().begin(), x.value().end()));
  auto const ref = kinr::fft2c(img);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(y.value()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  }
  auto back = ifft2c(y);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(back.value()[i] == doctest::Approx(x.value()[i]).epsilon(1e-12));
  }
  CHECK(gradcheck({x}, [&] { return probe(fft2c(x)); }) < 1e-6);
  CHECK(gradcheck({x}, [&] { return probe(ifft2c(x)); }) < 1e-6);
}

TEST_CASE("layout ops and mse")
{
  auto x = random_param({12, 3}, 50);
  auto planes = rows_to_planes(x, 3, 4);
  CHECK(planes.shape() == Shape{3, 3, 4});
  CHECK(planes.value()[1 * 12 + 5] == x.value()[5 * 3 + 1]);
  auto rows = planes_to_rows(planes);
  CHECK(std::equal(rows.value().begin(), rows.value().end(), x.value().begin()));
  CHECK(gradcheck({x}, [&] { return probe(rows_to_planes(x, 3, 4)); }) < 1e-6);
  CHECK(gradcheck({x}, [&] { return probe(gather_rows(x, {0, 5, 5, 11})); }) < 1e-6);
  auto a = random_param({4}, 51);
  auto b = random_param({4}, 52);
  double want = 0;
  for (int i = 0; i < 4; ++i) {
    want += std::pow(a.value()[i] - b.value()[i], 2) / 4;
  }
  CHECK(mse(a, b).item() == doctest::Approx(want));
  CHECK(gradcheck({a, b}, [&] { return mse(a, b); }) < 1e-6);
}

TEST_CASE("no-grad guard drops the tape")
{
  auto a = random_param({2, 2}, 60);
  NoGradGuard guard;
  auto y = silu(a);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->inputs.empty());
}

namespace {

// Heap blocks are only 16-byte aligned, while vectorized kernels peel by 64-byte alignment.
// Copies a parameter into a buffer that starts at the requested offset within a cache line.
template <typename T>
Var<T> at_offset(Var<T> const &src, std::size_t offset, std::vector<std::vector<T>> &spare)
{
  for (int tries = 0; tries < 4096; ++tries) {
    std::vector<T> v(src.value().begin(), src.value().end());
    if (reinterpret_cast<std::uintptr_t>(v.data()) % 64 == offset) {
      return Var<T>::parameter(src.shape(), std::move(v));
    }
    spare.push_back(std::move(v));
    spare.emplace_back(static_cast<std::size_t>(tries % 13 + 1));
  }
  FAIL("could not place a buffer at offset " << offset);
  return src;
}

template <typename T>
Var<T> random_t(Shape shape, std::uint64_t seed)
{
  auto const d = random_param(std::move(shape), seed);
  return Var<T>::parameter(d.shape(), std::vector<T>(d.value().begin(), d.value().end()));
}

template <typename T, typename F>
void check_alignment_invariant(std::string const &op, std::vector<Var<T>> const &inputs, F const &f)
{
  CAPTURE(op);
  std::vector<std::vector<T>> reference;
  for (std::size_t offset = 0; offset < 64; offset += 16) {
    CAPTURE(offset);
    std::vector<std::vector<T>> spare;
    std::vector<Var<T>> moved;
    for (auto const &in : inputs) {
      moved.push_back(at_offset(in, offset, spare));
    }
    auto const out = f(moved);
    backward(mse(out, Var<T>::zeros(out.shape())));
    std::vector<std::vector<T>> got{{out.value().begin(), out.value().end()}};
    for (auto const &m : moved) {
      got.emplace_back(m.grad().begin(), m.grad().end());
    }
    if (reference.empty()) {
      reference = got;
    } else {
      CHECK(got == reference);
    }
  }
}

template <typename T>
void alignment_suite()
{
  for (auto [n, k, m] : {std::array{3, 5, 7}, std::array{8, 8, 8}, std::array{37, 16, 24}, std::array{64, 32, 96}}) {
    CAPTURE(n);
    check_alignment_invariant<T>("linear", {random_t<T>({n, k}, 1), random_t<T>({k, m}, 2), random_t<T>({m}, 3)},
                                 [](auto const &v) { return linear(v[0], v[1], v[2]); });
    check_alignment_invariant<T>("matmul", {random_t<T>({n, k}, 4), random_t<T>({k, m}, 5)},
                                 [](auto const &v) { return matmul(v[0], v[1]); });
    check_alignment_invariant<T>("layer_norm", {random_t<T>({n, k}, 6), random_t<T>({k}, 7), random_t<T>({k}, 8)},
                                 [](auto const &v) { return layer_norm(v[0], v[1], v[2]); });
    check_alignment_invariant<T>("attention", {random_t<T>({n, 8}, 9), random_t<T>({m, 8}, 10), random_t<T>({m, 8}, 11)},
                                 [](auto const &v) { return attention(v[0], v[1], v[2], 2, 5); });
  }
  for (int s : {5, 8, 16}) {
    CAPTURE(s);
    check_alignment_invariant<T>("conv2d", {random_t<T>({3, s, s}, 12), random_t<T>({4, 3, 3, 3}, 13), random_t<T>({4}, 14)},
                                 [](auto const &v) { return conv2d(v[0], v[1], v[2], 1, 1); });
    check_alignment_invariant<T>("image attention", {random_t<T>({4, s, s}, 15), random_t<T>({2}, 16), random_t<T>({1, s, s}, 17)},
                                 [](auto const &v) {
                                   auto y = scale_spatial(scale_channels(upsample2x(v[0]), global_avg_pool(v[0])),
                                                          upsample2x(v[2]));
                                   return add_channel_bias(channel_mean_max(y), v[1]);
                                 });
  }
}

} // namespace

TEST_CASE("op results do not depend on buffer alignment")
{
  alignment_suite<float>();
  alignment_suite<double>();
}
