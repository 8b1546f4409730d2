#include "kinr/nn/ops.hpp"

#include "kinr/error.hpp"
#include "kinr/kspace.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace kinr::nn {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<MatR<T> const>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using CVecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1> const>;

void expect(bool ok, char const *op, std::string const &what)
{
  if (!ok) {
    throw ShapeError(std::string(op) + ": " + what);
  }
}

template <typename T>
void expect_rank(Var<T> const &v, std::size_t rank, char const *op)
{
  expect(v.defined() && v.shape().size() == rank, op,
         "expected rank " + std::to_string(rank) + ", got " + (v.defined() ? to_string(v.shape()) : "undefined"));
}

template <typename T>
void expect_same(Var<T> const &a, Var<T> const &b, char const *op)
{
  expect(a.shape() == b.shape(), op, "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T>
CMapR<T> cmat(Node<T> const *n, int rows, int cols)
{
  return CMapR<T>(n->value.data(), rows, cols);
}

template <typename T>
MapR<T> gmat(Node<T> *n, int rows, int cols)
{
  return MapR<T>(n->ensure_grad().data(), rows, cols);
}

template <typename T>
bool wants(Node<T> const *n)
{
  return n != nullptr && n->requires_grad;
}

} // namespace

template <typename T>
Var<T> matmul(Var<T> const &a, Var<T> const &b)
{
  expect_rank(a, 2, "matmul");
  expect_rank(b, 2, "matmul");
  int const n = a.dim(0);
  int const k = a.dim(1);
  int const m = b.dim(1);
  expect(b.dim(0) == k, "matmul", "inner dimensions differ");
  std::vector<T> out(static_cast<std::size_t>(n) * m);
  MapR<T>(out.data(), n, m).noalias() = cmat(a.node(), n, k) * cmat(b.node(), k, m);
  auto *pa = a.node();
  auto *pb = b.node();
  return make_result<T>({n, m}, std::move(out), {a, b}, [=](Node<T> &self) {
    auto g = CMapR<T>(self.grad.data(), n, m);
    if (wants(pa)) {
      gmat(pa, n, k).noalias() += g * cmat(pb, k, m).transpose();
    }
    if (wants(pb)) {
      gmat(pb, k, m).noalias() += cmat(pa, n, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> linear(Var<T> const &x, Var<T> const &w, Var<T> const &b)
{
  expect_rank(x, 2, "linear");
  expect_rank(w, 2, "linear");
  int const n = x.dim(0);
  int const in = x.dim(1);
  int const outd = w.dim(1);
  expect(w.dim(0) == in, "linear", "input width " + std::to_string(in) + " does not match weight " + to_string(w.shape()));
  std::vector<T> out(static_cast<std::size_t>(n) * outd);
  MapR<T> y(out.data(), n, outd);
  y.noalias() = cmat(x.node(), n, in) * cmat(w.node(), in, outd);
  Node<T> *pb = nullptr;
  if (b.defined()) {
    expect(b.numel() == static_cast<std::size_t>(outd), "linear", "bias size mismatch");
    y.rowwise() += CMapR<T>(b.node()->value.data(), 1, outd).row(0);
    pb = b.node();
  }
  auto *px = x.node();
  auto *pw = w.node();
  std::vector<Var<T>> inputs{x, w};
  if (b.defined()) {
    inputs.push_back(b);
  }
  return make_result<T>({n, outd}, std::move(out), inputs, [=](Node<T> &self) {
    auto g = CMapR<T>(self.grad.data(), n, outd);
    if (wants(px)) {
      gmat(px, n, in).noalias() += g * cmat(pw, in, outd).transpose();
    }
    if (wants(pw)) {
      gmat(pw, in, outd).noalias() += cmat(px, n, in).transpose() * g;
    }
    if (wants(pb)) {
      // Row-by-row accumulation keeps the summation order fixed (see conv2d).
      auto gb = pb->ensure_grad();
      for (int r = 0; r < n; ++r) {
        T const *row = self.grad.data() + static_cast<std::size_t>(r) * outd;
        for (int c = 0; c < outd; ++c) {
          gb[c] += row[c];
        }
      }
    }
  });
}

template <typename T>
Var<T> add(Var<T> const &a, Var<T> const &b)
{
  expect_same(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] + b.value()[i];
  }
  auto *pa = a.node();
  auto *pb = b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [=](Node<T> &self) {
    for (auto *p : {pa, pb}) {
      if (wants(p)) {
        auto g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += self.grad[i];
        }
      }
    }
  });
}

template <typename T>
Var<T> sub(Var<T> const &a, Var<T> const &b)
{
  expect_same(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] - b.value()[i];
  }
  auto *pa = a.node();
  auto *pb = b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [=](Node<T> &self) {
    if (wants(pa)) {
      auto g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i];
      }
    }
    if (wants(pb)) {
      auto g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] -= self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> mul(Var<T> const &a, Var<T> const &b)
{
  expect_same(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] * b.value()[i];
  }
  auto *pa = a.node();
  auto *pb = b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [=](Node<T> &self) {
    if (wants(pa)) {
      auto g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i] * pb->value[i];
      }
    }
    if (wants(pb)) {
      auto g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i] * pa->value[i];
      }
    }
  });
}

template <typename T>
Var<T> scale(Var<T> const &a, T s)
{
  std::vector<T> out(a.value().begin(), a.value().end());
  for (auto &v : out) {
    v *= s;
  }
  auto *pa = a.node();
  return make_result<T>(a.shape(), std::move(out), {a}, [=](Node<T> &self) {
    auto g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += s * self.grad[i];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> const &a, Shape shape)
{
  expect(numel(shape) == a.numel(), "reshape", to_string(a.shape()) + " -> " + to_string(shape));
  auto *pa = a.node();
  return make_result<T>(std::move(shape), std::vector<T>(a.value().begin(), a.value().end()), {a}, [=](Node<T> &self) {
    auto g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> silu(Var<T> const &x)
{
  std::vector<T> out(x.numel());
  auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] / (T(1) + std::exp(-xv[i]));
  }
  auto *px = x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [=](Node<T> &self) {
    auto g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      T const v = px->value[i];
      T const s = T(1) / (T(1) + std::exp(-v));
      g[i] += self.grad[i] * s * (T(1) + v * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> const &x)
{
  std::vector<T> out(x.numel());
  auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(1) / (T(1) + std::exp(-xv[i]));
  }
  auto *px = x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [=](Node<T> &self) {
    auto g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      T const y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> const &x, Var<T> const &gamma, Var<T> const &beta, T eps)
{
  expect_rank(x, 2, "layer_norm");
  int const n = x.dim(0);
  int const d = x.dim(1);
  expect(gamma.numel() == static_cast<std::size_t>(d) && beta.numel() == static_cast<std::size_t>(d), "layer_norm",
         "affine parameters must have the feature width");
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(static_cast<std::size_t>(n));
  auto xv = x.value();
  auto gv = gamma.value();
  auto bv = beta.value();
  for (int r = 0; r < n; ++r) {
    T const *row = xv.data() + static_cast<std::size_t>(r) * d;
    T mean = 0;
    for (int j = 0; j < d; ++j) {
      mean += row[j];
    }
    mean /= T(d);
    T var = 0;
    for (int j = 0; j < d; ++j) {
      var += (row[j] - mean) * (row[j] - mean);
    }
    var /= T(d);
    T const rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (int j = 0; j < d; ++j) {
      auto const i = static_cast<std::size_t>(r) * d + j;
      xhat[i] = (row[j] - mean) * rs;
      out[i] = xhat[i] * gv[j] + bv[j];
    }
  }
  auto *px = x.node();
  auto *pg = gamma.node();
  auto *pb = beta.node();
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [=, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T> &self) {
                          std::span<T> gx = wants(px) ? px->ensure_grad() : std::span<T>{};
                          std::span<T> gg = wants(pg) ? pg->ensure_grad() : std::span<T>{};
                          std::span<T> gb = wants(pb) ? pb->ensure_grad() : std::span<T>{};
                          std::vector<T> dxhat(static_cast<std::size_t>(d));
                          for (int r = 0; r < n; ++r) {
                            auto const base = static_cast<std::size_t>(r) * d;
                            T sum_dxhat = 0;
                            T sum_dxhat_xhat = 0;
                            for (int j = 0; j < d; ++j) {
                              T const go = self.grad[base + j];
                              if (!gg.empty()) {
                                gg[j] += go * xhat[base + j];
                              }
                              if (!gb.empty()) {
                                gb[j] += go;
                              }
                              dxhat[j] = go * pg->value[j];
                              sum_dxhat += dxhat[j];
                              sum_dxhat_xhat += dxhat[j] * xhat[base + j];
                            }
                            if (!gx.empty()) {
                              T const inv_d = T(1) / T(d);
                              for (int j = 0; j < d; ++j) {
                                gx[base + j] += rstd[r] * (dxhat[j] - inv_d * sum_dxhat - xhat[base + j] * inv_d * sum_dxhat_xhat);
                              }
                            }
                          }
                        });
}

namespace {

template <typename T>
MatR<T> head_slice(std::span<T const> data, int rows, int width, int head, int dh)
{
  MatR<T> out(rows, dh);
  for (int r = 0; r < rows; ++r) {
    std::copy_n(data.data() + static_cast<std::size_t>(r) * width + head * dh, dh, out.data() + static_cast<std::size_t>(r) * dh);
  }
  return out;
}

template <typename T>
void add_head_slice(std::span<T> dst, MatR<T> const &src, int width, int head, int dh)
{
  for (int r = 0; r < src.rows(); ++r) {
    T *d = dst.data() + static_cast<std::size_t>(r) * width + head * dh;
    T const *s = src.data() + static_cast<std::size_t>(r) * dh;
    for (int j = 0; j < dh; ++j) {
      d[j] += s[j];
    }
  }
}

} // namespace

template <typename T>
Var<T> attention(Var<T> const &q, Var<T> const &k, Var<T> const &v, int heads, int chunk)
{
  expect_rank(q, 2, "attention");
  expect_rank(k, 2, "attention");
  expect_rank(v, 2, "attention");
  int const n = q.dim(0);
  int const m = k.dim(0);
  int const d = q.dim(1);
  expect(k.dim(1) == d && v.dim(1) == d && v.dim(0) == m, "attention", "q/k/v widths or key counts differ");
  expect(heads > 0 && d % heads == 0, "attention", "feature width not divisible by head count");
  expect(n > 0 && m > 0, "attention", "empty query or key set");
  // Query rows are processed in tiles of at most kTile so each score block stays cache-resident;
  // a smaller `chunk` bounds memory further.
  constexpr int kTile = 128;
  chunk = std::min(chunk > 0 ? std::min(chunk, n) : n, kTile);
  int const dh = d / heads;
  T const sc = T(1) / std::sqrt(T(dh));

  std::vector<T> out(static_cast<std::size_t>(n) * d);
  std::vector<T> lse(static_cast<std::size_t>(heads) * n);
  MatR<T> s;
  for (int h = 0; h < heads; ++h) {
    MatR<T> const qh = head_slice<T>(q.value(), n, d, h, dh);
    MatR<T> const kh = head_slice<T>(k.value(), m, d, h, dh);
    MatR<T> const vh = head_slice<T>(v.value(), m, d, h, dh);
    for (int r0 = 0; r0 < n; r0 += chunk) {
      int const c = std::min(chunk, n - r0);
      s.resize(c, m);
      s.noalias() = (qh.middleRows(r0, c) * sc) * kh.transpose();
      Eigen::Matrix<T, Eigen::Dynamic, 1> const mx = s.rowwise().maxCoeff();
      s.colwise() -= mx;
      s = s.array().exp();
      Eigen::Matrix<T, Eigen::Dynamic, 1> const l = s.rowwise().sum();
      MatR<T> o = s * vh;
      for (int i = 0; i < c; ++i) {
        T const inv = T(1) / l[i];
        T *dst = out.data() + static_cast<std::size_t>(r0 + i) * d + h * dh;
        for (int j = 0; j < dh; ++j) {
          dst[j] = o(i, j) * inv;
        }
        lse[static_cast<std::size_t>(h) * n + r0 + i] = mx[i] + std::log(l[i]);
      }
    }
  }

  auto *pq = q.node();
  auto *pk = k.node();
  auto *pv = v.node();
  return make_result<T>({n, d}, std::move(out), {q, k, v}, [=, lse = std::move(lse)](Node<T> &self) {
    std::span<T const> const ov(self.value);
    std::span<T const> const gv(self.grad);
    MatR<T> s;
    MatR<T> dp;
    for (int h = 0; h < heads; ++h) {
      MatR<T> const qh = head_slice<T>(pq->value, n, d, h, dh);
      MatR<T> const kh = head_slice<T>(pk->value, m, d, h, dh);
      MatR<T> const vh = head_slice<T>(pv->value, m, d, h, dh);
      MatR<T> const oh = head_slice<T>(ov, n, d, h, dh);
      MatR<T> const goh = head_slice<T>(gv, n, d, h, dh);
      MatR<T> dq = MatR<T>::Zero(n, dh);
      MatR<T> dk = MatR<T>::Zero(m, dh);
      MatR<T> dv = MatR<T>::Zero(m, dh);
      for (int r0 = 0; r0 < n; r0 += chunk) {
        int const c = std::min(chunk, n - r0);
        auto const qc = qh.middleRows(r0, c);
        auto const goc = goh.middleRows(r0, c);
        s.resize(c, m);
        s.noalias() = (qc * sc) * kh.transpose();
        for (int i = 0; i < c; ++i) {
          s.row(i).array() -= lse[static_cast<std::size_t>(h) * n + r0 + i];
        }
        s = s.array().exp();
        dv.noalias() += s.transpose() * goc;
        dp.resize(c, m);
        dp.noalias() = goc * vh.transpose();
        Eigen::Matrix<T, Eigen::Dynamic, 1> const delta = (goc.array() * oh.middleRows(r0, c).array()).rowwise().sum();
        dp.colwise() -= delta;
        dp.array() *= s.array();
        dq.middleRows(r0, c).noalias() += (dp * kh) * sc;
        dk.noalias() += (dp.transpose() * qc) * sc;
      }
      if (wants(pq)) {
        add_head_slice<T>(pq->ensure_grad(), dq, d, h, dh);
      }
      if (wants(pk)) {
        add_head_slice<T>(pk->ensure_grad(), dk, d, h, dh);
      }
      if (wants(pv)) {
        add_head_slice<T>(pv->ensure_grad(), dv, d, h, dh);
      }
    }
  });
}

namespace {

struct ConvGeom
{
  int c, h, w, o, k, stride, pad, ho, wo;
  std::size_t patch() const { return static_cast<std::size_t>(c) * k * k; }
  std::size_t pixels() const { return static_cast<std::size_t>(ho) * wo; }
};

template <typename T>
void im2col(std::span<T const> x, ConvGeom const &g, std::vector<T> &cols)
{
  cols.assign(g.patch() * g.pixels(), T(0));
  for (int ch = 0; ch < g.c; ++ch) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        T *row = cols.data() + ((static_cast<std::size_t>(ch) * g.k + ki) * g.k + kj) * g.pixels();
        for (int oy = 0; oy < g.ho; ++oy) {
          int const iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) {
            continue;
          }
          T const *src = x.data() + (static_cast<std::size_t>(ch) * g.h + iy) * g.w;
          T *dst = row + static_cast<std::size_t>(oy) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            int const ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) {
              dst[ox] = src[ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(std::vector<T> const &cols, ConvGeom const &g, std::span<T> x)
{
  for (int ch = 0; ch < g.c; ++ch) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        T const *row = cols.data() + ((static_cast<std::size_t>(ch) * g.k + ki) * g.k + kj) * g.pixels();
        for (int oy = 0; oy < g.ho; ++oy) {
          int const iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) {
            continue;
          }
          T *dst = x.data() + (static_cast<std::size_t>(ch) * g.h + iy) * g.w;
          T const *src = row + static_cast<std::size_t>(oy) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            int const ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) {
              dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

} // namespace

template <typename T>
Var<T> conv2d(Var<T> const &x, Var<T> const &w, Var<T> const &b, int stride, int pad)
{
  expect_rank(x, 3, "conv2d");
  expect_rank(w, 4, "conv2d");
  expect(w.dim(1) == x.dim(0), "conv2d", "weight " + to_string(w.shape()) + " does not match input " + to_string(x.shape()));
  expect(w.dim(2) == w.dim(3), "conv2d", "only square kernels are supported");
  expect(stride >= 1 && pad >= 0, "conv2d", "invalid stride or padding");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  expect(g.ho > 0 && g.wo > 0, "conv2d", "kernel larger than padded input");

  std::vector<T> cols;
  im2col<T>(x.value(), g, cols);
  auto const patch = static_cast<int>(g.patch());
  auto const pixels = static_cast<int>(g.pixels());
  std::vector<T> out(static_cast<std::size_t>(g.o) * g.pixels());
  MapR<T> y(out.data(), g.o, pixels);
  y.noalias() = cmat(w.node(), g.o, patch) * CMapR<T>(cols.data(), patch, pixels);
  Node<T> *pb = nullptr;
  std::vector<Var<T>> inputs{x, w};
  if (b.defined()) {
    expect(b.numel() == static_cast<std::size_t>(g.o), "conv2d", "bias size mismatch");
    y.colwise() += CVecMap<T>(b.node()->value.data(), g.o);
    pb = b.node();
    inputs.push_back(b);
  }
  auto *px = x.node();
  auto *pw = w.node();
  return make_result<T>({g.o, g.ho, g.wo}, std::move(out), inputs, [=, cols = std::move(cols)](Node<T> &self) {
    auto gy = CMapR<T>(self.grad.data(), g.o, pixels);
    if (wants(pw)) {
      gmat(pw, g.o, patch).noalias() += gy * CMapR<T>(cols.data(), patch, pixels).transpose();
    }
    if (wants(pb)) {
      // Plain loop: Eigen's horizontal sums peel by pointer alignment, which would make the
      // rounding depend on where the allocator put the gradient.
      auto gb = pb->ensure_grad();
      for (int o = 0; o < g.o; ++o) {
        T acc = 0;
        T const *row = self.grad.data() + static_cast<std::size_t>(o) * pixels;
        for (int i = 0; i < pixels; ++i) {
          acc += row[i];
        }
        gb[o] += acc;
      }
    }
    if (wants(px)) {
      std::vector<T> gcols(g.patch() * g.pixels());
      MapR<T>(gcols.data(), patch, pixels).noalias() = cmat(pw, g.o, patch).transpose() * gy;
      col2im_add<T>(gcols, g, px->ensure_grad());
    }
  });
}

namespace {

struct Tap
{
  int i0, i1;
  double t;
};

std::vector<Tap> upsample_taps(int n)
{
  std::vector<Tap> taps(static_cast<std::size_t>(2 * n));
  for (int dst = 0; dst < 2 * n; ++dst) {
    double const src = std::max(0.0, (dst + 0.5) / 2.0 - 0.5);
    int const i0 = std::min(static_cast<int>(src), n - 1);
    taps[dst] = {i0, std::min(i0 + 1, n - 1), src - i0};
  }
  return taps;
}

} // namespace

template <typename T>
Var<T> upsample2x(Var<T> const &x)
{
  expect_rank(x, 3, "upsample2x");
  int const c = x.dim(0);
  int const h = x.dim(1);
  int const w = x.dim(2);
  auto const tr = upsample_taps(h);
  auto const tc = upsample_taps(w);
  std::vector<T> out(static_cast<std::size_t>(c) * 4 * h * w);
  auto xv = x.value();
  for (int ch = 0; ch < c; ++ch) {
    T const *src = xv.data() + static_cast<std::size_t>(ch) * h * w;
    T *dst = out.data() + static_cast<std::size_t>(ch) * 4 * h * w;
    for (int r = 0; r < 2 * h; ++r) {
      auto const &a = tr[r];
      for (int cc = 0; cc < 2 * w; ++cc) {
        auto const &b = tc[cc];
        T const top = T(1 - b.t) * src[a.i0 * w + b.i0] + T(b.t) * src[a.i0 * w + b.i1];
        T const bot = T(1 - b.t) * src[a.i1 * w + b.i0] + T(b.t) * src[a.i1 * w + b.i1];
        dst[static_cast<std::size_t>(r) * 2 * w + cc] = T(1 - a.t) * top + T(a.t) * bot;
      }
    }
  }
  auto *px = x.node();
  return make_result<T>({c, 2 * h, 2 * w}, std::move(out), {x}, [=](Node<T> &self) {
    auto gx = px->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      T *dst = gx.data() + static_cast<std::size_t>(ch) * h * w;
      T const *gy = self.grad.data() + static_cast<std::size_t>(ch) * 4 * h * w;
      for (int r = 0; r < 2 * h; ++r) {
        auto const &a = tr[r];
        for (int cc = 0; cc < 2 * w; ++cc) {
          auto const &b = tc[cc];
          T const gval = gy[static_cast<std::size_t>(r) * 2 * w + cc];
          dst[a.i0 * w + b.i0] += gval * T((1 - a.t) * (1 - b.t));
          dst[a.i0 * w + b.i1] += gval * T((1 - a.t) * b.t);
          dst[a.i1 * w + b.i0] += gval * T(a.t * (1 - b.t));
          dst[a.i1 * w + b.i1] += gval * T(a.t * b.t);
        }
      }
    }
  });
}

template <typename T>
Var<T> global_avg_pool(Var<T> const &x)
{
  expect_rank(x, 3, "global_avg_pool");
  int const c = x.dim(0);
  std::size_t const hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<T> out(static_cast<std::size_t>(c));
  auto xv = x.value();
  for (int ch = 0; ch < c; ++ch) {
    T s = 0;
    for (std::size_t i = 0; i < hw; ++i) {
      s += xv[ch * hw + i];
    }
    out[ch] = s / T(hw);
  }
  auto *px = x.node();
  return make_result<T>({c}, std::move(out), {x}, [=](Node<T> &self) {
    auto g = px->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      T const v = self.grad[ch] / T(hw);
      for (std::size_t i = 0; i < hw; ++i) {
        g[ch * hw + i] += v;
      }
    }
  });
}

template <typename T>
Var<T> scale_channels(Var<T> const &x, Var<T> const &s)
{
  expect_rank(x, 3, "scale_channels");
  int const c = x.dim(0);
  expect(s.numel() == static_cast<std::size_t>(c), "scale_channels", "scale vector must have one entry per channel");
  std::size_t const hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<T> out(x.numel());
  auto xv = x.value();
  auto sv = s.value();
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) {
      out[ch * hw + i] = xv[ch * hw + i] * sv[ch];
    }
  }
  auto *px = x.node();
  auto *ps = s.node();
  return make_result<T>(x.shape(), std::move(out), {x, s}, [=](Node<T> &self) {
    std::span<T> gx = wants(px) ? px->ensure_grad() : std::span<T>{};
    std::span<T> gs = wants(ps) ? ps->ensure_grad() : std::span<T>{};
    for (int ch = 0; ch < c; ++ch) {
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        T const g = self.grad[ch * hw + i];
        if (!gx.empty()) {
          gx[ch * hw + i] += g * ps->value[ch];
        }
        acc += g * px->value[ch * hw + i];
      }
      if (!gs.empty()) {
        gs[ch] += acc;
      }
    }
  });
}

template <typename T>
Var<T> scale_spatial(Var<T> const &x, Var<T> const &m)
{
  expect_rank(x, 3, "scale_spatial");
  int const c = x.dim(0);
  std::size_t const hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  expect(m.numel() == hw, "scale_spatial", "spatial mask must match the plane size");
  std::vector<T> out(x.numel());
  auto xv = x.value();
  auto mv = m.value();
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) {
      out[ch * hw + i] = xv[ch * hw + i] * mv[i];
    }
  }
  auto *px = x.node();
  auto *pm = m.node();
  return make_result<T>(x.shape(), std::move(out), {x, m}, [=](Node<T> &self) {
    std::span<T> gx = wants(px) ? px->ensure_grad() : std::span<T>{};
    std::span<T> gm = wants(pm) ? pm->ensure_grad() : std::span<T>{};
    for (int ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) {
        T const g = self.grad[ch * hw + i];
        if (!gx.empty()) {
          gx[ch * hw + i] += g * pm->value[i];
        }
        if (!gm.empty()) {
          gm[i] += g * px->value[ch * hw + i];
        }
      }
    }
  });
}

template <typename T>
Var<T> add_channel_bias(Var<T> const &x, Var<T> const &b)
{
  expect_rank(x, 3, "add_channel_bias");
  int const c = x.dim(0);
  expect(b.numel() == static_cast<std::size_t>(c), "add_channel_bias", "bias must have one entry per channel");
  std::size_t const hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<T> out(x.numel());
  auto xv = x.value();
  auto bv = b.value();
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) {
      out[ch * hw + i] = xv[ch * hw + i] + bv[ch];
    }
  }
  auto *px = x.node();
  auto *pb = b.node();
  return make_result<T>(x.shape(), std::move(out), {x, b}, [=](Node<T> &self) {
    std::span<T> gx = wants(px) ? px->ensure_grad() : std::span<T>{};
    std::span<T> gb = wants(pb) ? pb->ensure_grad() : std::span<T>{};
    for (int ch = 0; ch < c; ++ch) {
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        T const g = self.grad[ch * hw + i];
        if (!gx.empty()) {
          gx[ch * hw + i] += g;
        }
        acc += g;
      }
      if (!gb.empty()) {
        gb[ch] += acc;
      }
    }
  });
}

template <typename T>
Var<T> channel_mean_max(Var<T> const &x)
{
  expect_rank(x, 3, "channel_mean_max");
  int const c = x.dim(0);
  int const h = x.dim(1);
  int const w = x.dim(2);
  std::size_t const hw = static_cast<std::size_t>(h) * w;
  std::vector<T> out(2 * hw);
  std::vector<int> argmax(hw, 0);
  auto xv = x.value();
  for (std::size_t i = 0; i < hw; ++i) {
    T s = 0;
    T best = xv[i];
    for (int ch = 0; ch < c; ++ch) {
      T const v = xv[ch * hw + i];
      s += v;
      if (v > best) {
        best = v;
        argmax[i] = ch;
      }
    }
    out[i] = s / T(c);
    out[hw + i] = best;
  }
  auto *px = x.node();
  return make_result<T>({2, h, w}, std::move(out), {x}, [=, argmax = std::move(argmax)](Node<T> &self) {
    auto g = px->ensure_grad();
    for (std::size_t i = 0; i < hw; ++i) {
      T const gm = self.grad[i] / T(c);
      for (int ch = 0; ch < c; ++ch) {
        g[ch * hw + i] += gm;
      }
      g[argmax[i] * hw + i] += self.grad[hw + i];
    }
  });
}

namespace {

template <typename T>
std::vector<T> centered(std::span<T const> x, int h, int w, bool forward)
{
  std::vector<double> buf(x.begin(), x.end());
  if (!std::all_of(buf.begin(), buf.end(), [](double v) { return std::isfinite(v); })) {
    // Inside a network this means the activations blew up, not that the caller passed bad data.
    throw NumericalError("non-finite activations reached a Fourier transform");
  }
  ComplexGrid const out = forward ? ComplexGrid(kinr::fft2c(ComplexImage(h, w, std::move(buf))))
                                  : ComplexGrid(kinr::ifft2c(KSpace(h, w, std::move(buf))));
  return std::vector<T>(out.data().begin(), out.data().end());
}

template <typename T>
Var<T> fourier_op(Var<T> const &x, bool forward)
{
  expect_rank(x, 3, "fft2c");
  expect(x.dim(0) == 2, "fft2c", "expected a [2 x H x W] complex pair");
  int const h = x.dim(1);
  int const w = x.dim(2);
  auto *px = x.node();
  return make_result<T>(x.shape(), centered<T>(x.value(), h, w, forward), {x}, [=](Node<T> &self) {
    auto const back = centered<T>(std::span<T const>(self.grad), h, w, !forward);
    auto g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += back[i];
    }
  });
}

} // namespace

template <typename T>
Var<T> fft2c(Var<T> const &x)
{
  return fourier_op(x, true);
}

template <typename T>
Var<T> ifft2c(Var<T> const &x)
{
  return fourier_op(x, false);
}

template <typename T>
Var<T> rows_to_planes(Var<T> const &x, int height, int width)
{
  expect_rank(x, 2, "rows_to_planes");
  std::size_t const hw = static_cast<std::size_t>(height) * width;
  expect(x.dim(0) == static_cast<int>(hw), "rows_to_planes", "row count must equal H*W");
  int const c = x.dim(1);
  std::vector<T> out(x.numel());
  auto xv = x.value();
  for (std::size_t p = 0; p < hw; ++p) {
    for (int ch = 0; ch < c; ++ch) {
      out[ch * hw + p] = xv[p * c + ch];
    }
  }
  auto *px = x.node();
  return make_result<T>({c, height, width}, std::move(out), {x}, [=](Node<T> &self) {
    auto g = px->ensure_grad();
    for (std::size_t p = 0; p < hw; ++p) {
      for (int ch = 0; ch < c; ++ch) {
        g[p * c + ch] += self.grad[ch * hw + p];
      }
    }
  });
}

template <typename T>
Var<T> planes_to_rows(Var<T> const &x)
{
  expect_rank(x, 3, "planes_to_rows");
  int const c = x.dim(0);
  std::size_t const hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<T> out(x.numel());
  auto xv = x.value();
  for (std::size_t p = 0; p < hw; ++p) {
    for (int ch = 0; ch < c; ++ch) {
      out[p * c + ch] = xv[ch * hw + p];
    }
  }
  auto *px = x.node();
  return make_result<T>({static_cast<int>(hw), c}, std::move(out), {x}, [=](Node<T> &self) {
    auto g = px->ensure_grad();
    for (std::size_t p = 0; p < hw; ++p) {
      for (int ch = 0; ch < c; ++ch) {
        g[ch * hw + p] += self.grad[p * c + ch];
      }
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> const &x, std::vector<std::size_t> const &rows)
{
  expect_rank(x, 2, "gather_rows");
  int const n = x.dim(0);
  int const c = x.dim(1);
  std::vector<T> out(rows.size() * c);
  auto xv = x.value();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    expect(rows[i] < static_cast<std::size_t>(n), "gather_rows", "row index out of range");
    std::copy_n(xv.data() + rows[i] * c, c, out.data() + i * c);
  }
  auto *px = x.node();
  return make_result<T>({static_cast<int>(rows.size()), c}, std::move(out), {x}, [=](Node<T> &self) {
    auto g = px->ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (int j = 0; j < c; ++j) {
        g[rows[i] * c + j] += self.grad[i * c + j];
      }
    }
  });
}

template <typename T>
Var<T> mse(Var<T> const &a, Var<T> const &b)
{
  expect_same(a, b, "mse");
  auto av = a.value();
  auto bv = b.value();
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    T const d = av[i] - bv[i];
    s += d * d;
  }
  T const inv_n = T(1) / T(av.size());
  auto *pa = a.node();
  auto *pb = b.node();
  return make_result<T>({1}, {s * inv_n}, {a, b}, [=](Node<T> &self) {
    T const g0 = self.grad[0] * T(2) * inv_n;
    if (wants(pa)) {
      auto g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += g0 * (pa->value[i] - pb->value[i]);
      }
    }
    if (wants(pb)) {
      auto g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] -= g0 * (pa->value[i] - pb->value[i]);
      }
    }
  });
}

#define KINR_INSTANTIATE_OPS(T)                                                                                        \
  template Var<T> matmul<T>(Var<T> const &, Var<T> const &);                                                          \
  template Var<T> linear<T>(Var<T> const &, Var<T> const &, Var<T> const &);                                          \
  template Var<T> add<T>(Var<T> const &, Var<T> const &);                                                             \
  template Var<T> sub<T>(Var<T> const &, Var<T> const &);                                                             \
  template Var<T> mul<T>(Var<T> const &, Var<T> const &);                                                             \
  template Var<T> scale<T>(Var<T> const &, T);                                                                        \
  template Var<T> reshape<T>(Var<T> const &, Shape);                                                                  \
  template Var<T> silu<T>(Var<T> const &);                                                                            \
  template Var<T> sigmoid<T>(Var<T> const &);                                                                         \
  template Var<T> layer_norm<T>(Var<T> const &, Var<T> const &, Var<T> const &, T);                                   \
  template Var<T> attention<T>(Var<T> const &, Var<T> const &, Var<T> const &, int, int);                             \
  template Var<T> conv2d<T>(Var<T> const &, Var<T> const &, Var<T> const &, int, int);                                \
  template Var<T> upsample2x<T>(Var<T> const &);                                                                      \
  template Var<T> global_avg_pool<T>(Var<T> const &);                                                                 \
  template Var<T> scale_channels<T>(Var<T> const &, Var<T> const &);                                                  \
  template Var<T> scale_spatial<T>(Var<T> const &, Var<T> const &);                                                   \
  template Var<T> add_channel_bias<T>(Var<T> const &, Var<T> const &);                                                \
  template Var<T> channel_mean_max<T>(Var<T> const &);                                                                \
  template Var<T> fft2c<T>(Var<T> const &);                                                                           \
  template Var<T> ifft2c<T>(Var<T> const &);                                                                          \
  template Var<T> rows_to_planes<T>(Var<T> const &, int, int);                                                        \
  template Var<T> planes_to_rows<T>(Var<T> const &);                                                                  \
  template Var<T> gather_rows<T>(Var<T> const &, std::vector<std::size_t> const &);                                   \
  template Var<T> mse<T>(Var<T> const &, Var<T> const &);

KINR_INSTANTIATE_OPS(float)
KINR_INSTANTIATE_OPS(double)

} // namespace kinr::nn
