#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "rrp/errors.hpp"
#include "rrp/tensor.hpp"

namespace rrp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

// Unfolds [C,H,W] into [C*k*k, Ho*Wo] patch columns (zero outside the image).
std::vector<double> im2col(std::span<const double> x, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                           std::size_t pad, std::size_t ho, std::size_t wo) {
  std::vector<double> cols(c * k * k * ho * wo, 0.0);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx, ++row) {
        double* dst = cols.data() + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const double* src = x.data() + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[oy * wo + ox] = src[ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im(std::span<const double> cols, std::span<double> dx, std::size_t c, std::size_t h, std::size_t w,
            std::size_t k, std::size_t pad, std::size_t ho, std::size_t wo) {
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx, ++row) {
        const double* src = cols.data() + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst = dx.data() + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require_rank(bias, 1, "conv2d bias");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin || kernel.dim(3) != k || k % 2 == 0) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) + " incompatible with input " +
                         shape_string(input.shape()));
  }
  if (bias.dim(0) != cout) throw DimensionError("conv2d: bias size must equal output channels");
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_string(input.shape()));
  }
  const std::size_t ho = h + 2 * padding - k + 1, wo = w + 2 * padding - k + 1;
  const std::size_t patch = cin * k * k, npix = ho * wo;

  // 1x1 without padding: the input already is its own column matrix.
  const bool direct = (k == 1 && padding == 0);
  auto cols = std::make_shared<std::vector<double>>(
      direct ? std::vector<double>(input.data().begin(), input.data().end())
             : im2col(input.data(), cin, h, w, k, padding, ho, wo));

  std::vector<double> out(cout * npix);
  {
    ConstMapMat km(kernel.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
    ConstMapMat cm(cols->data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(npix));
    MapMat om(out.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(npix));
    om.noalias() = km * cm;
    for (std::size_t co = 0; co < cout; ++co) om.row(static_cast<Eigen::Index>(co)).array() += bias.data()[co];
  }

  return detail::make_result(
      "conv2d", {cout, ho, wo}, std::move(out), {input, kernel, bias},
      [=](std::span<const double> g) {
        ConstMapMat gm(g.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(npix));
        ConstMapMat cm(cols->data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(npix));
        if (kernel.requires_grad()) {
          auto dk = detail::grad_buffer(kernel);
          MapMat dkm(dk.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
          dkm.noalias() += gm * cm.transpose();
        }
        if (bias.requires_grad()) {
          auto db = detail::grad_buffer(bias);
          for (std::size_t co = 0; co < cout; ++co) db[co] += gm.row(static_cast<Eigen::Index>(co)).sum();
        }
        if (input.requires_grad()) {
          ConstMapMat km(kernel.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
          auto dx = detail::grad_buffer(input);
          if (direct) {
            MapMat dxm(dx.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(npix));
            dxm.noalias() += km.transpose() * gm;
          } else {
            RowMat dcols = km.transpose() * gm;
            col2im(std::span<const double>(dcols.data(), static_cast<std::size_t>(dcols.size())), dx, cin, h, w, k,
                   padding, ho, wo);
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  if (!x.defined()) throw DimensionError("relu: undefined tensor");
  std::vector<double> out(x.size());
  auto xs = x.data();
  auto* probe = detail::active_probe();
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool on = xs[i] > 0.0;
    out[i] = on || std::isnan(xs[i]) ? xs[i] : 0.0;  // NaN passes through to the finiteness check
    if (probe) {
      bits = (bits << 1) | static_cast<std::uint64_t>(on);
      if (i % 64 == 63) probe->feed(bits), bits = 0;
    }
  }
  if (probe) probe->feed(bits);
  return detail::make_result("relu", x.shape(), std::move(out), {x}, [x](std::span<const double> g) {
    const double sign = fault_injection().flip_relu_backward ? -1.0 : 1.0;
    auto dx = detail::grad_buffer(x);
    auto xs = x.data();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xs[i] > 0.0) dx[i] += sign * g[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  if (!x.defined()) throw DimensionError("sigmoid: undefined tensor");
  auto ys = std::make_shared<std::vector<double>>(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    // Split by sign so exp never overflows.
    const double v = xs[i];
    if (v >= 0) {
      (*ys)[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      (*ys)[i] = e / (1.0 + e);
    }
  }
  std::vector<double> out = *ys;
  return detail::make_result("sigmoid", x.shape(), std::move(out), {x}, [x, ys](std::span<const double> g) {
    auto dx = detail::grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * (*ys)[i] * (1.0 - (*ys)[i]);
  });
}

Tensor maxpool2(const Tensor& x) {
  require_rank(x, 3, "maxpool2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw DimensionError("maxpool2: odd spatial dims " + shape_string(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  std::vector<double> out(c * ho * wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  auto xs = x.data();
  auto* probe = detail::active_probe();
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t base = (ci * h + 2 * oy) * w + 2 * ox;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        std::uint64_t slot = 0;
        for (std::uint64_t q = 1; q < 4; ++q) {
          if (xs[cand[q]] > xs[best]) best = cand[q], slot = q;
        }
        const std::size_t o = (ci * ho + oy) * wo + ox;
        out[o] = xs[best];
        (*argmax)[o] = best;
        if (probe) probe->feed(slot);
      }
    }
  }
  return detail::make_result("maxpool2", {c, ho, wo}, std::move(out), {x}, [x, argmax](std::span<const double> g) {
    auto dx = detail::grad_buffer(x);
    for (std::size_t o = 0; o < g.size(); ++o) dx[(*argmax)[o]] += g[o];
  });
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;  // weight of `hi`
};

std::vector<Tap> resize_taps(std::size_t src, std::size_t dst) {
  std::vector<Tap> taps(dst);
  const double ratio = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t i = 0; i < dst; ++i) {
    double u = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(src - 1));
    const auto lo = static_cast<std::size_t>(std::floor(u));
    taps[i] = {lo, std::min(lo + 1, src - 1), u - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: target size must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h == h && out_w == w) {
    std::vector<double> out(x.data().begin(), x.data().end());
    return detail::make_result("bilinear_resize", x.shape(), std::move(out), {x},
                               [x](std::span<const double> g) { detail::accumulate_grad(x, g); });
  }
  auto ty = std::make_shared<std::vector<Tap>>(resize_taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(resize_taps(w, out_w));
  std::vector<double> out(c * out_h * out_w);
  auto xs = x.data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double* plane = xs.data() + ci * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const Tap& a = (*ty)[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& b = (*tx)[j];
        const double top = (1.0 - b.frac) * plane[a.lo * w + b.lo] + b.frac * plane[a.lo * w + b.hi];
        const double bot = (1.0 - b.frac) * plane[a.hi * w + b.lo] + b.frac * plane[a.hi * w + b.hi];
        out[(ci * out_h + i) * out_w + j] = (1.0 - a.frac) * top + a.frac * bot;
      }
    }
  }
  return detail::make_result(
      "bilinear_resize", {c, out_h, out_w}, std::move(out), {x}, [=](std::span<const double> g) {
        auto dx = detail::grad_buffer(x);
        for (std::size_t ci = 0; ci < c; ++ci) {
          double* plane = dx.data() + ci * h * w;
          for (std::size_t i = 0; i < out_h; ++i) {
            const Tap& a = (*ty)[i];
            for (std::size_t j = 0; j < out_w; ++j) {
              const Tap& b = (*tx)[j];
              const double gv = g[(ci * out_h + i) * out_w + j];
              plane[a.lo * w + b.lo] += gv * (1.0 - a.frac) * (1.0 - b.frac);
              plane[a.lo * w + b.hi] += gv * (1.0 - a.frac) * b.frac;
              plane[a.hi * w + b.lo] += gv * a.frac * (1.0 - b.frac);
              plane[a.hi * w + b.hi] += gv * a.frac * b.frac;
            }
          }
        }
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dims differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(n * m, 0.0);
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = as[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += av * bs[p * m + j];
    }
  }
  return detail::make_result("matmul", {n, m}, std::move(out), {a, b}, [=](std::span<const double> g) {
    auto as = a.data();
    auto bs = b.data();
    if (a.requires_grad()) {
      auto da = detail::grad_buffer(a);  // dC * B^T
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * bs[p * m + j];
          da[i * k + p] += acc;
        }
    }
    if (b.requires_grad()) {
      auto db = detail::grad_buffer(b);  // A^T * dC
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = as[i * k + p];
          for (std::size_t j = 0; j < m; ++j) db[p * m + j] += av * g[i * m + j];
        }
    }
  });
}

Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind) {
  if (!a.defined() || !b.defined()) throw DimensionError("elementwise: undefined tensor");
  const bool same = a.shape() == b.shape();
  const bool channel_bcast = !same && a.rank() == 3 && b.rank() == 3 && b.dim(0) == 1 && a.dim(1) == b.dim(1) &&
                             a.dim(2) == b.dim(2);
  if (!same && !channel_bcast) {
    throw DimensionError("elementwise: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t plane = b.size();
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double bv = bs[i % plane];
    out[i] = kind == Elementwise::add ? as[i] + bv : as[i] * bv;
  }
  const char* name = kind == Elementwise::add ? "add" : "mul";
  return detail::make_result(name, a.shape(), std::move(out), {a, b}, [=](std::span<const double> g) {
    auto as = a.data();
    auto bs = b.data();
    if (a.requires_grad()) {
      auto da = detail::grad_buffer(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += kind == Elementwise::add ? g[i] : g[i] * bs[i % plane];
    }
    if (b.requires_grad()) {
      // The broadcast axis is summed back.
      auto db = detail::grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i % plane] += kind == Elementwise::add ? g[i] : g[i] * as[i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::add); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::mul); }

Tensor global_average_pool(const Tensor& x) {
  require_rank(x, 3, "global_average_pool");
  const std::size_t c = x.dim(0), area = x.dim(1) * x.dim(2);
  std::vector<double> out(c, 0.0);
  auto xs = x.data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    for (std::size_t p = 0; p < area; ++p) acc += xs[ci * area + p];
    out[ci] = acc / static_cast<double>(area);
  }
  return detail::make_result("global_average_pool", {c}, std::move(out), {x}, [=](std::span<const double> g) {
    auto dx = detail::grad_buffer(x);
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double share = g[ci] / static_cast<double>(area);
      for (std::size_t p = 0; p < area; ++p) dx[ci * area + p] += share;
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t n = x.dim(0), m = x.dim(1);
  auto ys = std::make_shared<std::vector<double>>(n * m);
  auto xs = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xs.data() + i * m;
    const double mx = *std::max_element(row, row + m);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) total += ((*ys)[i * m + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < m; ++j) (*ys)[i * m + j] /= total;
  }
  std::vector<double> out = *ys;
  return detail::make_result("softmax_rows", {n, m}, std::move(out), {x}, [=](std::span<const double> g) {
    auto dx = detail::grad_buffer(x);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * (*ys)[i * m + j];
      for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += (*ys)[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

Tensor select_channel(const Tensor& x, std::size_t channel) {
  require_rank(x, 3, "select_channel");
  if (channel >= x.dim(0)) throw DimensionError("select_channel: channel out of range");
  const std::size_t plane = x.dim(1) * x.dim(2);
  const auto first = x.data().begin() + static_cast<std::ptrdiff_t>(channel * plane);
  std::vector<double> out(first, first + static_cast<std::ptrdiff_t>(plane));
  return detail::make_result("select_channel", {1, x.dim(1), x.dim(2)}, std::move(out), {x},
                             [=](std::span<const double> g) {
                               auto dx = detail::grad_buffer(x);
                               for (std::size_t p = 0; p < plane; ++p) dx[channel * plane + p] += g[p];
                             });
}

Tensor select_row(const Tensor& x, std::size_t row) {
  require_rank(x, 2, "select_row");
  if (row >= x.dim(0)) throw DimensionError("select_row: row out of range");
  const std::size_t d = x.dim(1);
  const auto first = x.data().begin() + static_cast<std::ptrdiff_t>(row * d);
  std::vector<double> out(first, first + static_cast<std::ptrdiff_t>(d));
  return detail::make_result("select_row", {d}, std::move(out), {x}, [=](std::span<const double> g) {
    auto dx = detail::grad_buffer(x);
    for (std::size_t j = 0; j < d; ++j) dx[row * d + j] += g[j];
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  for (const auto& r : rows) require_rank(r, 1, "stack_rows");
  const std::size_t d = rows.front().dim(0);
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.dim(0) != d) throw DimensionError("stack_rows: rows differ in length");
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return detail::make_result("stack_rows", {rows.size(), d}, std::move(out), rows, [=](std::span<const double> g) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].requires_grad()) detail::accumulate_grad(rows[i], g.subspan(i * d, d));
    }
  });
}

Tensor broadcast_spatial(const Tensor& v, std::size_t h, std::size_t w) {
  require_rank(v, 1, "broadcast_spatial");
  if (h == 0 || w == 0) throw DimensionError("broadcast_spatial: empty target");
  const std::size_t d = v.dim(0), plane = h * w;
  std::vector<double> out(d * plane);
  for (std::size_t c = 0; c < d; ++c) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, v.data()[c]);
  return detail::make_result("broadcast_spatial", {d, h, w}, std::move(out), {v}, [=](std::span<const double> g) {
    auto dv = detail::grad_buffer(v);
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) acc += g[c * plane + p];
      dv[c] += acc;
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  if (!x.defined()) throw DimensionError("scale: undefined tensor");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return detail::make_result("scale", x.shape(), std::move(out), {x}, [=](std::span<const double> g) {
    auto dx = detail::grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * g[i];
  });
}

Tensor sum_all(const Tensor& x) {
  if (!x.defined()) throw DimensionError("sum_all: undefined tensor");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return detail::make_result("sum_all", {1}, {acc}, {x}, [=](std::span<const double> g) {
    auto dx = detail::grad_buffer(x);
    for (auto& v : dx) v += g[0];
  });
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (!x.defined() || weights.size() != x.size()) throw DimensionError("weighted_sum: weight count mismatch");
  auto ws = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i] * (*ws)[i];
  return detail::make_result("weighted_sum", {1}, {acc}, {x}, [=](std::span<const double> g) {
    auto dx = detail::grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0] * (*ws)[i];
  });
}

Tensor flip_horizontal(const Tensor& x) {
  if (!x.defined() || x.rank() == 0) throw DimensionError("flip_horizontal: undefined tensor");
  const std::size_t w = x.shape().back();
  const std::size_t rows = x.size() / w;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = x.data()[r * w + (w - 1 - j)];
  return detail::make_result("flip_horizontal", x.shape(), std::move(out), {x}, [=](std::span<const double> g) {
    auto dx = detail::grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) dx[r * w + (w - 1 - j)] += g[r * w + j];
  });
}

}  // namespace rrp
