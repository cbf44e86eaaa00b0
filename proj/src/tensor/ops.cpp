#include "battta/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "battta/errors.hpp"

namespace battta::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

MapC view(std::span<const double> d, std::size_t rows, std::size_t cols) {
  return MapC(d.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Map view(std::span<double> d, std::size_t rows, std::size_t cols) {
  return Map(d.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Last axis length and number of rows for row-wise ops.
std::pair<std::size_t, std::size_t> rows_cols(const Tensor& x) {
  std::size_t cols = x.ndim() == 0 ? 1 : x.shape().back();
  return {cols == 0 ? 0 : x.size() / cols, cols};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  view(std::span<double>(out), m, n).noalias() = view(a.data(), m, k) * view(b.data(), k, n);
  return Tensor::from_op({m, n}, std::move(out), "matmul", {a, b},
                         [m, k, n](const TensorImpl& o, std::span<Tensor> in) {
                           auto dc = view(std::span<const double>(o.grad), m, n);
                           if (in[0].requires_grad()) {
                             view(in[0].grad_buffer(), m, k).noalias() +=
                                 dc * view(in[1].data(), k, n).transpose();
                           }
                           if (in[1].requires_grad()) {
                             view(in[1].grad_buffer(), k, n).noalias() +=
                                 view(in[0].data(), m, k).transpose() * dc;
                           }
                         });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  view(std::span<double>(out), n, m) = view(a.data(), m, n).transpose();
  return Tensor::from_op({n, m}, std::move(out), "transpose", {a},
                         [m, n](const TensorImpl& o, std::span<Tensor> in) {
                           view(in[0].grad_buffer(), m, n) +=
                               view(std::span<const double>(o.grad), n, m).transpose();
                         });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return Tensor::from_op(a.shape(), std::move(out), "add", {a, b},
                         [](const TensorImpl& o, std::span<Tensor> in) {
                           for (auto& t : in)
                             if (t.requires_grad()) t.accumulate_grad(o.grad);
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return Tensor::from_op(a.shape(), std::move(out), "sub", {a, b},
                         [](const TensorImpl& o, std::span<Tensor> in) {
                           if (in[0].requires_grad()) in[0].accumulate_grad(o.grad);
                           if (in[1].requires_grad()) {
                             auto g = in[1].grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                           }
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return Tensor::from_op(a.shape(), std::move(out), "mul", {a, b},
                         [](const TensorImpl& o, std::span<Tensor> in) {
                           for (int s = 0; s < 2; ++s) {
                             if (!in[s].requires_grad()) continue;
                             auto g = in[s].grad_buffer();
                             auto other = in[1 - s].data();
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * other[i];
                           }
                         });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  auto [rows, cols] = rows_cols(x);
  if (x.ndim() < 1 || cols != bias.dim(0)) {
    throw DimensionError("add_bias: last axis of " + shape_str(x.shape()) + " vs bias " +
                         shape_str(bias.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x.at(r * cols + c) + bias.at(c);
  return Tensor::from_op(x.shape(), std::move(out), "add_bias", {x, bias},
                         [rows, cols](const TensorImpl& o, std::span<Tensor> in) {
                           if (in[0].requires_grad()) in[0].accumulate_grad(o.grad);
                           if (in[1].requires_grad()) {
                             auto g = in[1].grad_buffer();
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c) g[c] += o.grad[r * cols + c];
                           }
                         });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * factor;
  return Tensor::from_op(x.shape(), std::move(out), "scale", {x},
                         [factor](const TensorImpl& o, std::span<Tensor> in) {
                           auto g = in[0].grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
                         });
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) + value;
  return Tensor::from_op(x.shape(), std::move(out), "add_scalar", {x},
                         [](const TensorImpl& o, std::span<Tensor> in) { in[0].accumulate_grad(o.grad); });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("mul_scalar: scale must have one element, got " + shape_str(s.shape()));
  const double sv = s.at(0);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * sv;
  return Tensor::from_op(x.shape(), std::move(out), "mul_scalar", {x, s},
                         [sv](const TensorImpl& o, std::span<Tensor> in) {
                           if (in[0].requires_grad()) {
                             auto g = in[0].grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * sv;
                           }
                           if (in[1].requires_grad()) {
                             double acc = 0.0;
                             auto xd = in[0].data();
                             for (std::size_t i = 0; i < xd.size(); ++i) acc += o.grad[i] * xd[i];
                             in[1].grad_buffer()[0] += acc;
                           }
                         });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.at(i));
  return Tensor::from_op(x.shape(), std::move(out), "exp", {x},
                         [](const TensorImpl& o, std::span<Tensor> in) {
                           auto g = in[0].grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.data[i];
                         });
}

Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = x.at(i);
    out[i] = 0.5 * v * (1.0 + std::tanh(k * (v + a * v * v * v)));
  }
  return Tensor::from_op(x.shape(), std::move(out), "gelu", {x},
                         [](const TensorImpl& o, std::span<Tensor> in) {
                           auto g = in[0].grad_buffer();
                           auto xd = in[0].data();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             double v = xd[i];
                             double t = std::tanh(k * (v + a * v * v * v));
                             double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * a * v * v);
                             g[i] += o.grad[i] * d;
                           }
                         });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::from_op({}, {s}, "sum", {x}, [](const TensorImpl& o, std::span<Tensor> in) {
    auto g = in[0].grad_buffer();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_rows(const Tensor& x) {
  require_rank(x, 2, "sum_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r] += x.at(r * d + c);
  return Tensor::from_op({n}, std::move(out), "sum_rows", {x},
                         [n, d](const TensorImpl& o, std::span<Tensor> in) {
                           auto g = in[0].grad_buffer();
                           for (std::size_t r = 0; r < n; ++r)
                             for (std::size_t c = 0; c < d; ++c) g[r * d + c] += o.grad[r];
                         });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::from_op(std::move(shape), std::move(out), "reshape", {x},
                         [](const TensorImpl& o, std::span<Tensor> in) { in[0].accumulate_grad(o.grad); });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) {
      throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " out of range for " +
                           shape_str(x.shape()));
    }
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x.at(idx[r] * d + c);
  }
  return Tensor::from_op({idx.size(), d}, std::move(out), "gather_rows", {x},
                         [idx, d](const TensorImpl& o, std::span<Tensor> in) {
                           auto g = in[0].grad_buffer();
                           for (std::size_t r = 0; r < idx.size(); ++r)
                             for (std::size_t c = 0; c < d; ++c) g[idx[r] * d + c] += o.grad[r * d + c];
                         });
}

Tensor segment_mean(const Tensor& x, std::span<const int> group, std::size_t groups) {
  require_rank(x, 2, "segment_mean");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (group.size() != n) {
    throw DimensionError("segment_mean: " + std::to_string(group.size()) + " group ids for " +
                         std::to_string(n) + " rows");
  }
  std::vector<int> gid(group.begin(), group.end());
  std::vector<double> count(groups, 0.0);
  for (int g : gid) {
    if (g < -1 || g >= static_cast<int>(groups)) {
      throw DimensionError("segment_mean: group id " + std::to_string(g) + " out of range");
    }
    if (g >= 0) count[static_cast<std::size_t>(g)] += 1.0;
  }
  std::vector<double> out(groups * d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    if (gid[r] < 0) continue;
    auto g = static_cast<std::size_t>(gid[r]);
    for (std::size_t c = 0; c < d; ++c) out[g * d + c] += x.at(r * d + c);
  }
  for (std::size_t g = 0; g < groups; ++g) {
    if (count[g] == 0.0) continue;
    for (std::size_t c = 0; c < d; ++c) out[g * d + c] /= count[g];
  }
  return Tensor::from_op({groups, d}, std::move(out), "segment_mean", {x},
                         [gid, count, d](const TensorImpl& o, std::span<Tensor> in) {
                           auto g = in[0].grad_buffer();
                           for (std::size_t r = 0; r < gid.size(); ++r) {
                             if (gid[r] < 0) continue;
                             auto k = static_cast<std::size_t>(gid[r]);
                             for (std::size_t c = 0; c < d; ++c) g[r * d + c] += o.grad[k * d + c] / count[k];
                           }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
  auto [rows, d] = rows_cols(x);
  if (x.ndim() < 1 || d != gamma.dim(0) || d != beta.dim(0)) {
    throw DimensionError("layer_norm: last axis of " + shape_str(x.shape()) + " vs gamma " +
                         shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()));
  }
  std::vector<double> xhat(x.size()), rstd(rows), out(x.size());
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu *= inv_d;
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var *= inv_d;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      double h = (xr[c] - mu) * rstd[r];
      xhat[r * d + c] = h;
      out[r * d + c] = h * gamma.at(c) + beta.at(c);
    }
  }
  return Tensor::from_op(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [xhat = std::move(xhat), rstd = std::move(rstd), rows, d, inv_d](const TensorImpl& o,
                                                                          std::span<Tensor> in) {
        const auto& dy = o.grad;
        if (in[1].requires_grad()) {
          auto g = in[1].grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) g[c] += dy[r * d + c] * xhat[r * d + c];
        }
        if (in[2].requires_grad()) {
          auto g = in[2].grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) g[c] += dy[r * d + c];
        }
        if (in[0].requires_grad()) {
          auto g = in[0].grad_buffer();
          auto gamma_v = in[1].data();
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              double dh = dy[r * d + c] * gamma_v[c];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + c];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t c = 0; c < d; ++c) {
              double dh = dy[r * d + c] * gamma_v[c];
              g[r * d + c] += rstd[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
            }
          }
        }
      });
}

namespace {

void check_temperature(double t, const char* op) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ParameterError(std::string(op) + ": temperature must be positive, got " + std::to_string(t));
  }
}

// Stable softmax of `n` values scaled by 1/t, written into `dst`.
void softmax_row(const double* src, double* dst, std::size_t n, double t) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, src[i] / t);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = std::exp(src[i] / t - mx);
    z += dst[i];
  }
  for (std::size_t i = 0; i < n; ++i) dst[i] /= z;
}

Node::BackwardFn softmax_backward(std::size_t rows, std::size_t cols, double t) {
  return [rows, cols, t](const TensorImpl& o, std::span<Tensor> in) {
    auto g = in[0].grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * cols;
      const double* dy = o.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot) / t;
    }
  };
}

}  // namespace

Tensor softmax(const Tensor& x, double temperature) {
  check_temperature(temperature, "softmax");
  require_rank(x, 1, "softmax");
  const std::size_t n = x.dim(0);
  if (n == 0) throw DimensionError("softmax of an empty tensor");
  std::vector<double> out(n);
  softmax_row(x.data().data(), out.data(), n, temperature);
  return Tensor::from_op(x.shape(), std::move(out), "softmax", {x}, softmax_backward(1, n, temperature));
}

Tensor softmax_rows(const Tensor& x, double temperature) {
  check_temperature(temperature, "softmax_rows");
  require_rank(x, 2, "softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    softmax_row(x.data().data() + r * cols, out.data() + r * cols, cols, temperature);
  return Tensor::from_op(x.shape(), std::move(out), "softmax_rows", {x},
                         softmax_backward(rows, cols, temperature));
}

Tensor log_softmax_rows(const Tensor& x, double temperature) {
  check_temperature(temperature, "log_softmax_rows");
  require_rank(x, 2, "log_softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, xr[c] / temperature);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xr[c] / temperature - mx);
    double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xr[c] / temperature - lse;
  }
  return Tensor::from_op(x.shape(), std::move(out), "log_softmax_rows", {x},
                         [rows, cols, temperature](const TensorImpl& o, std::span<Tensor> in) {
                           auto g = in[0].grad_buffer();
                           for (std::size_t r = 0; r < rows; ++r) {
                             double s = 0.0;
                             for (std::size_t c = 0; c < cols; ++c) s += o.grad[r * cols + c];
                             for (std::size_t c = 0; c < cols; ++c) {
                               double p = std::exp(o.data[r * cols + c]);
                               g[r * cols + c] += (o.grad[r * cols + c] - p * s) / temperature;
                             }
                           }
                         });
}

Tensor entropy_rows(const Tensor& p) {
  require_rank(p, 2, "entropy_rows");
  const std::size_t rows = p.dim(0), cols = p.dim(1);
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double v = p.at(r * cols + c);
      if (v > 0.0) out[r] -= v * std::log(v);
    }
  }
  return Tensor::from_op({rows}, std::move(out), "entropy_rows", {p},
                         [rows, cols](const TensorImpl& o, std::span<Tensor> in) {
                           auto g = in[0].grad_buffer();
                           auto pv = in[0].data();
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < cols; ++c) {
                               double v = pv[r * cols + c];
                               // Zero entries take the zero subgradient.
                               if (v > 0.0) g[r * cols + c] -= o.grad[r] * (std::log(v) + 1.0);
                             }
                         });
}

Tensor cosine_sim(const Tensor& v, const Tensor& z) {
  require_rank(v, 1, "cosine_sim");
  require_same_shape(v, z, "cosine_sim");
  double dot = 0.0, nv2 = 0.0, nz2 = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    dot += v.at(i) * z.at(i);
    nv2 += v.at(i) * v.at(i);
    nz2 += z.at(i) * z.at(i);
  }
  if (nv2 == 0.0 || nz2 == 0.0) {
    throw DegenerateInputError(std::string("cosine_sim: zero-norm ") + (nv2 == 0.0 ? "first" : "second") +
                               " argument");
  }
  const double nv = std::sqrt(nv2), nz = std::sqrt(nz2);
  const double c = std::clamp(dot / (nv * nz), -1.0, 1.0);
  return Tensor::from_op({}, {c}, "cosine_sim", {v, z},
                         [nv, nz, c](const TensorImpl& o, std::span<Tensor> in) {
                           const double dc = o.grad[0];
                           for (int s = 0; s < 2; ++s) {
                             if (!in[s].requires_grad()) continue;
                             auto self = in[s].data();
                             auto other = in[1 - s].data();
                             double ns = s == 0 ? nv : nz;
                             double no = s == 0 ? nz : nv;
                             auto g = in[s].grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += dc * (other[i] / (ns * no) - c * self[i] / (ns * ns));
                           }
                         });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  std::vector<double> norm(rows), out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += x.at(r * d + c) * x.at(r * d + c);
    if (s == 0.0) throw DegenerateInputError("zero-norm row " + std::to_string(r));
    norm[r] = std::sqrt(s);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x.at(r * d + c) / norm[r];
  }
  return Tensor::from_op(x.shape(), std::move(out), "l2_normalize_rows", {x},
                         [norm = std::move(norm), rows, d](const TensorImpl& o, std::span<Tensor> in) {
                           auto g = in[0].grad_buffer();
                           for (std::size_t r = 0; r < rows; ++r) {
                             double dot = 0.0;
                             for (std::size_t c = 0; c < d; ++c) dot += o.data[r * d + c] * o.grad[r * d + c];
                             for (std::size_t c = 0; c < d; ++c)
                               g[r * d + c] += (o.grad[r * d + c] - o.data[r * d + c] * dot) / norm[r];
                           }
                         });
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "cosine_matrix");
  require_rank(b, 2, "cosine_matrix");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("cosine_matrix: feature width " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)));
}

Tensor self_attention(const Tensor& qkv, std::size_t batch, std::size_t tokens, std::size_t heads) {
  require_rank(qkv, 2, "self_attention");
  if (qkv.dim(0) != batch * tokens || qkv.dim(1) % 3 != 0 || heads == 0 || (qkv.dim(1) / 3) % heads != 0) {
    throw DimensionError("self_attention: qkv " + shape_str(qkv.shape()) + " incompatible with batch " +
                         std::to_string(batch) + ", tokens " + std::to_string(tokens) + ", heads " +
                         std::to_string(heads));
  }
  const std::size_t w = qkv.dim(1) / 3, dh = w / heads, row = 3 * w;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto T = static_cast<Eigen::Index>(tokens), D = static_cast<Eigen::Index>(dh);
  using Stride = Eigen::OuterStride<>;
  using Block = Eigen::Map<const RowMat, 0, Stride>;

  // Attention probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(batch * heads * tokens * tokens);
  std::vector<double> out(batch * tokens * w);
  const double* base = qkv.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double* q0 = base + b * tokens * row + h * dh;
      Block q(q0, T, D, Stride(row)), k(q0 + w, T, D, Stride(row)), v(q0 + 2 * w, T, D, Stride(row));
      Map p(probs->data() + (b * heads + h) * tokens * tokens, T, T);
      p.noalias() = (q * k.transpose()) * inv_sqrt;
      // Scalar loops keep the result independent of buffer alignment.
      for (std::size_t i = 0; i < tokens; ++i) softmax_row(&p(i, 0), &p(i, 0), tokens, 1.0);
      Eigen::Map<RowMat, 0, Stride> o(out.data() + b * tokens * w + h * dh, T, D, Stride(w));
      o.noalias() = p * v;
    }
  }
  return Tensor::from_op(
      {batch * tokens, w}, std::move(out), "self_attention", {qkv},
      [probs, batch, tokens, heads, w, dh, row, inv_sqrt](const TensorImpl& o, std::span<Tensor> in) {
        const auto T = static_cast<Eigen::Index>(tokens), D = static_cast<Eigen::Index>(dh);
        auto g = in[0].grad_buffer();
        const double* base = in[0].data().data();
        RowMat dp(T, T), ds(T, T);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* q0 = base + b * tokens * row + h * dh;
            Block q(q0, T, D, Stride(row)), k(q0 + w, T, D, Stride(row)), v(q0 + 2 * w, T, D, Stride(row));
            MapC p(probs->data() + (b * heads + h) * tokens * tokens, T, T);
            Block dout(o.grad.data() + b * tokens * w + h * dh, T, D, Stride(w));
            double* g0 = g.data() + b * tokens * row + h * dh;
            Eigen::Map<RowMat, 0, Stride> dq(g0, T, D, Stride(row)), dk(g0 + w, T, D, Stride(row)),
                dv(g0 + 2 * w, T, D, Stride(row));
            dv.noalias() += p.transpose() * dout;
            dp.noalias() = dout * v.transpose();
            for (Eigen::Index i = 0; i < T; ++i) {
              double dot = 0.0;
              for (Eigen::Index j = 0; j < T; ++j) dot += p(i, j) * dp(i, j);
              for (Eigen::Index j = 0; j < T; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot);
            }
            ds *= inv_sqrt;
            dq.noalias() += ds * k;
            dk.noalias() += ds.transpose() * q;
          }
        }
      });
}

}  // namespace battta::ops
