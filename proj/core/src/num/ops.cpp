#include "m4c/num/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "m4c/errors.hpp"

namespace m4c::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Strided = Eigen::OuterStride<>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Strided>;
using MutStridedMap = Eigen::Map<RowMat, 0, Strided>;

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

Tensor make_op(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
               BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.defined() ? t.node() : nullptr);
      node->backward = std::move(backward);
    }
  }
  return Tensor::from_node(std::move(node));
}

Tensor make_op_many(Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                    BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor::from_node(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it does not need one.
double* grad_of(Node& n, std::size_t i) {
  auto& p = n.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

ConstMap cmap(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
ConstMap cmap(std::span<const double> v, std::size_t r, std::size_t c) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MutMap mmap(double* p, std::size_t r, std::size_t c) {
  return MutMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  mmap(out.data(), m, n).noalias() = cmap(a.data(), m, k) * cmap(b.data(), k, n);
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto dc = cmap(self.grad, m, n);
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (auto* ga = grad_of(self, 0)) mmap(ga, m, k).noalias() += dc * cmap(bv, k, n).transpose();
    if (auto* gb = grad_of(self, 1)) mmap(gb, k, n).noalias() += cmap(av, m, k).transpose() * dc;
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) +
                         " · " + shape_str(b.shape()) + "ᵀ");
  }
  std::vector<double> out(m * n);
  mmap(out.data(), m, n).noalias() = cmap(a.data(), m, k) * cmap(b.data(), n, k).transpose();
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto dc = cmap(self.grad, m, n);
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (auto* ga = grad_of(self, 0)) mmap(ga, m, k).noalias() += dc * cmap(bv, n, k);
    if (auto* gb = grad_of(self, 1)) mmap(gb, n, k).noalias() += dc.transpose() * cmap(av, m, k);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  mmap(out.data(), n, m) = cmap(a.data(), m, n).transpose();
  return make_op({n, m}, std::move(out), {a}, [m, n](Node& self) {
    if (auto* ga = grad_of(self, 0)) mmap(ga, m, n) += cmap(self.grad, n, m).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_op(a.shape(), std::move(out), {a}, [s](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
    }
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (bias.rank() != 1 || bias.numel() != a.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not fit rows of " +
                         shape_str(a.shape()));
  }
  const auto rows = a.rows(), cols = a.cols();
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return make_op(a.shape(), std::move(out), {a, bias}, [rows, cols](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2(weight, "linear");
  const auto rows = x.rows(), in = x.cols(), out_dim = weight.dim(0);
  if (weight.dim(1) != in || x.rank() == 0) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.numel() != out_dim)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not fit weight " +
                         shape_str(weight.shape()));
  }
  std::vector<double> out(rows * out_dim);
  auto y = mmap(out.data(), rows, out_dim);
  y.noalias() = cmap(x.data(), rows, in) * cmap(weight.data(), out_dim, in).transpose();
  if (has_bias) {
    Eigen::Map<const Eigen::RowVectorXd> b(bias.data().data(), static_cast<Eigen::Index>(out_dim));
    y.rowwise() += b;
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  return make_op(std::move(shape), std::move(out), {x, weight, bias},
                 [rows, in, out_dim, has_bias](Node& self) {
                   auto dy = cmap(self.grad, rows, out_dim);
                   if (auto* gx = grad_of(self, 0)) {
                     mmap(gx, rows, in).noalias() += dy * cmap(self.parents[1]->data, out_dim, in);
                   }
                   if (auto* gw = grad_of(self, 1)) {
                     mmap(gw, out_dim, in).noalias() +=
                         dy.transpose() * cmap(self.parents[0]->data, rows, in);
                   }
                   if (has_bias) {
                     // Plain row-order loop: Eigen's colwise sum picks its
                     // reduction order from buffer alignment, which made
                     // bias gradients differ from run to run.
                     if (auto* gb = grad_of(self, 2)) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < out_dim; ++c) gb[c] += self.grad[r * out_dim + c];
                     }
                   }
                 });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  }
  return make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    if (auto* g = grad_of(self, 0)) {
      const auto& xv = self.parents[0]->data;
      for (std::size_t i = 0; i < xv.size(); ++i) {
        double cdf = 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv[i] * xv[i]);
        g[i] += self.grad[i] * (cdf + xv[i] * pdf);
      }
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
  const auto n = x.dim(axis);
  if (n == 0) throw DimensionError("softmax: empty axis in " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        out[base + j * inner] = std::exp(xv[base + j * inner] - mx);
        z += out[base + j * inner];
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return make_op(x.shape(), std::move(out), {x}, [outer, inner, n](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    const auto& y = self.data;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const auto idx = base + j * inner;
          g[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto rows = x.rows(), d = x.cols();
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not fit " + shape_str(x.shape()));
  }
  auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * is;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [rows, d, xhat, inv_std](Node& self) {
                   const auto& gv = self.parents[1]->data;
                   const auto& dy = self.grad;
                   if (auto* gx = grad_of(self, 0)) {
                     const double inv_d = 1.0 / static_cast<double>(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double s1 = 0.0, s2 = 0.0;
                       for (std::size_t c = 0; c < d; ++c) {
                         const double dh = dy[r * d + c] * gv[c];
                         s1 += dh;
                         s2 += dh * (*xhat)[r * d + c];
                       }
                       for (std::size_t c = 0; c < d; ++c) {
                         const double dh = dy[r * d + c] * gv[c];
                         gx[r * d + c] +=
                             (*inv_std)[r] * (dh - s1 * inv_d - (*xhat)[r * d + c] * s2 * inv_d);
                       }
                     }
                   }
                   if (auto* gg = grad_of(self, 1)) {
                     for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += dy[i] * (*xhat)[i];
                   }
                   if (auto* gb = grad_of(self, 2)) {
                     for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += dy[i];
                   }
                 });
}

Tensor sigmoid_bce_with_logits(const Tensor& logits, const Tensor& targets, const Tensor& mask) {
  require_same_shape(logits, targets, "sigmoid_bce_with_logits");
  require_same_shape(logits, mask, "sigmoid_bce_with_logits");
  auto xv = logits.data(), tv = targets.data(), mv = mask.data();
  double count = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (tv[i] != 0.0 && tv[i] != 1.0) {
      throw ValidationError("sigmoid_bce_with_logits: target " + std::to_string(tv[i]) +
                            " at element " + std::to_string(i) + " is not 0 or 1");
    }
    if (mv[i] != 0.0 && mv[i] != 1.0) {
      throw ValidationError("sigmoid_bce_with_logits: mask value " + std::to_string(mv[i]) +
                            " at element " + std::to_string(i) + " is not 0 or 1");
    }
    count += mv[i];
  }
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (mv[i] == 0.0) continue;
    const double x = xv[i];
    total += std::max(x, 0.0) - x * tv[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const double loss = count > 0.0 ? total / count : 0.0;
  return make_op({}, {loss}, {logits, targets, mask}, [count](Node& self) {
    if (count == 0.0) return;
    auto* g = grad_of(self, 0);
    if (!g) return;
    const auto& xv = self.parents[0]->data;
    const auto& tv = self.parents[1]->data;
    const auto& mv = self.parents[2]->data;
    const double up = self.grad[0] / count;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (mv[i] == 0.0) continue;
      const double x = xv[i];
      const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      g[i] += up * (sig - tv[i]);
    }
  });
}

Tensor sum(const Tensor& x) {
  auto xv = x.data();
  double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_op({}, {s}, {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      const auto n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  const auto rows = x.rows(), cols = x.cols();
  std::vector<double> out(indices.size() * cols);
  auto xv = x.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) +
                           " out of range for " + shape_str(x.shape()));
    }
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(indices[i] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_op({indices.size(), cols}, std::move(out), {x},
                 [idx = std::move(idx), cols](Node& self) {
                   auto* g = grad_of(self, 0);
                   if (!g) return;
                   for (std::size_t i = 0; i < idx.size(); ++i)
                     for (std::size_t c = 0; c < cols; ++c)
                       g[idx[i] * cols + c] += self.grad[i * cols + c];
                 });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const auto cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    offsets.push_back(rows * cols);
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op_many({rows, cols}, std::move(out), parts,
                      [offsets = std::move(offsets)](Node& self) {
                        for (std::size_t i = 0; i < offsets.size(); ++i) {
                          if (auto* g = grad_of(self, i)) {
                            const auto n = self.parents[i]->data.size();
                            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[offsets[i] + j];
                          }
                        }
                      });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const auto rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    widths.push_back(p.cols());
    cols += p.cols();
  }
  std::vector<double> out(rows * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    auto pv = p.data();
    const auto w = p.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(r * cols + off));
    off += w;
  }
  return make_op_many({rows, cols}, std::move(out), parts,
                      [widths = std::move(widths), rows, cols](Node& self) {
                        std::size_t off = 0;
                        for (std::size_t i = 0; i < widths.size(); ++i) {
                          const auto w = widths[i];
                          if (auto* g = grad_of(self, i)) {
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < w; ++c)
                                g[r * w + c] += self.grad[r * cols + off + c];
                          }
                          off += w;
                        }
                      });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  const auto cols = x.cols();
  if (begin > end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_str(x.shape()));
  }
  auto xv = x.data();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          xv.begin() + static_cast<std::ptrdiff_t>(end * cols));
  return make_op({end - begin, cols}, std::move(out), {x}, [begin, cols](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * cols + i] += self.grad[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op(std::move(shape), std::move(out), {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor scale_rows(const Tensor& x, std::span<const double> factors) {
  const auto rows = x.rows(), cols = x.cols();
  if (factors.size() != rows) {
    throw DimensionError("scale_rows: " + std::to_string(factors.size()) + " factors for " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= factors[r];
  std::vector<double> f(factors.begin(), factors.end());
  return make_op(x.shape(), std::move(out), {x}, [f = std::move(f), cols](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * f[i / cols];
    }
  });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ValidationError("dropout probability must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> keep(x.numel());
  for (auto& k : keep) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    k = u < p ? 0.0 : keep_scale;
  }
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * keep[i];
  return make_op(x.shape(), std::move(out), {x}, [keep = std::move(keep)](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * keep[i];
    }
  });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::shared_ptr<const AttentionMask> mask, std::size_t heads) {
  require_rank2(q, "multi_head_attention");
  require_same_shape(q, k, "multi_head_attention");
  require_same_shape(q, v, "multi_head_attention");
  if (!mask) throw DimensionError("multi_head_attention: missing mask");
  const auto B = mask->batch, S = mask->seq, d = q.dim(1);
  if (B * S != q.dim(0) || mask->additive.size() != B * S * S) {
    throw DimensionError("multi_head_attention: mask for " + std::to_string(B) + "x" +
                         std::to_string(S) + " does not fit " + shape_str(q.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("multi_head_attention: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  const auto dh = d / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto eS = static_cast<Eigen::Index>(S), eDh = static_cast<Eigen::Index>(dh);
  const Strided stride(static_cast<Eigen::Index>(d));

  auto probs = std::make_shared<std::vector<double>>(B * heads * S * S);
  std::vector<double> out(B * S * d);
  RowMat scores(eS, eS);
  for (std::size_t b = 0; b < B; ++b) {
    auto m = cmap(std::span<const double>(mask->additive).subspan(b * S * S, S * S), S, S);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto off = b * S * d + h * dh;
      ConstStridedMap qb(q.data().data() + off, eS, eDh, stride);
      ConstStridedMap kb(k.data().data() + off, eS, eDh, stride);
      ConstStridedMap vb(v.data().data() + off, eS, eDh, stride);
      scores.noalias() = qb * kb.transpose();
      scores *= scl;
      scores += m;
      auto p = mmap(probs->data() + (b * heads + h) * S * S, S, S);
      for (Eigen::Index r = 0; r < eS; ++r) {
        const double mx = scores.row(r).maxCoeff();
        // std::exp, not Eigen's vectorized exp: the latter clamps its argument
        // and turns masked entries into tiny nonzeros instead of exact zeros.
        double z = 0.0;
        for (Eigen::Index c = 0; c < eS; ++c) {
          p(r, c) = std::exp(scores(r, c) - mx);
          z += p(r, c);
        }
        p.row(r) /= z;
      }
      MutStridedMap ob(out.data() + off, eS, eDh, stride);
      ob.noalias() = p * vb;
    }
  }
  return make_op({B * S, d}, std::move(out), {q, k, v},
                 [probs, B, S, d, heads, dh, scl](Node& self) {
                   const auto eS = static_cast<Eigen::Index>(S);
                   const auto eDh = static_cast<Eigen::Index>(dh);
                   const Strided stride(static_cast<Eigen::Index>(d));
                   double* gq = grad_of(self, 0);
                   double* gk = grad_of(self, 1);
                   double* gv = grad_of(self, 2);
                   const auto& qv = self.parents[0]->data;
                   const auto& kv = self.parents[1]->data;
                   const auto& vv = self.parents[2]->data;
                   RowMat dp(eS, eS);
                   for (std::size_t b = 0; b < B; ++b) {
                     for (std::size_t h = 0; h < heads; ++h) {
                       const auto off = b * S * d + h * dh;
                       auto p = cmap(std::span<const double>(*probs).subspan(
                                         (b * heads + h) * S * S, S * S),
                                     S, S);
                       ConstStridedMap dout(self.grad.data() + off, eS, eDh, stride);
                       ConstStridedMap qb(qv.data() + off, eS, eDh, stride);
                       ConstStridedMap kb(kv.data() + off, eS, eDh, stride);
                       ConstStridedMap vb(vv.data() + off, eS, eDh, stride);
                       if (gv) {
                         MutStridedMap(gv + off, eS, eDh, stride).noalias() += p.transpose() * dout;
                       }
                       if (!gq && !gk) continue;
                       dp.noalias() = dout * vb.transpose();
                       for (Eigen::Index r = 0; r < eS; ++r) {
                         const double dot = p.row(r).dot(dp.row(r));
                         dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)) * scl;
                       }
                       if (gq) MutStridedMap(gq + off, eS, eDh, stride).noalias() += dp * kb;
                       if (gk) {
                         MutStridedMap(gk + off, eS, eDh, stride).noalias() += dp.transpose() * qb;
                       }
                     }
                   }
                 });
}

Tensor batched_matmul_nt(const Tensor& a, const Tensor& b, std::size_t batch) {
  require_rank2(a, "batched_matmul_nt");
  require_rank2(b, "batched_matmul_nt");
  if (batch == 0 || a.dim(0) % batch != 0 || b.dim(0) % batch != 0 || a.dim(1) != b.dim(1)) {
    throw DimensionError("batched_matmul_nt: " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not split into " + std::to_string(batch) +
                         " blocks");
  }
  const auto P = a.dim(0) / batch, Q = b.dim(0) / batch, d = a.dim(1);
  std::vector<double> out(batch * P * Q);
  for (std::size_t i = 0; i < batch; ++i) {
    mmap(out.data() + i * P * Q, P, Q).noalias() =
        cmap(a.data().subspan(i * P * d, P * d), P, d) *
        cmap(b.data().subspan(i * Q * d, Q * d), Q, d).transpose();
  }
  return make_op({batch * P, Q}, std::move(out), {a, b}, [batch, P, Q, d](Node& self) {
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    for (std::size_t i = 0; i < batch; ++i) {
      auto dc = cmap(std::span<const double>(self.grad).subspan(i * P * Q, P * Q), P, Q);
      if (ga) {
        mmap(ga + i * P * d, P, d).noalias() +=
            dc * cmap(std::span<const double>(bv).subspan(i * Q * d, Q * d), Q, d);
      }
      if (gb) {
        mmap(gb + i * Q * d, Q, d).noalias() +=
            dc.transpose() * cmap(std::span<const double>(av).subspan(i * P * d, P * d), P, d);
      }
    }
  });
}

}  // namespace m4c::num
