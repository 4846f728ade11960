#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "m4c/num/tensor.hpp"

namespace m4c::num {

// Matrix products. Operands are rank-2.
Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// Adds a rank-1 `bias` to every row of `a`.
Tensor add_bias(const Tensor& a, const Tensor& bias);

/// x · weightᵀ (+ bias). weight is [out × in], x is [rows × in].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);

/// Normalizes each row over the last dimension, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

/// Mean binary cross-entropy over elements where mask == 1, computed from
/// logits in the stable form max(x,0) - x*t + log1p(exp(-|x|)). Returns a
/// scalar; 0 when the mask is empty. Targets and mask must be 0/1.
Tensor sigmoid_bce_with_logits(const Tensor& logits, const Tensor& targets,
                               const Tensor& mask);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Row-level plumbing on [rows × cols] views.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
// Multiplies row r by the constant factors[r].
Tensor scale_rows(const Tensor& x, std::span<const double> factors);

/// Inverted dropout. Identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

/// Additive attention mask for a batch: `batch` blocks of seq×seq values,
/// 0 for allowed and a large negative number for blocked pairs.
struct AttentionMask {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<double> additive;
};

/// Scaled dot-product multi-head attention over a packed batch.
/// q, k, v: [batch*seq × d]. Head h uses columns [h*d/heads, (h+1)*d/heads).
/// Returns the concatenated head outputs, [batch*seq × d].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::shared_ptr<const AttentionMask> mask, std::size_t heads);

/// Per-example a_b · b_bᵀ for packed a [batch*P × d], b [batch*Q × d].
/// Returns [batch*P × Q].
Tensor batched_matmul_nt(const Tensor& a, const Tensor& b, std::size_t batch);

}  // namespace m4c::num
