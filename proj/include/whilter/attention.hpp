#pragma once

#include <cmath>
#include <vector>

#include "whilter/tensor.hpp"

namespace whilter {

/// Projection weights of one multi-head self-attention block. Weights are
/// [d x d] in (out, in) layout; biases are [d].
template <std::floating_point T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Scaled dot-product attention over `n_heads` column groups of width d / n_heads.
/// Query, key and value inputs are [T x d]. When `attn_out` is non-null the
/// per-head [T x T] attention matrices are appended to it.
template <std::floating_point T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               const AttentionParams<T>& p, std::size_t n_heads,
                               std::vector<Tensor<T>>* attn_out = nullptr) {
  const std::size_t d = q_in.cols();
  if (n_heads == 0 || d % n_heads != 0) {
    throw ConfigError("multi_head_attention: model dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  if (k_in.cols() != d || v_in.cols() != d || k_in.rows() != v_in.rows()) {
    throw std::invalid_argument("multi_head_attention: q/k/v shape mismatch");
  }
  const std::size_t head_dim = d / n_heads;
  const T scale_factor = T{1} / std::sqrt(static_cast<T>(head_dim));

  Tensor<T> q = linear(q_in, p.wq, p.bq);
  Tensor<T> k = linear(k_in, p.wk, p.bk);
  Tensor<T> v = linear(v_in, p.wv, p.bv);

  std::vector<Tensor<T>> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * head_dim;
    Tensor<T> qh = n_heads == 1 ? q : slice_cols(q, off, head_dim);
    Tensor<T> kh = n_heads == 1 ? k : slice_cols(k, off, head_dim);
    Tensor<T> vh = n_heads == 1 ? v : slice_cols(v, off, head_dim);
    Tensor<T> attn = softmax(scale(matmul_nt(qh, kh), scale_factor), 1);
    if (attn_out) attn_out->push_back(attn);
    heads.push_back(matmul(attn, vh));
  }
  Tensor<T> merged = n_heads == 1 ? heads.front() : concat_cols(heads);
  return linear(merged, p.wo, p.bo);
}

}  // namespace whilter
