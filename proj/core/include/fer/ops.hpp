#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fer/tensor.hpp"

namespace fer {

class CounterRng;

// Elementwise arithmetic with numpy-style broadcasting over trailing axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// Batched matrix product a[..., m, k] · b[..., k, n]; batch axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[..., in] · weight[in, out] + bias[out]. bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Max-subtracted softmax along axis.
Tensor softmax(const Tensor& x, int axis);

/// Normalises over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor gelu(const Tensor& x);  // x * Phi(x), exact erf form
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Mean over the batch of -log softmax(logits)[target]; logits are [B, K].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Structural ops. All of them copy; none alias their input.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// out[(i + shift) mod n] = x[i] along each listed axis (numpy.roll).
Tensor cyclic_roll(const Tensor& x, const std::vector<int>& shifts, const std::vector<int>& axes);

/// Row gather: out[i, :] = table[indices[i], :]. Backward scatter-adds.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, CounterRng& rng);

/// Row-wise argmax of a [B, K] tensor (not differentiable).
std::vector<int> argmax_rows(const Tensor& x);

}  // namespace fer
