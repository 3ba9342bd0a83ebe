#pragma once

// Value-level kernels shared by the autodiff graph and by evaluation code.
// All functions are pure; shape violations throw DimensionError.

#include <vector>

#include "l3doc/tensor.hpp"

namespace l3doc::ops {

/// (m x k) * (k x n) -> (m x n)
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise sum. `b` may also be a vector matching the last axis of `a`
/// (row broadcast, used for biases).
Tensor add(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
double mean(const Tensor& a);

/// c [1x1xn], d [n x a x b] -> [1x1 x a x b], out[i,j] = sum_k c[k] d[k,i,j].
Tensor channel_contract(const Tensor& c, const Tensor& d);

/// Stride-1 transposed convolution of an H x W x c_in grid with an
/// s x s x c_out x c_in kernel. The full (H+s-1) x (W+s-1) result is cropped
/// to its top-left H x W block.
Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel);

/// Column-wise max over the point axis of an n_pts x f matrix -> [f].
Tensor max_pool_points(const Tensor& features);

/// Column-wise max over consecutive groups of `points_per_object` rows of a
/// (b * points_per_object) x f matrix -> b x f. `argmax` receives, per output
/// element, the absolute row index of the first (lowest index) maximum.
Tensor max_pool_groups(const Tensor& features, std::size_t points_per_object,
                       std::vector<std::size_t>* argmax = nullptr);

/// sum (a - b)^2
double sq_l2_diff(const Tensor& a, const Tensor& b);

/// Max-shifted softmax along the last axis (rank 1 or rank 2 inputs).
Tensor softmax(const Tensor& v);

/// Index of the largest entry of each row, ties toward the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& m);

}  // namespace l3doc::ops
