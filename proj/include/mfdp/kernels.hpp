#pragma once

// Raw tensor kernels. No autodiff bookkeeping; the tape-level ops in
// autodiff.hpp are thin wrappers around these.

#include <vector>

#include "mfdp/tensor.hpp"

namespace mfdp::kernels {

struct Conv2dOptions {
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
  int groups = 1;
};

/// Output shape of a conv2d; throws ContractError naming the offending dimension.
Shape conv2d_output_shape(const Shape& x, const Shape& w, const Conv2dOptions& o);

// Summation order per output element: input channel outer, kernel row-major
// inner, bias added last. Every conv-family kernel uses the same fixed order.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dOptions& o);
Tensor conv2d_grad_input(const Tensor& gy, const Tensor& w, const Shape& x_shape,
                         const Conv2dOptions& o);
Tensor conv2d_grad_weight(const Tensor& gy, const Tensor& x, const Shape& w_shape,
                          const Conv2dOptions& o);
Tensor channel_sum(const Tensor& gy);  // N x C x ... -> C

/// Transposed convolution; `w` is Cin x Cout x kh x kw (groups must be 1).
Shape conv_transpose2d_output_shape(const Shape& x, const Shape& w, const Conv2dOptions& o);
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor* bias,
                        const Conv2dOptions& o);

/// Batched matmul: B x m x k times B x k x n.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

Tensor permute(const Tensor& x, const std::vector<int>& axes);
std::vector<int> inverse_permutation(const std::vector<int>& axes);

Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

}  // namespace mfdp::kernels
