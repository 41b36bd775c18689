#pragma once

#include <cstddef>

#include "nobias/tensor.hpp"

// Forward and adjoint kernels for every layer type the networks use. All
// kernels are pure and sum in a fixed loop order, so results are
// bit-reproducible.
namespace nobias::kernels {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_size = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // Output extent along one spatial axis; throws ShapeError if it would be < 1.
  std::size_t output_extent(std::size_t in) const;
  void validate() const;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

// Cross-correlation with zero padding. input C x H x W, weights O x C x K x K,
// bias O.
Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                      const ConvSpec& spec);
ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const ConvSpec& spec,
                          const Tensor& grad_out);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

// weights M x N, input N, bias M.
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

Tensor relu_forward(const Tensor& input);
// Plain chain rule through the ReLU: grad where output > 0.
Tensor relu_backward(const Tensor& output, const Tensor& grad_out);

// C x H x W -> C.
Tensor global_avg_pool_forward(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;
};

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::size_t label);

// Mean squared error over all elements; target is compared by flat index, so
// shapes need only agree in element count.
LossAndGrad mean_squared_error(const Tensor& prediction, const Tensor& target);

}  // namespace nobias::kernels
