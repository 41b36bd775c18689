#include "nobias/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nobias/errors.hpp"

namespace nobias::kernels {
namespace {

void check_conv_shapes(const Tensor& input, const Tensor& weights, const ConvSpec& spec) {
  spec.validate();
  const Shape expect_w{spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size};
  if (input.rank() != 3 || input.extent(0) != spec.in_channels) {
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + " does not have " +
                     std::to_string(spec.in_channels) + " channels as C x H x W");
  }
  if (weights.shape() != expect_w) {
    throw ShapeError("conv2d: weights " + shape_string(weights.shape()) + ", expected " +
                     shape_string(expect_w));
  }
}

}  // namespace

std::size_t ConvSpec::output_extent(std::size_t in) const {
  validate();
  const std::size_t padded = in + 2 * padding;
  if (padded < kernel_size) {
    throw ShapeError("conv2d: spatial extent " + std::to_string(in) +
                     " collapses below 1 with kernel " + std::to_string(kernel_size));
  }
  return (padded - kernel_size) / stride + 1;
}

void ConvSpec::validate() const {
  if (kernel_size < 1 || stride < 1 || in_channels < 1 || out_channels < 1) {
    throw ShapeError("conv2d: kernel_size, stride and channel counts must be >= 1");
  }
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                      const ConvSpec& spec) {
  check_conv_shapes(input, weights, spec);
  if (bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv2d: bias " + shape_string(bias.shape()) + ", expected [" +
                     std::to_string(spec.out_channels) + "]");
  }
  const std::size_t C = spec.in_channels, K = spec.kernel_size, S = spec.stride;
  const std::size_t H = input.extent(1), W = input.extent(2);
  const std::size_t Ho = spec.output_extent(H), Wo = spec.output_extent(W);
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  Tensor out({spec.out_channels, Ho, Wo});
  for (std::size_t o = 0; o < spec.out_channels; ++o) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double acc = bias[o];
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < K; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * S + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < K; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * S + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += weights[((o * C + c) * K + ky) * K + kx] *
                     input.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
        out.at(o, oy, ox) = acc;
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const ConvSpec& spec,
                          const Tensor& grad_out) {
  check_conv_shapes(input, weights, spec);
  const std::size_t C = spec.in_channels, K = spec.kernel_size, S = spec.stride;
  const std::size_t H = input.extent(1), W = input.extent(2);
  const std::size_t Ho = spec.output_extent(H), Wo = spec.output_extent(W);
  if (grad_out.shape() != Shape{spec.out_channels, Ho, Wo}) {
    throw ShapeError("conv2d_backward: grad_out " + shape_string(grad_out.shape()) +
                     ", expected " + shape_string({spec.out_channels, Ho, Wo}));
  }
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  ConvGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({spec.out_channels})};
  for (std::size_t o = 0; o < spec.out_channels; ++o) {
    double bias_acc = 0.0;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const double go = grad_out.at(o, oy, ox);
        bias_acc += go;
        if (go == 0.0) continue;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < K; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * S + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < K; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * S + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t widx = ((o * C + c) * K + ky) * K + kx;
              const auto uy = static_cast<std::size_t>(iy), ux = static_cast<std::size_t>(ix);
              g.weights[widx] += go * input.at(c, uy, ux);
              g.input.at(c, uy, ux) += go * weights[widx];
            }
          }
        }
      }
    }
    g.bias[o] = bias_acc;
  }
  return g;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2 || input.rank() != 1 || weights.extent(1) != input.size() ||
      bias.shape() != Shape{weights.extent(0)}) {
    throw ShapeError("dense: weights " + shape_string(weights.shape()) + ", input " +
                     shape_string(input.shape()) + ", bias " + shape_string(bias.shape()) +
                     " are inconsistent");
  }
  const std::size_t M = weights.extent(0), N = weights.extent(1);
  Tensor out({M});
  for (std::size_t m = 0; m < M; ++m) {
    double acc = bias[m];
    for (std::size_t n = 0; n < N; ++n) acc += weights[m * N + n] * input[n];
    out[m] = acc;
  }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  if (weights.rank() != 2 || input.rank() != 1 || weights.extent(1) != input.size() ||
      grad_out.shape() != Shape{weights.extent(0)}) {
    throw ShapeError("dense_backward: weights " + shape_string(weights.shape()) + ", input " +
                     shape_string(input.shape()) + ", grad_out " +
                     shape_string(grad_out.shape()) + " are inconsistent");
  }
  const std::size_t M = weights.extent(0), N = weights.extent(1);
  DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), grad_out};
  for (std::size_t m = 0; m < M; ++m) {
    const double go = grad_out[m];
    for (std::size_t n = 0; n < N; ++n) {
      g.weights[m * N + n] = go * input[n];
      g.input[n] += go * weights[m * N + n];
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_out) {
  require_same_shape(output, grad_out, "relu_backward");
  Tensor g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) g[i] = output[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

Tensor global_avg_pool_forward(const Tensor& input) {
  if (input.rank() != 3) {
    throw ShapeError("global_avg_pool: expected C x H x W, got " + shape_string(input.shape()));
  }
  const std::size_t C = input.extent(0), HW = input.extent(1) * input.extent(2);
  Tensor out({C});
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < HW; ++i) acc += input[c * HW + i];
    out[c] = acc / static_cast<double>(HW);
  }
  return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  if (input_shape.size() != 3 || grad_out.shape() != Shape{input_shape[0]}) {
    throw ShapeError("global_avg_pool_backward: grad " + shape_string(grad_out.shape()) +
                     " does not match input " + shape_string(input_shape));
  }
  const std::size_t C = input_shape[0], HW = input_shape[1] * input_shape[2];
  Tensor g(input_shape);
  for (std::size_t c = 0; c < C; ++c) {
    const double v = grad_out[c] / static_cast<double>(HW);
    for (std::size_t i = 0; i < HW; ++i) g[c * HW + i] = v;
  }
  return g;
}

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1) {
    throw ShapeError("softmax_cross_entropy: logits must be a vector, got " +
                     shape_string(logits.shape()));
  }
  const std::size_t K = logits.size();
  if (label >= K) {
    throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) +
                            " out of range for " + std::to_string(K) + " classes");
  }
  const double mx = *std::max_element(logits.data().begin(), logits.data().end());
  double z = 0.0;
  for (std::size_t k = 0; k < K; ++k) z += std::exp(logits[k] - mx);
  const double log_z = std::log(z);

  LossAndGrad r{log_z - (logits[label] - mx), Tensor({K})};
  for (std::size_t k = 0; k < K; ++k) r.grad[k] = std::exp(logits[k] - mx - log_z);
  r.grad[label] -= 1.0;
  return r;
}

LossAndGrad mean_squared_error(const Tensor& prediction, const Tensor& target) {
  if (prediction.size() != target.size()) {
    throw ShapeError("mean_squared_error: " + shape_string(prediction.shape()) + " vs " +
                     shape_string(target.shape()));
  }
  const auto n = static_cast<double>(prediction.size());
  LossAndGrad r{0.0, Tensor(prediction.shape())};
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    r.loss += d * d;
    r.grad[i] = 2.0 * d / n;
  }
  r.loss /= n;
  return r;
}

}  // namespace nobias::kernels
