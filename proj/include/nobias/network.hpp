#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nobias/kernels.hpp"
#include "nobias/tensor.hpp"

namespace nobias {

struct ConvLayer {
  kernels::ConvSpec spec;
  Tensor weights;  // O x C x K x K
  Tensor bias;     // O
};

struct DenseLayer {
  Tensor weights;  // M x N
  Tensor bias;     // M
};

struct ReluLayer {};
struct GlobalAvgPoolLayer {};

using Layer = std::variant<ConvLayer, DenseLayer, ReluLayer, GlobalAvgPoolLayer>;

std::string layer_kind(const Layer& layer);

// Ordered layer stack. Shape composition is validated once, at construction;
// afterwards only parameter values may change (through the trainer).
class SequentialNet {
 public:
  SequentialNet(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return shapes_.back(); }
  // Input shape of layer k; layer_shape(layers().size()) is the output shape.
  const Shape& layer_shape(std::size_t k) const { return shapes_.at(k); }

  std::span<const Layer> layers() const { return layers_; }

  // Parameter tensors in a fixed order: for every Conv/Dense layer, weights
  // then bias.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  friend bool operator==(const SequentialNet& a, const SequentialNet& b);

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
};

bool operator==(const ConvLayer& a, const ConvLayer& b);
bool operator==(const DenseLayer& a, const DenseLayer& b);
inline bool operator==(const ReluLayer&, const ReluLayer&) { return true; }
inline bool operator==(const GlobalAvgPoolLayer&, const GlobalAvgPoolLayer&) { return true; }

// What each layer saw and produced during one forward pass.
struct LayerRecord {
  Tensor input;
  Tensor output;
};

struct ActivationTrace {
  std::vector<LayerRecord> records;
  bool empty() const { return records.empty(); }
};

struct ForwardResult {
  Tensor output;
  ActivationTrace trace;
};

Tensor layer_forward(const Layer& layer, const Tensor& input);

ForwardResult forward(const SequentialNet& net, const Tensor& input, bool record);
inline Tensor predict(const SequentialNet& net, const Tensor& input) {
  return forward(net, input, false).output;
}

// Throws std::invalid_argument unless the trace could have come from forward()
// on this net.
void validate_trace(const SequentialNet& net, const ActivationTrace& trace);

struct NetGradients {
  Tensor input;
  std::vector<Tensor> parameters;  // aligned with SequentialNet::parameters()
};

// Plain chain-rule backward pass from an output gradient.
NetGradients backward(const SequentialNet& net, const ActivationTrace& trace,
                      const Tensor& grad_output);

// Conv(3x3, stride 2, pad 1) -> ReLU for each width, then global average
// pooling and a dense layer to num_classes logits.
SequentialNet build_classifier(const Shape& input_shape, std::span<const std::size_t> widths,
                               std::size_t num_classes, std::uint64_t seed);

// Conv -> ReLU for each width, global average pooling, dense to latent_dim.
SequentialNet build_encoder(const Shape& input_shape, std::size_t latent_dim,
                            std::uint64_t seed, std::span<const std::size_t> widths = {});

// Dense -> ReLU -> Dense from a latent vector to a flattened image.
SequentialNet build_decoder(std::size_t latent_dim, std::size_t hidden,
                            const Shape& image_shape, std::uint64_t seed);

// NBC1 checkpoints: "NBC1\n", one JSON architecture line, then every
// parameter tensor as NBT1 in parameters() order.
void write_checkpoint(std::ostream& os, const SequentialNet& net);
SequentialNet read_checkpoint(std::istream& is);
void save_checkpoint(const SequentialNet& net, const std::filesystem::path& path);
SequentialNet load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const SequentialNet& net);

}  // namespace nobias
