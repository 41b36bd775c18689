#include "nobias/network.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "nobias/errors.hpp"
#include "nobias/rng.hpp"
#include "nobias/tensor_io.hpp"

namespace nobias {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

Shape infer_output_shape(const Layer& layer, const Shape& in, std::size_t index) {
  const std::string where = "layer " + std::to_string(index) + " (" + layer_kind(layer) + ")";
  return std::visit(
      Overloaded{
          [&](const ConvLayer& l) -> Shape {
            if (in.size() != 3 || in[0] != l.spec.in_channels) {
              throw ShapeError(where + ": input " + shape_string(in) + " has wrong channels");
            }
            const Shape w{l.spec.out_channels, l.spec.in_channels, l.spec.kernel_size,
                          l.spec.kernel_size};
            if (l.weights.shape() != w || l.bias.shape() != Shape{l.spec.out_channels}) {
              throw ShapeError(where + ": parameter shapes disagree with ConvSpec");
            }
            return {l.spec.out_channels, l.spec.output_extent(in[1]),
                    l.spec.output_extent(in[2])};
          },
          [&](const DenseLayer& l) -> Shape {
            if (l.weights.rank() != 2 || in.size() != 1 || l.weights.extent(1) != in[0] ||
                l.bias.shape() != Shape{l.weights.extent(0)}) {
              throw ShapeError(where + ": weights " + shape_string(l.weights.shape()) +
                               " do not accept input " + shape_string(in));
            }
            return {l.weights.extent(0)};
          },
          [&](const ReluLayer&) -> Shape { return in; },
          [&](const GlobalAvgPoolLayer&) -> Shape {
            if (in.size() != 3) throw ShapeError(where + ": expected C x H x W input");
            return {in[0]};
          },
      },
      layer);
}

// He-uniform weights, fan-in scaled uniform biases.
void init_params(Tensor& weights, Tensor& bias, std::size_t fan_in, Rng& rng) {
  const double wb = std::sqrt(6.0 / static_cast<double>(fan_in));
  const double bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& w : weights.data()) w = rng.uniform(-wb, wb);
  for (double& b : bias.data()) b = rng.uniform(-bb, bb);
}

ConvLayer make_conv(std::size_t in_ch, std::size_t out_ch, Rng& rng) {
  kernels::ConvSpec spec{in_ch, out_ch, 3, 2, 1};
  ConvLayer l{spec, Tensor({out_ch, in_ch, 3, 3}), Tensor({out_ch})};
  init_params(l.weights, l.bias, in_ch * 9, rng);
  return l;
}

DenseLayer make_dense(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer l{Tensor({out, in}), Tensor({out})};
  init_params(l.weights, l.bias, in, rng);
  return l;
}

void require_image_shape(const Shape& s) {
  if (s.size() != 3) throw ShapeError("expected C x H x W input shape, got " + shape_string(s));
}

nlohmann::json layer_to_json(const Layer& layer) {
  return std::visit(
      Overloaded{
          [](const ConvLayer& l) {
            return nlohmann::json{{"type", "conv"},
                                  {"in_channels", l.spec.in_channels},
                                  {"out_channels", l.spec.out_channels},
                                  {"kernel_size", l.spec.kernel_size},
                                  {"stride", l.spec.stride},
                                  {"padding", l.spec.padding}};
          },
          [](const DenseLayer& l) {
            return nlohmann::json{
                {"type", "dense"}, {"in", l.weights.extent(1)}, {"out", l.weights.extent(0)}};
          },
          [](const ReluLayer&) { return nlohmann::json{{"type", "relu"}}; },
          [](const GlobalAvgPoolLayer&) { return nlohmann::json{{"type", "global_avg_pool"}}; },
      },
      layer);
}

}  // namespace

std::string layer_kind(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const ConvLayer&) { return std::string("conv"); },
                        [](const DenseLayer&) { return std::string("dense"); },
                        [](const ReluLayer&) { return std::string("relu"); },
                        [](const GlobalAvgPoolLayer&) { return std::string("global_avg_pool"); },
                    },
                    layer);
}

bool operator==(const ConvLayer& a, const ConvLayer& b) {
  return a.spec == b.spec && a.weights == b.weights && a.bias == b.bias;
}

bool operator==(const DenseLayer& a, const DenseLayer& b) {
  return a.weights == b.weights && a.bias == b.bias;
}

bool operator==(const SequentialNet& a, const SequentialNet& b) {
  return a.input_shape_ == b.input_shape_ && a.layers_ == b.layers_;
}

SequentialNet::SequentialNet(Shape input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("SequentialNet needs at least one layer");
  for (std::size_t e : input_shape_) {
    if (e == 0) throw ShapeError("input shape extents must be positive");
  }
  shapes_.push_back(input_shape_);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    shapes_.push_back(infer_output_shape(layers_[k], shapes_.back(), k));
  }
}

std::vector<Tensor*> SequentialNet::parameters() {
  std::vector<Tensor*> out;
  for (Layer& layer : layers_) {
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      out.push_back(&c->weights);
      out.push_back(&c->bias);
    } else if (auto* d = std::get_if<DenseLayer>(&layer)) {
      out.push_back(&d->weights);
      out.push_back(&d->bias);
    }
  }
  return out;
}

std::vector<const Tensor*> SequentialNet::parameters() const {
  std::vector<const Tensor*> out;
  for (const Layer& layer : layers_) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      out.push_back(&c->weights);
      out.push_back(&c->bias);
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      out.push_back(&d->weights);
      out.push_back(&d->bias);
    }
  }
  return out;
}

std::size_t SequentialNet::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

Tensor layer_forward(const Layer& layer, const Tensor& input) {
  return std::visit(
      Overloaded{
          [&](const ConvLayer& l) {
            return kernels::conv2d_forward(input, l.weights, l.bias, l.spec);
          },
          [&](const DenseLayer& l) { return kernels::dense_forward(input, l.weights, l.bias); },
          [&](const ReluLayer&) { return kernels::relu_forward(input); },
          [&](const GlobalAvgPoolLayer&) { return kernels::global_avg_pool_forward(input); },
      },
      layer);
}

ForwardResult forward(const SequentialNet& net, const Tensor& input, bool record) {
  if (input.shape() != net.input_shape()) {
    throw ShapeError("forward: input " + shape_string(input.shape()) + ", net expects " +
                     shape_string(net.input_shape()));
  }
  ForwardResult result;
  Tensor current = input;
  if (record) result.trace.records.reserve(net.layers().size());
  for (const Layer& layer : net.layers()) {
    Tensor next = layer_forward(layer, current);
    if (record) {
      result.trace.records.push_back({std::move(current), next});
    }
    current = std::move(next);
  }
  result.output = std::move(current);
  return result;
}

void validate_trace(const SequentialNet& net, const ActivationTrace& trace) {
  if (trace.records.size() != net.layers().size()) {
    throw std::invalid_argument("trace has " + std::to_string(trace.records.size()) +
                                " records, net has " + std::to_string(net.layers().size()) +
                                " layers");
  }
  for (std::size_t k = 0; k < trace.records.size(); ++k) {
    if (trace.records[k].input.shape() != net.layer_shape(k) ||
        trace.records[k].output.shape() != net.layer_shape(k + 1)) {
      throw std::invalid_argument("trace record " + std::to_string(k) +
                                  " does not match the net's layer shapes");
    }
  }
}

NetGradients backward(const SequentialNet& net, const ActivationTrace& trace,
                      const Tensor& grad_output) {
  validate_trace(net, trace);
  if (grad_output.shape() != net.output_shape()) {
    throw ShapeError("backward: output gradient " + shape_string(grad_output.shape()) +
                     ", net output " + shape_string(net.output_shape()));
  }
  std::vector<Tensor> layer_grads;  // collected back to front, two per parameterized layer
  Tensor grad = grad_output;
  for (std::size_t k = net.layers().size(); k-- > 0;) {
    const LayerRecord& rec = trace.records[k];
    const Layer& layer = net.layers()[k];
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      auto g = kernels::conv2d_backward(rec.input, c->weights, c->spec, grad);
      layer_grads.push_back(std::move(g.bias));
      layer_grads.push_back(std::move(g.weights));
      grad = std::move(g.input);
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      auto g = kernels::dense_backward(rec.input, d->weights, grad);
      layer_grads.push_back(std::move(g.bias));
      layer_grads.push_back(std::move(g.weights));
      grad = std::move(g.input);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      grad = kernels::relu_backward(rec.output, grad);
    } else {
      grad = kernels::global_avg_pool_backward(rec.input.shape(), grad);
    }
  }
  return {std::move(grad), {std::make_move_iterator(layer_grads.rbegin()),
                            std::make_move_iterator(layer_grads.rend())}};
}

SequentialNet build_classifier(const Shape& input_shape, std::span<const std::size_t> widths,
                               std::size_t num_classes, std::uint64_t seed) {
  require_image_shape(input_shape);
  if (widths.size() != 3) {
    throw std::invalid_argument("build_classifier: expected exactly 3 channel widths, got " +
                                std::to_string(widths.size()));
  }
  if (num_classes < 2) throw std::invalid_argument("build_classifier: num_classes must be >= 2");
  Rng rng(seed);
  std::vector<Layer> layers;
  std::size_t channels = input_shape[0];
  for (std::size_t w : widths) {
    layers.emplace_back(make_conv(channels, w, rng));
    layers.emplace_back(ReluLayer{});
    channels = w;
  }
  layers.emplace_back(GlobalAvgPoolLayer{});
  layers.emplace_back(make_dense(channels, num_classes, rng));
  return SequentialNet(input_shape, std::move(layers));
}

SequentialNet build_encoder(const Shape& input_shape, std::size_t latent_dim,
                            std::uint64_t seed, std::span<const std::size_t> widths) {
  require_image_shape(input_shape);
  if (latent_dim < 1) throw std::invalid_argument("build_encoder: latent_dim must be >= 1");
  static constexpr std::size_t kDefaultWidths[] = {16, 32};
  if (widths.empty()) widths = kDefaultWidths;
  if (widths.size() != 2) {
    throw std::invalid_argument("build_encoder: expected exactly 2 channel widths");
  }
  Rng rng(seed);
  std::vector<Layer> layers;
  std::size_t channels = input_shape[0];
  for (std::size_t w : widths) {
    layers.emplace_back(make_conv(channels, w, rng));
    layers.emplace_back(ReluLayer{});
    channels = w;
  }
  layers.emplace_back(GlobalAvgPoolLayer{});
  layers.emplace_back(make_dense(channels, latent_dim, rng));
  return SequentialNet(input_shape, std::move(layers));
}

SequentialNet build_decoder(std::size_t latent_dim, std::size_t hidden,
                            const Shape& image_shape, std::uint64_t seed) {
  if (latent_dim < 1 || hidden < 1) {
    throw std::invalid_argument("build_decoder: latent_dim and hidden must be >= 1");
  }
  Rng rng(seed);
  std::vector<Layer> layers;
  layers.emplace_back(make_dense(latent_dim, hidden, rng));
  layers.emplace_back(ReluLayer{});
  layers.emplace_back(make_dense(hidden, shape_size(image_shape), rng));
  return SequentialNet({latent_dim}, std::move(layers));
}

void write_checkpoint(std::ostream& os, const SequentialNet& net) {
  nlohmann::json arch;
  arch["format"] = "NBC1";
  arch["version"] = 1;
  arch["input_shape"] = net.input_shape();
  arch["layers"] = nlohmann::json::array();
  for (const Layer& layer : net.layers()) arch["layers"].push_back(layer_to_json(layer));
  os << "NBC1\n" << arch.dump() << '\n';
  for (const Tensor* p : net.parameters()) write_tensor(os, *p);
  if (!os) throw std::runtime_error("checkpoint write failed");
}

SequentialNet read_checkpoint(std::istream& is) {
  std::string magic, header;
  if (!std::getline(is, magic) || magic != "NBC1") throw FormatError("NBC1: bad magic");
  if (!std::getline(is, header)) throw FormatError("NBC1: missing architecture header");
  try {
    const auto arch = nlohmann::json::parse(header);
    if (arch.at("format") != "NBC1" || arch.at("version") != 1) {
      throw FormatError("NBC1: unsupported format or version");
    }
    const Shape input_shape = arch.at("input_shape").get<Shape>();
    std::vector<Layer> layers;
    for (const auto& j : arch.at("layers")) {
      const std::string type = j.at("type");
      if (type == "conv") {
        kernels::ConvSpec spec{j.at("in_channels"), j.at("out_channels"), j.at("kernel_size"),
                               j.at("stride"), j.at("padding")};
        ConvLayer l{spec, read_tensor(is), read_tensor(is)};
        layers.emplace_back(std::move(l));
      } else if (type == "dense") {
        DenseLayer l{read_tensor(is), read_tensor(is)};
        if (l.weights.shape() != Shape{j.at("out"), j.at("in")}) {
          throw FormatError("NBC1: dense weights " + shape_string(l.weights.shape()) +
                            " disagree with declared architecture");
        }
        layers.emplace_back(std::move(l));
      } else if (type == "relu") {
        layers.emplace_back(ReluLayer{});
      } else if (type == "global_avg_pool") {
        layers.emplace_back(GlobalAvgPoolLayer{});
      } else {
        throw FormatError("NBC1: unknown layer type '" + type + "'");
      }
    }
    return SequentialNet(input_shape, std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("NBC1: malformed architecture header: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("NBC1: inconsistent checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("NBC1: invalid checkpoint: ") + e.what());
  }
}

void save_checkpoint(const SequentialNet& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(os, net);
}

SequentialNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  SequentialNet net = read_checkpoint(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("NBC1: trailing bytes in " + path.string());
  }
  return net;
}

std::string encode_checkpoint(const SequentialNet& net) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, net);
  return os.str();
}

}  // namespace nobias
