#include "nobias/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nobias/errors.hpp"
#include "nobias/kernels.hpp"

namespace nobias {
namespace {

const char* rule_name(RuleKind k) {
  switch (k) {
    case RuleKind::Vanilla: return "vanilla";
    case RuleKind::Guided: return "guided";
    case RuleKind::Rectified: return "rectified";
  }
  return "?";
}

const char* reduction_name(ChannelReduction r) {
  switch (r) {
    case ChannelReduction::None: return "none";
    case ChannelReduction::Mean: return "mean";
    case ChannelReduction::MeanAbs: return "mean_abs";
  }
  return "?";
}

void validate_policy(const ThresholdPolicy& policy) {
  if (const auto* p = std::get_if<PercentileThreshold>(&policy)) {
    if (!(p->q >= 0.0 && p->q < 1.0)) {
      throw std::invalid_argument("percentile threshold q must lie in [0, 1)");
    }
  } else if (!std::isfinite(std::get<AbsoluteThreshold>(policy).tau)) {
    throw std::invalid_argument("absolute threshold must be finite");
  }
}

}  // namespace

MethodSpec method_spec(Method method, ThresholdPolicy policy) {
  switch (method) {
    case Method::Vanilla: return {PropagationRule::vanilla(), FinalizationMode::Identity};
    case Method::Guided: return {PropagationRule::guided(), FinalizationMode::Identity};
    case Method::RectGrad:
      return {PropagationRule::rectified(policy), FinalizationMode::MultiplyInput};
    case Method::NoBias: return {PropagationRule::rectified(policy), FinalizationMode::Identity};
    case Method::InputXGrad:
      return {PropagationRule::vanilla(), FinalizationMode::MultiplyInput};
  }
  throw std::invalid_argument("unknown method");
}

std::string method_name(Method method) {
  switch (method) {
    case Method::Vanilla: return "vanilla";
    case Method::Guided: return "guided";
    case Method::RectGrad: return "rectgrad";
    case Method::NoBias: return "nobias";
    case Method::InputXGrad: return "inputxgrad";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::Vanilla, Method::Guided, Method::RectGrad, Method::NoBias,
                   Method::InputXGrad}) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + name +
                              "' (expected vanilla|guided|rectgrad|nobias|inputxgrad)");
}

nlohmann::json descriptor_to_json(const MethodDescriptor& d) {
  nlohmann::json j;
  j["rule"] = rule_name(d.rule.kind);
  if (d.rule.kind == RuleKind::Rectified) {
    if (const auto* p = std::get_if<PercentileThreshold>(&d.rule.threshold)) {
      j["threshold_policy"] = {{"kind", "percentile"}, {"q", p->q}};
    } else {
      j["threshold_policy"] = {{"kind", "absolute"},
                               {"tau", std::get<AbsoluteThreshold>(d.rule.threshold).tau}};
    }
  } else {
    j["threshold_policy"] = nullptr;
  }
  j["layer_thresholds"] = d.layer_thresholds;
  j["finalization"] =
      d.finalization == FinalizationMode::MultiplyInput ? "multiply_input" : "identity";
  j["reduction"] = reduction_name(d.reduction);
  // Conventional name when the combination has one.
  for (Method m : {Method::Vanilla, Method::Guided, Method::RectGrad, Method::NoBias,
                   Method::InputXGrad}) {
    const MethodSpec s = method_spec(m);
    if (s.rule.kind == d.rule.kind && s.finalization == d.finalization) {
      j["method"] = method_name(m);
    }
  }
  if (!j.contains("method")) j["method"] = "custom";
  return j;
}

Tensor class_score_seed(const Tensor& logits, std::size_t class_index) {
  if (logits.rank() != 1) throw ShapeError("class_score_seed: logits must be a vector");
  if (class_index >= logits.size()) {
    throw std::out_of_range("class index " + std::to_string(class_index) + " out of range for " +
                            std::to_string(logits.size()) + " logits");
  }
  Tensor seed(logits.shape());
  seed[class_index] = 1.0;
  return seed;
}

Tensor relu_backprop_step(RuleKind rule, const Tensor& activation, const Tensor& grad_in,
                          double tau) {
  require_same_shape(activation, grad_in, "relu_backprop_step");
  Tensor out(grad_in.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = activation[i];
    const double r = grad_in[i];
    bool keep = false;
    switch (rule) {
      case RuleKind::Vanilla: keep = a > 0.0; break;
      case RuleKind::Guided: keep = a > 0.0 && r > 0.0; break;
      case RuleKind::Rectified: keep = a * r > tau; break;
    }
    out[i] = keep ? r : 0.0;
  }
  return out;
}

double select_threshold(const ThresholdPolicy& policy, const Tensor& products) {
  validate_policy(policy);
  if (const auto* a = std::get_if<AbsoluteThreshold>(&policy)) return a->tau;
  const double q = std::get<PercentileThreshold>(policy).q;
  if (products.size() == 0) throw std::invalid_argument("select_threshold: no products");
  std::vector<double> sorted(products.data().begin(), products.data().end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

BackpropResult backpropagate(const SequentialNet& net, const ActivationTrace& trace,
                             const Tensor& seed, const PropagationRule& rule) {
  validate_trace(net, trace);
  validate_policy(rule.threshold);
  if (seed.shape() != net.output_shape()) {
    throw ShapeError("backpropagate: seed " + shape_string(seed.shape()) + ", net output " +
                     shape_string(net.output_shape()));
  }
  BackpropResult result;
  Tensor grad = seed;
  for (std::size_t k = net.layers().size(); k-- > 0;) {
    const LayerRecord& rec = trace.records[k];
    const Layer& layer = net.layers()[k];
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      grad = kernels::conv2d_backward(rec.input, c->weights, c->spec, grad).input;
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      grad = kernels::dense_backward(rec.input, d->weights, grad).input;
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      grad = kernels::global_avg_pool_backward(rec.input.shape(), grad);
    } else {
      double tau = 0.0;
      if (rule.kind == RuleKind::Rectified) {
        tau = select_threshold(rule.threshold, hadamard(rec.output, grad));
        result.layer_thresholds.push_back(tau);
      }
      grad = relu_backprop_step(rule.kind, rec.output, grad, tau);
    }
  }
  std::reverse(result.layer_thresholds.begin(), result.layer_thresholds.end());
  result.input_gradient = std::move(grad);
  return result;
}

SaliencyMap finalize(const Tensor& input_gradient, const Tensor& input, FinalizationMode mode) {
  require_same_shape(input_gradient, input, "finalize");
  SaliencyMap map;
  map.method.finalization = mode;
  map.scores = mode == FinalizationMode::MultiplyInput ? hadamard(input, input_gradient)
                                                       : input_gradient;
  return map;
}

Tensor reduce_channels(const Tensor& scores, ChannelReduction mode) {
  if (scores.rank() != 3) {
    throw ShapeError("reduce_channels: expected C x H x W, got " + shape_string(scores.shape()));
  }
  const std::size_t C = scores.extent(0), H = scores.extent(1), W = scores.extent(2);
  Tensor out({H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double v = scores.at(c, y, x);
        acc += mode == ChannelReduction::MeanAbs ? std::abs(v) : v;
      }
      out[y * W + x] = C == 1 ? acc : acc / static_cast<double>(C);
    }
  }
  return out;
}

SaliencyMap attribute(const SequentialNet& net, const Tensor& input, const Tensor& seed,
                      const PropagationRule& rule, FinalizationMode mode,
                      ChannelReduction reduction) {
  const ForwardResult fwd = forward(net, input, true);
  BackpropResult bp = backpropagate(net, fwd.trace, seed, rule);
  SaliencyMap map = finalize(bp.input_gradient, input, mode);
  map.method.rule = rule;
  map.method.reduction = reduction;
  map.method.layer_thresholds = std::move(bp.layer_thresholds);
  if (reduction != ChannelReduction::None) map.reduced = reduce_channels(map.scores, reduction);
  return map;
}

SaliencyMap attribute_class(const SequentialNet& net, const Tensor& input,
                            std::size_t class_index, const PropagationRule& rule,
                            FinalizationMode mode, ChannelReduction reduction) {
  const Tensor seed = class_score_seed(Tensor(net.output_shape()), class_index);
  return attribute(net, input, seed, rule, mode, reduction);
}

SaliencyMap attribute_method(const SequentialNet& net, const Tensor& input, const Tensor& seed,
                             Method method, ThresholdPolicy policy,
                             ChannelReduction reduction) {
  const MethodSpec s = method_spec(method, policy);
  return attribute(net, input, seed, s.rule, s.finalization, reduction);
}

SaliencyMap input_times_gradient(const SequentialNet& net, const Tensor& input,
                                 const Tensor& seed) {
  return attribute(net, input, seed, PropagationRule::vanilla(), FinalizationMode::MultiplyInput);
}

Tensor finite_difference_gradient(const SequentialNet& net, const Tensor& input,
                                  const Tensor& seed, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  if (seed.shape() != net.output_shape()) {
    throw ShapeError("finite_difference_gradient: seed does not match net output");
  }
  Tensor probe = input;
  Tensor grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double x = input[i];
    probe[i] = x + step;
    const double up = dot(seed, predict(net, probe));
    probe[i] = x - step;
    const double down = dot(seed, predict(net, probe));
    probe[i] = x;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace nobias
