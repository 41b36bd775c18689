#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "nobias/network.hpp"
#include "nobias/tensor.hpp"

namespace nobias {

// Fixed cutoff tau.
struct AbsoluteThreshold {
  double tau = 0.0;
};

// Per-ReLU-layer cutoff: the q-quantile of that layer's activation x gradient
// products. q in [0, 1).
struct PercentileThreshold {
  double q = 0.9;
};

using ThresholdPolicy = std::variant<AbsoluteThreshold, PercentileThreshold>;

enum class RuleKind { Vanilla, Guided, Rectified };

// How gradients cross a ReLU on the way back.
//   Vanilla:   R_l = 1(a > 0) R_{l+1}
//   Guided:    R_l = 1(a > 0) 1(R_{l+1} > 0) R_{l+1}
//   Rectified: R_l = 1(a R_{l+1} > tau) R_{l+1}
struct PropagationRule {
  RuleKind kind = RuleKind::Vanilla;
  ThresholdPolicy threshold = AbsoluteThreshold{0.0};

  static PropagationRule vanilla() { return {RuleKind::Vanilla, AbsoluteThreshold{0.0}}; }
  static PropagationRule guided() { return {RuleKind::Guided, AbsoluteThreshold{0.0}}; }
  static PropagationRule rectified(ThresholdPolicy policy) {
    return {RuleKind::Rectified, policy};
  }
};

// MultiplyInput: M = x * R_0.  Identity: M = R_0.
enum class FinalizationMode { MultiplyInput, Identity };

enum class ChannelReduction { None, Mean, MeanAbs };

// Named combinations of rule and finalization.
enum class Method { Vanilla, Guided, RectGrad, NoBias, InputXGrad };

struct MethodSpec {
  PropagationRule rule;
  FinalizationMode finalization;
};

MethodSpec method_spec(Method method, ThresholdPolicy policy = PercentileThreshold{});
std::string method_name(Method method);
// Accepts vanilla|guided|rectgrad|nobias|inputxgrad; throws std::invalid_argument.
Method parse_method(const std::string& name);

struct MethodDescriptor {
  PropagationRule rule;
  FinalizationMode finalization = FinalizationMode::Identity;
  ChannelReduction reduction = ChannelReduction::None;
  std::vector<double> layer_thresholds;  // tau used at each ReLU, input side first; empty
                                         // unless the rule is Rectified
};

nlohmann::json descriptor_to_json(const MethodDescriptor& d);

struct SaliencyMap {
  Tensor scores;                 // same shape as the attributed input
  MethodDescriptor method;
  std::optional<Tensor> reduced;  // H x W after channel reduction
};

// One-hot gradient seed selecting the logit of class_index.
Tensor class_score_seed(const Tensor& logits, std::size_t class_index);

Tensor relu_backprop_step(RuleKind rule, const Tensor& activation, const Tensor& grad_in,
                          double tau);

// Quantile uses linear interpolation between order statistics.
double select_threshold(const ThresholdPolicy& policy, const Tensor& products);

struct BackpropResult {
  Tensor input_gradient;                 // R_0
  std::vector<double> layer_thresholds;  // as in MethodDescriptor
};

// Walks the recorded trace in reverse. Conv, dense and pooling layers use
// their exact adjoints; only ReLU layers apply the rule.
BackpropResult backpropagate(const SequentialNet& net, const ActivationTrace& trace,
                             const Tensor& seed, const PropagationRule& rule);

SaliencyMap finalize(const Tensor& input_gradient, const Tensor& input, FinalizationMode mode);

// Mean (or mean absolute value) over the channel axis of C x H x W scores.
Tensor reduce_channels(const Tensor& scores, ChannelReduction mode);

// Full pipeline. seed is the gradient of the target score with respect to the
// net's output, e.g. class_score_seed(...) or a concept direction.
SaliencyMap attribute(const SequentialNet& net, const Tensor& input, const Tensor& seed,
                      const PropagationRule& rule, FinalizationMode mode,
                      ChannelReduction reduction = ChannelReduction::None);
SaliencyMap attribute_class(const SequentialNet& net, const Tensor& input,
                            std::size_t class_index, const PropagationRule& rule,
                            FinalizationMode mode,
                            ChannelReduction reduction = ChannelReduction::None);
SaliencyMap attribute_method(const SequentialNet& net, const Tensor& input, const Tensor& seed,
                             Method method, ThresholdPolicy policy = PercentileThreshold{},
                             ChannelReduction reduction = ChannelReduction::None);

SaliencyMap input_times_gradient(const SequentialNet& net, const Tensor& input,
                                 const Tensor& seed);

// Central differences of <seed, net(input)> for every input coordinate.
Tensor finite_difference_gradient(const SequentialNet& net, const Tensor& input,
                                  const Tensor& seed, double step);

}  // namespace nobias
