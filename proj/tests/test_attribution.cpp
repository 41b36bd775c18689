#include <cmath>

#include "doctest.h"
#include "nobias/attribution.hpp"
#include "nobias/errors.hpp"
#include "test_support.hpp"

using namespace nobias;
using test::away_from_kinks;
using test::random_tensor;
using test::relative_error;

namespace {

const std::size_t kWidths[] = {3, 4, 5};

// y = relu(2x - 1)
SequentialNet single_neuron() {
  std::vector<Layer> layers;
  layers.emplace_back(DenseLayer{Tensor({1, 1}, {2.0}), Tensor::vector({-1.0})});
  layers.emplace_back(ReluLayer{});
  return SequentialNet({1}, std::move(layers));
}

SequentialNet random_net(std::uint64_t seed) {
  return build_classifier({2, 8, 8}, kWidths, 3, seed);
}

std::vector<double> tensor_values(const Tensor& t) { return t.values(); }

}  // namespace

TEST_CASE("class_score_seed is one-hot") {
  const Tensor logits = Tensor::vector({0.3, -1.2});
  CHECK(class_score_seed(logits, 0) == Tensor::vector({1, 0}));
  CHECK(class_score_seed(logits, 1) == Tensor::vector({0, 1}));
  CHECK_THROWS_AS(class_score_seed(logits, 2), std::out_of_range);
}

TEST_CASE("relu_backprop_step hand examples") {
  const Tensor a = Tensor::vector({0, 1, 2});
  const Tensor r = Tensor::vector({5, -3, 4});
  CHECK(relu_backprop_step(RuleKind::Vanilla, a, r, 0) == Tensor::vector({0, -3, 4}));
  CHECK(relu_backprop_step(RuleKind::Rectified, a, r, 0) == Tensor::vector({0, 0, 4}));
  CHECK(relu_backprop_step(RuleKind::Guided, a, r, 0) == Tensor::vector({0, 0, 4}));
  CHECK(relu_backprop_step(RuleKind::Rectified, Tensor::vector({1, 1}), Tensor::vector({2, 5}),
                           3) == Tensor::vector({0, 5}));
  // products equal to tau are removed
  CHECK(relu_backprop_step(RuleKind::Rectified, Tensor::vector({1}), Tensor::vector({3}), 3) ==
        Tensor::vector({0}));
  CHECK_THROWS_AS(relu_backprop_step(RuleKind::Vanilla, a, Tensor::vector({1, 2}), 0),
                  ShapeError);
}

TEST_CASE("select_threshold") {
  CHECK(select_threshold(AbsoluteThreshold{0.5}, Tensor::vector({9, 8, 7})) == 0.5);
  CHECK(select_threshold(PercentileThreshold{0.0}, Tensor::vector({3, 1, 2})) == 1.0);
  CHECK(select_threshold(PercentileThreshold{0.5}, Tensor::vector({1, 2, 3, 4})) == 2.5);
  CHECK(select_threshold(PercentileThreshold{0.9}, Tensor::vector({7})) == 7.0);
  CHECK_THROWS_AS(select_threshold(PercentileThreshold{0.5}, Tensor{}), std::invalid_argument);
  CHECK_THROWS_AS(select_threshold(PercentileThreshold{1.0}, Tensor::vector({1})),
                  std::invalid_argument);
}

TEST_CASE("backpropagate through a single neuron") {
  SequentialNet net = single_neuron();
  auto fwd = forward(net, Tensor::vector({3.0}), true);
  CHECK(fwd.output[0] == 5.0);
  const Tensor seed = Tensor::vector({1.0});
  CHECK(backpropagate(net, fwd.trace, seed, PropagationRule::vanilla()).input_gradient[0] == 2.0);
  CHECK(backpropagate(net, fwd.trace, seed, PropagationRule::guided()).input_gradient[0] == 2.0);
  CHECK(backpropagate(net, fwd.trace, seed, PropagationRule::rectified(AbsoluteThreshold{0}))
            .input_gradient[0] == 2.0);

  auto dead = forward(net, Tensor::vector({0.0}), true);
  for (const PropagationRule& rule :
       {PropagationRule::vanilla(), PropagationRule::guided(),
        PropagationRule::rectified(AbsoluteThreshold{0}),
        PropagationRule::rectified(PercentileThreshold{0.5})}) {
    CHECK(backpropagate(net, dead.trace, seed, rule).input_gradient[0] == 0.0);
  }
}

TEST_CASE("backpropagate rejects stale traces and bad seeds") {
  SequentialNet net = random_net(1);
  SequentialNet other = build_classifier({2, 10, 10}, kWidths, 3, 1);
  Rng rng(1);
  auto fwd = forward(other, random_tensor({2, 10, 10}, rng), true);
  CHECK_THROWS_AS(backpropagate(net, fwd.trace, Tensor({3}), PropagationRule::vanilla()),
                  std::invalid_argument);
  auto own = forward(net, random_tensor({2, 8, 8}, rng), true);
  ActivationTrace truncated = own.trace;
  truncated.records.pop_back();
  CHECK_THROWS_AS(backpropagate(net, truncated, Tensor({3}), PropagationRule::vanilla()),
                  std::invalid_argument);
  CHECK_THROWS_AS(backpropagate(net, own.trace, Tensor({2}), PropagationRule::vanilla()),
                  ShapeError);
}

TEST_CASE("vanilla backpropagation equals finite differences of the logit") {
  Rng rng(17);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    SequentialNet net = random_net(100 + seed);
    const Tensor x = random_tensor({2, 8, 8}, rng, 0, 1);
    const std::size_t cls = rng.below(3);
    SaliencyMap map = attribute_class(net, x, cls, PropagationRule::vanilla(),
                                      FinalizationMode::Identity);
    const Tensor fd = finite_difference_gradient(net, x, class_score_seed(Tensor({3}), cls), 1e-5);
    int compared = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!away_from_kinks(net, x, i, 1e-5)) continue;
      CHECK(relative_error(map.scores[i], fd[i]) <= 1e-6);
      ++compared;
    }
    CHECK(compared > 100);
  }
}

TEST_CASE("finalize") {
  const Tensor r0 = Tensor::vector({1.5, -2.0, 3.0});
  const Tensor x = Tensor::vector({0.0, 0.5, -2.0});
  SaliencyMap m = finalize(r0, x, FinalizationMode::MultiplyInput);
  CHECK(m.scores[0] == 0.0);
  CHECK(m.scores == Tensor::vector({0.0, -1.0, -6.0}));
  for (std::size_t i = 1; i < 3; ++i) CHECK(m.scores[i] / x[i] == r0[i]);
  CHECK(finalize(r0, x, FinalizationMode::Identity).scores == r0);
  CHECK_THROWS_AS(finalize(r0, Tensor::vector({1, 2}), FinalizationMode::Identity), ShapeError);
}

TEST_CASE("reduce_channels") {
  Rng rng(3);
  Tensor one = random_tensor({1, 4, 5}, rng);
  CHECK(reduce_channels(one, ChannelReduction::Mean) == one.reshaped({4, 5}));

  Tensor px({3, 1, 1}, {1, -1, 0});
  CHECK(reduce_channels(px, ChannelReduction::Mean)[0] == 0.0);
  CHECK(reduce_channels(px, ChannelReduction::MeanAbs)[0] == doctest::Approx(2.0 / 3.0));
  CHECK(reduce_channels(Tensor::filled({3, 2, 2}, 0.25), ChannelReduction::Mean) ==
        Tensor::filled({2, 2}, 0.25));
  CHECK_THROWS_AS(reduce_channels(Tensor({4, 4}), ChannelReduction::Mean), ShapeError);
}

TEST_CASE("RectGrad factors into input times NoBias") {
  Rng rng(23);
  for (std::uint64_t s = 0; s < 10; ++s) {
    SequentialNet net = random_net(200 + s);
    const Tensor x = random_tensor({2, 8, 8}, rng, -1, 1);
    const Tensor seed = class_score_seed(Tensor({3}), s % 3);
    SaliencyMap rect = attribute_method(net, x, seed, Method::RectGrad);
    SaliencyMap nob = attribute_method(net, x, seed, Method::NoBias);
    CHECK(rect.scores == hadamard(x, nob.scores));
    CHECK(rect.method.layer_thresholds == nob.method.layer_thresholds);
    CHECK(rect.method.layer_thresholds.size() == 3);
  }
}

TEST_CASE("box of zeros gets exactly zero RectGrad and input x gradient scores") {
  Rng rng(29);
  SequentialNet net = random_net(5);
  Tensor x = random_tensor({2, 8, 8}, rng, 0.1, 1.0);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 2; y < 5; ++y)
      for (std::size_t xx = 3; xx < 6; ++xx) x.at(c, y, xx) = 0.0;
  const Tensor seed = class_score_seed(Tensor({3}), 1);
  for (Method m : {Method::RectGrad, Method::InputXGrad}) {
    SaliencyMap map = attribute_method(net, x, seed, m);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 2; y < 5; ++y)
        for (std::size_t xx = 3; xx < 6; ++xx) CHECK(map.scores.at(c, y, xx) == 0.0);
  }
}

TEST_CASE("input_times_gradient") {
  Rng rng(31);
  SequentialNet net = random_net(6);
  const Tensor seed = class_score_seed(Tensor({3}), 0);
  CHECK(input_times_gradient(net, Tensor({2, 8, 8}), seed).scores == Tensor({2, 8, 8}));
  const Tensor x = random_tensor({2, 8, 8}, rng);
  CHECK(input_times_gradient(net, x, seed).scores ==
        attribute(net, x, seed, PropagationRule::vanilla(), FinalizationMode::MultiplyInput)
            .scores);
}

TEST_CASE("finite_difference_gradient sanity") {
  Rng rng(37);
  std::vector<Layer> linear;
  Tensor w = random_tensor({1, 6}, rng);
  linear.emplace_back(DenseLayer{w, Tensor::vector({0.4})});
  SequentialNet lin({6}, std::move(linear));
  const Tensor g = finite_difference_gradient(lin, random_tensor({6}, rng), Tensor::vector({1}), 1e-3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(g[i] == doctest::Approx(w[i]).epsilon(1e-9));

  std::vector<Layer> constant;
  constant.emplace_back(DenseLayer{Tensor({2, 6}), Tensor::vector({1, 2})});
  SequentialNet flat({6}, std::move(constant));
  CHECK(finite_difference_gradient(flat, random_tensor({6}, rng), Tensor::vector({1, 1}), 1e-4) ==
        Tensor({6}));
  CHECK_THROWS_AS(finite_difference_gradient(flat, Tensor({6}), Tensor::vector({1, 1}), 0.0),
                  std::invalid_argument);
}

TEST_CASE("tau = 0 rectified propagation equals guided backpropagation") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    SequentialNet net = random_net(300 + trial);
    const Tensor x = random_tensor({2, 8, 8}, rng, -1, 1);
    const Tensor seed = random_tensor({3}, rng);
    // step level, on recorded post-ReLU activations
    auto fwd = forward(net, x, true);
    const Tensor& a = fwd.trace.records[1].output;
    const Tensor r = random_tensor(a.shape(), rng);
    CHECK(relu_backprop_step(RuleKind::Rectified, a, r, 0.0) ==
          relu_backprop_step(RuleKind::Guided, a, r, 0.0));
    // full map
    CHECK(attribute(net, x, seed, PropagationRule::rectified(AbsoluteThreshold{0.0}),
                    FinalizationMode::Identity)
              .scores == attribute(net, x, seed, PropagationRule::guided(),
                                   FinalizationMode::Identity)
                             .scores);
  }
}

TEST_CASE("larger tau never keeps more entries") {
  Rng rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = random_tensor({40}, rng, 0, 2);
    const Tensor r = random_tensor({40}, rng, -2, 2);
    const double t1 = rng.uniform(-1, 1);
    const double t2 = t1 + rng.uniform(0, 1);
    const Tensor lo = relu_backprop_step(RuleKind::Rectified, a, r, t1);
    const Tensor hi = relu_backprop_step(RuleKind::Rectified, a, r, t2);
    for (std::size_t i = 0; i < 40; ++i) {
      if (hi[i] != 0.0) CHECK(lo[i] != 0.0);
    }
  }
}

TEST_CASE("gating happens only at ReLU layers") {
  Rng rng(47);
  std::vector<Layer> layers;
  kernels::ConvSpec spec{1, 2, 3, 2, 1};
  layers.emplace_back(ConvLayer{spec, random_tensor({2, 1, 3, 3}, rng), random_tensor({2}, rng)});
  layers.emplace_back(GlobalAvgPoolLayer{});
  layers.emplace_back(DenseLayer{random_tensor({3, 2}, rng), random_tensor({3}, rng)});
  SequentialNet net({1, 6, 6}, std::move(layers));
  const Tensor x = random_tensor({1, 6, 6}, rng);
  const Tensor seed = random_tensor({3}, rng);
  auto fwd = forward(net, x, true);
  const Tensor ref = backpropagate(net, fwd.trace, seed, PropagationRule::vanilla()).input_gradient;
  CHECK(backpropagate(net, fwd.trace, seed, PropagationRule::guided()).input_gradient == ref);
  CHECK(backpropagate(net, fwd.trace, seed, PropagationRule::rectified(AbsoluteThreshold{0.3}))
            .input_gradient == ref);
  CHECK(backpropagate(net, fwd.trace, seed,
                      PropagationRule::rectified(PercentileThreshold{0.9}))
            .input_gradient == ref);
  // and the vanilla rule is the training backward pass
  CHECK(backward(net, fwd.trace, seed).input == ref);
}

TEST_CASE("vanilla rule reproduces the training backward pass on ReLU nets") {
  Rng rng(53);
  SequentialNet net = random_net(9);
  const Tensor x = random_tensor({2, 8, 8}, rng);
  const Tensor seed = random_tensor({3}, rng);
  auto fwd = forward(net, x, true);
  CHECK(backpropagate(net, fwd.trace, seed, PropagationRule::vanilla()).input_gradient ==
        backward(net, fwd.trace, seed).input);
}

TEST_CASE("percentile thresholds are resolved per ReLU layer") {
  Rng rng(59);
  SequentialNet net = random_net(10);
  const Tensor x = random_tensor({2, 8, 8}, rng, 0, 1);
  const Tensor seed = class_score_seed(Tensor({3}), 2);
  SaliencyMap m = attribute(net, x, seed, PropagationRule::rectified(PercentileThreshold{0.9}),
                            FinalizationMode::Identity, ChannelReduction::Mean);
  REQUIRE(m.method.layer_thresholds.size() == 3);
  REQUIRE(m.reduced.has_value());
  CHECK(m.reduced->shape() == Shape{8, 8});

  // the last ReLU's tau is the 0.9-quantile of its own a * R products
  auto fwd = forward(net, x, true);
  Tensor grad = seed;
  grad = kernels::dense_backward(fwd.trace.records[7].input,
                                 std::get<DenseLayer>(net.layers()[7]).weights, grad)
             .input;
  grad = kernels::global_avg_pool_backward(fwd.trace.records[6].input.shape(), grad);
  const double tau = select_threshold(PercentileThreshold{0.9},
                                      hadamard(fwd.trace.records[5].output, grad));
  CHECK(m.method.layer_thresholds.back() == tau);

  const auto j = descriptor_to_json(m.method);
  CHECK(j["method"] == "nobias");
  CHECK(j["threshold_policy"]["q"] == 0.9);
  CHECK(j["layer_thresholds"].size() == 3);
}

TEST_CASE("method names") {
  for (const char* n : {"vanilla", "guided", "rectgrad", "nobias", "inputxgrad"}) {
    CHECK(method_name(parse_method(n)) == n);
  }
  CHECK_THROWS_AS(parse_method("lrp"), std::invalid_argument);
  CHECK(method_spec(Method::RectGrad).finalization == FinalizationMode::MultiplyInput);
  CHECK(method_spec(Method::NoBias).finalization == FinalizationMode::Identity);
  CHECK(method_spec(Method::NoBias).rule.kind == RuleKind::Rectified);
}
