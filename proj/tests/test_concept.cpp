#include <filesystem>

#include "doctest.h"
#include "nobias/concept.hpp"
#include "nobias/errors.hpp"
#include "test_support.hpp"

using namespace nobias;
using test::away_from_kinks;
using test::central_difference;
using test::random_tensor;
using test::relative_error;

namespace {

std::vector<Tensor> random_images(std::size_t n, Rng& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_tensor({1, 8, 8}, rng, 0, 1));
  return out;
}

}  // namespace

TEST_CASE("encode is a deterministic forward pass") {
  Rng rng(1);
  SequentialNet enc = build_encoder({1, 8, 8}, 5, 3);
  const Tensor img = random_tensor({1, 8, 8}, rng);
  const ForwardResult a = encode(enc, img, true);
  CHECK(a.output == encode(enc, img, false).output);
  CHECK(a.output.shape() == Shape{5});
  CHECK(a.output == forward(enc, img, false).output);
  CHECK(a.trace.records.size() == enc.layers().size());
  CHECK_THROWS_AS(encode(enc, Tensor({1, 7, 8}), false), ShapeError);
}

TEST_CASE("build_concept_vector") {
  Rng rng(2);
  SequentialNet enc = build_encoder({1, 8, 8}, 4, 5);
  const auto pos = random_images(3, rng);
  const auto neg = random_images(4, rng);

  CHECK(build_concept_vector(enc, pos, pos).direction == Tensor({4}));

  const ConceptVector single = build_concept_vector(enc, std::span(pos).first(1),
                                                    std::span(neg).first(1));
  const Tensor zp = predict(enc, pos[0]), zn = predict(enc, neg[0]);
  for (std::size_t i = 0; i < 4; ++i) CHECK(single.direction[i] == zp[i] - zn[i]);

  const ConceptVector ab = build_concept_vector(enc, pos, neg);
  const ConceptVector ba = build_concept_vector(enc, neg, pos);
  for (std::size_t i = 0; i < 4; ++i) CHECK(ab.direction[i] == -ba.direction[i]);
  CHECK(ab.n_pos == 3);
  CHECK(ab.n_neg == 4);

  CHECK_THROWS_AS(build_concept_vector(enc, {}, neg), std::invalid_argument);
}

TEST_CASE("concept_score") {
  ConceptVector c{Tensor::vector({1, 0, 0}), 1, 1};
  CHECK(concept_score(Tensor::vector({0, 3, -2}), c) == 0.0);
  CHECK(concept_score(Tensor::vector({1, 0, 0}), c) == 1.0);
  ConceptVector d{Tensor::vector({0.3, -1.2, 2.0}), 1, 1};
  const Tensor z = Tensor::vector({1.5, 0.25, -0.75});
  const Tensor z2 = Tensor::vector({3.0, 0.5, -1.5});
  CHECK(concept_score(z2, d) == 2.0 * concept_score(z, d));
  CHECK_THROWS_AS(concept_score(Tensor::vector({1, 2}), d), ShapeError);

  // d<z, c>/dz = c
  auto f = [&](const Tensor& v) { return concept_score(v, d); };
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(relative_error(central_difference(f, z, i), d.direction[i]) <= 1e-9);
  }
}

TEST_CASE("concept saliency matches finite differences of the concept score") {
  Rng rng(3);
  SequentialNet enc = build_encoder({1, 10, 10}, 6, 7, std::vector<std::size_t>{4, 6});
  ConceptVector c{random_tensor({6}, rng), 1, 1};
  const Tensor img = random_tensor({1, 10, 10}, rng, 0, 1);
  SaliencyMap map = concept_saliency(enc, img, c, PropagationRule::vanilla(),
                                     FinalizationMode::Identity);
  auto f = [&](const Tensor& x) { return concept_score(predict(enc, x), c); };
  int compared = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (!away_from_kinks(enc, img, i, 1e-5)) continue;
    CHECK(relative_error(map.scores[i], central_difference(f, img, i)) <= 1e-6);
    ++compared;
  }
  CHECK(compared > 80);
}

TEST_CASE("multiply-input concept maps vanish on black pixels") {
  Rng rng(4);
  SequentialNet enc = build_encoder({3, 10, 10}, 6, 8, std::vector<std::size_t>{4, 6});
  ConceptVector c{random_tensor({6}, rng), 2, 2};
  Tensor img = random_tensor({3, 10, 10}, rng, 0.2, 1);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t y = 4; y < 8; ++y)
      for (std::size_t x = 1; x < 5; ++x) img.at(ch, y, x) = 0.0;
  for (const PropagationRule& rule :
       {PropagationRule::vanilla(), PropagationRule::rectified(PercentileThreshold{0.9})}) {
    SaliencyMap m = concept_saliency(enc, img, c, rule, FinalizationMode::MultiplyInput);
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 4; y < 8; ++y)
        for (std::size_t x = 1; x < 5; ++x) CHECK(m.scores.at(ch, y, x) == 0.0);
  }
  ConceptVector zero{Tensor({6}), 1, 1};
  CHECK(concept_saliency(enc, img, zero, PropagationRule::vanilla(), FinalizationMode::Identity)
            .scores == Tensor({3, 10, 10}));
}

TEST_CASE("scaling the concept direction") {
  Rng rng(5);
  SequentialNet enc = build_encoder({1, 10, 10}, 6, 9, std::vector<std::size_t>{4, 6});
  const Tensor img = random_tensor({1, 10, 10}, rng, 0, 1);
  ConceptVector c{random_tensor({6}, rng), 1, 1};
  // powers of two so that the scaling is exact in floating point
  for (double lambda : {0.25, 2.0, 8.0}) {
    ConceptVector scaled = c;
    for (double& v : scaled.direction.data()) v *= lambda;

    const Tensor base = concept_saliency(enc, img, c, PropagationRule::vanilla(),
                                         FinalizationMode::Identity).scores;
    const Tensor s = concept_saliency(enc, img, scaled, PropagationRule::vanilla(),
                                      FinalizationMode::Identity).scores;
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == lambda * base[i]);

    const auto rule = PropagationRule::rectified(PercentileThreshold{0.7});
    const Tensor rb = concept_saliency(enc, img, c, rule, FinalizationMode::Identity).scores;
    const Tensor rs = concept_saliency(enc, img, scaled, rule, FinalizationMode::Identity).scores;
    for (std::size_t i = 0; i < rs.size(); ++i) CHECK((rs[i] == 0.0) == (rb[i] == 0.0));
  }
}

TEST_CASE("concept files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "nobias_concept_test";
  std::filesystem::create_directories(dir);
  ConceptVector c{Tensor::vector({0.5, -1.0, 2.25}), 7, 9};
  save_concept(c, "abc123", dir / "glasses");
  std::string digest;
  ConceptVector back = load_concept(dir / "glasses", &digest);
  CHECK(back.direction == c.direction);
  CHECK(back.n_pos == 7);
  CHECK(back.n_neg == 9);
  CHECK(digest == "abc123");
  CHECK_THROWS_AS(load_concept(dir / "missing"), FormatError);
  std::filesystem::remove_all(dir);
}
