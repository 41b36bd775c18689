#include "doctest.h"
#include "nobias/studies.hpp"

using namespace nobias;

namespace {

SyntheticDatasetSpec tiny_spec() {
  SyntheticDatasetSpec s;
  s.n_images = 60;
  s.image_size = 12;
  s.box_size = 4;
  return s;
}

BlackboxStudyConfig tiny_blackbox() {
  BlackboxStudyConfig c;
  c.data = tiny_spec();
  c.n_train = 45;
  c.widths = {4, 6, 8};
  c.train = {0.05, 2, 8, 3};
  c.audit.sample_count = 4;
  c.audit.histogram_bins = 8;
  return c;
}

}  // namespace

TEST_CASE("split_dataset keeps order") {
  const LabeledDataset d = gen_synthetic_dataset(tiny_spec());
  const auto [train, test] = split_dataset(d, 45);
  CHECK(train.size() == 45);
  CHECK(test.size() == 15);
  CHECK(test.images.front() == d.images[45]);
  CHECK_THROWS_AS(split_dataset(d, 0), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(d, 60), std::invalid_argument);
}

TEST_CASE("train report json leaves out timing") {
  TrainReport r{{0.5, 0.25}, 0.75, 0.5, 12.0};
  const auto j = to_json(r);
  CHECK(j["epoch_loss"].size() == 2);
  CHECK(j["test_accuracy"] == 0.5);
  CHECK_FALSE(j.contains("elapsed_seconds"));
}

TEST_CASE("black-box study at toy scale") {
  BlackboxStudyConfig c = tiny_blackbox();
  const StudyResult a = run_blackbox_study(c);
  CHECK(a.report.study == "blackbox");
  CHECK(a.train.size() == 45);
  CHECK(a.test.size() == 15);
  CHECK(a.report.sampled_images.size() == 4);
  for (std::size_t i : a.report.sampled_images) CHECK(a.test.regions[i].has_value());
  CHECK(a.report.training["test_accuracy"] == a.training.test_accuracy);
  CHECK(a.report.config["train"]["epochs"] == 2);
  CHECK(a.report.audit_for(Method::RectGrad).inside_zero_fraction() == 1.0);
  CHECK(a.report.valid == (a.training.test_accuracy >= 0.98));

  const StudyResult b = run_blackbox_study(c);
  CHECK(to_json(a.report).dump() == to_json(b.report).dump());
  CHECK(encode_checkpoint(a.net) == encode_checkpoint(b.net));

  c.accuracy_floor = 1.5;
  const StudyResult flagged = run_blackbox_study(c);
  CHECK_FALSE(flagged.report.valid);
  CHECK(flagged.report.invalid_reason.find("below the floor") != std::string::npos);

  c = tiny_blackbox();
  c.n_train = 60;
  CHECK_THROWS_AS(run_blackbox_study(c), std::invalid_argument);
  c = tiny_blackbox();
  c.data.box_size = 12;
  CHECK_THROWS_AS(run_blackbox_study(c), std::invalid_argument);
}

TEST_CASE("normalization study reports suppression at the scaled object value") {
  NormalizationStudyConfig c;
  c.data.n_images = 40;
  c.data.image_size = 12;
  c.data.object_size = 4;
  c.n_train = 30;
  c.widths = {4, 6, 8};
  c.train = {0.1, 1, 8, 3};
  c.audit.sample_count = 3;
  c.audit.reference_values = {0.3, 0.4};
  CHECK(c.reference_value() == 0.0);

  const StudyResult r = normalization_shift_experiment(c);
  CHECK(r.report.study == "normalization_shift");
  CHECK(r.report.config["reference_value"] == 0.0);
  const MethodAudit& rect = r.report.audit_for(Method::RectGrad);
  REQUIRE(rect.suppression.size() == 1);
  CHECK(rect.suppression[0].reference_value == 0.0);
  CHECK(rect.suppression[0].result.band_count == 3 * 3 * 16);
  CHECK(rect.inside_zero_fraction() == 1.0);
  CHECK(r.train.images.front().shape() == Shape{3, 12, 12});

  c.scaling.divisor = 0.0;
  CHECK_THROWS_AS(normalization_shift_experiment(c), std::invalid_argument);
}

TEST_CASE("concept study at toy scale") {
  ConceptStudyConfig c;
  c.data = tiny_spec();
  c.data.box_size = 3;
  c.data.box_width = 6;
  c.n_train = 40;
  c.latent_dim = 3;
  c.encoder_widths = {3, 4};
  c.decoder_hidden = 8;
  c.train = {0.1, 1, 8, 3};
  const ConceptStudyResult r = run_concept_study(c);
  CHECK(r.report.study == "concept");
  CHECK(r.concept_vector.direction.shape() == Shape{3});
  CHECK(r.concept_vector.n_pos + r.concept_vector.n_neg == 40);
  std::size_t positives = 0;
  for (const auto& reg : r.test.regions) positives += reg.has_value();
  CHECK(r.report.sampled_images.size() == positives);
  CHECK(r.report.audit_for(Method::RectGrad).inside_zero_fraction() == 1.0);
  CHECK(r.report.training["epoch_loss"].size() == 1);
  CHECK(to_json(r.report).dump() == to_json(run_concept_study(c).report).dump());

  c.latent_dim = 0;
  CHECK_THROWS_AS(run_concept_study(c), std::invalid_argument);
}

TEST_CASE("label shuffle check evaluates on true labels") {
  const BlackboxStudyConfig c = tiny_blackbox();
  const LabelShuffleResult r = run_label_shuffle_check(c, 5);
  CHECK(r.report["study"] == "label_shuffle");
  CHECK(r.report["training"]["test_accuracy"] == r.training.test_accuracy);
  CHECK(r.training.epoch_loss.size() == 2);
}
