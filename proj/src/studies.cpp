#include "nobias/studies.hpp"

#include <stdexcept>
#include <string>

#include "nobias/network.hpp"

namespace nobias {
namespace {

void require_split(std::size_t n_train, std::size_t n_images) {
  if (n_train == 0 || n_train >= n_images) {
    throw std::invalid_argument("n_train must leave both a training and a test split");
  }
}

void flag_accuracy(BiasAuditReport& report, double accuracy, double floor) {
  if (accuracy < floor) {
    report.valid = false;
    report.invalid_reason = "test accuracy " + format_double(accuracy) + " is below the floor " +
                            format_double(floor);
  }
}

}  // namespace

nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

nlohmann::ordered_json to_json(const TrainReport& r) {
  return {{"epoch_loss", r.epoch_loss},
          {"train_accuracy", r.train_accuracy},
          {"test_accuracy", r.test_accuracy}};
}

std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& data,
                                                        std::size_t n_train) {
  require_split(n_train, data.size());
  return {data.slice(0, n_train), data.slice(n_train, data.size())};
}

void BlackboxStudyConfig::validate() const {
  data.validate();
  require_split(n_train, data.n_images);
  train.validate();
  audit.validate();
}

nlohmann::ordered_json to_json(const BlackboxStudyConfig& c) {
  return {{"data", to_json(c.data)},      {"n_train", c.n_train},
          {"widths", c.widths},           {"net_seed", c.net_seed},
          {"train", to_json(c.train)},    {"audit", to_json(c.audit)},
          {"accuracy_floor", c.accuracy_floor}};
}

StudyResult run_blackbox_study(const BlackboxStudyConfig& config) {
  config.validate();
  auto [train, test] = split_dataset(gen_synthetic_dataset(config.data), config.n_train);
  SequentialNet net = build_classifier(train.images.front().shape(), config.widths, 2,
                                       config.net_seed);
  TrainReport training = train_classifier(net, train, test, config.train);
  BiasAuditReport report = audit_dataset(net, test, config.audit);
  report.study = "blackbox";
  report.config = to_json(config);
  report.training = to_json(training);
  flag_accuracy(report, training.test_accuracy, config.accuracy_floor);
  return {std::move(report), std::move(training), std::move(net), std::move(train),
          std::move(test)};
}

void NormalizationStudyConfig::validate() const {
  data.validate();
  scaling.validate();
  require_split(n_train, data.n_images);
  train.validate();
  audit.validate();
}

nlohmann::ordered_json to_json(const NormalizationStudyConfig& c) {
  return {{"data", to_json(c.data)},
          {"scaling", to_json(c.scaling)},
          {"reference_value", c.reference_value()},
          {"n_train", c.n_train},
          {"widths", c.widths},
          {"net_seed", c.net_seed},
          {"train", to_json(c.train)},
          {"audit", to_json(c.audit)},
          {"accuracy_floor", c.accuracy_floor}};
}

StudyResult normalization_shift_experiment(const NormalizationStudyConfig& config) {
  config.validate();
  NormalizationStudyConfig resolved = config;
  resolved.audit.reference_values = {config.reference_value()};
  auto [train, test] =
      split_dataset(gen_grey_object_dataset(config.data, config.scaling), config.n_train);
  SequentialNet net = build_classifier(train.images.front().shape(), config.widths, 2,
                                       config.net_seed);
  TrainReport training = train_classifier(net, train, test, config.train);
  BiasAuditReport report = audit_dataset(net, test, resolved.audit);
  report.study = "normalization_shift";
  report.config = to_json(resolved);
  report.training = to_json(training);
  flag_accuracy(report, training.test_accuracy, config.accuracy_floor);
  return {std::move(report), std::move(training), std::move(net), std::move(train),
          std::move(test)};
}

void ConceptStudyConfig::validate() const {
  data.validate();
  require_split(n_train, data.n_images);
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be positive");
  if (decoder_hidden < 1) throw std::invalid_argument("decoder_hidden must be positive");
  train.validate();
  audit.validate();
}

nlohmann::ordered_json to_json(const ConceptStudyConfig& c) {
  return {{"data", to_json(c.data)},
          {"n_train", c.n_train},
          {"latent_dim", c.latent_dim},
          {"encoder_widths", c.encoder_widths},
          {"encoder_seed", c.encoder_seed},
          {"decoder_hidden", c.decoder_hidden},
          {"decoder_seed", c.decoder_seed},
          {"train", to_json(c.train)},
          {"audit", to_json(c.audit)}};
}

ConceptStudyResult run_concept_study(const ConceptStudyConfig& config) {
  config.validate();
  auto [train, test] = split_dataset(gen_synthetic_dataset(config.data), config.n_train);
  const Shape& image_shape = train.images.front().shape();
  SequentialNet encoder =
      build_encoder(image_shape, config.latent_dim, config.encoder_seed, config.encoder_widths);
  SequentialNet decoder =
      build_decoder(config.latent_dim, config.decoder_hidden, image_shape, config.decoder_seed);
  TrainReport training = train_encoder(encoder, decoder, train, config.train);

  std::vector<Tensor> positives, negatives;
  for (std::size_t i = 0; i < train.size(); ++i) {
    (train.labels[i] == 1 ? positives : negatives).push_back(train.images[i]);
  }
  ConceptVector concept_vector = build_concept_vector(encoder, positives, negatives);

  BiasAuditReport report = audit_with_seed(encoder, test, concept_vector.direction, config.audit);
  report.study = "concept";
  report.config = to_json(config);
  report.config["concept"] = {{"n_pos", concept_vector.n_pos},
                              {"n_neg", concept_vector.n_neg},
                              {"direction", concept_vector.direction.values()}};
  report.training = {{"epoch_loss", training.epoch_loss}};
  return {std::move(report), std::move(training), std::move(encoder), std::move(decoder),
          std::move(concept_vector), std::move(train), std::move(test)};
}

LabelShuffleResult run_label_shuffle_check(const BlackboxStudyConfig& config,
                                           std::uint64_t shuffle_seed) {
  config.validate();
  auto [train, test] = split_dataset(gen_synthetic_dataset(config.data), config.n_train);
  const LabeledDataset shuffled = shuffle_labels(train, shuffle_seed);
  SequentialNet net = build_classifier(train.images.front().shape(), config.widths, 2,
                                       config.net_seed);
  TrainReport training = train_classifier(net, shuffled, test, config.train);
  nlohmann::ordered_json report{{"study", "label_shuffle"},
                                {"config", to_json(config)},
                                {"shuffle_seed", shuffle_seed},
                                {"training", to_json(training)}};
  return {std::move(training), std::move(report)};
}

}  // namespace nobias
