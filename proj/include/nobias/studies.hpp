#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "nobias/audit.hpp"
#include "nobias/concept.hpp"
#include "nobias/synthetic.hpp"
#include "nobias/trainer.hpp"

namespace nobias {

nlohmann::ordered_json to_json(const TrainConfig& c);
// elapsed_seconds is left out so that reports stay byte-reproducible.
nlohmann::ordered_json to_json(const TrainReport& r);

// Splits at `n_train`: the first n_train images train, the rest test.
std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& data,
                                                        std::size_t n_train);

struct BlackboxStudyConfig {
  SyntheticDatasetSpec data;
  std::size_t n_train = 1000;
  std::vector<std::size_t> widths{8, 16, 32};
  std::uint64_t net_seed = 7;
  TrainConfig train{0.05, 20, 16, 3};
  AuditConfig audit;
  double accuracy_floor = 0.98;

  void validate() const;
};

nlohmann::ordered_json to_json(const BlackboxStudyConfig& c);

struct StudyResult {
  BiasAuditReport report;
  TrainReport training;
  SequentialNet net;
  LabeledDataset train;
  LabeledDataset test;
};

// Generate, split, train, then audit a seeded sample of boxed test images.
// A test accuracy below accuracy_floor flags the report invalid.
StudyResult run_blackbox_study(const BlackboxStudyConfig& config);

struct NormalizationStudyConfig {
  GreyObjectSpec data;
  AffineScaling scaling;
  std::size_t n_train = 1000;
  std::vector<std::size_t> widths{8, 16, 32};
  std::uint64_t net_seed = 7;
  TrainConfig train{0.1, 30, 16, 3};
  AuditConfig audit;  // reference_values is replaced by the scaled object value
  double accuracy_floor = 0.98;

  double reference_value() const { return scaling.apply(data.object_byte); }
  void validate() const;
};

nlohmann::ordered_json to_json(const NormalizationStudyConfig& c);

// Middle-grey objects on textured backgrounds; suppression is reported at
// the network-input value of the object.
StudyResult normalization_shift_experiment(const NormalizationStudyConfig& config);

// Dark patches (label 1) on the black-box backgrounds stand in for a dark
// attribute. The encoder is trained as an autoencoder; the concept vector is
// the latent mean difference of patched vs plain training images.
struct ConceptStudyConfig {
  SyntheticDatasetSpec data{600, 32, 1, 6, 14, 0.5, {}, 1};
  std::size_t n_train = 400;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> encoder_widths{16, 32};
  std::uint64_t encoder_seed = 11;
  std::size_t decoder_hidden = 64;
  std::uint64_t decoder_seed = 12;
  TrainConfig train{0.5, 30, 16, 3};
  AuditConfig audit{{Method::RectGrad, Method::NoBias, Method::InputXGrad, Method::Vanilla},
                    PercentileThreshold{0.9},
                    0,
                    1000000,
                    1,
                    50,
                    256,
                    {0.0},
                    0.02};

  void validate() const;
};

nlohmann::ordered_json to_json(const ConceptStudyConfig& c);

struct ConceptStudyResult {
  BiasAuditReport report;  // positives of the held-out split, seeded by the concept
  TrainReport training;
  SequentialNet encoder;
  SequentialNet decoder;
  ConceptVector concept_vector;
  LabeledDataset train;
  LabeledDataset test;
};

ConceptStudyResult run_concept_study(const ConceptStudyConfig& config);

// Trains on the black-box data with permuted training labels and evaluates on
// the true test labels.
struct LabelShuffleResult {
  TrainReport training;
  nlohmann::ordered_json report;
};

LabelShuffleResult run_label_shuffle_check(const BlackboxStudyConfig& config,
                                           std::uint64_t shuffle_seed);

}  // namespace nobias
