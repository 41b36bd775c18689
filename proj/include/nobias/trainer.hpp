#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nobias/dataset.hpp"
#include "nobias/network.hpp"

namespace nobias {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double elapsed_seconds = 0.0;
};

// Mini-batch SGD on softmax cross-entropy of the logits. Sample order is
// drawn from config.seed alone; p <- p - lr * mean batch gradient.
TrainReport train_classifier(SequentialNet& net, const LabeledDataset& train_set,
                             const LabeledDataset& test_set, const TrainConfig& config);

// Minimizes mean squared reconstruction error of decoder(encoder(x)) against
// the flattened image. Train/test accuracy fields are left at 0.
TrainReport train_encoder(SequentialNet& encoder, SequentialNet& decoder,
                          const LabeledDataset& dataset, const TrainConfig& config);

// Reconstruction loss and its parameter gradients for a single image
// (encoder parameters first, then decoder).
struct ReconstructionGrad {
  double loss = 0.0;
  std::vector<Tensor> encoder;
  std::vector<Tensor> decoder;
};
ReconstructionGrad reconstruction_gradient(const SequentialNet& encoder,
                                           const SequentialNet& decoder, const Tensor& image);

// Index of the largest logit; ties go to the lower index.
std::size_t predict_class(const SequentialNet& net, const Tensor& image);

double evaluate(const SequentialNet& net, const LabeledDataset& dataset);

}  // namespace nobias
