#include "nobias/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "nobias/errors.hpp"
#include "nobias/kernels.hpp"
#include "nobias/rng.hpp"

namespace nobias {
namespace {

void check_dataset(const SequentialNet& net, const LabeledDataset& data, const char* what) {
  data.validate();
  if (data.empty()) throw std::invalid_argument(std::string(what) + " is empty");
  for (const Tensor& img : data.images) {
    if (img.shape() != net.input_shape()) {
      throw ShapeError(std::string(what) + ": image " + shape_string(img.shape()) +
                       " does not match net input " + shape_string(net.input_shape()));
    }
  }
}

std::vector<Tensor> zeros_like(const std::vector<const Tensor*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Tensor* p : params) out.emplace_back(p->shape());
  return out;
}

void accumulate(std::vector<Tensor>& acc, const std::vector<Tensor>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) {
    auto a = acc[i].data();
    auto b = g[i].data();
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
  }
}

void sgd_step(std::vector<Tensor*> params, const std::vector<Tensor>& grad_sum, double scale) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grad_sum[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= scale * g[j];
  }
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

void check_finite(double loss, std::size_t epoch, std::size_t sample) {
  if (!std::isfinite(loss)) {
    throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                           std::to_string(sample) + "; lower the learning rate");
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and non-negative");
  }
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

TrainReport train_classifier(SequentialNet& net, const LabeledDataset& train_set,
                             const LabeledDataset& test_set, const TrainConfig& config) {
  config.validate();
  check_dataset(net, train_set, "training set");
  check_dataset(net, test_set, "test set");
  const std::size_t classes = net.output_shape().at(0);
  for (std::size_t label : train_set.labels) {
    if (label >= classes) throw std::out_of_range("training label exceeds class count");
  }

  const auto start = std::chrono::steady_clock::now();
  Rng rng(config.seed);
  std::vector<std::size_t> order = iota_indices(train_set.size());
  TrainReport report;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<Tensor> grad_sum = zeros_like(std::as_const(net).parameters());
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t idx = order[b];
        auto fwd = forward(net, train_set.images[idx], true);
        auto lg = kernels::softmax_cross_entropy(fwd.output, train_set.labels[idx]);
        check_finite(lg.loss, epoch, idx);
        epoch_loss += lg.loss;
        accumulate(grad_sum, backward(net, fwd.trace, lg.grad).parameters);
      }
      sgd_step(net.parameters(), grad_sum,
               config.learning_rate / static_cast<double>(end - begin));
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
  }

  report.train_accuracy = evaluate(net, train_set);
  report.test_accuracy = evaluate(net, test_set);
  report.elapsed_seconds = seconds_since(start);
  return report;
}

ReconstructionGrad reconstruction_gradient(const SequentialNet& encoder,
                                           const SequentialNet& decoder, const Tensor& image) {
  auto enc = forward(encoder, image, true);
  auto dec = forward(decoder, enc.output, true);
  auto lg = kernels::mean_squared_error(dec.output, image);
  NetGradients dg = backward(decoder, dec.trace, lg.grad);
  NetGradients eg = backward(encoder, enc.trace, dg.input);
  return {lg.loss, std::move(eg.parameters), std::move(dg.parameters)};
}

TrainReport train_encoder(SequentialNet& encoder, SequentialNet& decoder,
                          const LabeledDataset& dataset, const TrainConfig& config) {
  config.validate();
  check_dataset(encoder, dataset, "dataset");
  if (decoder.input_shape() != encoder.output_shape() ||
      shape_size(decoder.output_shape()) != shape_size(encoder.input_shape())) {
    throw ShapeError("decoder does not map the encoder's latent back to image size");
  }

  const auto start = std::chrono::steady_clock::now();
  Rng rng(config.seed);
  std::vector<std::size_t> order = iota_indices(dataset.size());
  TrainReport report;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<Tensor> enc_sum = zeros_like(std::as_const(encoder).parameters());
      std::vector<Tensor> dec_sum = zeros_like(std::as_const(decoder).parameters());
      for (std::size_t b = begin; b < end; ++b) {
        auto g = reconstruction_gradient(encoder, decoder, dataset.images[order[b]]);
        check_finite(g.loss, epoch, order[b]);
        epoch_loss += g.loss;
        accumulate(enc_sum, g.encoder);
        accumulate(dec_sum, g.decoder);
      }
      const double scale = config.learning_rate / static_cast<double>(end - begin);
      sgd_step(encoder.parameters(), enc_sum, scale);
      sgd_step(decoder.parameters(), dec_sum, scale);
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  report.elapsed_seconds = seconds_since(start);
  return report;
}

std::size_t predict_class(const SequentialNet& net, const Tensor& image) {
  const Tensor logits = predict(net, image);
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

double evaluate(const SequentialNet& net, const LabeledDataset& dataset) {
  dataset.validate();
  if (dataset.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (predict_class(net, dataset.images[i]) == dataset.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace nobias
