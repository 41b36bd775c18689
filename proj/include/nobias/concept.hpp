#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>

#include "nobias/attribution.hpp"
#include "nobias/network.hpp"

namespace nobias {

// Latent direction for a high-level attribute, with the number of examples
// on each side it was estimated from.
struct ConceptVector {
  Tensor direction;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

ForwardResult encode(const SequentialNet& encoder, const Tensor& image, bool record);

// mean(encode(positives)) - mean(encode(negatives)).
ConceptVector build_concept_vector(const SequentialNet& encoder,
                                   std::span<const Tensor> positives,
                                   std::span<const Tensor> negatives);

// <z, direction>.
double concept_score(const Tensor& z, const ConceptVector& concept_vector);

// The gradient of <z, c> with respect to z is c, so the direction is used
// directly as the backpropagation seed at the latent layer.
SaliencyMap concept_saliency(const SequentialNet& encoder, const Tensor& image,
                             const ConceptVector& concept_vector, const PropagationRule& rule,
                             FinalizationMode mode,
                             ChannelReduction reduction = ChannelReduction::None);

// <stem>.nbt holds the direction; <stem>.json the sidecar
// {latent_dim, n_pos, n_neg, encoder_digest}.
void save_concept(const ConceptVector& c, const std::string& encoder_digest,
                  const std::filesystem::path& stem);
ConceptVector load_concept(const std::filesystem::path& stem, std::string* encoder_digest = nullptr);

}  // namespace nobias
