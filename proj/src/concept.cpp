#include "nobias/concept.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "nobias/errors.hpp"
#include "nobias/tensor_io.hpp"

namespace nobias {
namespace {

Tensor mean_latent(const SequentialNet& encoder, std::span<const Tensor> images) {
  Tensor acc(encoder.output_shape());
  for (const Tensor& img : images) {
    const Tensor z = encode(encoder, img, false).output;
    for (std::size_t i = 0; i < z.size(); ++i) acc[i] += z[i];
  }
  for (double& v : acc.data()) v /= static_cast<double>(images.size());
  return acc;
}

std::filesystem::path with_ext(std::filesystem::path stem, const char* ext) {
  return stem.replace_extension(ext);
}

}  // namespace

ForwardResult encode(const SequentialNet& encoder, const Tensor& image, bool record) {
  return forward(encoder, image, record);
}

ConceptVector build_concept_vector(const SequentialNet& encoder,
                                   std::span<const Tensor> positives,
                                   std::span<const Tensor> negatives) {
  if (positives.empty() || negatives.empty()) {
    throw std::invalid_argument("concept vector needs at least one positive and one negative");
  }
  const Tensor pos = mean_latent(encoder, positives);
  const Tensor neg = mean_latent(encoder, negatives);
  Tensor dir(pos.shape());
  for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = pos[i] - neg[i];
  return {std::move(dir), positives.size(), negatives.size()};
}

double concept_score(const Tensor& z, const ConceptVector& concept_vector) {
  if (z.shape() != concept_vector.direction.shape()) {
    throw ShapeError("concept_score: latent " + shape_string(z.shape()) + " vs concept " +
                     shape_string(concept_vector.direction.shape()));
  }
  return dot(z, concept_vector.direction);
}

SaliencyMap concept_saliency(const SequentialNet& encoder, const Tensor& image,
                             const ConceptVector& concept_vector, const PropagationRule& rule,
                             FinalizationMode mode, ChannelReduction reduction) {
  if (concept_vector.direction.shape() != encoder.output_shape()) {
    throw ShapeError("concept_saliency: concept dimension does not match encoder latent");
  }
  return attribute(encoder, image, concept_vector.direction, rule, mode, reduction);
}

void save_concept(const ConceptVector& c, const std::string& encoder_digest,
                  const std::filesystem::path& stem) {
  save_tensor(with_ext(stem, ".nbt"), c.direction);
  nlohmann::ordered_json j;
  j["latent_dim"] = c.direction.size();
  j["n_pos"] = c.n_pos;
  j["n_neg"] = c.n_neg;
  j["encoder_digest"] = encoder_digest;
  std::ofstream os(with_ext(stem, ".json"));
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing concept sidecar");
}

ConceptVector load_concept(const std::filesystem::path& stem, std::string* encoder_digest) {
  ConceptVector c;
  c.direction = load_tensor(with_ext(stem, ".nbt"));
  std::ifstream is(with_ext(stem, ".json"));
  if (!is) throw FormatError("missing concept sidecar " + with_ext(stem, ".json").string());
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.at("latent_dim").get<std::size_t>() != c.direction.size() ||
        c.direction.rank() != 1) {
      throw FormatError("concept sidecar latent_dim disagrees with the direction tensor");
    }
    c.n_pos = j.at("n_pos");
    c.n_neg = j.at("n_neg");
    if (encoder_digest) *encoder_digest = j.at("encoder_digest");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed concept sidecar: ") + e.what());
  }
  if (!c.direction.all_finite()) throw FormatError("concept direction has non-finite entries");
  return c;
}

}  // namespace nobias
