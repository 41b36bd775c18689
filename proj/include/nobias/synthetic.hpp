#pragma once

#include <cstddef>
#include <cstdint>

#include <nlohmann/json.hpp>

#include "nobias/dataset.hpp"

namespace nobias {

// Smooth value-noise texture: random lattice values every `cell` pixels,
// smoothstep-interpolated, mapped to [low, high].
struct BackgroundSpec {
  std::size_t cell = 8;
  double low = 0.2;
  double high = 1.0;
};

// Black-box study: a box_fraction share of images gets a box of exact zeros.
struct SyntheticDatasetSpec {
  std::size_t n_images = 1200;
  std::size_t image_size = 32;
  std::size_t channels = 1;
  std::size_t box_size = 8;
  std::size_t box_width = 0;  // 0: square box of box_size
  double box_fraction = 0.5;
  BackgroundSpec background;
  std::uint64_t seed = 1;

  std::size_t width() const { return box_width == 0 ? box_size : box_width; }
  void validate() const;
};

nlohmann::ordered_json to_json(const SyntheticDatasetSpec& spec);

LabeledDataset gen_synthetic_dataset(const SyntheticDatasetSpec& spec);

// Byte-scale pixel v becomes (v - offset) / divisor at the network input.
struct AffineScaling {
  double offset = 127.5;
  double divisor = 255.0;

  double apply(double byte_value) const { return (byte_value - offset) / divisor; }
  void validate() const;
};

// Normalization study: objects of a single byte value (middle grey by
// default) on textures that avoid a band around it. Each background pixel is
// drawn either from [dark_low, dark_high] or [bright_low, bright_high].
struct GreyObjectSpec {
  std::size_t n_images = 1200;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t object_size = 8;
  double object_fraction = 0.5;
  double object_byte = 127.5;
  double dark_low = 10.0;
  double dark_high = 90.0;
  double bright_low = 165.0;
  double bright_high = 245.0;
  std::size_t cell = 8;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::ordered_json to_json(const GreyObjectSpec& spec);
nlohmann::ordered_json to_json(const AffineScaling& scaling);

LabeledDataset gen_grey_object_dataset(const GreyObjectSpec& spec, const AffineScaling& scaling);

// Copy of `data` with labels permuted by a seeded shuffle.
LabeledDataset shuffle_labels(const LabeledDataset& data, std::uint64_t seed);

}  // namespace nobias
