#include "nobias/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nobias/rng.hpp"

namespace nobias {
namespace {

enum Stream : std::uint64_t { kSelection = 1, kPlacement = 2, kTexture = 3, kLabels = 4 };

// One channel of value noise in [0, 1).
std::vector<double> value_noise(std::size_t size, std::size_t cell, Rng& rng) {
  const std::size_t nodes = (size + cell - 1) / cell + 2;
  std::vector<double> lattice(nodes * nodes);
  for (double& v : lattice) v = rng.uniform();
  // random phase so lattice points do not always sit on the same pixels
  const double oy = rng.uniform() * static_cast<double>(cell);
  const double ox = rng.uniform() * static_cast<double>(cell);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };

  std::vector<double> out(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = (static_cast<double>(y) + oy) / static_cast<double>(cell);
    const auto iy = static_cast<std::size_t>(fy);
    const double ty = smooth(fy - static_cast<double>(iy));
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = (static_cast<double>(x) + ox) / static_cast<double>(cell);
      const auto ix = static_cast<std::size_t>(fx);
      const double tx = smooth(fx - static_cast<double>(ix));
      const double v00 = lattice[iy * nodes + ix], v01 = lattice[iy * nodes + ix + 1];
      const double v10 = lattice[(iy + 1) * nodes + ix], v11 = lattice[(iy + 1) * nodes + ix + 1];
      const double top = v00 + tx * (v01 - v00);
      const double bottom = v10 + tx * (v11 - v10);
      out[y * size + x] = top + ty * (bottom - top);
    }
  }
  return out;
}

// First `count` entries of a seeded permutation of [0, n), as a membership mask.
std::vector<bool> choose_subset(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < count; ++i) mask[idx[i]] = true;
  return mask;
}

std::size_t fraction_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace

void SyntheticDatasetSpec::validate() const {
  if (n_images < 1) throw std::invalid_argument("n_images must be positive");
  if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
  if (box_size < 1 || box_size >= image_size || width() >= image_size) {
    throw std::invalid_argument("box must be at least 1 pixel and smaller than the image");
  }
  if (!(box_fraction > 0.0 && box_fraction < 1.0)) {
    throw std::invalid_argument("box_fraction must lie in (0, 1)");
  }
  if (background.cell < 1) throw std::invalid_argument("background cell must be positive");
  if (!(background.low > 0.1 && background.low < background.high && background.high <= 1.0)) {
    throw std::invalid_argument("background range must satisfy 0.1 < low < high <= 1");
  }
}

nlohmann::ordered_json to_json(const SyntheticDatasetSpec& s) {
  return {{"n_images", s.n_images},
          {"image_size", s.image_size},
          {"channels", s.channels},
          {"box_size", s.box_size},
          {"box_width", s.width()},
          {"box_fraction", s.box_fraction},
          {"background",
           {{"kind", "value_noise"},
            {"cell", s.background.cell},
            {"low", s.background.low},
            {"high", s.background.high}}},
          {"seed", s.seed}};
}

LabeledDataset gen_synthetic_dataset(const SyntheticDatasetSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_images, S = spec.image_size;
  Rng select(derive_seed(spec.seed, kSelection));
  Rng place(derive_seed(spec.seed, kPlacement));
  Rng texture(derive_seed(spec.seed, kTexture));
  const std::vector<bool> boxed = choose_subset(n, fraction_count(n, spec.box_fraction), select);

  const std::size_t bh = spec.box_size, bw = spec.width();
  const double span = spec.background.high - spec.background.low;
  LabeledDataset data;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img({spec.channels, S, S});
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const auto noise = value_noise(S, spec.background.cell, texture);
      for (std::size_t p = 0; p < S * S; ++p) {
        // lower end is open: low + span * u with u in (0, 1]
        img[c * S * S + p] = spec.background.low + span * (1.0 - noise[p]);
      }
    }
    // placement is drawn for every image so backgrounds and positions stay
    // independent of which images are boxed
    const BoxRegion region{place.below(S - bh + 1), place.below(S - bw + 1), bh, bw};
    std::optional<BoxRegion> stored;
    if (boxed[i]) {
      for (std::size_t c = 0; c < spec.channels; ++c)
        for (std::size_t y = region.row; y < region.row + bh; ++y)
          for (std::size_t x = region.col; x < region.col + bw; ++x) img.at(c, y, x) = 0.0;
      stored = region;
    }
    data.images.push_back(std::move(img));
    data.labels.push_back(boxed[i] ? 1 : 0);
    data.regions.push_back(stored);
  }
  return data;
}

void AffineScaling::validate() const {
  if (!std::isfinite(offset) || !std::isfinite(divisor) || divisor == 0.0) {
    throw std::invalid_argument("affine scaling needs a finite offset and nonzero divisor");
  }
}

void GreyObjectSpec::validate() const {
  if (n_images < 1) throw std::invalid_argument("n_images must be positive");
  if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
  if (object_size < 1 || object_size >= image_size) {
    throw std::invalid_argument("object must be smaller than the image");
  }
  if (!(object_fraction > 0.0 && object_fraction < 1.0)) {
    throw std::invalid_argument("object_fraction must lie in (0, 1)");
  }
  if (!(dark_low <= dark_high && dark_high < object_byte && object_byte < bright_low &&
        bright_low <= bright_high)) {
    throw std::invalid_argument("background ranges must bracket the object value");
  }
  if (cell < 1) throw std::invalid_argument("cell must be positive");
}

nlohmann::ordered_json to_json(const GreyObjectSpec& s) {
  return {{"n_images", s.n_images},       {"image_size", s.image_size},
          {"channels", s.channels},       {"object_size", s.object_size},
          {"object_fraction", s.object_fraction}, {"object_byte", s.object_byte},
          {"dark_range", {s.dark_low, s.dark_high}},
          {"bright_range", {s.bright_low, s.bright_high}},
          {"cell", s.cell},               {"seed", s.seed}};
}

nlohmann::ordered_json to_json(const AffineScaling& s) {
  return {{"offset", s.offset}, {"divisor", s.divisor}};
}

LabeledDataset gen_grey_object_dataset(const GreyObjectSpec& spec, const AffineScaling& scaling) {
  spec.validate();
  scaling.validate();
  const std::size_t n = spec.n_images, S = spec.image_size, K = spec.object_size;
  Rng select(derive_seed(spec.seed, kSelection));
  Rng place(derive_seed(spec.seed, kPlacement));
  Rng texture(derive_seed(spec.seed, kTexture));
  const std::vector<bool> has_object =
      choose_subset(n, fraction_count(n, spec.object_fraction), select);

  LabeledDataset data;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img({spec.channels, S, S});
    // one tone field shared by all channels decides dark vs bright, each
    // channel then gets its own brightness texture within that range
    const auto tone = value_noise(S, spec.cell, texture);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const auto shade = value_noise(S, spec.cell, texture);
      for (std::size_t p = 0; p < S * S; ++p) {
        const double byte = tone[p] < 0.5
                                ? spec.dark_low + shade[p] * (spec.dark_high - spec.dark_low)
                                : spec.bright_low + shade[p] * (spec.bright_high - spec.bright_low);
        img[c * S * S + p] = scaling.apply(byte);
      }
    }
    const BoxRegion region{place.below(S - K + 1), place.below(S - K + 1), K, K};
    std::optional<BoxRegion> stored;
    if (has_object[i]) {
      const double v = scaling.apply(spec.object_byte);
      for (std::size_t c = 0; c < spec.channels; ++c)
        for (std::size_t y = region.row; y < region.row + K; ++y)
          for (std::size_t x = region.col; x < region.col + K; ++x) img.at(c, y, x) = v;
      stored = region;
    }
    data.images.push_back(std::move(img));
    data.labels.push_back(has_object[i] ? 1 : 0);
    data.regions.push_back(stored);
  }
  return data;
}

LabeledDataset shuffle_labels(const LabeledDataset& data, std::uint64_t seed) {
  LabeledDataset out = data;
  Rng rng(derive_seed(seed, kLabels));
  rng.shuffle(std::span<std::size_t>(out.labels));
  return out;
}

}  // namespace nobias
