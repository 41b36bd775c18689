#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "nobias/tensor.hpp"

namespace nobias {

// Axis-aligned rectangle of an image, in pixel coordinates.
struct BoxRegion {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  bool contains(std::size_t y, std::size_t x) const {
    return y >= row && y < row + height && x >= col && x < col + width;
  }
  std::size_t area() const { return height * width; }
  friend bool operator==(const BoxRegion&, const BoxRegion&) = default;
};

// Images in network-input scale with class labels and, for images carrying
// the planted object, the object's region.
struct LabeledDataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::vector<std::optional<BoxRegion>> regions;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  // Throws std::invalid_argument if the parallel lists disagree in length.
  void validate() const;

  // Rows [begin, end).
  LabeledDataset slice(std::size_t begin, std::size_t end) const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

// On-disk layout of a dataset directory:
//   images.nbt   N x C x H x W stacked NBT1 tensor
//   labels.csv   index,label
//   boxes.csv    index,row,col,height,width (one row per image with a region)
void save_dataset(const LabeledDataset& data, const std::filesystem::path& dir);
LabeledDataset load_dataset(const std::filesystem::path& dir);

}  // namespace nobias
