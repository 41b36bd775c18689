#include "nobias/dataset.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "nobias/errors.hpp"
#include "nobias/tensor_io.hpp"

namespace nobias {

void LabeledDataset::validate() const {
  if (labels.size() != images.size() || regions.size() != images.size()) {
    throw std::invalid_argument("dataset lists disagree in length");
  }
}

LabeledDataset LabeledDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw std::out_of_range("dataset slice out of range");
  LabeledDataset out;
  out.images.assign(images.begin() + begin, images.begin() + end);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.regions.assign(regions.begin() + begin, regions.begin() + end);
  return out;
}

void save_dataset(const LabeledDataset& data, const std::filesystem::path& dir) {
  data.validate();
  if (data.empty()) throw std::invalid_argument("cannot save an empty dataset");
  std::filesystem::create_directories(dir);

  const Shape& img = data.images.front().shape();
  Shape stacked{data.size()};
  stacked.insert(stacked.end(), img.begin(), img.end());
  std::vector<double> flat;
  flat.reserve(shape_size(stacked));
  for (const Tensor& t : data.images) {
    if (t.shape() != img) throw ShapeError("dataset images differ in shape");
    flat.insert(flat.end(), t.data().begin(), t.data().end());
  }
  save_tensor(dir / "images.nbt", Tensor(stacked, std::move(flat)));

  std::ofstream labels(dir / "labels.csv");
  labels << "index,label\n";
  for (std::size_t i = 0; i < data.size(); ++i) labels << i << ',' << data.labels[i] << '\n';

  std::ofstream boxes(dir / "boxes.csv");
  boxes << "index,row,col,height,width\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (const auto& r = data.regions[i]) {
      boxes << i << ',' << r->row << ',' << r->col << ',' << r->height << ',' << r->width << '\n';
    }
  }
  if (!labels || !boxes) throw std::runtime_error("failed writing dataset CSVs in " + dir.string());
}

namespace {

std::vector<std::vector<std::size_t>> read_csv(const std::filesystem::path& path,
                                               std::size_t columns) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);  // header
  std::vector<std::vector<std::size_t>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::size_t> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        row.push_back(std::stoull(cell, &pos));
        if (pos != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": bad integer '" + cell + "'");
      }
    }
    if (row.size() != columns) throw FormatError(path.string() + ": wrong column count");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

LabeledDataset load_dataset(const std::filesystem::path& dir) {
  const Tensor stacked = load_tensor(dir / "images.nbt");
  if (stacked.rank() != 4) throw FormatError("images.nbt must be N x C x H x W");
  const std::size_t n = stacked.extent(0);
  const Shape img{stacked.extent(1), stacked.extent(2), stacked.extent(3)};
  const std::size_t per = shape_size(img);

  LabeledDataset data;
  data.labels.assign(n, 0);
  data.regions.assign(n, std::nullopt);
  for (std::size_t i = 0; i < n; ++i) {
    const auto first = stacked.data().begin() + static_cast<std::ptrdiff_t>(i * per);
    data.images.emplace_back(img, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
  }
  const auto labels = read_csv(dir / "labels.csv", 2);
  if (labels.size() != n) throw FormatError("labels.csv row count differs from images");
  for (const auto& row : labels) {
    if (row[0] >= n) throw FormatError("labels.csv index out of range");
    data.labels[row[0]] = row[1];
  }
  for (const auto& row : read_csv(dir / "boxes.csv", 5)) {
    if (row[0] >= n || row[1] + row[3] > img[1] || row[2] + row[4] > img[2]) {
      throw FormatError("boxes.csv region out of range");
    }
    data.regions[row[0]] = BoxRegion{row[1], row[2], row[3], row[4]};
  }
  return data;
}

}  // namespace nobias
