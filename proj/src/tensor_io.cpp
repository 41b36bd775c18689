#include "nobias/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nobias/errors.hpp"

namespace nobias {
namespace {

constexpr char kMagic[] = "NBT1";
constexpr std::size_t kMaxHeader = 1 << 16;

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
    return r;
  }
  return v;
}

std::string read_line(std::istream& is, const char* what) {
  std::string line;
  char ch = 0;
  while (is.get(ch)) {
    if (ch == '\n') return line;
    line.push_back(ch);
    if (line.size() > kMaxHeader) break;
  }
  throw FormatError(std::string("NBT1: truncated or oversized ") + what);
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  nlohmann::json header;
  header["dtype"] = "f64";
  header["shape"] = t.shape();
  os << kMagic << '\n' << header.dump() << '\n';
  for (double v : t.data()) {
    const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
    char buf[8];
    std::memcpy(buf, &bits, 8);
    os.write(buf, 8);
  }
  if (!os) throw std::runtime_error("NBT1: write failed");
}

Tensor read_tensor(std::istream& is) {
  if (read_line(is, "magic") != kMagic) throw FormatError("NBT1: bad magic");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_line(is, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("NBT1: header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("dtype", "") != "f64" || !header.contains("shape") ||
      !header["shape"].is_array()) {
    throw FormatError("NBT1: header must be {\"dtype\":\"f64\",\"shape\":[...]}");
  }
  Shape shape;
  for (const auto& e : header["shape"]) {
    if (!e.is_number_unsigned() || e.get<std::size_t>() == 0) {
      throw FormatError("NBT1: shape extents must be positive integers");
    }
    shape.push_back(e.get<std::size_t>());
  }
  const std::size_t n = shape_size(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[8];
    if (!is.read(buf, 8)) throw FormatError("NBT1: payload truncated");
    std::uint64_t bits = 0;
    std::memcpy(&bits, buf, 8);
    data[i] = std::bit_cast<double>(to_little(bits));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  Tensor t = read_tensor(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("NBT1: trailing bytes in " + path.string());
  }
  return t;
}

std::string encode_tensor(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  return os.str();
}

Tensor decode_tensor(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_tensor(is);
}

}  // namespace nobias
