#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "nobias/tensor.hpp"

// NBT1 tensor files:
//   "NBT1\n"
//   {"dtype":"f64","shape":[...]}\n
//   raw little-endian float64 payload, row-major
namespace nobias {

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);

}  // namespace nobias
