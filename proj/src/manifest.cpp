#include "nobias/manifest.hpp"

#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>

#include <openssl/evp.h>

#include "nobias/errors.hpp"

namespace nobias {
namespace {

std::string hex(const unsigned char* bytes, unsigned n) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (unsigned i = 0; i < n; ++i) {
    out += digits[bytes[i] >> 4];
    out += digits[bytes[i] & 0xf];
  }
  return out;
}

nlohmann::ordered_json digests_json(const std::vector<FileDigest>& files) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const FileDigest& f : files) out.push_back({{"path", f.path}, {"sha256", f.sha256}});
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned n = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  return hex(md, n);
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs.push_back({path.string(), sha256_file(path)});
}

void RunManifest::add_output(const std::filesystem::path& path) {
  outputs.push_back({path.string(), sha256_file(path)});
}

nlohmann::ordered_json to_json(const RunManifest& m) {
  return {{"command", m.command},
          {"config", m.config},
          {"seeds", m.seeds},
          {"inputs", digests_json(m.inputs)},
          {"outputs", digests_json(m.outputs)},
          {"tool_version", m.tool_version},
          {"duration_seconds", m.duration_seconds}};
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  os << to_json(m).dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace nobias
