#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cds/tensor.hpp"

namespace cds {

// Pack container, little-endian throughout:
//   bytes 0..7   magic "CDSPACK1"
//   bytes 8..15  uint64 header length H
//   next H bytes UTF-8 JSON header
//                {"fields": [{"name", "dtype": "f64", "shape": [...],
//                             "offset", "nbytes"}, ...], "meta": {...}}
//   remainder    field data; offsets are relative to the end of the header
struct PackField {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

struct Pack {
  std::vector<PackField> fields;
  nlohmann::json meta = nlohmann::json::object();

  const PackField& field(std::string_view name) const;
};

std::string encode_pack(const Pack& pack);
Pack decode_pack(std::string_view bytes);
void write_pack(const std::filesystem::path& path, const Pack& pack);
Pack read_pack(const std::filesystem::path& path);

// .latent files: a pack with one field "latent" of shape [C, H, W].
void write_latent(const std::filesystem::path& path, const Latent& z);
Latent read_latent(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Git blob object id: hex SHA-1 of "blob <size>\0" + content.
std::string git_blob_sha1(std::string_view content);

}  // namespace cds
