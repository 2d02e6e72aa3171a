#include "cds/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "cds/error.hpp"

namespace cds {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'S', 'P', 'A', 'C', 'K', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::size_t shape_count(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (std::int64_t d : shape) {
    if (d < 0) throw Error(ErrorCode::io, "pack: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

const PackField& Pack::field(std::string_view name) const {
  for (const PackField& f : fields) {
    if (f.name == name) return f;
  }
  throw Error(ErrorCode::io, fmt::format("pack has no field '{}'", name));
}

std::string encode_pack(const Pack& pack) {
  nlohmann::json header{{"fields", nlohmann::json::array()}, {"meta", pack.meta}};
  std::uint64_t offset = 0;
  for (const PackField& f : pack.fields) {
    if (shape_count(f.shape) != f.data.size()) {
      throw Error(ErrorCode::shape_mismatch, fmt::format("pack field '{}' size does not match shape", f.name));
    }
    const std::uint64_t nbytes = f.data.size() * 8;
    header["fields"].push_back(
        {{"name", f.name}, {"dtype", "f64"}, {"shape", f.shape}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string h = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, h.size());
  out += h;
  out.reserve(out.size() + offset);
  for (const PackField& f : pack.fields) {
    for (double v : f.data) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Pack decode_pack(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::io, "not a pack container (bad magic)");
  }
  const std::uint64_t hlen = get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw Error(ErrorCode::io, "pack header truncated");
  Pack pack;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, std::string("pack header: ") + e.what());
  }
  const std::string_view body = bytes.substr(16 + hlen);
  pack.meta = header.value("meta", nlohmann::json::object());
  for (const auto& jf : header.at("fields")) {
    if (jf.at("dtype") != "f64") throw Error(ErrorCode::io, "pack: unsupported dtype");
    PackField f;
    f.name = jf.at("name").get<std::string>();
    f.shape = jf.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = jf.at("offset").get<std::uint64_t>();
    const auto nbytes = jf.at("nbytes").get<std::uint64_t>();
    const std::size_t n = shape_count(f.shape);
    if (nbytes != n * 8 || offset > body.size() || nbytes > body.size() - offset) {
      throw Error(ErrorCode::io, fmt::format("pack field '{}' out of bounds", f.name));
    }
    f.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) f.data[i] = std::bit_cast<double>(get_u64(body.data() + offset + 8 * i));
    pack.fields.push_back(std::move(f));
  }
  return pack;
}

void write_pack(const std::filesystem::path& path, const Pack& pack) {
  write_file_atomic(path, encode_pack(pack));
}

Pack read_pack(const std::filesystem::path& path) { return decode_pack(read_file(path)); }

void write_latent(const std::filesystem::path& path, const Latent& z) {
  const Shape& s = z.shape();
  Pack p;
  p.fields.push_back({"latent", {s.channels, s.height, s.width}, z.storage()});
  p.meta = {{"format", "latent"}};
  write_pack(path, p);
}

Latent read_latent(const std::filesystem::path& path) {
  const Pack p = read_pack(path);
  const PackField& f = p.field("latent");
  if (f.shape.size() != 3) throw Error(ErrorCode::io, "latent field must be 3-dimensional");
  return Latent(Shape{static_cast<int>(f.shape[0]), static_cast<int>(f.shape[1]), static_cast<int>(f.shape[2])},
                f.data);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write '{}'", tmp.string()));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::io, fmt::format("short write to '{}'", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io, fmt::format("rename to '{}': {}", path.string(), ec.message()));
}

std::string git_blob_sha1(std::string_view content) {
  const std::string head = fmt::format("blob {}", content.size());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, head.data(), head.size() + 1) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error(ErrorCode::io, "SHA-1 digest failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

}  // namespace cds
