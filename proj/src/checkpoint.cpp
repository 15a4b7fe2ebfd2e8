#include "coughfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "coughfuse/error.hpp"

namespace coughfuse {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'N', 'N'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

std::size_t element_count(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw FormatError("checkpoint: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

const NamedTensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw FormatError("checkpoint: missing tensor `" + name + "`");
}

std::vector<unsigned char> encode_checkpoint(nlohmann::json header, std::span<const NamedTensor> tensors) {
  auto& listing = header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) {
    if (element_count(t.shape) != t.data.size())
      throw ShapeError("checkpoint: tensor `" + t.name + "` size does not match its shape");
    listing.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const std::string text = header.dump();

  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : tensors) {
    for (double v : t.data) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t header_len = get_u32(bytes.data() + 8);
  if (12 + std::size_t(header_len) > bytes.size()) throw FormatError("checkpoint: truncated header");

  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }

  std::size_t pos = 12 + header_len;
  for (const auto& entry : ck.header.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const std::size_t n = element_count(t.shape);
    if (pos + n * 8 > bytes.size()) throw FormatError("checkpoint: truncated tensor `" + t.name + "`");
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i, pos += 8) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t(bytes[pos + std::size_t(b)]) << (8 * b);
      t.data[i] = std::bit_cast<double>(bits);
    }
    ck.tensors.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw FormatError("checkpoint: trailing bytes after tensor data");
  return ck;
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                     std::span<const NamedTensor> tensors) {
  const auto bytes = encode_checkpoint(header, tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

std::string content_hash(std::span<const unsigned char> bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[std::size_t(i)] = digits[h & 0xF];
  return out;
}

std::string file_content_hash(const std::filesystem::path& path) { return content_hash(read_file_bytes(path)); }

}  // namespace coughfuse
