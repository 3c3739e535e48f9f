#include "lowlight/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lowlight/error.hpp"

namespace lowlight {
namespace {

constexpr char kMagic[4] = {'L', 'L', 'A', 'R'};

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view in, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

void Archive::add(const std::string& name, const Tensor& t) {
  if (contains(name)) throw ArgumentError("archive already holds '" + name + "'");
  arrays_.push_back({name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())});
}

void Archive::add_params(const std::string& prefix, const ParamSet& params) {
  for (const auto& e : params.entries()) add(prefix + "/" + e.name, e.var->value);
}

bool Archive::contains(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return true;
  return false;
}

Tensor Archive::tensor(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return Tensor(a.shape, a.values);
  throw FormatError("archive has no array '" + name + "'");
}

ParamSet Archive::params(const std::string& prefix) const {
  ParamSet set;
  const std::string p = prefix + "/";
  for (const auto& a : arrays_) {
    if (a.name.rfind(p, 0) == 0) set.add(a.name.substr(p.size()), Tensor(a.shape, a.values));
  }
  return set;
}

std::string Archive::to_bytes() const {
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays_) {
    table.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()}});
    offset += a.values.size();
  }
  const std::string header = nlohmann::json{{"meta", meta}, {"arrays", table}}.dump();

  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kArchiveFormatVersion);
  put_le<std::uint64_t>(out, header.size());
  out += header;
  out.reserve(out.size() + offset * 4);
  for (const auto& a : arrays_) {
    for (float f : a.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Archive Archive::from_bytes(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a lowlight archive (bad magic)");
  }
  const auto version = static_cast<int>(get_le<std::uint32_t>(bytes, 4));
  if (version != kArchiveFormatVersion) {
    throw VersionError("archive format version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kArchiveFormatVersion) + ")",
                       version, kArchiveFormatVersion);
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) throw FormatError("archive header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("archive header is not valid JSON: ") + e.what());
  }
  const std::size_t payload = 16 + header_len;

  Archive ar;
  ar.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("arrays")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<int>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    if (payload + (offset + count) * 4 > bytes.size()) throw FormatError("array '" + a.name + "' truncated");
    a.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      a.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, payload + (offset + i) * 4));
    }
    Tensor check(a.shape, a.values);  // validates shape/count agreement
    ar.arrays_.push_back(std::move(a));
  }
  return ar;
}

void Archive::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = to_bytes();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Archive Archive::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_bytes(ss.str());
}

}  // namespace lowlight
