#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowlight/params.hpp"

namespace lowlight {

inline constexpr int kArchiveFormatVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

/// Single-file container of named float32 arrays plus a JSON header.
///
/// Layout (all integers little-endian):
///   "LLAR"            4-byte magic
///   u32               format version
///   u64               header length in bytes
///   header            UTF-8 JSON {"meta": ..., "arrays": [{name, shape, offset, count}]}
///   payload           row-major little-endian float32 values, arrays back to back
///
/// Serialization is deterministic: the same archive always yields the same bytes.
class Archive {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& name, const Tensor& t);
  void add_params(const std::string& prefix, const ParamSet& params);

  bool contains(const std::string& name) const;
  Tensor tensor(const std::string& name) const;
  /// Arrays named "<prefix>/<param>" in stored order, as a fresh ParamSet.
  ParamSet params(const std::string& prefix) const;

  const std::vector<NamedArray>& arrays() const noexcept { return arrays_; }

  std::string to_bytes() const;
  static Archive from_bytes(std::string_view bytes);

  void write(const std::filesystem::path& path) const;
  static Archive read(const std::filesystem::path& path);

 private:
  std::vector<NamedArray> arrays_;
};

}  // namespace lowlight
