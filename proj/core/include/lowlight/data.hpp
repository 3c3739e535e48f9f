#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowlight/domain.hpp"

namespace lowlight {

/// Short-exposure model: linearize with x^gamma, scale, add Gaussian read
/// noise, re-apply 1/gamma and quantize to 8-bit levels.
struct DarkenParams {
  double scale = 1.0 / 30.0;
  double sigma = 0.01;
  double gamma = 2.2;
  std::uint64_t seed = 0;

  void validate() const;
  /// Draws scale uniformly from [scale_lo, scale_hi] using seed.
  static DarkenParams sample(double scale_lo, double scale_hi, double sigma, double gamma, std::uint64_t seed);
};

void to_json(nlohmann::json& j, const DarkenParams& p);
void from_json(const nlohmann::json& j, DarkenParams& p);

/// Deterministic given params.seed.
Image darken(const Image& image, const DarkenParams& params);

struct ManifestEntry {
  std::string id;
  std::filesystem::path low;
  std::filesystem::path gt;
  std::optional<std::filesystem::path> annotation;
  std::string split = "train";
  SourceTag source = SourceTag::synthetic;
  std::optional<DarkenParams> darken;  // recorded for synthetic pairs
};

/// Paths are stored relative to the manifest file's directory when written.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;

  /// Throws ValidationError on duplicate or empty ids.
  void validate_ids() const;
  /// Also checks that every referenced file exists; IoError names the entry.
  void validate_files() const;

  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j, std::filesystem::path root);

  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

/// Entries of a split ("*" selects every entry).
std::vector<ManifestEntry> select_split(const DatasetManifest& manifest, const std::string& split);

/// Loads one entry's images and annotations.
PairedSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);

/// Lazily loadable sample handle.
class SampleSource {
 public:
  SampleSource(const DatasetManifest* manifest, ManifestEntry entry) : manifest_(manifest), entry_(std::move(entry)) {}
  const ManifestEntry& entry() const noexcept { return entry_; }
  PairedSample load() const { return load_sample(*manifest_, entry_); }

 private:
  const DatasetManifest* manifest_;
  ManifestEntry entry_;
};

/// Lazy handles for a split, in manifest order. The manifest must outlive them.
std::vector<SampleSource> dataset_sources(const DatasetManifest& manifest, const std::string& split);

/// Eagerly loads a split.
std::vector<PairedSample> load_dataset(const DatasetManifest& manifest, const std::string& split);

/// Same crop window for low and gt; boxes translated, clipped and dropped
/// when they fall outside. Images smaller than size are reflect-padded.
PairedSample random_crop_pair(const PairedSample& sample, int size, std::mt19937_64& rng);

/// Crop at a fixed window; used by random_crop_pair.
PairedSample crop_pair(const PairedSample& sample, int x0, int y0, int width, int height);

/// Reflect-pads (mirror without repeating the edge) to at least height×width.
Image reflect_pad(const Image& image, int height, int width);

struct AugmentOps {
  bool hflip = false;
  bool vflip = false;
  int quarter_turns = 0;  // each turn maps pixel (x,y) to (y, N-1-x)
};

/// Applies flips then rotation identically to low, gt and boxes.
PairedSample apply_augment(const PairedSample& sample, const AugmentOps& ops);
Image apply_augment(const Image& image, const AugmentOps& ops);

/// Independent 50% horizontal flip, vertical flip, and rotation by a
/// uniformly chosen 90°, 180° or 270°.
AugmentOps draw_augment(std::mt19937_64& rng);
PairedSample augment_pair(const PairedSample& sample, std::mt19937_64& rng);

}  // namespace lowlight
