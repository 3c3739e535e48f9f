#include "lowlight/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "lowlight/error.hpp"

namespace lowlight {

void DarkenParams::validate() const {
  if (!(scale > 0.0 && scale <= 1.0)) throw ArgumentError("darken: exposure scale must lie in (0,1]");
  if (!(sigma >= 0.0)) throw ArgumentError("darken: noise sigma must be non-negative");
  if (!(gamma > 0.0)) throw ArgumentError("darken: gamma must be positive");
}

DarkenParams DarkenParams::sample(double scale_lo, double scale_hi, double sigma, double gamma, std::uint64_t seed) {
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi && scale_hi <= 1.0)) {
    throw ArgumentError("darken: scale range must satisfy 0 < lo <= hi <= 1");
  }
  std::mt19937_64 rng(seed);
  DarkenParams p;
  p.scale = std::uniform_real_distribution<double>(scale_lo, scale_hi)(rng);
  p.sigma = sigma;
  p.gamma = gamma;
  // Offset so the noise stream differs from the stream that drew the scale.
  p.seed = seed + 1;
  return p;
}

void to_json(nlohmann::json& j, const DarkenParams& p) {
  j = nlohmann::json{{"scale", p.scale}, {"sigma", p.sigma}, {"gamma", p.gamma}, {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, DarkenParams& p) {
  p.scale = j.value("scale", p.scale);
  p.sigma = j.value("sigma", p.sigma);
  p.gamma = j.value("gamma", p.gamma);
  p.seed = j.value("seed", p.seed);
}

Image darken(const Image& image, const DarkenParams& params) {
  params.validate();
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double inv_gamma = 1.0 / params.gamma;
  Image out = image;
  for (float& v : out.values()) {
    double lin = std::pow(std::clamp(static_cast<double>(v), 0.0, 1.0), params.gamma) * params.scale;
    if (params.sigma > 0.0) lin += params.sigma * noise(rng);
    const double encoded = std::pow(std::max(lin, 0.0), inv_gamma);
    v = static_cast<float>(std::clamp(std::round(encoded * 255.0) / 255.0, 0.0, 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

void DatasetManifest::validate_ids() const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.id.empty()) throw ValidationError("manifest entry with empty id");
    if (!seen.insert(e.id).second) throw ValidationError("duplicate manifest id '" + e.id + "'");
  }
}

std::filesystem::path DatasetManifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() || root.empty() ? p : root / p;
}

void DatasetManifest::validate_files() const {
  validate_ids();
  for (const auto& e : entries) {
    for (const auto* p : {&e.low, &e.gt}) {
      if (!std::filesystem::exists(resolve(*p))) {
        throw IoError("manifest entry '" + e.id + "': missing file " + resolve(*p).string());
      }
    }
    if (e.annotation && !std::filesystem::exists(resolve(*e.annotation))) {
      throw IoError("manifest entry '" + e.id + "': missing annotation " + resolve(*e.annotation).string());
    }
  }
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json j{{"id", e.id},
                     {"low", e.low.generic_string()},
                     {"gt", e.gt.generic_string()},
                     {"split", e.split},
                     {"source", lowlight::to_string(e.source)}};
    j["annotation"] = e.annotation ? nlohmann::json(e.annotation->generic_string()) : nlohmann::json(nullptr);
    if (e.darken) j["darken"] = *e.darken;
    list.push_back(std::move(j));
  }
  return {{"version", 1}, {"entries", list}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j, std::filesystem::path root) {
  DatasetManifest m;
  m.root = std::move(root);
  try {
    for (const auto& item : j.at("entries")) {
      ManifestEntry e;
      e.id = item.at("id").get<std::string>();
      e.low = item.at("low").get<std::string>();
      e.gt = item.at("gt").get<std::string>();
      if (item.contains("annotation") && !item["annotation"].is_null()) {
        e.annotation = item["annotation"].get<std::string>();
      }
      e.split = item.value("split", e.split);
      e.source = source_tag_from_string(item.value("source", std::string("synthetic")));
      if (item.contains("darken")) e.darken = item["darken"].get<DarkenParams>();
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  m.validate_ids();
  return m;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << to_json().dump(2) << '\n';
}

std::vector<ManifestEntry> select_split(const DatasetManifest& manifest, const std::string& split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : manifest.entries)
    if (split == "*" || e.split == split) out.push_back(e);
  return out;
}

PairedSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry) {
  PairedSample s;
  s.id = entry.id;
  s.source = entry.source;
  try {
    s.low = load_image(manifest.resolve(entry.low));
    s.gt = load_image(manifest.resolve(entry.gt));
  } catch (const IoError& e) {
    throw IoError("manifest entry '" + entry.id + "': " + e.what());
  }
  if (!s.low.same_shape(s.gt)) {
    throw ShapeError("manifest entry '" + entry.id + "': low and gt sizes differ");
  }
  if (entry.annotation) {
    const auto path = manifest.resolve(*entry.annotation);
    if (!std::filesystem::exists(path)) {
      throw IoError("manifest entry '" + entry.id + "': missing annotation " + path.string());
    }
    s.boxes = parse_annotations(path, s.gt.width(), s.gt.height());
  }
  return s;
}

std::vector<SampleSource> dataset_sources(const DatasetManifest& manifest, const std::string& split) {
  manifest.validate_ids();
  std::vector<SampleSource> out;
  for (auto& e : select_split(manifest, split)) out.emplace_back(&manifest, std::move(e));
  return out;
}

std::vector<PairedSample> load_dataset(const DatasetManifest& manifest, const std::string& split) {
  std::vector<PairedSample> out;
  for (const auto& src : dataset_sources(manifest, split)) out.push_back(src.load());
  return out;
}

// ---------------------------------------------------------------------------
// Geometry

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Image crop_image(const Image& img, int x0, int y0, int w, int h) {
  Image out = Image::chw(img.channels(), h, w);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y) std::copy_n(&img.at(c, y0 + y, x0), w, &out.at(c, y, 0));
  return out;
}

}  // namespace

Image reflect_pad(const Image& image, int height, int width) {
  const int h = std::max(height, image.height()), w = std::max(width, image.width());
  if (h == image.height() && w == image.width()) return image;
  Image out = Image::chw(image.channels(), h, w);
  for (int c = 0; c < image.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = image.at(c, reflect_index(y, image.height()), reflect_index(x, image.width()));
  return out;
}

PairedSample crop_pair(const PairedSample& sample, int x0, int y0, int width, int height) {
  require_same_shape(sample.low, sample.gt, "crop_pair");
  if (x0 < 0 || y0 < 0 || x0 + width > sample.low.width() || y0 + height > sample.low.height()) {
    throw ShapeError("crop_pair: window outside the image");
  }
  PairedSample out;
  out.id = sample.id;
  out.source = sample.source;
  out.low = crop_image(sample.low, x0, y0, width, height);
  out.gt = crop_image(sample.gt, x0, y0, width, height);
  for (const auto& box : sample.boxes) {
    double x_lo = box.quad[0].x, x_hi = x_lo, y_lo = box.quad[0].y, y_hi = y_lo;
    for (const auto& p : box.quad) {
      x_lo = std::min(x_lo, p.x);
      x_hi = std::max(x_hi, p.x);
      y_lo = std::min(y_lo, p.y);
      y_hi = std::max(y_hi, p.y);
    }
    if (x_hi <= x0 || x_lo >= x0 + width || y_hi <= y0 || y_lo >= y0 + height) continue;
    TextBox t = box;
    for (auto& p : t.quad) {
      p.x = std::clamp(p.x - x0, 0.0, static_cast<double>(width));
      p.y = std::clamp(p.y - y0, 0.0, static_cast<double>(height));
    }
    if (signed_area(t.quad) == 0.0) continue;
    out.boxes.push_back(std::move(t));
  }
  return out;
}

PairedSample random_crop_pair(const PairedSample& sample, int size, std::mt19937_64& rng) {
  if (size <= 0) throw ArgumentError("random_crop_pair: crop size must be positive");
  require_same_shape(sample.low, sample.gt, "random_crop_pair");
  const PairedSample* src = &sample;
  PairedSample padded;
  if (sample.low.height() < size || sample.low.width() < size) {
    spdlog::warn("sample '{}' ({}x{}) is smaller than the {} crop; reflect-padding", sample.id, sample.low.width(),
                 sample.low.height(), size);
    padded = sample;
    padded.low = reflect_pad(sample.low, size, size);
    padded.gt = reflect_pad(sample.gt, size, size);
    src = &padded;
  }
  const int x0 = std::uniform_int_distribution<int>(0, src->low.width() - size)(rng);
  const int y0 = std::uniform_int_distribution<int>(0, src->low.height() - size)(rng);
  return crop_pair(*src, x0, y0, size, size);
}

Image apply_augment(const Image& image, const AugmentOps& ops) {
  const int h = image.height(), w = image.width();
  if (ops.quarter_turns % 2 != 0 && h != w) throw ShapeError("augment: rotation by 90 degrees needs a square image");
  Image cur = image;
  if (ops.hflip || ops.vflip) {
    Image f = Image::chw(cur.channels(), h, w);
    for (int c = 0; c < cur.channels(); ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          f.at(c, y, x) = cur.at(c, ops.vflip ? h - 1 - y : y, ops.hflip ? w - 1 - x : x);
    cur = std::move(f);
  }
  const int turns = ((ops.quarter_turns % 4) + 4) % 4;
  for (int t = 0; t < turns; ++t) {
    const int cw = cur.width();
    Image r = Image::chw(cur.channels(), cw, cur.height());
    // Pixel (x,y) moves to (y, W-1-x).
    for (int c = 0; c < cur.channels(); ++c)
      for (int y = 0; y < cur.height(); ++y)
        for (int x = 0; x < cw; ++x) r.at(c, cw - 1 - x, y) = cur.at(c, y, x);
    cur = std::move(r);
  }
  return cur;
}

PairedSample apply_augment(const PairedSample& sample, const AugmentOps& ops) {
  require_same_shape(sample.low, sample.gt, "augment");
  PairedSample out;
  out.id = sample.id;
  out.source = sample.source;
  out.low = apply_augment(sample.low, ops);
  out.gt = apply_augment(sample.gt, ops);
  const double w = sample.low.width(), h = sample.low.height();
  const int turns = ((ops.quarter_turns % 4) + 4) % 4;
  for (auto box : sample.boxes) {
    for (auto& p : box.quad) {
      if (ops.hflip) p.x = w - p.x;
      if (ops.vflip) p.y = h - p.y;
      double cur_w = w, cur_h = h;
      for (int t = 0; t < turns; ++t) {
        p = Point{p.y, cur_w - p.x};
        std::swap(cur_w, cur_h);
      }
    }
    make_clockwise(box.quad);
    out.boxes.push_back(std::move(box));
  }
  return out;
}

AugmentOps draw_augment(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  AugmentOps ops;
  ops.hflip = coin(rng);
  ops.vflip = coin(rng);
  if (coin(rng)) ops.quarter_turns = std::uniform_int_distribution<int>(1, 3)(rng);
  return ops;
}

PairedSample augment_pair(const PairedSample& sample, std::mt19937_64& rng) {
  if (sample.low.height() != sample.low.width()) throw ShapeError("augment_pair: expected a square crop");
  return apply_augment(sample, draw_augment(rng));
}

}  // namespace lowlight
