#include "lowlight/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "lowlight/attention.hpp"
#include "lowlight/error.hpp"

namespace lowlight {

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (!(learning_rate > 0.0) || !(decayed_learning_rate > 0.0)) throw ArgumentError("learning rates must be > 0");
  if (batch_size != 1) throw ArgumentError("only batch size 1 is supported");
  if (crop < 0 || crop % Enhancer::kSizeMultiple) throw ArgumentError("crop must be a non-negative multiple of 16");
  if (checkpoint_interval < 0) throw ArgumentError("checkpoint interval must be >= 0");
  loss_weights.validate();
  if (toggles.ms_ssim) {
    ms_ssim.validate();
    if (crop > 0 && crop < ms_ssim.min_size()) {
      throw ArgumentError("crop " + std::to_string(crop) + " is too small for " + std::to_string(ms_ssim.scales()) +
                          "-scale MS-SSIM (needs " + std::to_string(ms_ssim.min_size()) + ")");
    }
  }
  enhancer.unet_spec().validate();
}

double TrainConfig::learning_rate_at(int epoch) const {
  return epoch < decay_epoch ? learning_rate : decayed_learning_rate;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"epochs", c.epochs},
      {"learning_rate", c.learning_rate},
      {"decayed_learning_rate", c.decayed_learning_rate},
      {"decay_epoch", c.decay_epoch},
      {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
      {"batch_size", c.batch_size},
      {"crop", c.crop},
      {"augment", c.augment},
      {"loss_weights", c.loss_weights},
      {"ms_ssim", c.ms_ssim},
      {"toggles",
       {{"attention", c.toggles.attention}, {"edge", c.toggles.edge}, {"ms_ssim", c.toggles.ms_ssim},
        {"text", c.toggles.text}}},
      {"seed", c.seed},
      {"checkpoint_interval", c.checkpoint_interval},
      {"split", c.split},
      {"enhancer", c.enhancer},
      {"edge",
       {{"steps", c.edge.steps},
        {"learning_rate", c.edge.learning_rate},
        {"crop", c.edge.crop},
        {"seed", c.edge.seed},
        {"spec", c.edge.spec}}},
      {"output_dir", c.output_dir},
  };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.decayed_learning_rate = j.value("decayed_learning_rate", c.decayed_learning_rate);
  c.decay_epoch = j.value("decay_epoch", c.decay_epoch);
  if (j.contains("adam")) {
    const auto& a = j["adam"];
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.crop = j.value("crop", c.crop);
  c.augment = j.value("augment", c.augment);
  if (j.contains("loss_weights")) c.loss_weights = j["loss_weights"].get<LossWeights>();
  if (j.contains("ms_ssim")) c.ms_ssim = j["ms_ssim"].get<MsSsimParams>();
  if (j.contains("toggles")) {
    const auto& t = j["toggles"];
    c.toggles.attention = t.value("attention", c.toggles.attention);
    c.toggles.edge = t.value("edge", c.toggles.edge);
    c.toggles.ms_ssim = t.value("ms_ssim", c.toggles.ms_ssim);
    c.toggles.text = t.value("text", c.toggles.text);
  }
  c.seed = j.value("seed", c.seed);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.split = j.value("split", c.split);
  if (j.contains("enhancer")) c.enhancer = j["enhancer"].get<EnhancerConfig>();
  if (j.contains("edge")) {
    const auto& e = j["edge"];
    c.edge.steps = e.value("steps", c.edge.steps);
    c.edge.learning_rate = e.value("learning_rate", c.edge.learning_rate);
    c.edge.crop = e.value("crop", c.edge.crop);
    c.edge.seed = e.value("seed", c.edge.seed);
    if (e.contains("spec")) c.edge.spec = e["spec"].get<UNetSpec>();
  }
  c.output_dir = j.value("output_dir", c.output_dir);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j.get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
}

void apply_env_overrides(TrainConfig& config) {
  if (const char* seed = std::getenv("LOWLIGHT_SEED"); seed && *seed) {
    try {
      config.seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw ArgumentError(std::string("LOWLIGHT_SEED is not an integer: ") + seed);
    }
  }
  if (const char* root = std::getenv("LOWLIGHT_OUTPUT_ROOT"); root && *root) config.output_dir = root;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

Enhancer copy_enhancer(const Enhancer& e) { return Enhancer(UNet(e.net().spec(), e.params().clone())); }

EdgeEstimator copy_edges(const EdgeEstimator& e) { return EdgeEstimator(UNet(e.net().spec(), e.params().clone())); }

}  // namespace

Archive Checkpoint::to_archive() const {
  Archive ar;
  ar.meta = {{"kind", "checkpoint"},
             {"checkpoint_version", format_version},
             {"epoch", epoch},
             {"step", step},
             {"cursor", cursor},
             {"order", order},
             {"config", config},
             {"rng_state", rng_state},
             {"adam_steps", adam_steps},
             {"enhancer_spec", enhancer.net().spec()},
             {"has_edge_estimator", edge_estimator.has_value()}};
  if (edge_estimator) ar.meta["edge_spec"] = edge_estimator->net().spec();
  ar.add_params("enhancer", enhancer.params());
  if (edge_estimator) ar.add_params("edge", edge_estimator->params());
  const auto& names = enhancer.params().entries();
  for (std::size_t i = 0; i < adam_m.size(); ++i) {
    ar.add("adam_m/" + names[i].name, adam_m[i]);
    ar.add("adam_v/" + names[i].name, adam_v[i]);
  }
  return ar;
}

Checkpoint Checkpoint::from_archive(const Archive& ar) {
  if (ar.meta.value("kind", std::string{}) != "checkpoint") throw FormatError("archive is not a training checkpoint");
  const int version = ar.meta.value("checkpoint_version", -1);
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")",
                       version, kCheckpointVersion);
  }
  Checkpoint c;
  try {
    c.format_version = version;
    c.epoch = ar.meta.at("epoch").get<int>();
    c.step = ar.meta.at("step").get<std::int64_t>();
    c.cursor = ar.meta.at("cursor").get<std::size_t>();
    c.order = ar.meta.at("order").get<std::vector<std::size_t>>();
    c.config = ar.meta.at("config").get<TrainConfig>();
    c.rng_state = ar.meta.at("rng_state").get<std::string>();
    c.adam_steps = ar.meta.at("adam_steps").get<std::int64_t>();
    c.enhancer = Enhancer(UNet(ar.meta.at("enhancer_spec").get<UNetSpec>(), ar.params("enhancer")));
    if (ar.meta.at("has_edge_estimator").get<bool>()) {
      c.edge_estimator = EdgeEstimator(UNet(ar.meta.at("edge_spec").get<UNetSpec>(), ar.params("edge")));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
  for (const auto& e : c.enhancer.params().entries()) {
    if (ar.contains("adam_m/" + e.name)) {
      c.adam_m.push_back(ar.tensor("adam_m/" + e.name));
      c.adam_v.push_back(ar.tensor("adam_v/" + e.name));
    }
  }
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { to_archive().write(path); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return from_archive(Archive::read(path)); }

// ---------------------------------------------------------------------------
// Training

nlohmann::json to_json(const StepLog& log) {
  return {{"epoch", log.epoch},     {"step", log.step},       {"lr", log.learning_rate},
          {"sample", log.sample_id}, {"l1", log.loss.l1},     {"ms_ssim", log.loss.ms_ssim},
          {"text", log.loss.text},   {"total", log.loss.total}};
}

Trainer::Trainer(TrainConfig config, std::vector<PairedSample> samples,
                 std::shared_ptr<const RegionScoreProvider> detector, std::optional<EdgeEstimator> edges)
    : config_(std::move(config)),
      samples_(std::move(samples)),
      detector_(std::move(detector)),
      edges_(std::move(edges)),
      rng_(config_.seed) {
  config_.validate();
  if (samples_.empty()) throw ArgumentError("training needs at least one sample");
  if (config_.toggles.text && !detector_) throw ArgumentError("text loss enabled but no detector supplied");
  if (config_.toggles.edge && !edges_) {
    spdlog::info("fitting edge estimator ({} steps)", config_.edge.steps);
    edges_ = train_edge_estimator(samples_, config_.edge).estimator;
  }
  if (edges_) edges_->params().set_trainable(false);
  enhancer_ = std::make_unique<Enhancer>(config_.enhancer, config_.seed);
  adam_ = std::make_unique<Adam>(enhancer_->params(), config_.adam);
}

Trainer Trainer::resume(const Checkpoint& ck, std::vector<PairedSample> samples,
                        std::shared_ptr<const RegionScoreProvider> detector) {
  std::optional<EdgeEstimator> edges;
  if (ck.edge_estimator) edges = copy_edges(*ck.edge_estimator);
  if (ck.config.toggles.edge && !edges) throw FormatError("checkpoint lacks the edge estimator its config needs");
  Trainer t(ck.config, std::move(samples), std::move(detector), std::move(edges));
  if (!ck.order.empty() && ck.order.size() != t.samples_.size()) {
    throw ArgumentError("checkpoint was written for " + std::to_string(ck.order.size()) + " samples, got " +
                        std::to_string(t.samples_.size()));
  }
  t.enhancer_->params().assign_values(ck.enhancer.params());
  if (!ck.adam_m.empty()) t.adam_->restore(ck.adam_steps, ck.adam_m, ck.adam_v);
  t.epoch_ = ck.epoch;
  t.step_ = ck.step;
  t.cursor_ = ck.cursor;
  t.order_ = ck.order;
  std::istringstream rs(ck.rng_state);
  rs >> t.rng_;
  if (!rs) throw FormatError("checkpoint RNG state is corrupt");
  return t;
}

AttentionMap Trainer::attention_for(const Image& low) const {
  if (!config_.toggles.attention) return AttentionMap::constant(low.height(), low.width(), 1.0f);
  return build_pyramid(compute_attention(low), 4);
}

EdgeMap Trainer::edges_for(const Image& low) const {
  if (!config_.toggles.edge || !edges_) return EdgeMap::zeros(low.height(), low.width());
  return estimate_edges(low, *edges_);
}

void Trainer::dump_divergence(const PairedSample& sample) const {
  if (config_.output_dir.empty()) return;
  const auto dir = std::filesystem::path(config_.output_dir) / ("divergence_step_" + std::to_string(step_));
  std::filesystem::create_directories(dir);
  save_image(sample.low, dir / "low.png");
  save_image(sample.gt, dir / "gt.png");
  std::ofstream(dir / "info.json") << nlohmann::json{{"sample", sample.id}, {"epoch", epoch_}, {"step", step_}}.dump(2);
}

StepLog Trainer::step() {
  if (cursor_ == 0) {
    order_.resize(samples_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  const PairedSample& source = samples_[order_[cursor_]];
  PairedSample sample = config_.crop > 0 ? random_crop_pair(source, config_.crop, rng_) : source;
  if (config_.augment) sample = augment_pair(sample, rng_);

  const AttentionMap attention = attention_for(sample.low);
  const EdgeMap edges = edges_for(sample.low);
  const double lr = config_.learning_rate_at(epoch_);

  enhancer_->params().zero_grad();
  auto pred = enhancer_->forward(sample.low, edges, attention, SkipMode::gated);
  auto terms = total_loss(pred, sample.gt, detector_.get(), config_.loss_weights, config_.ms_ssim,
                          LossToggles{config_.toggles.ms_ssim, config_.toggles.text});
  if (!std::isfinite(terms.breakdown.total)) {
    dump_divergence(sample);
    throw DivergenceError("non-finite loss at step " + std::to_string(step_) + " on sample '" + sample.id + "'",
                          sample.id);
  }
  ag::backward(terms.total);
  adam_->step(lr);
  enhancer_->params().zero_grad();

  StepLog entry{epoch_, step_, lr, sample.id, terms.breakdown};
  log_.push_back(entry);
  ++step_;
  if (++cursor_ == samples_.size()) {
    cursor_ = 0;
    ++epoch_;
  }
  return entry;
}

void Trainer::run_epoch() {
  const int start = epoch_;
  while (epoch_ == start) step();
}

void Trainer::run(const std::function<void(const StepLog&)>& on_step) {
  std::filesystem::path out;
  std::ofstream metrics;
  if (!config_.output_dir.empty()) {
    out = config_.output_dir;
    std::filesystem::create_directories(out);
    metrics.open(out / "train_log.jsonl", std::ios::app);
  }
  while (epoch_ < config_.epochs) {
    const StepLog entry = step();
    if (metrics.is_open()) metrics << to_json(entry).dump() << '\n';
    if (on_step) on_step(entry);
    const bool epoch_done = cursor_ == 0;
    if (epoch_done && !out.empty() && config_.checkpoint_interval > 0 && epoch_ % config_.checkpoint_interval == 0) {
      checkpoint().save(out / ("checkpoint_epoch_" + std::to_string(epoch_) + ".llck"));
    }
  }
  if (!out.empty()) checkpoint().save(out / "checkpoint_final.llck");
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.enhancer = copy_enhancer(*enhancer_);
  if (edges_) c.edge_estimator = copy_edges(*edges_);
  c.adam_steps = adam_->steps();
  c.adam_m = adam_->first_moments();
  c.adam_v = adam_->second_moments();
  c.epoch = epoch_;
  c.step = step_;
  c.cursor = cursor_;
  c.order = order_;
  c.config = config_;
  std::ostringstream rs;
  rs << rng_;
  c.rng_state = rs.str();
  return c;
}

// ---------------------------------------------------------------------------
// Inference and evaluation

double psnr(const Image& pred, const Image& target) {
  require_same_shape(pred, target, "psnr");
  if (pred.empty()) throw ShapeError("psnr: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(pred.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

Image enhance_image(const Image& low, const Checkpoint& ck) {
  const int m = Enhancer::kSizeMultiple;
  const int h = low.height(), w = low.width();
  const int ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  const Image padded = reflect_pad(low, ph, pw);

  const auto& t = ck.config.toggles;
  const AttentionMap attention =
      t.attention ? build_pyramid(compute_attention(padded), 4) : AttentionMap::constant(ph, pw, 1.0f);
  const EdgeMap edges = t.edge && ck.edge_estimator ? estimate_edges(padded, *ck.edge_estimator)
                                                    : EdgeMap::zeros(ph, pw);
  const Image out = enhance(padded, edges, attention, ck.enhancer);
  if (ph == h && pw == w) return out;
  Image cropped = Image::chw(3, h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y) std::copy_n(&out.at(c, y, 0), w, &cropped.at(c, y, 0));
  return cropped;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int enhance_command(const std::filesystem::path& input_dir, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& output_dir, const EnhanceOptions& options) {
  Checkpoint ck = Checkpoint::load(checkpoint);
  ck.enhancer.params().set_trainable(false);
  const auto inputs = list_images(input_dir);
  std::filesystem::create_directories(output_dir);
  // Kept out of output_dir so it stays a valid --pred directory.
  const auto attention_dir = output_dir / "attention";
  if (options.dump_attention) std::filesystem::create_directories(attention_dir);
  int written = 0;
  for (const auto& path : inputs) {
    const Image low = load_image(path);
    save_image(enhance_image(low, ck), output_dir / (path.stem().string() + ".png"));
    if (options.dump_attention) {
      save_gray(compute_attention(low).base, attention_dir / (path.stem().string() + ".png"));
    }
    ++written;
  }
  return written;
}

std::optional<std::filesystem::path> find_annotation(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto& name : {"gt_" + stem + ".txt", stem + ".txt"}) {
    if (std::filesystem::exists(dir / name)) return dir / name;
  }
  return std::nullopt;
}

namespace {

std::optional<std::filesystem::path> find_detections(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto& name : {"res_" + stem + ".txt", stem + ".txt"}) {
    if (std::filesystem::exists(dir / name)) return dir / name;
  }
  return std::nullopt;
}

std::vector<TextBox> detect(const Image& image, const RegionScoreProvider& detector, const BoxExtractionParams& p) {
  const Image even = reflect_pad(image, image.height() + image.height() % 2, image.width() + image.width() % 2);
  return extract_boxes(region_score(even, detector), p);
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j{{"split", split}, {"images", images}, {"psnr", psnr}, {"ssim", ssim}};
  if (detection) {
    j["precision"] = detection->precision;
    j["recall"] = detection->recall;
    j["hmean"] = detection->hmean;
  }
  if (accuracy) j["accuracy"] = *accuracy;
  return j;
}

MetricsReport evaluate_command(const EvaluateOptions& o) {
  const auto preds = list_images(o.pred_dir);
  const auto gts = list_images(o.gt_dir);
  std::set<std::string> pred_names, gt_names;
  for (const auto& p : preds) pred_names.insert(p.filename().string());
  for (const auto& g : gts) gt_names.insert(g.filename().string());
  if (pred_names != gt_names) {
    std::string orphans;
    for (const auto& n : pred_names)
      if (!gt_names.count(n)) orphans += " pred:" + n;
    for (const auto& n : gt_names)
      if (!pred_names.count(n)) orphans += " gt:" + n;
    throw ValidationError("prediction and ground-truth file names differ; orphans:" + orphans);
  }
  const bool with_detection = o.annotation_dir.has_value();
  if (with_detection && !o.detections_dir && !o.detector) {
    throw ArgumentError("detection metrics need precomputed detections or a detector");
  }
  if (o.write_detections_dir) std::filesystem::create_directories(*o.write_detections_dir);

  MetricsReport report;
  report.split = o.split;
  double psnr_sum = 0.0, ssim_sum = 0.0;
  int matches = 0, care = 0, counted = 0;
  SpottingCounts spotting;
  const MsSsimParams single = MsSsimParams::with_scales(1);
  for (const auto& name : pred_names) {
    const Image pred = load_image(o.pred_dir / name);
    const Image gt = load_image(o.gt_dir / name);
    require_same_shape(pred, gt, name.c_str());
    psnr_sum += psnr(clamped(pred), gt);
    ssim_sum += ssim(pred, gt, single);
    ++report.images;
    if (!with_detection) continue;

    const std::string stem = std::filesystem::path(name).stem().string();
    std::vector<TextBox> truth;
    if (auto ann = find_annotation(*o.annotation_dir, stem)) {
      truth = parse_annotations(*ann, gt.width(), gt.height());
    } else {
      spdlog::warn("no annotation for {}; treating as text-free", name);
    }
    std::vector<TextBox> found;
    if (o.detections_dir) {
      if (auto det = find_detections(*o.detections_dir, stem)) found = parse_detections(*det, pred.width(), pred.height());
    } else {
      found = detect(pred, *o.detector, o.box_params);
    }
    if (o.write_detections_dir) write_detections(found, *o.write_detections_dir / ("res_" + stem + ".txt"));
    const DetectionMatch m = match_detections(found, truth, o.iou_threshold);
    matches += static_cast<int>(m.pairs.size());
    care += m.care_ground_truths();
    counted += m.counted_predictions();
    if (o.recognizer) {
      const auto c = spotting_counts(pred, found, truth, m, *o.recognizer);
      spotting.correct += c.correct;
      spotting.total += c.total;
    }
  }
  if (report.images > 0) {
    report.psnr = psnr_sum / report.images;
    report.ssim = ssim_sum / report.images;
  }
  if (with_detection) report.detection = h_mean(matches, care, counted);
  if (with_detection && o.recognizer) report.accuracy = spotting.accuracy();
  return report;
}

DatasetManifest darken_command(const DarkenCommandOptions& o) {
  const auto inputs = list_images(o.input_dir);
  const auto low_dir = o.output_dir / "low", gt_dir = o.output_dir / "gt", ann_dir = o.output_dir / "ann";
  for (const auto& d : {low_dir, gt_dir, ann_dir}) std::filesystem::create_directories(d);

  DatasetManifest manifest;
  manifest.root = o.output_dir;
  std::uint64_t index = 0;
  for (const auto& path : inputs) {
    const std::string stem = path.stem().string();
    const Image bright = load_image(path);
    const DarkenParams params = DarkenParams::sample(o.scale_lo, o.scale_hi, o.sigma, o.gamma, o.seed + 2 * index++);
    save_image(darken(bright, params), low_dir / (stem + ".png"));
    save_image(bright, gt_dir / (stem + ".png"));

    ManifestEntry e;
    e.id = stem;
    e.low = std::filesystem::path("low") / (stem + ".png");
    e.gt = std::filesystem::path("gt") / (stem + ".png");
    e.split = o.split;
    e.source = SourceTag::synthetic;
    e.darken = params;
    if (auto ann = find_annotation(o.input_dir, stem)) {
      const auto boxes = parse_annotations(*ann, bright.width(), bright.height());
      write_annotations(boxes, ann_dir / ("gt_" + stem + ".txt"));
      e.annotation = std::filesystem::path("ann") / ("gt_" + stem + ".txt");
    }
    manifest.entries.push_back(std::move(e));
  }
  manifest.validate_ids();
  manifest.save(o.output_dir / "manifest.json");
  return manifest;
}

}  // namespace lowlight
