#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowlight/archive.hpp"
#include "lowlight/data.hpp"
#include "lowlight/edge.hpp"
#include "lowlight/enhancer.hpp"
#include "lowlight/losses.hpp"
#include "lowlight/optim.hpp"
#include "lowlight/texteval.hpp"

namespace lowlight {

/// Independent switches for the ablation studies.
struct ComponentToggles {
  bool attention = true;
  bool edge = true;
  bool ms_ssim = true;
  bool text = true;
};

struct TrainConfig {
  int epochs = 4000;
  double learning_rate = 1e-4;
  double decayed_learning_rate = 1e-5;
  int decay_epoch = 2000;
  AdamConfig adam;
  int batch_size = 1;
  int crop = 512;
  bool augment = true;
  LossWeights loss_weights;
  MsSsimParams ms_ssim;
  ComponentToggles toggles;
  std::uint64_t seed = 0;
  /// Epochs between checkpoints; 0 writes only the final one.
  int checkpoint_interval = 100;
  std::string split = "train";
  EnhancerConfig enhancer;
  /// Used to fit an edge estimator when none is supplied.
  EdgeTrainConfig edge;
  std::string output_dir;

  void validate() const;
  /// learning_rate before decay_epoch, decayed_learning_rate from it on.
  double learning_rate_at(int epoch) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

TrainConfig load_train_config(const std::filesystem::path& path);
/// LOWLIGHT_SEED and LOWLIGHT_OUTPUT_ROOT override seed and output_dir.
void apply_env_overrides(TrainConfig& config);

inline constexpr int kCheckpointVersion = 1;

/// Everything needed to resume training or run inference.
struct Checkpoint {
  Enhancer enhancer;
  std::optional<EdgeEstimator> edge_estimator;
  std::int64_t adam_steps = 0;
  std::vector<Tensor> adam_m;
  std::vector<Tensor> adam_v;
  int epoch = 0;
  std::int64_t step = 0;
  std::size_t cursor = 0;
  std::vector<std::size_t> order;
  TrainConfig config;
  std::string rng_state;
  int format_version = kCheckpointVersion;

  Archive to_archive() const;
  static Checkpoint from_archive(const Archive& archive);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

struct StepLog {
  int epoch = 0;
  std::int64_t step = 0;
  double learning_rate = 0.0;
  std::string sample_id;
  LossBreakdown loss;
};

nlohmann::json to_json(const StepLog& log);

/// Single-sample (batch size 1) training loop. The detector and the edge
/// estimator stay frozen; only the enhancer is updated.
class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<PairedSample> samples,
          std::shared_ptr<const RegionScoreProvider> detector, std::optional<EdgeEstimator> edges = std::nullopt);

  /// Continues from a checkpoint; samples must be the same list in the same order.
  static Trainer resume(const Checkpoint& checkpoint, std::vector<PairedSample> samples,
                        std::shared_ptr<const RegionScoreProvider> detector);

  Trainer(Trainer&&) = default;
  Trainer& operator=(Trainer&&) = delete;

  /// One optimizer step on the next sample of the current epoch.
  StepLog step();
  void run_epoch();
  /// Runs until config.epochs, writing checkpoints and the metrics log to
  /// config.output_dir when set.
  void run(const std::function<void(const StepLog&)>& on_step = {});

  Checkpoint checkpoint() const;

  int epoch() const noexcept { return epoch_; }
  std::int64_t global_step() const noexcept { return step_; }
  const TrainConfig& config() const noexcept { return config_; }
  const std::vector<StepLog>& log() const noexcept { return log_; }
  const Enhancer& enhancer() const noexcept { return *enhancer_; }
  const EdgeEstimator* edge_estimator() const noexcept { return edges_ ? &*edges_ : nullptr; }

  /// Enhancer input maps for an image under this run's toggles.
  AttentionMap attention_for(const Image& low) const;
  EdgeMap edges_for(const Image& low) const;

 private:
  void dump_divergence(const PairedSample& sample) const;

  TrainConfig config_;
  std::vector<PairedSample> samples_;
  std::shared_ptr<const RegionScoreProvider> detector_;
  std::optional<EdgeEstimator> edges_;
  std::unique_ptr<Enhancer> enhancer_;
  std::unique_ptr<Adam> adam_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
  std::int64_t step_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  std::vector<StepLog> log_;
};

/// 10·log10(1/MSE) with peak 1; identical images give the 99 dB cap.
double psnr(const Image& pred, const Image& target);

inline constexpr double kPsnrCap = 99.0;

/// Reflect-pads to multiples of 16, enhances with the checkpoint's
/// toggles, crops back and clamps to [0,1].
Image enhance_image(const Image& low, const Checkpoint& checkpoint);

struct EnhanceOptions {
  bool dump_attention = false;  // grayscale S under <out>/attention/
};

/// One PNG per input image (same stem). Returns the number written.
int enhance_command(const std::filesystem::path& input_dir, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& output_dir, const EnhanceOptions& options = {});

struct EvaluateOptions {
  std::filesystem::path pred_dir;
  std::filesystem::path gt_dir;
  std::optional<std::filesystem::path> annotation_dir;
  /// Precomputed detections in submission format; otherwise detector runs.
  std::optional<std::filesystem::path> detections_dir;
  std::shared_ptr<const RegionScoreProvider> detector;
  BoxExtractionParams box_params;
  std::optional<Recognizer> recognizer;
  std::optional<std::filesystem::path> write_detections_dir;
  double iou_threshold = 0.5;
  std::string split = "test";
};

struct MetricsReport {
  std::string split;
  int images = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<HMean> detection;
  std::optional<double> accuracy;

  nlohmann::json to_json() const;
};

MetricsReport evaluate_command(const EvaluateOptions& options);

/// PNG/JPEG files of a directory, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

struct DarkenCommandOptions {
  std::filesystem::path input_dir;
  std::filesystem::path output_dir;
  double scale_lo = 1.0 / 100.0;
  double scale_hi = 1.0 / 30.0;
  double sigma = 0.01;
  double gamma = 2.2;
  std::uint64_t seed = 0;
  std::string split = "train";
};

/// Writes low/, gt/, ann/ and manifest.json under output_dir.
DatasetManifest darken_command(const DarkenCommandOptions& options);

/// Annotation file for an image stem: "gt_<stem>.txt" or "<stem>.txt".
std::optional<std::filesystem::path> find_annotation(const std::filesystem::path& dir, const std::string& stem);

}  // namespace lowlight
