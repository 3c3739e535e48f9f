// lowlight: command-line front end (train / enhance / darken / evaluate).
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

#include "lowlight/error.hpp"
#include "lowlight/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lowlight;

namespace {

std::shared_ptr<const RegionScoreProvider> make_detector(const std::string& weights) {
  if (weights.empty()) {
    spdlog::warn("no --detector-weights given; using the luma-pool stand-in detector");
    return std::make_shared<LumaPoolProvider>();
  }
  return std::make_shared<RegionNet>(RegionNet::load(weights));
}

std::pair<double, double> parse_range(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ArgumentError("--scale-range expects a,b");
  try {
    return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw ArgumentError("--scale-range expects two numbers, got '" + s + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-light enhancement with text-aware losses"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  // train
  auto* train = app.add_subcommand("train", "Train the enhancer from a manifest");
  std::string config_path, manifest_path, detector_weights, train_out, resume_path;
  train->add_option("--config", config_path, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--manifest", manifest_path, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--detector-weights", detector_weights, "Frozen region-score network weights");
  train->add_option("--out", train_out, "Output directory (overrides config and env)");
  train->add_option("--resume", resume_path, "Continue from a checkpoint")->check(CLI::ExistingFile);

  // enhance
  auto* enh = app.add_subcommand("enhance", "Enhance every image of a directory");
  std::string ckpt, enh_in, enh_out;
  bool dump_attention = false;
  enh->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  enh->add_option("--in", enh_in, "Input directory")->required()->check(CLI::ExistingDirectory);
  enh->add_option("--out", enh_out, "Output directory")->required();
  enh->add_flag("--dump-attention", dump_attention, "Also write attention maps to <out>/attention/");

  // darken
  auto* dark = app.add_subcommand("darken", "Synthesize low-light pairs from bright images");
  DarkenCommandOptions dopt;
  std::string dark_in, dark_out, range;
  dark->add_option("--in", dark_in, "Bright images (+ annotations)")->required()->check(CLI::ExistingDirectory);
  dark->add_option("--out", dark_out, "Output root")->required();
  dark->add_option("--scale-range", range, "Exposure scale range a,b");
  dark->add_option("--sigma", dopt.sigma, "Read-noise sigma");
  dark->add_option("--gamma", dopt.gamma, "Gamma");
  dark->add_option("--seed", dopt.seed, "Seed");
  dark->add_option("--split", dopt.split, "Split tag written to the manifest");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Image quality and text detection metrics");
  std::string pred, gt, ann, report_path, det_dir, eval_detector, recognizer, write_det;
  std::string eval_split = "test";
  eval->add_option("--pred", pred, "Enhanced images")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--gt", gt, "Ground-truth images")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--ann", ann, "Annotation directory")->check(CLI::ExistingDirectory);
  eval->add_option("--report", report_path, "Write the JSON report here");
  eval->add_option("--det", det_dir, "Precomputed detections (res_<stem>.txt)")->check(CLI::ExistingDirectory);
  eval->add_option("--detector-weights", eval_detector, "Region-score network weights");
  eval->add_option("--recognizer", recognizer, "Command that reads a PNG path and prints the word");
  eval->add_option("--write-det", write_det, "Write extracted detections here");
  eval->add_option("--split", eval_split, "Split label for the report");

  // train-detector
  auto* tdet = app.add_subcommand("train-detector", "Fit the small region-score network on annotated images");
  std::string tdet_manifest, tdet_out, tdet_split = "train";
  RegionNetTrainConfig rcfg;
  tdet->add_option("--manifest", tdet_manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
  tdet->add_option("--out", tdet_out, "Weights file")->required();
  tdet->add_option("--steps", rcfg.steps, "Optimizer steps");
  tdet->add_option("--seed", rcfg.seed, "Seed");
  tdet->add_option("--split", tdet_split, "Manifest split");

  CLI11_PARSE(app, argc, argv);
  if (verbose) spdlog::set_level(spdlog::level::debug);

  try {
    if (*train) {
      TrainConfig cfg = load_train_config(config_path);
      apply_env_overrides(cfg);
      if (!train_out.empty()) cfg.output_dir = train_out;
      const auto manifest = DatasetManifest::load(manifest_path);
      auto samples = load_dataset(manifest, cfg.split);
      auto detector = cfg.toggles.text ? make_detector(detector_weights) : nullptr;
      std::optional<Trainer> trainer;
      if (resume_path.empty()) {
        trainer.emplace(cfg, std::move(samples), detector);
      } else {
        Checkpoint ck = Checkpoint::load(resume_path);
        if (!cfg.output_dir.empty()) ck.config.output_dir = cfg.output_dir;
        trainer.emplace(Trainer::resume(ck, std::move(samples), detector));
      }
      trainer->run([](const StepLog& s) {
        if (s.step % 50 == 0) {
          spdlog::info("epoch {} step {} lr {:g} total {:.5f} (l1 {:.5f} ms-ssim {:.5f} text {:.5f})", s.epoch,
                       s.step, s.learning_rate, s.loss.total, s.loss.l1, s.loss.ms_ssim, s.loss.text);
        }
      });
      spdlog::info("finished after {} steps", trainer->global_step());
    } else if (*enh) {
      const int n = enhance_command(enh_in, ckpt, enh_out, EnhanceOptions{dump_attention});
      spdlog::info("wrote {} images to {}", n, enh_out);
    } else if (*dark) {
      dopt.input_dir = dark_in;
      dopt.output_dir = dark_out;
      if (!range.empty()) std::tie(dopt.scale_lo, dopt.scale_hi) = parse_range(range);
      const auto m = darken_command(dopt);
      spdlog::info("darkened {} images into {}", m.entries.size(), dark_out);
    } else if (*eval) {
      EvaluateOptions o;
      o.pred_dir = pred;
      o.gt_dir = gt;
      o.split = eval_split;
      if (!ann.empty()) {
        o.annotation_dir = fs::path(ann);
        if (!det_dir.empty()) {
          o.detections_dir = fs::path(det_dir);
        } else {
          o.detector = make_detector(eval_detector);
        }
        if (!recognizer.empty()) o.recognizer = make_command_recognizer(recognizer);
        if (!write_det.empty()) o.write_detections_dir = fs::path(write_det);
      }
      const std::string json = evaluate_command(o).to_json().dump(2);
      if (report_path.empty()) {
        std::cout << json << '\n';
      } else {
        std::ofstream(report_path) << json << '\n';
        spdlog::info("report written to {}", report_path);
      }
    } else if (*tdet) {
      const auto manifest = DatasetManifest::load(tdet_manifest);
      std::vector<Image> images;
      std::vector<std::vector<TextBox>> boxes;
      for (auto& s : load_dataset(manifest, tdet_split)) {
        images.push_back(std::move(s.gt));
        boxes.push_back(std::move(s.boxes));
      }
      auto result = train_region_net(images, boxes, rcfg);
      result.net.save(tdet_out);
      spdlog::info("region net saved to {} (final loss {:.5f})", tdet_out,
                   result.loss_history.empty() ? 0.0 : result.loss_history.back());
    }
  } catch (const VersionError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    spdlog::error("{}", e.what());
    return 4;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("unexpected: {}", e.what());
    return 1;
  }
  return 0;
}
