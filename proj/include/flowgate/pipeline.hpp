#pragma once

// End-to-end orchestration: data -> extractor -> flow -> pseudo-anomalies ->
// classifier -> two-module inference -> evaluation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowgate/checkpoint.hpp"
#include "flowgate/classifier.hpp"
#include "flowgate/config.hpp"
#include "flowgate/dataset.hpp"
#include "flowgate/error.hpp"
#include "flowgate/extractor.hpp"
#include "flowgate/flow.hpp"
#include "flowgate/metrics.hpp"
#include "flowgate/packet.hpp"

namespace flowgate::pipeline {

struct NoisePoint {
  double mu = 0.0;
  double sigma = 0.0;
  bool operator==(const NoisePoint&) const = default;
};

/// "mu:sigma,mu:sigma,..."
std::vector<NoisePoint> parse_noise_grid(const std::string& text);
std::string format_noise_grid(std::span<const NoisePoint> grid);
/// "0.5,1,2"
std::vector<double> parse_ratios(const std::string& text);

struct PipelineConfig {
  // Input, in order of precedence: CSV datasets, raw captures, generated corpus.
  std::filesystem::path train_csv;
  std::filesystem::path test_csv;
  std::filesystem::path train_raw;         // normal captures
  std::filesystem::path test_normal_raw;
  std::filesystem::path test_anomaly_raw;
  std::size_t corpus_train_normal = 10000;
  std::size_t corpus_test_normal = 1000;
  std::size_t corpus_test_anomaly = 1000;

  std::filesystem::path out_dir = "flowgate-run";
  std::vector<NoisePoint> noise_grid = {{-9, 5}, {-25, 5}, {-100, 5}, {0, 1}};
  std::vector<double> ratios = {0.5};
  bool bypass_flow = false;
  std::uint64_t seed = 0;
  int repeats = 1;
  bool resume = false;
  bool dump_scores = true;

  extractor::ExtractorConfig extractor;
  flow::FlowConfig flow;
  classifier::ClassifierConfig classifier;

  /// Flat keys; stage settings live under "extractor.", "flow.", "classifier.".
  static PipelineConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
  void validate() const;
};

using LogFn = std::function<void(const std::string&)>;

struct RunResult {
  int repeat = 0;
  std::uint64_t seed = 0;
  NoisePoint noise;
  double ratio = 0.5;
  metrics::EvalReport report;
  std::filesystem::path report_path;
};

struct PipelineResult {
  std::vector<RunResult> runs;
  std::size_t training_parameters = 0;   // extractor + flow + classifier
  std::size_t inference_parameters = 0;  // encoder + classifier
  std::string noise_table;               // AUROC per (mu, sigma)
  std::string ratio_table;               // AUROC per pseudo:normal ratio

  /// Highest AUROC across the runs.
  const RunResult& best() const;
};

PipelineResult run_pipeline(const PipelineConfig& cfg, const LogFn& log = {});

/// Encoder plus classifier: everything inference needs and nothing else.
struct InferenceModel {
  extractor::Encoder encoder;
  classifier::ClassifierModel classifier;

  std::size_t parameter_count() const { return encoder.parameter_count() + classifier.parameter_count(); }
};

/// Reads only the "encoder" and "classifier" tables. CheckpointMismatch when
/// the latent widths disagree.
InferenceModel load_inference(const std::filesystem::path& extractor_ckpt,
                              const std::filesystem::path& classifier_ckpt,
                              checkpoint::LoadTrace* trace = nullptr);

std::vector<metrics::ScoredSample> infer(const InferenceModel& model,
                                         std::span<const packet::EncodedPacket> packets);
std::vector<metrics::ScoredSample> infer(const std::filesystem::path& extractor_ckpt,
                                         const std::filesystem::path& classifier_ckpt,
                                         std::span<const packet::EncodedPacket> packets,
                                         checkpoint::LoadTrace* trace = nullptr);

/// Classifier training that refuses labeled anomalies among the normals.
classifier::TrainedClassifier train_classifier_guarded(const dataset::LatentSet& normals,
                                                       const nn::Tensor& pseudo,
                                                       const classifier::ClassifierConfig& cfg,
                                                       std::uint64_t seed,
                                                       const ProgressFn& progress = {});

/// Runs `fn`, re-raising library errors tagged with the stage name.
template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  }
}

/// Mean and sample standard deviation of AUROC per (noise, ratio) over repeats.
std::string summary_table(std::span<const RunResult> runs);

}  // namespace flowgate::pipeline
