#pragma once

// Detection metrics: rank-based AUROC, per-class score histograms and the
// evaluation report.

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowgate/packet.hpp"

namespace flowgate::metrics {

/// A positive label marks an anomaly.
struct LabeledScore {
  double score = 0.0;
  bool positive = false;
};

/// P(random positive outranks random negative), ties counted 1/2, through
/// rank sums with average ranks.
double auroc(std::span<const LabeledScore> scores);

inline constexpr std::size_t kHistogramBins = 50;
using Histogram = std::array<std::size_t, kHistogramBins>;

/// 50 equal-width bins over [0, 1]; a score of exactly 1 lands in the last bin.
Histogram histogram(std::span<const double> scores);

struct ScoredSample {
  double score = 0.0;
  std::optional<packet::Label> label;
  packet::SourceId source;
};

struct EvalReport {
  double auroc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  Histogram hist_pos{};
  Histogram hist_neg{};
  std::vector<ScoredSample> samples;

  bool operator==(const EvalReport& o) const;
};

/// Requires a label on every sample and both classes present.
EvalReport evaluate(std::span<const ScoredSample> scored, bool keep_samples = false);

/// "key: value" lines followed by a histogram table.
std::string format_report(const EvalReport& r);
EvalReport parse_report(const std::string& text);
void write_report(const EvalReport& r, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

/// CSV "index,score,label,file".
void write_scores(std::span<const ScoredSample> scored, const std::filesystem::path& path);
std::vector<ScoredSample> read_scores(const std::filesystem::path& path);

}  // namespace flowgate::metrics
