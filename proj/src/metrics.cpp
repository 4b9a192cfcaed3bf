#include "flowgate/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "flowgate/config.hpp"
#include "flowgate/dataset.hpp"
#include "flowgate/error.hpp"

namespace flowgate::metrics {

double auroc(std::span<const LabeledScore> scores) {
  std::size_t n_pos = 0;
  for (const auto& s : scores) n_pos += s.positive ? 1 : 0;
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw Error(ErrorCode::OneClassOnly, "AUROC needs at least one positive and one negative");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a].score < scores[b].score; });

  // Ranks are 1-based; a tie group spanning ranks [i+1, j] gets (i+1+j)/2.
  // Twice the rank sum stays integral, so the result matches pair counting exactly.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]].score == scores[order[i]].score) ++j;
    const std::uint64_t twice_avg_rank = (i + 1) + j;
    for (std::size_t k = i; k < j; ++k) {
      if (scores[order[k]].positive) twice_rank_sum += twice_avg_rank;
    }
    i = j;
  }
  const std::uint64_t twice_min = static_cast<std::uint64_t>(n_pos) * (n_pos + 1);
  const double wins = static_cast<double>(twice_rank_sum - twice_min) / 2.0;
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

Histogram histogram(std::span<const double> scores) {
  Histogram h{};
  for (double s : scores) {
    const double clamped = std::clamp(s, 0.0, 1.0);
    auto bin = static_cast<std::size_t>(clamped * static_cast<double>(kHistogramBins));
    h[std::min(bin, kHistogramBins - 1)] += 1;
  }
  return h;
}

bool EvalReport::operator==(const EvalReport& o) const {
  return auroc == o.auroc && n_pos == o.n_pos && n_neg == o.n_neg && hist_pos == o.hist_pos &&
         hist_neg == o.hist_neg;
}

EvalReport evaluate(std::span<const ScoredSample> scored, bool keep_samples) {
  std::vector<LabeledScore> labeled;
  std::vector<double> pos, neg;
  labeled.reserve(scored.size());
  for (const auto& s : scored) {
    if (!s.label) {
      throw Error(ErrorCode::OneClassOnly, "evaluation needs a label on every sample");
    }
    const bool positive = *s.label == packet::Label::Anomaly;
    labeled.push_back({s.score, positive});
    (positive ? pos : neg).push_back(s.score);
  }
  EvalReport r;
  r.auroc = auroc(labeled);
  r.n_pos = pos.size();
  r.n_neg = neg.size();
  r.hist_pos = histogram(pos);
  r.hist_neg = histogram(neg);
  if (keep_samples) r.samples.assign(scored.begin(), scored.end());
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  out << "auroc: " << format_double(r.auroc) << "\n";
  out << "n_pos: " << r.n_pos << "\n";
  out << "n_neg: " << r.n_neg << "\n";
  out << "bins: " << kHistogramBins << "\n";
  out << "bin,lower,upper,normal,anomaly\n";
  for (std::size_t i = 0; i < kHistogramBins; ++i) {
    const double lo = static_cast<double>(i) / kHistogramBins;
    const double hi = static_cast<double>(i + 1) / kHistogramBins;
    out << i << "," << format_double(lo) << "," << format_double(hi) << "," << r.hist_neg[i] << ","
        << r.hist_pos[i] << "\n";
  }
  return out.str();
}

EvalReport parse_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  KeyValues header;
  while (std::getline(in, line)) {
    if (line.rfind("bin,", 0) == 0) break;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    header.set(line.substr(0, colon), line.substr(colon + 1 + (colon + 1 < line.size() && line[colon + 1] == ' ')));
  }
  EvalReport r;
  r.auroc = header.get("auroc", 0.0);
  r.n_pos = header.get("n_pos", std::size_t{0});
  r.n_neg = header.get("n_neg", std::size_t{0});
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw Error(ErrorCode::MalformedRow, "bad histogram row '" + line + "'");
    const std::size_t bin = std::stoul(cells[0]);
    if (bin >= kHistogramBins) throw Error(ErrorCode::MalformedRow, "histogram bin out of range");
    r.hist_neg[bin] = std::stoul(cells[3]);
    r.hist_pos[bin] = std::stoul(cells[4]);
    ++rows;
  }
  if (rows != kHistogramBins) throw Error(ErrorCode::MalformedRow, "report histogram incomplete");
  return r;
}

void write_report(const EvalReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << format_report(r);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write report " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open report " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_report(ss.str());
}

void write_scores(std::span<const ScoredSample> scored, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "index,score,label,file\n";
  for (const auto& s : scored) {
    out << s.source.index << "," << format_double(s.score) << "," << dataset::label_cell(s.label) << ","
        << s.source.file << "\n";
  }
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write scores " + path.string());
}

std::vector<ScoredSample> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open scores " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<ScoredSample> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t p0 = line.find(','), p1 = line.find(',', p0 + 1), p2 = line.find(',', p1 + 1);
    if (p0 == std::string::npos || p1 == std::string::npos || p2 == std::string::npos) {
      throw Error(ErrorCode::MalformedRow, "bad score row '" + line + "'");
    }
    ScoredSample s;
    s.source.index = std::stoull(line.substr(0, p0));
    const std::string score = line.substr(p0 + 1, p1 - p0 - 1);
    std::from_chars(score.data(), score.data() + score.size(), s.score);
    s.label = dataset::parse_label_cell(line.substr(p1 + 1, p2 - p1 - 1));
    s.source.file = line.substr(p2 + 1);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace flowgate::metrics
