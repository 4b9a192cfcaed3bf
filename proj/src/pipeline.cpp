#include "flowgate/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "flowgate/corpus.hpp"
#include "flowgate/rng.hpp"
#include "flowgate/synthesis.hpp"

namespace flowgate::pipeline {

namespace fs = std::filesystem;

namespace {

double parse_number(const std::string& text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first < last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw Error(ErrorCode::BadConfig, "not a number: '" + text + "'");
  return v;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(text);
  while (std::getline(in, cell, sep)) {
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

std::string tag(const NoisePoint& n, double ratio) {
  return "mu" + format_double(n.mu) + "_sigma" + format_double(n.sigma) + "_ratio" + format_double(ratio);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

// A previous checkpoint is reused only when it was produced by the same
// stage config and seed.
std::optional<checkpoint::Checkpoint> resumable(const fs::path& path, checkpoint::Stage stage,
                                                const KeyValues& config, std::uint64_t seed) {
  if (!fs::exists(path)) return std::nullopt;
  checkpoint::LoadOptions opts;
  opts.expected_stage = stage;
  try {
    auto ckpt = checkpoint::load(path, opts);
    if (ckpt.fingerprint == checkpoint::fingerprint(config) && ckpt.seed == seed) return ckpt;
  } catch (const Error&) {
  }
  return std::nullopt;
}

std::string history_note(const TrainHistory& h) {
  return "best_epoch=" + std::to_string(h.best_epoch) + ";best_holdout=" + format_double(h.best_holdout) +
         ";epochs_run=" + std::to_string(h.epochs.size());
}

ProgressFn epoch_logger(const LogFn& log, const std::string& stage) {
  if (!log) return {};
  return [log, stage](const EpochRecord& r) {
    log(stage + " epoch " + std::to_string(r.epoch) + " train " + format_double(r.train_loss) +
        " holdout " + format_double(r.holdout_loss));
  };
}

struct Data {
  std::vector<packet::EncodedPacket> train;
  std::vector<packet::EncodedPacket> test;
};

Data load_data(const PipelineConfig& cfg, const LogFn& log) {
  Data d;
  if (!cfg.train_csv.empty()) {
    d.train = dataset::read_dataset(cfg.train_csv);
    d.test = dataset::read_dataset(cfg.test_csv);
    return d;
  }
  if (!cfg.train_raw.empty()) {
    packet::PreprocessStats stats;
    d.train = packet::preprocess_path(cfg.train_raw, packet::Label::Normal, &stats);
    d.test = packet::preprocess_path(cfg.test_normal_raw, packet::Label::Normal, &stats);
    auto anomalies = packet::preprocess_path(cfg.test_anomaly_raw, packet::Label::Anomaly, &stats);
    d.test.insert(d.test.end(), std::make_move_iterator(anomalies.begin()),
                  std::make_move_iterator(anomalies.end()));
    if (log) {
      log("preprocess: " + std::to_string(stats.total) + " packets, kept " + std::to_string(stats.kept));
    }
  } else {
    auto c = corpus::make_synthetic_corpus(derive_seed(cfg.seed, "corpus"),
                                           cfg.corpus_train_normal + cfg.corpus_test_normal,
                                           cfg.corpus_test_anomaly);
    d.train.assign(std::make_move_iterator(c.normal.begin()),
                   std::make_move_iterator(c.normal.begin() + static_cast<std::ptrdiff_t>(cfg.corpus_train_normal)));
    d.test.assign(std::make_move_iterator(c.normal.begin() + static_cast<std::ptrdiff_t>(cfg.corpus_train_normal)),
                  std::make_move_iterator(c.normal.end()));
    d.test.insert(d.test.end(), std::make_move_iterator(c.anomaly.begin()),
                  std::make_move_iterator(c.anomaly.end()));
  }
  dataset::write_dataset(d.train, cfg.out_dir / "train.csv");
  dataset::write_dataset(d.test, cfg.out_dir / "test.csv");
  return d;
}

}  // namespace

std::vector<NoisePoint> parse_noise_grid(const std::string& text) {
  std::vector<NoisePoint> grid;
  for (const auto& item : split(text, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::BadConfig, "noise point needs mu:sigma, got '" + item + "'");
    NoisePoint p{parse_number(item.substr(0, colon)), parse_number(item.substr(colon + 1))};
    if (p.sigma < 0.0) throw Error(ErrorCode::NegativeSigma, "sigma = " + format_double(p.sigma));
    grid.push_back(p);
  }
  return grid;
}

std::string format_noise_grid(std::span<const NoisePoint> grid) {
  std::string s;
  for (const auto& p : grid) {
    if (!s.empty()) s += ',';
    s += format_double(p.mu) + ":" + format_double(p.sigma);
  }
  return s;
}

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number(item));
  return out;
}

PipelineConfig PipelineConfig::from_kv(const KeyValues& kv) {
  PipelineConfig c;
  c.train_csv = kv.get("train_csv", c.train_csv.string());
  c.test_csv = kv.get("test_csv", c.test_csv.string());
  c.train_raw = kv.get("train_raw", c.train_raw.string());
  c.test_normal_raw = kv.get("test_normal_raw", c.test_normal_raw.string());
  c.test_anomaly_raw = kv.get("test_anomaly_raw", c.test_anomaly_raw.string());
  c.corpus_train_normal = kv.get("corpus_train_normal", c.corpus_train_normal);
  c.corpus_test_normal = kv.get("corpus_test_normal", c.corpus_test_normal);
  c.corpus_test_anomaly = kv.get("corpus_test_anomaly", c.corpus_test_anomaly);
  c.out_dir = kv.get("out_dir", c.out_dir.string());
  if (kv.has("noise_grid")) c.noise_grid = parse_noise_grid(kv.get("noise_grid", ""));
  if (kv.has("ratios")) c.ratios = parse_ratios(kv.get("ratios", ""));
  c.bypass_flow = kv.get("bypass_flow", c.bypass_flow);
  c.seed = kv.get("seed", c.seed);
  c.repeats = kv.get("repeats", c.repeats);
  c.resume = kv.get("resume", c.resume);
  c.dump_scores = kv.get("dump_scores", c.dump_scores);
  c.extractor = extractor::ExtractorConfig::from_kv(kv.section("extractor."));
  c.flow = flow::FlowConfig::from_kv(kv.section("flow."));
  c.classifier = classifier::ClassifierConfig::from_kv(kv.section("classifier."));
  c.validate();
  return c;
}

KeyValues PipelineConfig::to_kv() const {
  KeyValues kv;
  kv.set("train_csv", train_csv.string());
  kv.set("test_csv", test_csv.string());
  kv.set("train_raw", train_raw.string());
  kv.set("test_normal_raw", test_normal_raw.string());
  kv.set("test_anomaly_raw", test_anomaly_raw.string());
  kv.set("corpus_train_normal", corpus_train_normal);
  kv.set("corpus_test_normal", corpus_test_normal);
  kv.set("corpus_test_anomaly", corpus_test_anomaly);
  kv.set("out_dir", out_dir.string());
  kv.set("noise_grid", format_noise_grid(noise_grid));
  std::string r;
  for (double v : ratios) r += (r.empty() ? "" : ",") + format_double(v);
  kv.set("ratios", r);
  kv.set("bypass_flow", bypass_flow);
  kv.set("seed", seed);
  kv.set("repeats", repeats);
  kv.set("resume", resume);
  kv.set("dump_scores", dump_scores);
  kv.merge(extractor.to_kv(), "extractor.");
  kv.merge(flow.to_kv(), "flow.");
  kv.merge(classifier.to_kv(), "classifier.");
  return kv;
}

void PipelineConfig::validate() const {
  if (noise_grid.empty()) throw Error(ErrorCode::BadConfig, "noise grid is empty");
  if (ratios.empty()) throw Error(ErrorCode::BadConfig, "no pseudo:normal ratios");
  for (double r : ratios) {
    if (!(r > 0.0)) throw Error(ErrorCode::BadConfig, "ratio must be positive");
  }
  if (repeats < 1) throw Error(ErrorCode::BadConfig, "repeats must be at least 1");
  if (!train_csv.empty() && test_csv.empty()) throw Error(ErrorCode::BadConfig, "train_csv needs test_csv");
  if (!train_raw.empty() && (test_normal_raw.empty() || test_anomaly_raw.empty())) {
    throw Error(ErrorCode::BadConfig, "train_raw needs test_normal_raw and test_anomaly_raw");
  }
  if (flow.dim != extractor.latent_dim || classifier.input_dim != extractor.latent_dim) {
    throw Error(ErrorCode::BadConfig, "flow and classifier widths must equal the latent width");
  }
  extractor.validate();
  flow.validate();
  classifier.validate();
}

const RunResult& PipelineResult::best() const {
  if (runs.empty()) throw Error(ErrorCode::EmptyInput, "pipeline produced no runs");
  return *std::max_element(runs.begin(), runs.end(),
                           [](const RunResult& a, const RunResult& b) { return a.report.auroc < b.report.auroc; });
}

InferenceModel load_inference(const fs::path& extractor_ckpt, const fs::path& classifier_ckpt,
                              checkpoint::LoadTrace* trace) {
  InferenceModel m{extractor::Encoder::load(extractor_ckpt, trace),
                   classifier::ClassifierModel::load(classifier_ckpt, trace)};
  if (m.encoder.latent_dim() != m.classifier.config().input_dim) {
    throw Error(ErrorCode::CheckpointMismatch,
                "encoder emits " + std::to_string(m.encoder.latent_dim()) + " dims, classifier expects " +
                    std::to_string(m.classifier.config().input_dim));
  }
  return m;
}

std::vector<metrics::ScoredSample> infer(const InferenceModel& model,
                                         std::span<const packet::EncodedPacket> packets) {
  std::vector<metrics::ScoredSample> out;
  if (packets.empty()) return out;
  const nn::Tensor z = model.encoder.encode(dataset::to_matrix(packets));
  const Eigen::VectorXd scores = model.classifier.score(z);
  out.reserve(packets.size());
  for (std::size_t i = 0; i < packets.size(); ++i) {
    out.push_back({scores(static_cast<Eigen::Index>(i)), packets[i].label, packets[i].source});
  }
  return out;
}

std::vector<metrics::ScoredSample> infer(const fs::path& extractor_ckpt, const fs::path& classifier_ckpt,
                                         std::span<const packet::EncodedPacket> packets,
                                         checkpoint::LoadTrace* trace) {
  return infer(load_inference(extractor_ckpt, classifier_ckpt, trace), packets);
}

classifier::TrainedClassifier train_classifier_guarded(const dataset::LatentSet& normals, const nn::Tensor& pseudo,
                                                       const classifier::ClassifierConfig& cfg,
                                                       std::uint64_t seed, const ProgressFn& progress) {
  dataset::require_normal_only(normals, "train_classifier");
  return classifier::train_classifier(normals.z, pseudo, cfg, seed, progress);
}

std::string summary_table(std::span<const RunResult> runs) {
  std::map<std::tuple<double, double, double>, std::vector<double>> groups;
  std::vector<std::tuple<double, double, double>> order;
  for (const auto& r : runs) {
    const auto key = std::make_tuple(r.noise.mu, r.noise.sigma, r.ratio);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(r.report.auroc);
  }
  std::ostringstream out;
  out << "mu,sigma,ratio,runs,auroc_mean,auroc_std\n";
  for (const auto& key : order) {
    const auto& v = groups[key];
    double mean = 0.0;
    for (double a : v) mean += a;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double a : v) var += (a - mean) * (a - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    out << format_double(std::get<0>(key)) << "," << format_double(std::get<1>(key)) << ","
        << format_double(std::get<2>(key)) << "," << v.size() << "," << format_double(mean) << ","
        << format_double(sd) << "\n";
  }
  return out.str();
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const LogFn& log) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "pipeline.cfg", cfg.to_kv().to_text());

  const Data data = run_stage("preprocess", [&] { return load_data(cfg, log); });
  run_stage("train_extractor", [&] { dataset::require_normal_only(data.train, "train_extractor"); });
  if (log) log("data: " + std::to_string(data.train.size()) + " train, " + std::to_string(data.test.size()) + " test");

  PipelineResult result;
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    const std::uint64_t run_seed = rep == 0 ? cfg.seed : derive_seed(cfg.seed, "repeat" + std::to_string(rep));
    const fs::path dir = cfg.out_dir / ("seed-" + std::to_string(run_seed));
    fs::create_directories(dir);

    // Stage 1: feature extractor.
    // A stage may only resume while everything upstream of it resumed too.
    bool reuse = cfg.resume;
    const fs::path fx_path = dir / "extractor.ckpt";
    const std::uint64_t fx_seed = derive_seed(run_seed, "extractor");
    const extractor::FeatureExtractor fx = run_stage("train_extractor", [&] {
      if (reuse) {
        if (auto ckpt = resumable(fx_path, checkpoint::Stage::Extractor, cfg.extractor.to_kv(), fx_seed)) {
          if (log) log("train_extractor: resumed from " + fx_path.string());
          return extractor::FeatureExtractor::from_checkpoint(*ckpt);
        }
      }
      reuse = false;
      auto trained = extractor::train_extractor(data.train, cfg.extractor, fx_seed, epoch_logger(log, "extractor"));
      checkpoint::save(trained.model.to_checkpoint(fx_seed, history_note(trained.history)), fx_path);
      return trained.model;
    });

    const dataset::LatentSet normals = run_stage("encode", [&] {
      dataset::LatentSet s{extractor::encode_all(dataset::to_matrix(data.train), fx.encoder()), {}};
      for (const auto& p : data.train) s.labels.push_back(p.label);
      dataset::write_latents(s, dir / "train_latents.csv");
      return s;
    });

    // Stage 2: flow on the normal latents.
    const fs::path flow_path = dir / "flow.ckpt";
    const std::uint64_t flow_seed = derive_seed(run_seed, "flow");
    const flow::FlowModel flow_model = run_stage("train_flow", [&] {
      dataset::require_normal_only(normals, "train_flow");
      if (reuse) {
        if (auto ckpt = resumable(flow_path, checkpoint::Stage::Flow, cfg.flow.to_kv(), flow_seed)) {
          if (log) log("train_flow: resumed from " + flow_path.string());
          return flow::FlowModel::from_checkpoint(*ckpt);
        }
      }
      reuse = false;
      auto trained = flow::train_flow(normals.z, cfg.flow, flow_seed, epoch_logger(log, "flow"));
      checkpoint::save(trained.model.to_checkpoint(flow_seed, history_note(trained.history)), flow_path);
      return trained.model;
    });

    // Stages 3-5 per (noise, ratio).
    for (const auto& noise : cfg.noise_grid) {
      for (double ratio : cfg.ratios) {
        const std::string name = tag(noise, ratio);
        const nn::Tensor pseudo = run_stage("synthesize", [&] {
          synthesis::SynthesisConfig sc{ratio, ratio > 1.0, cfg.bypass_flow};
          synthesis::NoiseSpec spec{noise.mu, noise.sigma, derive_seed(run_seed, "synthesis:" + name)};
          return synthesis::synthesize(flow_model, normals.z, spec, sc);
        });

        const fs::path clf_path = dir / ("classifier_" + name + ".ckpt");
        const std::uint64_t clf_seed = derive_seed(run_seed, "classifier:" + name);
        run_stage("train_classifier", [&] {
          if (reuse && resumable(clf_path, checkpoint::Stage::Classifier, cfg.classifier.to_kv(), clf_seed)) {
            if (log) log("train_classifier: resumed from " + clf_path.string());
            return;
          }
          auto trained = train_classifier_guarded(normals, pseudo, cfg.classifier, clf_seed);
          checkpoint::save(trained.model.to_checkpoint(clf_seed, history_note(trained.history)), clf_path);
        });

        const auto scored = run_stage("infer", [&] {
          const InferenceModel model = load_inference(fx_path, clf_path);
          result.inference_parameters = model.parameter_count();
          result.training_parameters =
              fx.parameter_count() + flow_model.parameter_count() + model.classifier.parameter_count();
          return infer(model, data.test);
        });

        RunResult run{rep, run_seed, noise, ratio, {}, dir / ("report_" + name + ".txt")};
        run.report = run_stage("evaluate", [&] {
          auto report = metrics::evaluate(scored);
          metrics::write_report(report, run.report_path);
          if (cfg.dump_scores) metrics::write_scores(scored, dir / ("scores_" + name + ".csv"));
          return report;
        });
        if (log) log("evaluate " + name + ": auroc " + format_double(run.report.auroc));
        result.runs.push_back(std::move(run));
      }
    }
  }

  // Noise table: one row per (mu, sigma) at the first ratio.
  // Ratio table: one row per ratio, one column per noise point. Both average repeats.
  auto mean_auroc = [&](const NoisePoint& n, double ratio) {
    double sum = 0.0;
    int count = 0;
    for (const auto& r : result.runs) {
      if (r.noise == n && r.ratio == ratio) {
        sum += r.report.auroc;
        ++count;
      }
    }
    return sum / count;
  };
  std::ostringstream noise_table;
  noise_table << "mu,sigma,auroc\n";
  for (const auto& n : cfg.noise_grid) {
    noise_table << format_double(n.mu) << "," << format_double(n.sigma) << ","
                << format_double(mean_auroc(n, cfg.ratios.front())) << "\n";
  }
  std::ostringstream ratio_table;
  ratio_table << "ratio";
  for (const auto& n : cfg.noise_grid) ratio_table << ",auroc(" << format_double(n.mu) << ";" << format_double(n.sigma) << ")";
  ratio_table << "\n";
  for (double ratio : cfg.ratios) {
    ratio_table << format_double(ratio);
    for (const auto& n : cfg.noise_grid) ratio_table << "," << format_double(mean_auroc(n, ratio));
    ratio_table << "\n";
  }
  result.noise_table = noise_table.str();
  result.ratio_table = ratio_table.str();
  write_text(cfg.out_dir / "noise_table.csv", result.noise_table);
  write_text(cfg.out_dir / "ratio_table.csv", result.ratio_table);
  write_text(cfg.out_dir / "summary.csv", summary_table(result.runs));
  return result;
}

}  // namespace flowgate::pipeline
