// flowgate command-line tool. Every stage reads and writes plain files so
// the pipeline can be run one step at a time or all at once.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "flowgate/checkpoint.hpp"
#include "flowgate/classifier.hpp"
#include "flowgate/config.hpp"
#include "flowgate/corpus.hpp"
#include "flowgate/dataset.hpp"
#include "flowgate/error.hpp"
#include "flowgate/extractor.hpp"
#include "flowgate/flow.hpp"
#include "flowgate/metrics.hpp"
#include "flowgate/packet.hpp"
#include "flowgate/pipeline.hpp"
#include "flowgate/synthesis.hpp"

namespace fs = std::filesystem;
using namespace flowgate;

namespace {

// Config file + "--set key=value" overrides + dedicated flags, in that order.
struct Settings {
  std::string config_file;
  std::vector<std::string> overrides;
  bool verbose = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "Key-value config file")->check(CLI::ExistingFile);
    app->add_option("--set", overrides, "Override a config key (key=value), repeatable");
    app->add_flag("-v,--verbose", verbose, "Log per-epoch progress to stderr");
  }

  KeyValues resolve() const {
    KeyValues kv = config_file.empty() ? KeyValues{} : KeyValues::load(config_file);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::BadConfig, "--set expects key=value, got '" + o + "'");
      kv.set(o.substr(0, eq), o.substr(eq + 1));
    }
    return kv;
  }

  /// Stage keys may be written bare or under "<stage>." in a pipeline config.
  KeyValues stage(const std::string& prefix) const {
    KeyValues all = resolve();
    KeyValues kv = all;
    kv.merge(all.section(prefix + "."));
    return kv;
  }

  ProgressFn progress(const std::string& stage) const {
    if (!verbose) return {};
    return [stage](const EpochRecord& r) {
      std::cerr << stage << " epoch " << r.epoch << " train " << r.train_loss << " holdout " << r.holdout_loss
                << "\n";
    };
  }
};

struct OptimFlags {
  std::optional<int> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> lr;

  void attach(CLI::App* app) {
    app->add_option("--epochs", epochs, "Maximum training epochs");
    app->add_option("--batch", batch, "Minibatch size");
    app->add_option("--lr", lr, "Adam learning rate");
  }
  void apply(KeyValues& kv) const {
    if (epochs) kv.set("epochs", *epochs);
    if (batch) kv.set("batch_size", static_cast<std::uint64_t>(*batch));
    if (lr) kv.set("lr", *lr);
  }
};

std::optional<packet::Label> parse_label_flag(const std::string& s) {
  if (s == "none") return std::nullopt;
  return dataset::parse_label_cell(s);
}

std::string metadata_of(const TrainHistory& h) {
  return "best_epoch=" + std::to_string(h.best_epoch) + ";best_holdout=" + format_double(h.best_holdout);
}

dataset::LatentSet encode_dataset(const fs::path& extractor_ckpt, const fs::path& data) {
  const auto packets = dataset::read_dataset(data);
  const auto encoder = extractor::Encoder::load(extractor_ckpt);
  dataset::LatentSet set{encoder.encode(dataset::to_matrix(packets)), {}};
  for (const auto& p : packets) set.labels.push_back(p.label);
  return set;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowgate: semi-supervised anomalous traffic detection"};
  app.require_subcommand(1);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Clean and encode capture files into a CSV dataset");
  std::string pre_in, pre_out, pre_label = "none";
  pre->add_option("--in", pre_in, "Capture file or directory")->required()->check(CLI::ExistingPath);
  pre->add_option("--out", pre_out, "Output CSV")->required();
  pre->add_option("--label", pre_label, "0, 1 or none")->check(CLI::IsMember({"0", "1", "none"}));

  // train-extractor
  auto* tx = app.add_subcommand("train-extractor", "Train the adversarial feature extractor");
  std::string tx_data, tx_out;
  std::uint64_t tx_seed = 0;
  Settings tx_set;
  OptimFlags tx_opt;
  tx->add_option("--data", tx_data, "Training CSV (normal rows only)")->required()->check(CLI::ExistingFile);
  tx->add_option("--out", tx_out, "Checkpoint path")->required();
  tx->add_option("--seed", tx_seed, "Seed");
  tx_set.attach(tx);
  tx_opt.attach(tx);

  // train-flow
  auto* tf = app.add_subcommand("train-flow", "Train the normalizing flow on encoded normal traffic");
  std::string tf_extractor, tf_data, tf_out;
  std::uint64_t tf_seed = 0;
  Settings tf_set;
  OptimFlags tf_opt;
  tf->add_option("--latents-from", tf_extractor, "Extractor checkpoint")->required()->check(CLI::ExistingFile);
  tf->add_option("--data", tf_data, "Training CSV")->required()->check(CLI::ExistingFile);
  tf->add_option("--out", tf_out, "Checkpoint path")->required();
  tf->add_option("--seed", tf_seed, "Seed");
  tf_set.attach(tf);
  tf_opt.attach(tf);

  // synthesize
  auto* sy = app.add_subcommand("synthesize", "Generate pseudo-anomaly latents");
  std::string sy_flow, sy_extractor, sy_data, sy_out, sy_normals_out;
  double sy_mu = 0.0, sy_sigma = 0.0, sy_ratio = 0.5;
  std::uint64_t sy_seed = 0;
  bool sy_oversample = false, sy_bypass = false;
  sy->add_option("--flow", sy_flow, "Flow checkpoint")->required()->check(CLI::ExistingFile);
  sy->add_option("--extractor", sy_extractor, "Extractor checkpoint")->required()->check(CLI::ExistingFile);
  sy->add_option("--data", sy_data, "Normal training CSV")->required()->check(CLI::ExistingFile);
  sy->add_option("--mu", sy_mu, "Noise mean")->required();
  sy->add_option("--sigma", sy_sigma, "Noise standard deviation")->required();
  sy->add_option("--ratio", sy_ratio, "Pseudo-anomalies per normal");
  sy->add_option("--seed", sy_seed, "Seed");
  sy->add_option("--out", sy_out, "Pseudo-anomaly latent file")->required();
  sy->add_option("--normals-out", sy_normals_out, "Also write the encoded normals here");
  sy->add_flag("--allow-oversampling", sy_oversample, "Permit ratio > 1 (ablation)");
  sy->add_flag("--bypass-flow", sy_bypass, "Add noise to z directly (ablation)");

  // train-classifier
  auto* tc = app.add_subcommand("train-classifier", "Train the normal vs pseudo-anomaly classifier");
  std::string tc_normals, tc_pseudo, tc_out;
  std::uint64_t tc_seed = 0;
  Settings tc_set;
  OptimFlags tc_opt;
  tc->add_option("--normals", tc_normals, "Normal latent file")->required()->check(CLI::ExistingFile);
  tc->add_option("--pseudo", tc_pseudo, "Pseudo-anomaly latent file")->required()->check(CLI::ExistingFile);
  tc->add_option("--out", tc_out, "Checkpoint path")->required();
  tc->add_option("--seed", tc_seed, "Seed");
  tc_set.attach(tc);
  tc_opt.attach(tc);

  // infer
  auto* in = app.add_subcommand("infer", "Score packets with encoder + classifier");
  std::string in_extractor, in_classifier, in_data, in_out, in_report;
  in->add_option("--extractor", in_extractor, "Extractor checkpoint")->required()->check(CLI::ExistingFile);
  in->add_option("--classifier", in_classifier, "Classifier checkpoint")->required()->check(CLI::ExistingFile);
  in->add_option("--data", in_data, "CSV dataset to score")->required()->check(CLI::ExistingFile);
  in->add_option("--out", in_out, "Per-sample score CSV")->required();
  in->add_option("--report", in_report, "Also evaluate (labels required) and write the report here");

  // eval
  auto* ev = app.add_subcommand("eval", "AUROC and histograms from a score CSV");
  std::string ev_scores, ev_out;
  ev->add_option("--scores", ev_scores, "Per-sample score CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "Report path (stdout when omitted)");

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "Run every stage end to end");
  Settings pl_set;
  std::optional<std::string> pl_out, pl_grid, pl_ratios, pl_train, pl_test;
  std::optional<std::uint64_t> pl_seed;
  std::optional<int> pl_repeats, pl_fx_epochs;
  bool pl_resume = false, pl_bypass = false;
  pl_set.attach(pl);
  pl->add_option("--out-dir", pl_out, "Output directory");
  pl->add_option("--seed", pl_seed, "Global seed");
  pl->add_option("--noise-grid", pl_grid, "mu:sigma list, e.g. -9:5,-25:5");
  pl->add_option("--ratios", pl_ratios, "Pseudo:normal ratios, e.g. 0.5,1,2");
  pl->add_option("--repeats", pl_repeats, "Independent seeds to run");
  pl->add_option("--train-csv", pl_train, "Normal training CSV");
  pl->add_option("--test-csv", pl_test, "Labeled test CSV");
  pl->add_option("--extractor-epochs", pl_fx_epochs, "Extractor epoch cap");
  pl->add_flag("--resume", pl_resume, "Reuse matching checkpoints");
  pl->add_flag("--bypass-flow", pl_bypass, "Ablation: perturb z without the flow");

  // make-corpus
  auto* mc = app.add_subcommand("make-corpus", "Write a synthetic normal/anomaly CSV pair");
  std::uint64_t mc_seed = 0;
  std::size_t mc_normal = 10000, mc_anomaly = 1000;
  std::string mc_out_normal, mc_out_anomaly;
  mc->add_option("--seed", mc_seed, "Seed");
  mc->add_option("--normal", mc_normal, "Normal packet count");
  mc->add_option("--anomaly", mc_anomaly, "Anomaly packet count");
  mc->add_option("--out-normal", mc_out_normal, "Normal CSV")->required();
  mc->add_option("--out-anomaly", mc_out_anomaly, "Anomaly CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre) {
      packet::PreprocessStats stats;
      const auto packets = packet::preprocess_path(pre_in, parse_label_flag(pre_label), &stats);
      dataset::write_dataset(packets, pre_out);
      std::cout << "total " << stats.total << " kept " << stats.kept << " dns " << stats.dns << " arp " << stats.arp
                << " tcp_control " << stats.tcp_control << " unparseable " << stats.unparseable << "\n";
    } else if (*tx) {
      KeyValues kv = tx_set.stage("extractor");
      tx_opt.apply(kv);
      const auto cfg = extractor::ExtractorConfig::from_kv(kv);
      const auto packets = dataset::read_dataset(tx_data);
      dataset::require_normal_only(packets, "train_extractor");
      const auto trained = extractor::train_extractor(packets, cfg, tx_seed, tx_set.progress("extractor"));
      checkpoint::save(trained.model.to_checkpoint(tx_seed, metadata_of(trained.history)), tx_out);
      std::cout << "best_epoch " << trained.history.best_epoch << " holdout " << trained.history.best_holdout << "\n";
    } else if (*tf) {
      KeyValues kv = tf_set.stage("flow");
      tf_opt.apply(kv);
      const auto cfg = flow::FlowConfig::from_kv(kv);
      const auto latents = encode_dataset(tf_extractor, tf_data);
      dataset::require_normal_only(latents, "train_flow");
      const auto trained = flow::train_flow(latents.z, cfg, tf_seed, tf_set.progress("flow"));
      checkpoint::save(trained.model.to_checkpoint(tf_seed, metadata_of(trained.history)), tf_out);
      std::cout << "best_epoch " << trained.history.best_epoch << " nll " << trained.history.best_holdout << "\n";
    } else if (*sy) {
      checkpoint::LoadOptions opts;
      opts.expected_stage = checkpoint::Stage::Flow;
      const auto flow_model = flow::FlowModel::from_checkpoint(checkpoint::load(sy_flow, opts));
      const auto normals = encode_dataset(sy_extractor, sy_data);
      dataset::require_normal_only(normals, "synthesize");
      const synthesis::SynthesisConfig cfg{sy_ratio, sy_oversample, sy_bypass};
      const synthesis::NoiseSpec spec{sy_mu, sy_sigma, sy_seed};
      dataset::LatentSet pseudo{synthesis::synthesize(flow_model, normals.z, spec, cfg), {}};
      pseudo.labels.assign(pseudo.size(), std::nullopt);
      dataset::write_latents(pseudo, sy_out);
      if (!sy_normals_out.empty()) dataset::write_latents(normals, sy_normals_out);
      std::cout << "pseudo " << pseudo.size() << " from " << normals.size() << " normals\n";
    } else if (*tc) {
      KeyValues kv = tc_set.stage("classifier");
      tc_opt.apply(kv);
      const auto cfg = classifier::ClassifierConfig::from_kv(kv);
      const auto normals = dataset::read_latents(tc_normals);
      const auto pseudo = dataset::read_latents(tc_pseudo);
      const auto trained =
          pipeline::train_classifier_guarded(normals, pseudo.z, cfg, tc_seed, tc_set.progress("classifier"));
      checkpoint::save(trained.model.to_checkpoint(tc_seed, metadata_of(trained.history)), tc_out);
      std::cout << "best_epoch " << trained.history.best_epoch << " holdout " << trained.history.best_holdout << "\n";
    } else if (*in) {
      const auto packets = dataset::read_dataset(in_data);
      checkpoint::LoadTrace trace;
      const auto scored = pipeline::infer(in_extractor, in_classifier, packets, &trace);
      metrics::write_scores(scored, in_out);
      std::cout << "scored " << scored.size() << " packets with " << trace.parameters_read << " parameters\n";
      if (!in_report.empty()) metrics::write_report(metrics::evaluate(scored), in_report);
    } else if (*ev) {
      const auto report = metrics::evaluate(metrics::read_scores(ev_scores));
      if (ev_out.empty()) {
        std::cout << metrics::format_report(report);
      } else {
        metrics::write_report(report, ev_out);
        std::cout << "auroc " << format_double(report.auroc) << "\n";
      }
    } else if (*pl) {
      KeyValues kv = pl_set.resolve();
      if (pl_out) kv.set("out_dir", *pl_out);
      if (pl_seed) kv.set("seed", *pl_seed);
      if (pl_grid) kv.set("noise_grid", *pl_grid);
      if (pl_ratios) kv.set("ratios", *pl_ratios);
      if (pl_repeats) kv.set("repeats", *pl_repeats);
      if (pl_train) kv.set("train_csv", *pl_train);
      if (pl_test) kv.set("test_csv", *pl_test);
      if (pl_fx_epochs) kv.set("extractor.epochs", *pl_fx_epochs);
      if (pl_resume) kv.set("resume", true);
      if (pl_bypass) kv.set("bypass_flow", true);
      const auto cfg = pipeline::PipelineConfig::from_kv(kv);
      pipeline::LogFn log = [&](const std::string& line) {
        if (pl_set.verbose || line.rfind("evaluate", 0) == 0 || line.find("resumed") != std::string::npos) {
          std::cerr << line << "\n";
        }
      };
      const auto result = pipeline::run_pipeline(cfg, log);
      std::cout << "# AUROC per noise distribution\n" << result.noise_table;
      std::cout << "# AUROC per pseudo:normal ratio\n" << result.ratio_table;
      std::cout << "# parameters: training " << result.training_parameters << ", inference "
                << result.inference_parameters << "\n";
      const auto& best = result.best();
      std::cout << "best auroc " << format_double(best.report.auroc) << " at mu " << format_double(best.noise.mu)
                << " sigma " << format_double(best.noise.sigma) << " ratio " << format_double(best.ratio) << "\n";
    } else if (*mc) {
      const auto c = corpus::make_synthetic_corpus(mc_seed, mc_normal, mc_anomaly);
      dataset::write_dataset(c.normal, mc_out_normal);
      dataset::write_dataset(c.anomaly, mc_out_anomaly);
      std::cout << "normal " << c.normal.size() << " anomaly " << c.anomaly.size() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
