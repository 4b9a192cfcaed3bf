#include <doctest.h>

#include <fstream>
#include <sstream>

#include "flowgate/dataset.hpp"
#include "flowgate/error.hpp"
#include "flowgate/pipeline.hpp"
#include "support.hpp"

using namespace flowgate;
using namespace flowgate::pipeline;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny(const fs::path& out) {
  PipelineConfig c;
  c.out_dir = out;
  c.seed = 17;
  c.corpus_train_normal = 200;
  c.corpus_test_normal = 40;
  c.corpus_test_anomaly = 40;
  c.noise_grid = {{-9, 5}, {0, 1}};
  c.extractor.latent_dim = 8;
  c.extractor.encoder_hidden = {32};
  c.extractor.disc_hidden = {16, 8};
  c.extractor.optim.epochs = 2;
  c.flow.dim = 8;
  c.flow.hidden = {16, 16};
  c.flow.optim.epochs = 3;
  c.classifier.input_dim = 8;
  c.classifier.hidden = {8, 4};
  c.classifier.optim.epochs = 3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("noise grid and ratio parsing") {
  const auto g = parse_noise_grid("-9:5,-25:5,-100:5,0:1");
  REQUIRE(g.size() == 4);
  CHECK(g[0].mu == -9.0);
  CHECK(g[2].mu == -100.0);
  CHECK(g[3].sigma == 1.0);
  CHECK(format_noise_grid(g) == "-9:5,-25:5,-100:5,0:1");
  CHECK(testing::error_code([] { parse_noise_grid("-9"); }) == ErrorCode::BadConfig);
  CHECK(testing::error_code([] { parse_noise_grid("0:-1"); }) == ErrorCode::NegativeSigma);
  CHECK(parse_ratios("0.5,1,2") == std::vector<double>{0.5, 1.0, 2.0});
}

TEST_CASE("pipeline config survives its key-value form") {
  PipelineConfig c = tiny("x");
  c.ratios = {0.5, 2.0};
  const auto back = PipelineConfig::from_kv(c.to_kv());
  CHECK(back.to_kv().to_text() == c.to_kv().to_text());
  CHECK(back.extractor.latent_dim == 8);
  CHECK(back.ratios == c.ratios);
}

TEST_CASE("pipeline: one report per noise point, deterministic, two-module inference") {
  const auto a_dir = testing::scratch_dir("pipeline-a");
  const auto b_dir = testing::scratch_dir("pipeline-b");
  const auto a = run_pipeline(tiny(a_dir));
  const auto b = run_pipeline(tiny(b_dir));
  REQUIRE(a.runs.size() == 2);
  for (const auto& r : a.runs) CHECK(fs::exists(r.report_path));
  CHECK(a.noise_table == b.noise_table);
  CHECK(a.noise_table.rfind("mu,sigma,auroc\n", 0) == 0);
  for (std::size_t i = 0; i < a.runs.size(); ++i) CHECK(a.runs[i].report.auroc == b.runs[i].report.auroc);

  const fs::path run = "seed-17";
  for (const char* f : {"extractor.ckpt", "flow.ckpt", "classifier_mu-9_sigma5_ratio0.5.ckpt",
                        "classifier_mu0_sigma1_ratio0.5.ckpt", "report_mu0_sigma1_ratio0.5.txt",
                        "scores_mu-9_sigma5_ratio0.5.csv"}) {
    INFO(f);
    REQUIRE(fs::exists(a_dir / run / f));
    CHECK(slurp(a_dir / run / f) == slurp(b_dir / run / f));
  }

  checkpoint::LoadTrace trace;
  const auto model = load_inference(a_dir / run / "extractor.ckpt",
                                    a_dir / run / "classifier_mu0_sigma1_ratio0.5.ckpt", &trace);
  CHECK(trace.tables_read == std::vector<std::string>{"encoder", "classifier"});
  for (const auto& t : trace.tables_skipped) CHECK((t == "decoder" || t == "discriminator"));
  CHECK(model.parameter_count() < a.training_parameters);
  CHECK(model.parameter_count() == a.inference_parameters);

  // The flow checkpoint is not an inference input.
  CHECK(testing::error_code([&] {
          load_inference(a_dir / run / "flow.ckpt", a_dir / run / "classifier_mu0_sigma1_ratio0.5.ckpt");
        }) == ErrorCode::CheckpointMismatch);

  // Unlabeled input yields scores without labels.
  auto test = dataset::read_dataset(a_dir / "test.csv");
  for (auto& p : test) p.label.reset();
  const auto scored = infer(model, test);
  REQUIRE(scored.size() == test.size());
  for (const auto& s : scored) CHECK_FALSE(s.label.has_value());
  const auto again = infer(model, test);
  for (std::size_t i = 0; i < scored.size(); ++i) CHECK(scored[i].score == again[i].score);
}

TEST_CASE("resume reuses matching checkpoints") {
  const auto dir = testing::scratch_dir("pipeline-resume");
  auto cfg = tiny(dir);
  cfg.noise_grid = {{0, 1}};
  run_pipeline(cfg);
  const auto before = slurp(dir / "seed-17" / "extractor.ckpt");
  const auto stamp = fs::last_write_time(dir / "seed-17" / "extractor.ckpt");
  cfg.resume = true;
  std::vector<std::string> lines;
  run_pipeline(cfg, [&](const std::string& l) { lines.push_back(l); });
  CHECK(fs::last_write_time(dir / "seed-17" / "extractor.ckpt") == stamp);
  CHECK(slurp(dir / "seed-17" / "extractor.ckpt") == before);
  int resumed = 0;
  for (const auto& l : lines) resumed += l.find("resumed") != std::string::npos;
  CHECK(resumed == 3);

  // A changed stage config retrains that stage.
  cfg.flow.optim.epochs = 4;
  lines.clear();
  run_pipeline(cfg, [&](const std::string& l) { lines.push_back(l); });
  resumed = 0;
  for (const auto& l : lines) resumed += l.find("resumed") != std::string::npos;
  CHECK(resumed == 1);
}

TEST_CASE("labeled anomalies in the training set abort the pipeline") {
  const auto dir = testing::scratch_dir("pipeline-guard");
  auto cfg = tiny(dir / "seed");
  run_pipeline([&] {
    auto c = cfg;
    c.noise_grid = {{0, 1}};
    c.extractor.optim.epochs = 1;
    c.flow.optim.epochs = 1;
    c.classifier.optim.epochs = 1;
    return c;
  }());
  auto train = dataset::read_dataset(dir / "seed" / "train.csv");
  train[3].label = packet::Label::Anomaly;
  dataset::write_dataset(train, dir / "tainted.csv");
  cfg.train_csv = dir / "tainted.csv";
  cfg.test_csv = dir / "seed" / "test.csv";
  cfg.out_dir = dir / "run";
  try {
    run_pipeline(cfg);
    FAIL("tainted training set accepted");
  } catch (const StageError& e) {
    CHECK(e.code() == ErrorCode::AnomalyInTrainingSet);
    CHECK(e.stage() == "train_extractor");
  }

  const dataset::LatentSet tainted{nn::Tensor::Zero(3, 8), {packet::Label::Normal, packet::Label::Anomaly, std::nullopt}};
  CHECK(testing::error_code([&] {
          train_classifier_guarded(tainted, nn::Tensor::Ones(2, 8), cfg.classifier, 1);
        }) == ErrorCode::AnomalyInTrainingSet);
}

TEST_CASE("stage errors carry the stage name") {
  try {
    run_stage("train_flow", [] { throw Error(ErrorCode::EmptyDataset, "nothing"); });
    FAIL("no throw");
  } catch (const StageError& e) {
    CHECK(e.stage() == "train_flow");
    CHECK(e.code() == ErrorCode::EmptyDataset);
    CHECK(std::string(e.what()).find("[train_flow]") != std::string::npos);
  }
}
