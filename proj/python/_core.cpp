// Python bindings. Matrices cross as float64 numpy arrays, one sample per row.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "flowgate/checkpoint.hpp"
#include "flowgate/corpus.hpp"
#include "flowgate/dataset.hpp"
#include "flowgate/error.hpp"
#include "flowgate/flow.hpp"
#include "flowgate/metrics.hpp"
#include "flowgate/pipeline.hpp"
#include "flowgate/synthesis.hpp"

namespace py = pybind11;
using namespace flowgate;
using nn::Tensor;

namespace {

std::optional<packet::Label> parse_label(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  if (*s == "normal") return packet::Label::Normal;
  if (*s == "anomaly") return packet::Label::Anomaly;
  throw Error(ErrorCode::BadConfig, "label must be 'normal', 'anomaly' or None, got '" + *s + "'");
}

py::object label_object(const std::optional<packet::Label>& l) {
  if (!l) return py::none();
  return py::str(*l == packet::Label::Anomaly ? "anomaly" : "normal");
}

py::tuple packets_to_numpy(const std::vector<packet::EncodedPacket>& packets) {
  py::list labels;
  for (const auto& p : packets) labels.append(label_object(p.label));
  return py::make_tuple(dataset::to_matrix(packets), labels);
}

KeyValues to_kv(const py::dict& d) {
  KeyValues kv;
  for (const auto& [k, v] : d) {
    const auto key = py::str(k).cast<std::string>();
    if (py::isinstance<py::bool_>(v)) {
      kv.set(key, v.cast<bool>());
    } else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      std::string joined;
      for (const auto& item : v) joined += (joined.empty() ? "" : ",") + py::str(item).cast<std::string>();
      kv.set(key, joined);
    } else {
      kv.set(key, py::str(v).cast<std::string>());
    }
  }
  return kv;
}

struct Detector {
  pipeline::InferenceModel model;
  checkpoint::LoadTrace trace;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "flowgate native core";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object ex = py::reinterpret_borrow<py::object>(error.ptr())(e.what());
      py::setattr(ex, "code", py::str(std::string(to_string(e.code()))));
      PyErr_SetObject(error.ptr(), ex.ptr());
    }
  });

  m.def("preprocess", [](const std::filesystem::path& path, std::optional<std::string> label) {
    return packets_to_numpy(packet::preprocess_path(path, parse_label(label)));
  }, py::arg("path"), py::arg("label") = py::none(),
  "Clean and encode a capture file or directory. Returns (values[N,1600], labels).");

  m.def("make_corpus", [](std::uint64_t seed, std::size_t n_normal, std::size_t n_anomaly) {
    const auto c = corpus::make_synthetic_corpus(seed, n_normal, n_anomaly);
    return py::make_tuple(dataset::to_matrix(c.normal), dataset::to_matrix(c.anomaly));
  }, py::arg("seed"), py::arg("n_normal"), py::arg("n_anomaly"),
  "Synthetic encoded packets: (normal[N,1600], anomaly[M,1600]).");

  m.def("auroc", [](const std::vector<double>& scores, const std::vector<bool>& positive) {
    if (scores.size() != positive.size()) throw Error(ErrorCode::ShapeMismatch, "scores and labels differ in length");
    std::vector<metrics::LabeledScore> s(scores.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = {scores[i], positive[i]};
    return metrics::auroc(s);
  }, py::arg("scores"), py::arg("positive"));

  py::class_<flow::FlowModel>(m, "Flow")
      .def(py::init([](std::size_t dim, std::size_t blocks, std::vector<std::size_t> hidden, double clamp,
                       std::uint64_t seed, bool identity) {
             flow::FlowConfig c;
             c.dim = dim;
             c.blocks = blocks;
             c.hidden = std::move(hidden);
             c.clamp = clamp;
             c.validate();
             flow::FlowModel f(c);
             f.init(seed, identity);
             return f;
           }),
           py::arg("dim") = 70, py::arg("blocks") = 8, py::arg("hidden") = std::vector<std::size_t>{128, 128},
           py::arg("clamp") = 2.0, py::arg("seed") = 0, py::arg("identity") = true)
      .def_static("load", [](const std::filesystem::path& p) {
        return flow::FlowModel::from_checkpoint(
            checkpoint::load(p, {.expected_stage = checkpoint::Stage::Flow}));
      })
      .def_property_readonly("dim", &flow::FlowModel::dim)
      .def_property_readonly("parameter_count", &flow::FlowModel::parameter_count)
      .def("normalize", [](const flow::FlowModel& f, const Tensor& z) {
        auto r = f.normalize(z);
        return py::make_tuple(std::move(r.c), std::move(r.log_det));
      }, py::arg("z"), "z -> (c, log|det dc/dz|)")
      .def("generate", &flow::FlowModel::generate, py::arg("c"))
      .def("log_likelihood", &flow::FlowModel::log_likelihood, py::arg("z"))
      .def("synthesize", [](const flow::FlowModel& f, const Tensor& z, double mu, double sigma, double ratio,
                            std::uint64_t seed) {
        synthesis::SynthesisConfig cfg;
        cfg.ratio = ratio;
        cfg.allow_oversampling = ratio > 1.0;
        return synthesis::synthesize(f, z, {mu, sigma, seed}, cfg);
      }, py::arg("z"), py::arg("mu"), py::arg("sigma"), py::arg("ratio") = 0.5, py::arg("seed") = 0,
      "Pseudo-anomalies generated from perturbed normalized latents.");

  m.def("train_flow", [](const Tensor& z, std::uint64_t seed, int epochs) {
    flow::FlowConfig c;
    c.dim = static_cast<std::size_t>(z.cols());
    c.optim.epochs = epochs;
    py::gil_scoped_release release;
    return flow::train_flow(z, c, seed).model;
  }, py::arg("z"), py::arg("seed") = 0, py::arg("epochs") = 100);

  py::class_<Detector>(m, "Detector")
      .def_static("load", [](const std::filesystem::path& extractor, const std::filesystem::path& classifier) {
        Detector d;
        d.model = pipeline::load_inference(extractor, classifier, &d.trace);
        return d;
      }, py::arg("extractor"), py::arg("classifier"),
      "Encoder plus classifier; no other parameters are read.")
      .def("score", [](const Detector& d, const Tensor& x) {
        return d.model.classifier.score(d.model.encoder.encode(x));
      }, py::arg("x"))
      .def("encode", [](const Detector& d, const Tensor& x) { return d.model.encoder.encode(x); }, py::arg("x"))
      .def_property_readonly("parameter_count", [](const Detector& d) { return d.model.parameter_count(); })
      .def_property_readonly("tables_read", [](const Detector& d) { return d.trace.tables_read; });

  m.def("run_pipeline", [](const py::dict& config, std::optional<std::function<void(std::string)>> log) {
    const auto cfg = pipeline::PipelineConfig::from_kv(to_kv(config));
    pipeline::PipelineResult r;
    {
      // Log callbacks re-acquire the GIL themselves.
      py::gil_scoped_release release;
      pipeline::LogFn fn;
      if (log) fn = [&](const std::string& line) { py::gil_scoped_acquire hold; (*log)(line); };
      r = pipeline::run_pipeline(cfg, fn);
    }
    py::list runs;
    for (const auto& run : r.runs) {
      py::dict d;
      d["repeat"] = run.repeat;
      d["seed"] = run.seed;
      d["mu"] = run.noise.mu;
      d["sigma"] = run.noise.sigma;
      d["ratio"] = run.ratio;
      d["auroc"] = run.report.auroc;
      d["report"] = run.report_path;
      runs.append(d);
    }
    py::dict out;
    out["runs"] = runs;
    out["training_parameters"] = r.training_parameters;
    out["inference_parameters"] = r.inference_parameters;
    out["noise_table"] = r.noise_table;
    out["ratio_table"] = r.ratio_table;
    return out;
  }, py::arg("config"), py::arg("log") = py::none(),
  "Run the whole pipeline. `config` uses the same flat keys as a config file.");
}
