#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "itct/cli.hpp"
#include "itct/error.hpp"
#include "itct/evaluation.hpp"
#include "itct/gradcheck.hpp"
#include "itct/objective.hpp"
#include "itct/trainer.hpp"

namespace py = pybind11;
using namespace itct;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<SymbolDistribution> rows_of(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array of distributions");
  std::vector<SymbolDistribution> out(static_cast<std::size_t>(a.shape(0)));
  auto v = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (py::ssize_t j = 0; j < a.shape(1); ++j) out[i].push_back(v(i, j));
  return out;
}

Matrix<double> matrix_of(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D joint table");
  Matrix<double> m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

py::array_t<float> frames_array(const FrameMatrix& f) {
  py::array_t<float> out({f.rows, f.cols});
  std::copy(f.data.begin(), f.data.end(), out.mutable_data());
  return out;
}

// json <-> Python through the json module keeps the binding free of a
// hand-written converter.
json to_json(const py::handle& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict utterance_dict(const Utterance& u) {
  py::dict d;
  d["id"] = u.id;
  d["frames"] = frames_array(u.frames);
  d["labels"] = u.gold_labels ? py::cast(*u.gold_labels) : py::none();
  d["speaker"] = u.speaker ? py::cast(*u.speaker) : py::none();
  return d;
}

py::dict synth(const py::dict& spec_dict, const std::optional<std::string>& out) {
  const auto spec = synthetic_spec_from_json(to_json(spec_dict));
  const auto sc = synth_corpus(spec);
  if (out) write_corpus(*out, sc.corpus);
  py::list utts;
  for (const auto& u : sc.corpus.utterances) utts.append(utterance_dict(u));
  py::array_t<double> joint({sc.joint_table.rows, sc.joint_table.cols});
  std::copy(sc.joint_table.data.begin(), sc.joint_table.data.end(), joint.mutable_data());
  py::dict d;
  d["utterances"] = utts;
  d["joint_table"] = joint;
  d["true_mi_bits"] = true_mi_oracle(sc.joint_table);
  d["placement_stride"] = sc.corpus.placement_stride;
  return d;
}

// Trains on a corpus directory or manifest; returns the metrics records.
py::list train_corpus(const std::string& corpus_path, const py::dict& config,
               const std::optional<std::string>& checkpoint) {
  const auto corpus = load_corpus(corpus_path);
  const auto cfg = train_config_from_json(to_json(config));
  cfg.validate();
  json records = json::array();
  TrainState st;
  {
    py::gil_scoped_release release;
    st = itct::train(corpus, cfg, [&](const json& r) { records.push_back(r); });
  }
  if (checkpoint) save_checkpoint(st, *checkpoint);
  return from_json(records);
}

py::dict evaluate_corpus(const std::string& corpus_path, const std::string& checkpoint) {
  const auto st = load_checkpoint(checkpoint);
  const auto corpus = load_corpus(corpus_path);
  std::vector<Utterance> utts;
  for (const auto& u : corpus.utterances) utts.push_back(st.config.normalize ? normalize_utterance(u) : u);
  const auto& g = st.config.geometry;
  const auto labelings = label_corpus(st.params, utts, g, corpus.placement_stride);
  const auto tags = majority_tag(labelings, utts);
  const auto r = itct::evaluate(labelings, tags, utts);
  const auto outputs = collect_outputs(st.params, utts, g, corpus.placement_stride);
  const auto stats = symbol_stats(outputs);
  const auto h = held_out_terms(outputs);
  py::dict d;
  d["overall_acc"] = r.overall_acc;
  d["covered_acc"] = r.covered_acc;
  d["coverage"] = r.coverage;
  d["frames"] = r.frames;
  d["agreement_rate"] = agreement_rate(outputs);
  d["mean_entropy_psi_bits"] = stats.mean_entropy_psi_bits;
  d["mean_entropy_phi_bits"] = stats.mean_entropy_phi_bits;
  d["mi_bound_bits"] = h.mi_bound_bits;
  d["cross_entropy_bits"] = h.cross_entropy_bits;
  d["marginal_entropy_bits"] = h.marginal_entropy_bits;
  d["tags"] = tags.tag;
  return d;
}

py::list gradcheck(std::uint64_t seed, std::size_t seeds, bool inject_fault) {
  GradCheckOptions o;
  o.seed = seed;
  o.seeds = seeds;
  o.inject_fault = inject_fault;
  const auto report = run_gradcheck(o);
  py::list out;
  for (const auto& c : report.cases) {
    py::dict d;
    d["name"] = c.name;
    d["seed"] = c.seed;
    d["max_rel_error"] = c.max_rel_error;
    d["passed"] = c.passed;
    out.append(d);
  }
  return out;
}

py::tuple run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full = {"itct"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_itct, m) {
  m.doc() = "Co-training of predictor and confirmation models, C++ core";
  m.attr("__version__") = cli::kToolVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);

  m.def("true_mi_oracle", [](const Array& joint) { return true_mi_oracle(matrix_of(joint)); },
        py::arg("joint"), "Mutual information of a joint table, in bits.");
  m.def("cross_entropy_term",
        [](const Array& psi, const Array& phi) { return cross_entropy_term(rows_of(psi), rows_of(phi)); },
        py::arg("psi"), py::arg("phi"), "Mean over rows of -sum psi log2 phi, in bits.");
  m.def("entropy_of_mean", [](const Array& psi) { return entropy_of_mean(rows_of(psi)); }, py::arg("psi"),
        "Entropy of the row average, in bits.");
  m.def("normalize",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& frames) {
          if (frames.ndim() != 2) throw ShapeError("expected a T x d frame array");
          Utterance u{"u", FrameMatrix(frames.shape(0), frames.shape(1)), std::nullopt, std::nullopt};
          std::copy(frames.data(), frames.data() + frames.size(), u.frames.data.begin());
          return frames_array(normalize_utterance(u).frames);
        },
        py::arg("frames"), "Scale so the mean squared frame norm is 1.");
  m.def("synth", &synth, py::arg("spec"), py::arg("out") = py::none(),
        "Generate a synthetic corpus; optionally write it to a directory.");
  m.def("train", &train_corpus, py::arg("corpus"), py::arg("config") = py::dict(),
        py::arg("checkpoint") = py::none(), "Train on a corpus; returns the metrics records.");
  m.def("evaluate", &evaluate_corpus, py::arg("corpus"), py::arg("checkpoint"),
        "Label, tag and score a corpus with a checkpoint.");
  m.def("gradcheck", &gradcheck, py::arg("seed") = 0, py::arg("seeds") = 1, py::arg("inject_fault") = false);
  m.def("run_cli", &run_cli, py::arg("args"), "Run the command-line tool; returns (code, stdout, stderr).");
}
