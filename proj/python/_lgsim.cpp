#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lgsim/error.hpp"
#include "lgsim/experiment.hpp"
#include "lgsim/hierarchy.hpp"
#include "lgsim/io.hpp"
#include "lgsim/neuron_sets.hpp"
#include "lgsim/probes.hpp"
#include "lgsim/trainer.hpp"

namespace py = pybind11;
using namespace lgsim;
using nlohmann::json;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

HyperParams params_from(const py::object& o) {
  if (o.is_none()) return HyperParams::desk();
  HyperParams p = hyperparams_from_json(from_py(o));
  p.validate();
  return p;
}

TrainConfig train_config(const std::string& regime, std::int64_t max_steps, double eta, const std::string& bias_rule,
                         int log_every, double loss_floor, std::uint64_t seed) {
  TrainConfig c;
  c.regime = parse_variant(regime);
  c.max_steps = max_steps;
  c.eta = eta;
  c.bias_rule = bias_rule.empty() ? default_bias_rule(c.regime) : parse_bias_rule(bias_rule);
  c.log_every = log_every;
  c.loss_floor = loss_floor;
  c.seed = seed;
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_lgsim, m) {
  m.doc() = "Coarse versus fine label training on a sparse-coding data model";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<RetriableError>(m, "RetriableError", PyExc_RuntimeError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", PyExc_FileNotFoundError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const LookupError& e) {
      PyErr_SetString(PyExc_KeyError, e.what());
    }
  });

  m.def("desk_params", [] { return to_py(to_json(HyperParams::desk())); }, "Desk preset hyperparameters as a dict");
  m.def("paper_asymptotic_params", [](int d) { return to_py(to_json(HyperParams::paper_asymptotic(d))); },
        py::arg("d") = 128);

  py::class_<Dictionary>(m, "Dictionary")
      .def_property_readonly("words", [](const Dictionary& d) { return d.words; })
      .def_property_readonly("d", &Dictionary::d)
      .def_property_readonly("k", &Dictionary::k)
      .def_property_readonly("num_designated", &Dictionary::num_designated)
      .def("common", &Dictionary::common, py::arg("sign"))
      .def("sub", &Dictionary::sub, py::arg("sign"), py::arg("c"))
      .def("save", [](const Dictionary& d, const std::filesystem::path& p) { save_dictionary(p, d); })
      .def_static("load", &load_dictionary);
  m.def(
      "build_dictionary",
      [](const py::object& params, const std::string& mode, std::uint64_t seed) {
        return build_dictionary(params_from(params), parse_dictionary_mode(mode), seed);
      },
      py::arg("params") = py::none(), py::arg("mode") = "standard_basis", py::arg("seed") = 0);
  m.def("orthonormality_error", &orthonormality_error);

  py::class_<Sample>(m, "Sample")
      .def_property_readonly("patches", [](const Sample& s) { return s.patches; })
      .def_property_readonly("label", [](const Sample& s) { return py::make_tuple(s.label.sign, s.label.sub); })
      .def_property_readonly("hard", [](const Sample& s) { return s.kind == SampleKind::Hard; })
      .def_property_readonly("tags", [](const Sample& s) {
        std::vector<std::string> out;
        for (PatchTag t : s.tags)
          out.push_back(t == PatchTag::Common ? "common" : t == PatchTag::Subclass ? "subclass" : "noise");
        return out;
      })
      .def_property_readonly("alphas", [](const Sample& s) { return s.alphas; });
  m.def(
      "make_batch",
      [](const Dictionary& dict, const py::object& params, std::int64_t step, std::uint64_t seed) {
        return make_batch(dict, params_from(params), step, seed).samples;
      },
      py::arg("dictionary"), py::arg("params") = py::none(), py::arg("step") = 0, py::arg("seed") = 0);
  m.def(
      "make_eval_set",
      [](const Dictionary& dict, const py::object& params, int n_per_subclass, bool hard, std::uint64_t seed) {
        return make_eval_set(dict, params_from(params), n_per_subclass, hard ? SampleKind::Hard : SampleKind::Normal,
                             seed, Stream::Audit);
      },
      py::arg("dictionary"), py::arg("params") = py::none(), py::arg("n_per_subclass") = 8, py::arg("hard") = false,
      py::arg("seed") = 0);

  py::class_<Network>(m, "Network")
      .def_property_readonly("variant", [](const Network& n) { return std::string(to_string(n.variant)); })
      .def_property_readonly("num_heads", &Network::num_heads)
      .def_property_readonly("d", &Network::d)
      .def_property_readonly("params", [](const Network& n) { return to_py(to_json(n.params)); })
      .def("head_name", &Network::head_name)
      .def("weights", [](const Network& n, int h) { return RowMatrix(n.heads.at(h).weights); }, py::arg("head"))
      .def("biases", [](const Network& n, int h) { return Eigen::VectorXd(n.heads.at(h).biases); }, py::arg("head"))
      .def(
          "set_weights",
          [](Network& n, int h, const RowMatrix& w) {
            auto& g = n.heads.at(h);
            if (w.rows() != g.weights.rows() || w.cols() != g.weights.cols())
              throw ContractError("weight matrix shape does not match the head");
            g.weights = w;
          },
          py::arg("head"), py::arg("weights"))
      .def(
          "set_biases",
          [](Network& n, int h, const Eigen::VectorXd& b) {
            auto& g = n.heads.at(h);
            if (b.size() != g.biases.size()) throw ContractError("bias vector length does not match the head");
            g.biases = b;
          },
          py::arg("head"), py::arg("biases"))
      .def("save", [](const Network& n, const std::filesystem::path& p) { save_network(p, n); })
      .def_static("load", &load_network);
  m.def(
      "init_network",
      [](const py::object& params, const std::string& variant, std::uint64_t seed) {
        return init_network(params_from(params), parse_variant(variant), seed);
      },
      py::arg("params") = py::none(), py::arg("variant") = "coarse", py::arg("seed") = 0);
  m.def(
      "forward", [](const Network& net, const RowMatrix& patches) { return forward(net, patches).per_class; },
      py::arg("network"), py::arg("patches"), "Per-head responses F for one P x d patch matrix");
  m.def("softmax_logits", py::overload_cast<const std::vector<double>&>(&softmax_logits));

  m.def(
      "grad_check",
      [](const Network& net, const std::vector<Sample>& samples, double epsilon, std::uint64_t seed, int coords,
         const Dictionary* dict) { return grad_check(net, samples, epsilon, seed, coords, dict); },
      py::arg("network"), py::arg("samples"), py::arg("epsilon") = 1e-5, py::arg("seed") = 0, py::arg("coords") = 100,
      py::arg("dictionary") = nullptr);

  m.def(
      "sgd_step",
      [](Network& net, const Dictionary& dict, const std::vector<Sample>& batch, double eta,
         const std::string& bias_rule, const std::optional<std::vector<Sample>>& next) {
        TrainConfig c = train_config(std::string(to_string(net.variant)), 1, eta, bias_rule, 10, 0.05, 0);
        Batch b{batch, 0};
        std::optional<Batch> nb;
        if (next) nb = Batch{*next, 1};
        const StepStats st = sgd_step(net, dict, b, c, nb ? &*nb : nullptr);
        return py::dict(py::arg("loss") = st.loss, py::arg("grad_norm") = st.grad_norm,
                        py::arg("bias_shift") = st.bias_shift, py::arg("touched") = st.touched);
      },
      py::arg("network"), py::arg("dictionary"), py::arg("batch"), py::arg("eta"), py::arg("bias_rule") = "",
      py::arg("next_batch") = py::none(), "One in-place SGD step; returns step statistics");

  m.def(
      "train",
      [](const Dictionary& dict, const py::object& params, const std::string& regime, std::int64_t max_steps,
         double eta, const std::string& bias_rule, int log_every, double loss_floor, std::uint64_t seed) {
        const HyperParams p = params_from(params);
        const TrainConfig c = train_config(regime, max_steps, eta, bias_rule, log_every, loss_floor, seed);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_run(p, c, dict);
        }
        json hist = json::array();
        for (const auto& rec : r.history.records) hist.push_back(to_json(rec));
        return py::make_tuple(std::move(r.network), to_py(hist));
      },
      py::arg("dictionary"), py::arg("params") = py::none(), py::arg("regime") = "coarse", py::arg("max_steps") = 100,
      py::arg("eta") = 2.5e-4, py::arg("bias_rule") = "", py::arg("log_every") = 10, py::arg("loss_floor") = 0.05,
      py::arg("seed") = 0, "Trains a fresh network; returns (network, history records)");

  m.def(
      "hard_example_audit",
      [](const Network& net, const Dictionary& dict, int n_eval, std::uint64_t seed) {
        return to_py(to_json(hard_example_audit(net, net.variant, dict, net.params, n_eval, seed)));
      },
      py::arg("network"), py::arg("dictionary"), py::arg("n_eval") = 32, py::arg("seed") = 0);
  m.def(
      "init_geometry",
      [](const Network& net, const Dictionary& dict) {
        return to_py(to_json(init_geometry_report(classify_init_neurons(net, dict, net.params))));
      },
      py::arg("network"), py::arg("dictionary"));
  m.def(
      "fit_log_growth",
      [](const std::vector<double>& t, const std::vector<double>& A, double lo, double hi) {
        const LogFit f = fit_log_growth(t, A, lo, hi);
        return py::dict(py::arg("ok") = f.ok, py::arg("C") = f.C, py::arg("t0") = f.t0, py::arg("r2") = f.r2,
                        py::arg("points") = f.points);
      },
      py::arg("t"), py::arg("A"), py::arg("t_lo"), py::arg("t_hi"));
  m.def(
      "lemma_monte_carlo",
      [](const std::string& which, int d, std::int64_t trials, std::uint64_t seed, double delta) {
        if (which != "norm_tail" && which != "inner_product")
          throw ConfigError("lemma must be 'norm_tail' or 'inner_product'");
        const LemmaResult r = lemma_monte_carlo(which == "norm_tail" ? Lemma::NormTail : Lemma::InnerProduct, d,
                                                trials, seed, 1.0, 1.0, delta);
        return py::dict(py::arg("frequency") = r.frequency, py::arg("bound") = r.bound,
                        py::arg("respects") = r.respects);
      },
      py::arg("which"), py::arg("d"), py::arg("trials") = 1000000, py::arg("seed") = 1, py::arg("delta") = 0.01);

  m.def(
      "run_experiment",
      [](const std::filesystem::path& config, const std::optional<std::filesystem::path>& out,
         std::optional<std::uint64_t> seed) {
        ExperimentConfig cfg = load_experiment_config(config);
        if (out) cfg.output_dir = *out;
        if (seed) cfg.master_seed = *seed;
        cfg.finalize();
        ExperimentOutcome o;
        {
          py::gil_scoped_release release;
          o = run_experiment(cfg);
        }
        return py::make_tuple(o.exit_code, to_py(o.summary));
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(),
      "Full pipeline from a YAML config; returns (exit_code, summary)");
  m.def(
      "emit_report",
      [](const std::filesystem::path& dir, const std::string& fmt) { return emit_report(dir, parse_report_format(fmt)); },
      py::arg("dir"), py::arg("format") = "csv");

  m.def(
      "kmeans",
      [](const RowMatrix& X, int k, std::uint64_t seed, int max_iters) {
        const KMeansResult r = lloyd_kmeans(X, k, seed, max_iters);
        return py::dict(py::arg("assignments") = r.assignments, py::arg("centroids") = r.centroids,
                        py::arg("inertia") = r.inertia, py::arg("inertia_history") = r.inertia_history,
                        py::arg("iterations") = r.iterations, py::arg("converged") = r.converged);
      },
      py::arg("X"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iters") = 300);
  m.def(
      "assign_fine_ids",
      [](const RowMatrix& X, const std::vector<int>& labels, const std::string& mode, int C, std::uint64_t seed) {
        EmbeddingSet emb{X, labels};
        emb.validate();
        const FineIdResult r = assign_fine_ids(emb, parse_fine_id_mode(mode), C, seed);
        return py::dict(py::arg("ids") = r.ids, py::arg("group_C") = r.group_C, py::arg("warnings") = r.warnings);
      },
      py::arg("X"), py::arg("labels") = std::vector<int>{}, py::arg("mode") = "per_group", py::arg("C") = 4,
      py::arg("seed") = 0);
  m.def(
      "rebalance_granularity",
      [](const RowMatrix& X, const std::vector<int>& labels, const std::vector<int>& candidates, int min_count,
         std::uint64_t seed) {
        EmbeddingSet emb{X, labels};
        emb.validate();
        const RebalanceResult r = rebalance_granularity(emb, candidates, min_count, seed);
        return py::dict(py::arg("ids") = r.ids, py::arg("chosen_C") = r.chosen_C, py::arg("offsets") = r.offsets,
                        py::arg("granularity") = r.granularity);
      },
      py::arg("X"), py::arg("labels"), py::arg("candidates") = std::vector<int>{1, 2, 4, 8},
      py::arg("min_count") = 10, py::arg("seed") = 0);

  py::class_<Taxonomy>(m, "Taxonomy")
      .def_static("from_edges", &Taxonomy::from_edges, py::arg("text"))
      .def_static("load", &Taxonomy::load, py::arg("path"))
      .def_readonly("root", &Taxonomy::root)
      .def("leaves", &Taxonomy::leaves)
      .def("__contains__", &Taxonomy::contains)
      .def("level", [](const Taxonomy& t, const std::string& leaf, int k) { return level_k_label(t, leaf, k); },
           py::arg("leaf"), py::arg("k"))
      .def("granularity",
           [](const Taxonomy& t, int k) { return granularity(t, t.leaves(), k); }, py::arg("k"));
}
