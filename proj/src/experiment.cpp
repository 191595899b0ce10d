#include "lgsim/experiment.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "lgsim/error.hpp"
#include "lgsim/io.hpp"

namespace lgsim {

using nlohmann::json;
namespace fs = std::filesystem;

ExperimentConfig ExperimentConfig::defaults(Preset preset, int d) {
  ExperimentConfig cfg;
  cfg.hyperparams = preset == Preset::Desk ? HyperParams::desk() : HyperParams::paper_asymptotic(d);
  if (preset == Preset::Desk && d != cfg.hyperparams.d) cfg.hyperparams.d = d;
  cfg.coarse.train.regime = Variant::Coarse;
  cfg.coarse.train.bias_rule = default_bias_rule(Variant::Coarse);
  cfg.coarse.train.eta = cfg.hyperparams.eta;
  cfg.fine.train = cfg.coarse.train;
  cfg.fine.train.regime = Variant::Fine;
  cfg.fine.train.bias_rule = default_bias_rule(Variant::Fine);
  return cfg;
}

void ExperimentConfig::finalize() {
  coarse.train.seed = master_seed;
  fine.train.seed = master_seed;
  coarse.train.regime = Variant::Coarse;
  fine.train.regime = Variant::Fine;
  hyperparams.validate();
  coarse.train.validate();
  fine.train.validate();
  if (probes.audit_n_eval < 1) throw ConfigError("probes.audit_n_eval must be >= 1");
  if (!(probes.eps_T11 > 0.0 && probes.eps_T11 < 1.0)) throw ConfigError("probes.eps_T11 must lie in (0, 1)");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

// ---------------------------------------------------------------- config parsing

namespace {

class YamlReader {
 public:
  explicit YamlReader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& n, const std::string& msg) const {
    const auto mark = n.Mark();
    throw ConfigError(source_ + ":" + std::to_string(mark.line + 1) + ": " + msg);
  }

  void keys(const YAML::Node& map, const std::set<std::string>& allowed, const std::string& section) const {
    if (!map.IsMap()) fail(map, "section '" + section + "' must be a mapping");
    for (auto it = map.begin(); it != map.end(); ++it) {
      const std::string key = it->first.as<std::string>();
      if (!allowed.count(key)) fail(it->first, "unknown key '" + key + "' in section '" + section + "'");
    }
  }

  template <class T>
  void get(const YAML::Node& map, const char* key, T& out) const {
    const YAML::Node n = map[key];
    if (!n) return;
    if (!n.IsScalar()) fail(n, std::string("key '") + key + "' expects a scalar");
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, std::string("key '") + key + "' has an invalid value '" + n.Scalar() + "'");
    }
  }

  template <class Parse, class T>
  void get_enum(const YAML::Node& map, const char* key, T& out, Parse parse) const {
    std::string s;
    get(map, key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      fail(map[key], e.what());
    }
  }

 private:
  std::string source_;
};

const std::set<std::string> kHyperKeys = {"d",       "P",    "s_star",          "s_f",
                                          "iota",    "gamma", "sigma_zeta",     "k_plus",
                                          "k_minus", "m",    "m_sub",           "sigma_0",
                                          "c_0",     "eta",  "N",               "bias_decay_beta",
                                          "threshold_log_d", "threshold_gap_multiplier"};
const std::set<std::string> kTrainKeys = {"enabled",   "max_steps",       "eta",        "bias_rule",
                                          "log_every", "dense_log_steps", "loss_floor", "diag_per_subclass"};
const std::set<std::string> kProbeKeys = {"checks",
                                          "eps_T11",
                                          "audit_n_eval",
                                          "phase1_probe",
                                          "singleton_min_rate",
                                          "nesting_max_violation",
                                          "tracer_spread_factor",
                                          "coarse_margin_lo",
                                          "coarse_margin_hi",
                                          "fine_margin_rel_tol",
                                          "log_fit_min_r2",
                                          "log_fit_C_factor",
                                          "growth_ratio_factor",
                                          "coarse_normal_acc_min",
                                          "coarse_hard_ratio_max",
                                          "coarse_hard_acc_max",
                                          "fine_acc_min"};

void read_hyper(const YamlReader& r, const YAML::Node& n, HyperParams& p) {
  r.keys(n, kHyperKeys, "hyperparams");
  r.get(n, "d", p.d);
  r.get(n, "P", p.P);
  r.get(n, "s_star", p.s_star);
  r.get(n, "s_f", p.s_f);
  r.get(n, "iota", p.iota);
  r.get(n, "gamma", p.gamma);
  r.get(n, "sigma_zeta", p.sigma_zeta);
  r.get(n, "k_plus", p.k_plus);
  r.get(n, "k_minus", p.k_minus);
  r.get(n, "m", p.m);
  r.get(n, "m_sub", p.m_sub);
  r.get(n, "sigma_0", p.sigma_0);
  r.get(n, "c_0", p.c_0);
  r.get(n, "eta", p.eta);
  r.get(n, "N", p.N);
  r.get(n, "bias_decay_beta", p.bias_decay_beta);
  r.get(n, "threshold_log_d", p.threshold_log_d);
  r.get(n, "threshold_gap_multiplier", p.threshold_gap_multiplier);
}

void read_regime(const YamlReader& r, const YAML::Node& n, const std::string& name, RegimeConfig& rc) {
  r.keys(n, kTrainKeys, "train." + name);
  TrainConfig& t = rc.train;
  r.get(n, "enabled", rc.enabled);
  r.get(n, "max_steps", t.max_steps);
  r.get(n, "eta", t.eta);
  r.get_enum(n, "bias_rule", t.bias_rule, parse_bias_rule);
  r.get(n, "log_every", t.log_every);
  r.get(n, "dense_log_steps", t.dense_log_steps);
  r.get(n, "loss_floor", t.loss_floor);
  r.get(n, "diag_per_subclass", t.diag_per_subclass);
}

void read_probes(const YamlReader& r, const YAML::Node& n, ProbeConfig& p) {
  r.keys(n, kProbeKeys, "probes");
  r.get(n, "checks", p.checks);
  r.get(n, "eps_T11", p.eps_T11);
  r.get(n, "audit_n_eval", p.audit_n_eval);
  r.get(n, "phase1_probe", p.phase1_probe);
  r.get(n, "singleton_min_rate", p.singleton_min_rate);
  r.get(n, "nesting_max_violation", p.nesting_max_violation);
  r.get(n, "tracer_spread_factor", p.tracer_spread_factor);
  r.get(n, "coarse_margin_lo", p.coarse_margin_lo);
  r.get(n, "coarse_margin_hi", p.coarse_margin_hi);
  r.get(n, "fine_margin_rel_tol", p.fine_margin_rel_tol);
  r.get(n, "log_fit_min_r2", p.log_fit_min_r2);
  r.get(n, "log_fit_C_factor", p.log_fit_C_factor);
  r.get(n, "growth_ratio_factor", p.growth_ratio_factor);
  r.get(n, "coarse_normal_acc_min", p.coarse_normal_acc_min);
  r.get(n, "coarse_hard_ratio_max", p.coarse_hard_ratio_max);
  r.get(n, "coarse_hard_acc_max", p.coarse_hard_acc_max);
  r.get(n, "fine_acc_min", p.fine_acc_min);
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source,
                                         std::optional<Preset> preset_override) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  const YamlReader r(source);
  if (!root.IsMap()) throw ConfigError(source + ": top level must be a mapping");
  r.keys(root, {"master_seed", "output_dir", "preset", "dictionary_mode", "hyperparams", "train", "probes"},
         "top level");

  Preset preset = Preset::Desk;
  r.get_enum(root, "preset", preset, parse_preset);
  if (preset_override) preset = *preset_override;
  int d = 128;
  if (root["hyperparams"]) {
    r.keys(root["hyperparams"], kHyperKeys, "hyperparams");
    r.get(root["hyperparams"], "d", d);
  }
  if (d < 2) r.fail(root["hyperparams"]["d"], "d must be >= 2");
  ExperimentConfig cfg = ExperimentConfig::defaults(preset, d);
  r.get(root, "master_seed", cfg.master_seed);
  std::string out;
  r.get(root, "output_dir", out);
  if (!out.empty()) cfg.output_dir = out;
  r.get_enum(root, "dictionary_mode", cfg.dictionary_mode, parse_dictionary_mode);
  if (root["hyperparams"]) read_hyper(r, root["hyperparams"], cfg.hyperparams);
  cfg.coarse.train.eta = cfg.fine.train.eta = cfg.hyperparams.eta;
  if (const YAML::Node t = root["train"]) {
    r.keys(t, {"coarse", "fine"}, "train");
    if (t["coarse"]) read_regime(r, t["coarse"], "coarse", cfg.coarse);
    if (t["fine"]) read_regime(r, t["fine"], "fine", cfg.fine);
  }
  if (root["probes"]) read_probes(r, root["probes"], cfg.probes);
  try {
    cfg.finalize();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path, std::optional<Preset> preset_override) {
  return parse_experiment_config(read_text(path), path.string(), preset_override);
}

std::string to_yaml(const ExperimentConfig& cfg) {
  const HyperParams& p = cfg.hyperparams;
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "master_seed" << YAML::Value << cfg.master_seed;
  e << YAML::Key << "output_dir" << YAML::Value << cfg.output_dir.string();
  e << YAML::Key << "preset" << YAML::Value << std::string(to_string(p.preset));
  e << YAML::Key << "dictionary_mode" << YAML::Value << std::string(to_string(cfg.dictionary_mode));
  e << YAML::Key << "hyperparams" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "d" << YAML::Value << p.d << YAML::Key << "P" << YAML::Value << p.P;
  e << YAML::Key << "s_star" << YAML::Value << p.s_star << YAML::Key << "s_f" << YAML::Value << p.s_f;
  e << YAML::Key << "iota" << YAML::Value << p.iota << YAML::Key << "gamma" << YAML::Value << p.gamma;
  e << YAML::Key << "sigma_zeta" << YAML::Value << p.sigma_zeta;
  e << YAML::Key << "k_plus" << YAML::Value << p.k_plus << YAML::Key << "k_minus" << YAML::Value << p.k_minus;
  e << YAML::Key << "m" << YAML::Value << p.m << YAML::Key << "m_sub" << YAML::Value << p.m_sub;
  e << YAML::Key << "sigma_0" << YAML::Value << p.sigma_0 << YAML::Key << "c_0" << YAML::Value << p.c_0;
  e << YAML::Key << "eta" << YAML::Value << p.eta << YAML::Key << "N" << YAML::Value << p.N;
  e << YAML::Key << "bias_decay_beta" << YAML::Value << p.bias_decay_beta;
  e << YAML::Key << "threshold_log_d" << YAML::Value << p.threshold_log_d;
  e << YAML::Key << "threshold_gap_multiplier" << YAML::Value << p.threshold_gap_multiplier;
  e << YAML::EndMap;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  for (const auto* rc : {&cfg.coarse, &cfg.fine}) {
    const TrainConfig& t = rc->train;
    e << YAML::Key << std::string(to_string(t.regime)) << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "enabled" << YAML::Value << rc->enabled;
    e << YAML::Key << "max_steps" << YAML::Value << t.max_steps;
    e << YAML::Key << "eta" << YAML::Value << t.eta;
    e << YAML::Key << "bias_rule" << YAML::Value << std::string(to_string(t.bias_rule));
    e << YAML::Key << "log_every" << YAML::Value << t.log_every;
    e << YAML::Key << "dense_log_steps" << YAML::Value << t.dense_log_steps;
    e << YAML::Key << "loss_floor" << YAML::Value << t.loss_floor;
    e << YAML::Key << "diag_per_subclass" << YAML::Value << t.diag_per_subclass;
    e << YAML::EndMap;
  }
  e << YAML::EndMap;
  const ProbeConfig& q = cfg.probes;
  e << YAML::Key << "probes" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "checks" << YAML::Value << q.checks;
  e << YAML::Key << "eps_T11" << YAML::Value << q.eps_T11;
  e << YAML::Key << "audit_n_eval" << YAML::Value << q.audit_n_eval;
  e << YAML::Key << "phase1_probe" << YAML::Value << q.phase1_probe;
  e << YAML::Key << "singleton_min_rate" << YAML::Value << q.singleton_min_rate;
  e << YAML::Key << "nesting_max_violation" << YAML::Value << q.nesting_max_violation;
  e << YAML::Key << "tracer_spread_factor" << YAML::Value << q.tracer_spread_factor;
  e << YAML::Key << "coarse_margin_lo" << YAML::Value << q.coarse_margin_lo;
  e << YAML::Key << "coarse_margin_hi" << YAML::Value << q.coarse_margin_hi;
  e << YAML::Key << "fine_margin_rel_tol" << YAML::Value << q.fine_margin_rel_tol;
  e << YAML::Key << "log_fit_min_r2" << YAML::Value << q.log_fit_min_r2;
  e << YAML::Key << "log_fit_C_factor" << YAML::Value << q.log_fit_C_factor;
  e << YAML::Key << "growth_ratio_factor" << YAML::Value << q.growth_ratio_factor;
  e << YAML::Key << "coarse_normal_acc_min" << YAML::Value << q.coarse_normal_acc_min;
  e << YAML::Key << "coarse_hard_ratio_max" << YAML::Value << q.coarse_hard_ratio_max;
  e << YAML::Key << "coarse_hard_acc_max" << YAML::Value << q.coarse_hard_acc_max;
  e << YAML::Key << "fine_acc_min" << YAML::Value << q.fine_acc_min;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

// ---------------------------------------------------------------- running

namespace {

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
json step_or_null(const std::optional<std::int64_t>& s) { return s ? json(*s) : json(nullptr); }

json make_check(const std::string& name, const std::string& regime, bool enabled, bool passed, double value,
                double lo, double hi) {
  return {{"name", name},
          {"regime", regime},
          {"enabled", enabled},
          {"passed", enabled && passed},
          {"value", num_or_null(value)},
          {"lo", num_or_null(lo)},
          {"hi", num_or_null(hi)}};
}

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool within(double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; }

std::string ended_in(const TrainHistory& h, const PhaseBoundaries& b) {
  if (h.steps_run == 0) return "init";
  if (!b.T0) return "phase1";
  if (!b.T11) return "phase2-early";
  return "phase2";
}

void note(std::ostream* log, const std::string& msg) {
  if (log) *log << msg << std::endl;
}

}  // namespace

RegimeOutcome run_regime(const ExperimentConfig& cfg, const Dictionary& dict, Variant regime, const fs::path& dir,
                         std::ostream* log) {
  const HyperParams& params = cfg.hyperparams;
  const ProbeConfig& pc = cfg.probes;
  const TrainConfig& tc = regime == Variant::Coarse ? cfg.coarse.train : cfg.fine.train;
  const std::string name(to_string(regime));
  fs::create_directories(dir);

  RegimeOutcome out;
  out.regime = regime;
  note(log, "[" + name + "] training up to " + std::to_string(tc.max_steps) + " steps");
  {
    std::ofstream jsonl(dir / "history.jsonl", std::ios::binary);
    if (!jsonl) throw std::runtime_error("cannot write " + (dir / "history.jsonl").string());
    out.result = train_run(params, tc, dict, &jsonl);
  }
  const TrainResult& res = out.result;
  note(log, "[" + name + "] " + std::to_string(res.history.steps_run) + " steps, final loss " +
                std::to_string(res.history.final_loss));
  save_network(dir / "checkpoint.bin", res.network);

  out.geometry = init_geometry_report(res.init_sets);
  write_text(dir / "init_geometry.csv", geometry_csv(out.geometry, &dict));

  const Network init = init_network(params, regime, tc.seed);
  out.initial_margin = mean_correct_margin(init, dict, params, pc.audit_n_eval, tc.seed);

  PhaseReport& rep = out.report;
  rep.boundaries = detect_phase_boundaries(res.history, params, pc.eps_T11);
  rep.spread_bound = pc.tracer_spread_factor * params.sigma_0 * std::sqrt(std::log(static_cast<double>(params.d)));
  rep.growth_ratio = kNaN;
  if (rep.boundaries.T0) {
    const std::int64_t T0 = *rep.boundaries.T0;
    rep.growth_ratio = phase1_growth_ratio(res.history, T0);
    if (pc.phase1_probe) {
      const std::int64_t mid = (T0 + 1) / 2;  // T0 / 2 rounded half up, so T0 = 1 probes step 1
      rep.mid_step = mid;
      TrainConfig rerun = tc;
      rerun.max_steps = T0;
      rerun.loss_floor = -1.0;
      train_run(params, rerun, dict, nullptr, [&](std::int64_t t, const Network& net) {
        if (t == mid) rep.singleton = singleton_report(net, dict, make_batch(dict, params, t, tc.seed), res.init_sets);
        if (t == T0) rep.spread = tracer_spread(net, init, res.init_sets);
      });
    }
  }

  const Tracers& tr = res.tracers;
  const int v_plus = dict.index_common_plus;
  const double star_size =
      tr.common >= 0 ? static_cast<double>(res.init_sets.star(tr.common_head, v_plus).size()) : 0.0;
  rep.C_theory = tc.eta * (params.s_star / (2.0 * params.P)) * params.s_star * star_size;
  rep.fit.message = "T11 not reached";
  if (rep.boundaries.T11 && !res.history.records.empty()) {
    const double lo = static_cast<double>(*rep.boundaries.T11);
    const double hi = static_cast<double>(res.history.records.back().step);
    std::vector<double> t, A;
    for (const auto& r : res.history.records) {
      if (r.step < lo) continue;
      t.push_back(static_cast<double>(r.step));
      A.push_back(params.s_star * star_size * r.A_common);
    }
    if (t.size() >= 10) {
      rep.fit = fit_log_growth(t, A, lo, hi);
    } else {
      rep.fit.points = static_cast<int>(t.size());
      rep.fit.message = "fewer than 10 logged points after T11";
    }
  }

  out.audit = hard_example_audit(res.network, regime, dict, params, pc.audit_n_eval, tc.seed);
  rep.hard_vs_normal_ratio = out.audit.hard_vs_normal_ratio;
  rep.ended_in = ended_in(res.history, rep.boundaries);

  write_text(dir / "phase_report.json", to_json(rep).dump(2) + "\n");
  write_text(dir / "audit.json", to_json(out.audit).dump(2) + "\n");
  note(log, "[" + name + "] normal acc " + std::to_string(out.audit.normal_accuracy) + ", hard acc " +
                std::to_string(out.audit.hard_accuracy) + ", ended in " + rep.ended_in);

  json& s = out.summary;
  s["regime"] = name;
  s["steps_run"] = res.history.steps_run;
  s["reached_loss_floor"] = res.history.reached_loss_floor;
  s["final_loss"] = num_or_null(res.history.steps_run > 0 ? res.history.final_loss : kNaN);
  s["initial_margin"] = num_or_null(out.initial_margin);
  s["T0"] = step_or_null(rep.boundaries.T0);
  s["T11"] = step_or_null(rep.boundaries.T11);
  s["ended_in"] = rep.ended_in;
  s["fit"] = {{"ok", rep.fit.ok},
              {"C", num_or_null(rep.fit.ok ? rep.fit.C : kNaN)},
              {"t0", num_or_null(rep.fit.ok ? rep.fit.t0 : kNaN)},
              {"r2", num_or_null(rep.fit.ok ? rep.fit.r2 : kNaN)},
              {"points", rep.fit.points}};
  s["C_theory"] = num_or_null(rep.C_theory);
  s["mid_step"] = step_or_null(rep.mid_step);
  s["singleton_rate"] = num_or_null(rep.mid_step ? rep.singleton.rate : kNaN);
  s["nesting_violation"] = num_or_null(rep.mid_step ? rep.singleton.nesting_violation : kNaN);
  s["tracer_spread"] = num_or_null(rep.mid_step ? rep.spread.weight : kNaN);
  s["tracer_spread_bound"] = num_or_null(rep.spread_bound);
  s["growth_ratio"] = num_or_null(rep.growth_ratio);
  s["min_s_star"] = out.geometry.min_star;
  s["geometry_mean_dev"] = num_or_null(out.geometry.mean_star_dev);
  s["audit"] = {{"normal_accuracy", out.audit.normal_accuracy},
                {"hard_accuracy", out.audit.hard_accuracy},
                {"normal_mean_Fy", num_or_null(out.audit.normal_mean_Fy)},
                {"hard_mean_Fy", num_or_null(out.audit.hard_mean_Fy)},
                {"hard_vs_normal_ratio", num_or_null(out.audit.hard_vs_normal_ratio)}};
  return out;
}

namespace {

std::vector<json> regime_checks(const ExperimentConfig& cfg, const RegimeOutcome& o) {
  const ProbeConfig& pc = cfg.probes;
  const HyperParams& p = cfg.hyperparams;
  const std::string name(to_string(o.regime));
  const bool on = pc.checks && o.result.history.steps_run > 0;
  const PhaseReport& r = o.report;
  std::vector<json> checks;
  if (o.regime == Variant::Coarse) {
    checks.push_back(make_check("init_geometry_nonempty", name, on, o.geometry.min_star >= 1, o.geometry.min_star, 1,
                                kInf));
    checks.push_back(make_check("initial_margin", name, on,
                                within(o.initial_margin, pc.coarse_margin_lo, pc.coarse_margin_hi), o.initial_margin,
                                pc.coarse_margin_lo, pc.coarse_margin_hi));
    const double sr = r.mid_step ? r.singleton.rate : kNaN;
    checks.push_back(make_check("phase1_singleton_rate", name, on, within(sr, pc.singleton_min_rate, 1.0), sr,
                                pc.singleton_min_rate, 1.0));
    const double nv = r.mid_step ? r.singleton.nesting_violation : kNaN;
    checks.push_back(make_check("phase1_set_nesting", name, on, within(nv, 0.0, pc.nesting_max_violation), nv, 0.0,
                                pc.nesting_max_violation));
    const double sp = r.mid_step ? r.spread.weight : kNaN;
    checks.push_back(
        make_check("phase1_tracer_spread", name, on, within(sp, 0.0, r.spread_bound), sp, 0.0, r.spread_bound));
    const double target = 1.0 / p.k_plus;
    checks.push_back(make_check("phase1_growth_ratio", name, on,
                                within(r.growth_ratio, target / pc.growth_ratio_factor, target * pc.growth_ratio_factor),
                                r.growth_ratio, target / pc.growth_ratio_factor, target * pc.growth_ratio_factor));
    const double r2 = r.fit.ok ? r.fit.r2 : kNaN;
    checks.push_back(make_check("phase2_log_fit_r2", name, on, within(r2, pc.log_fit_min_r2, 1.0), r2,
                                pc.log_fit_min_r2, 1.0));
    const double c_ratio = r.fit.ok && r.C_theory > 0 ? r.fit.C / r.C_theory : kNaN;
    checks.push_back(make_check("phase2_log_fit_C", name, on,
                                within(c_ratio, 1.0 / pc.log_fit_C_factor, pc.log_fit_C_factor), c_ratio,
                                1.0 / pc.log_fit_C_factor, pc.log_fit_C_factor));
    checks.push_back(make_check("reached_loss_floor", name, on, o.result.history.reached_loss_floor,
                                o.result.history.final_loss, 0.0, cfg.coarse.train.loss_floor));
    checks.push_back(make_check("normal_accuracy", name, on,
                                within(o.audit.normal_accuracy, pc.coarse_normal_acc_min, 1.0),
                                o.audit.normal_accuracy, pc.coarse_normal_acc_min, 1.0));
    checks.push_back(make_check("hard_vs_normal_response", name, on,
                                within(o.audit.hard_vs_normal_ratio, -kInf, pc.coarse_hard_ratio_max),
                                o.audit.hard_vs_normal_ratio, kNaN, pc.coarse_hard_ratio_max));
    checks.push_back(make_check("hard_accuracy", name, on, within(o.audit.hard_accuracy, 0.0, pc.coarse_hard_acc_max),
                                o.audit.hard_accuracy, 0.0, pc.coarse_hard_acc_max));
  } else {
    const double target = 1.0 - 1.0 / (2.0 * p.k_plus);
    const double lo = target * (1.0 - pc.fine_margin_rel_tol), hi = target * (1.0 + pc.fine_margin_rel_tol);
    checks.push_back(
        make_check("initial_margin", name, on, within(o.initial_margin, lo, hi), o.initial_margin, lo, hi));
    checks.push_back(make_check("normal_accuracy", name, on, within(o.audit.normal_accuracy, pc.fine_acc_min, 1.0),
                                o.audit.normal_accuracy, pc.fine_acc_min, 1.0));
    checks.push_back(make_check("hard_accuracy", name, on, within(o.audit.hard_accuracy, pc.fine_acc_min, 1.0),
                                o.audit.hard_accuracy, pc.fine_acc_min, 1.0));
  }
  return checks;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

const std::set<std::string> kSummaryKeys = {"schema_version", "generated_at", "master_seed", "preset",
                                            "dictionary_mode", "hyperparams", "regimes", "comparison",
                                            "checks", "checks_enabled", "checks_failed"};
const std::set<std::string> kRegimeKeys = {"regime",         "steps_run",       "reached_loss_floor",
                                           "final_loss",     "initial_margin",  "T0",
                                           "T11",            "ended_in",        "fit",
                                           "C_theory",       "mid_step",        "singleton_rate",
                                           "nesting_violation", "tracer_spread", "tracer_spread_bound",
                                           "growth_ratio",   "min_s_star",      "geometry_mean_dev",
                                           "audit"};
const std::set<std::string> kFitKeys = {"ok", "C", "t0", "r2", "points"};
const std::set<std::string> kAuditKeys = {"normal_accuracy", "hard_accuracy", "normal_mean_Fy", "hard_mean_Fy",
                                          "hard_vs_normal_ratio"};
const std::set<std::string> kComparisonKeys = {"coarse_hard_accuracy", "fine_hard_accuracy",
                                               "fine_minus_coarse_hard_accuracy"};
const std::set<std::string> kCheckKeys = {"name", "regime", "enabled", "passed", "value", "lo", "hi"};

void expect_keys(const json& j, const std::set<std::string>& keys, const std::string& where) {
  if (!j.is_object()) throw ContractError("summary schema: '" + where + "' is not an object");
  std::set<std::string> have;
  for (const auto& [k, _] : j.items()) have.insert(k);
  if (have == keys) return;
  std::string diff;
  for (const auto& k : keys)
    if (!have.count(k)) diff += " missing '" + k + "'";
  for (const auto& k : have)
    if (!keys.count(k)) diff += " unexpected '" + k + "'";
  throw ContractError("summary schema mismatch in '" + where + "':" + diff);
}

}  // namespace

void check_summary_schema(const json& s) {
  expect_keys(s, kSummaryKeys, "summary");
  expect_keys(s.at("regimes"), {"coarse", "fine"}, "regimes");
  for (const char* r : {"coarse", "fine"}) {
    const json& reg = s.at("regimes").at(r);
    if (reg.is_null()) continue;
    expect_keys(reg, kRegimeKeys, std::string("regimes.") + r);
    expect_keys(reg.at("fit"), kFitKeys, std::string("regimes.") + r + ".fit");
    expect_keys(reg.at("audit"), kAuditKeys, std::string("regimes.") + r + ".audit");
  }
  expect_keys(s.at("comparison"), kComparisonKeys, "comparison");
  if (!s.at("checks").is_array()) throw ContractError("summary schema: 'checks' is not an array");
  for (const auto& c : s.at("checks")) expect_keys(c, kCheckKeys, "checks[]");
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg_in, std::ostream* log) {
  ExperimentConfig cfg = cfg_in;
  cfg.finalize();
  const HyperParams& params = cfg.hyperparams;
  ExperimentOutcome out;
  out.dir = cfg.output_dir;
  fs::create_directories(out.dir);
  write_text(out.dir / "config.yaml", to_yaml(cfg));

  const std::uint64_t dict_seed = derive_seed(cfg.master_seed, Stream::Dictionary);
  const Dictionary dict = build_dictionary(params, cfg.dictionary_mode, dict_seed);
  save_dictionary(out.dir / "dictionary.bin", dict);

  json summary;
  summary["schema_version"] = 1;
  summary["generated_at"] = utc_timestamp();
  summary["master_seed"] = cfg.master_seed;
  summary["preset"] = std::string(to_string(params.preset));
  summary["dictionary_mode"] = std::string(to_string(cfg.dictionary_mode));
  summary["hyperparams"] = to_json(params);
  summary["regimes"] = {{"coarse", nullptr}, {"fine", nullptr}};
  json checks = json::array();
  std::map<Variant, double> hard_acc;
  for (const auto* rc : {&cfg.coarse, &cfg.fine}) {
    if (!rc->enabled) continue;
    const Variant v = rc->train.regime;
    RegimeOutcome o = run_regime(cfg, dict, v, out.dir / std::string(to_string(v)), log);
    summary["regimes"][std::string(to_string(v))] = o.summary;
    for (auto& c : regime_checks(cfg, o)) checks.push_back(std::move(c));
    if (o.result.history.steps_run > 0) hard_acc[v] = o.audit.hard_accuracy;
  }
  const bool both = hard_acc.size() == 2;
  const double ca = hard_acc.count(Variant::Coarse) ? hard_acc[Variant::Coarse] : kNaN;
  const double fa = hard_acc.count(Variant::Fine) ? hard_acc[Variant::Fine] : kNaN;
  summary["comparison"] = {{"coarse_hard_accuracy", num_or_null(ca)},
                           {"fine_hard_accuracy", num_or_null(fa)},
                           {"fine_minus_coarse_hard_accuracy", num_or_null(both ? fa - ca : kNaN)}};
  checks.push_back(make_check("fine_beats_coarse_on_hard", "both", cfg.probes.checks && both, both && fa > ca,
                              both ? fa - ca : kNaN, 0.0, kInf));
  int enabled = 0, failed = 0;
  for (const auto& c : checks) {
    if (!c.at("enabled").get<bool>()) continue;
    ++enabled;
    if (!c.at("passed").get<bool>()) ++failed;
  }
  summary["checks"] = checks;
  summary["checks_enabled"] = enabled;
  summary["checks_failed"] = failed;
  check_summary_schema(summary);
  write_text(out.dir / "summary.json", summary.dump(2) + "\n");
  for (const auto& c : checks) {
    if (!c.at("enabled").get<bool>()) continue;
    note(log, std::string(c.at("passed").get<bool>() ? "PASS " : "FAIL ") + c.at("regime").get<std::string>() + "/" +
                  c.at("name").get<std::string>());
  }
  out.exit_code = failed > 0 ? 1 : 0;
  out.summary = std::move(summary);
  return out;
}

// ---------------------------------------------------------------- reports

ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw ConfigError("unknown report format '" + std::string(s) + "' (expected csv or json)");
}

namespace {

std::string fmt(const json& v) {
  if (v.is_null()) return "";
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number()) {
    std::ostringstream os;
    os << std::setprecision(17) << v.get<double>();
    return os.str();
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

// Flattens one history record: arrays become key_0, key_1, ...
std::vector<std::pair<std::string, json>> flatten(const json& rec) {
  std::vector<std::pair<std::string, json>> out;
  for (const auto& [k, v] : rec.items()) {
    if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(k + "_" + std::to_string(i), v[i]);
    } else {
      out.emplace_back(k, v);
    }
  }
  return out;
}

}  // namespace

std::vector<fs::path> emit_report(const fs::path& dir, ReportFormat format) {
  std::vector<std::string> missing;
  if (!fs::exists(dir / "summary.json")) throw MissingArtifactError({(dir / "summary.json").string()});
  const json summary = json::parse(read_text(dir / "summary.json"));
  check_summary_schema(summary);
  std::vector<std::string> regimes;
  for (const char* r : {"coarse", "fine"}) {
    if (summary.at("regimes").at(r).is_null()) continue;
    regimes.push_back(r);
    for (const char* f : {"history.jsonl", "phase_report.json", "audit.json", "checkpoint.bin"})
      if (!fs::exists(dir / r / f)) missing.push_back((dir / r / f).string());
  }
  if (!missing.empty()) throw MissingArtifactError(missing);

  json history = json::array();
  for (const auto& r : regimes) {
    std::istringstream in(read_text(dir / r / "history.jsonl"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json row = {{"regime", r}};
      for (auto& [k, v] : flatten(json::parse(line))) row[k] = v;
      history.push_back(std::move(row));
    }
  }
  json metrics = json::array();
  for (const auto& r : regimes) {
    const json& s = summary.at("regimes").at(r);
    metrics.push_back({{"regime", r},
                       {"T0", s.at("T0")},
                       {"T11", s.at("T11")},
                       {"fit_C", s.at("fit").at("C")},
                       {"fit_t0", s.at("fit").at("t0")},
                       {"fit_R2", s.at("fit").at("r2")},
                       {"C_theory", s.at("C_theory")},
                       {"normal_accuracy", s.at("audit").at("normal_accuracy")},
                       {"hard_accuracy", s.at("audit").at("hard_accuracy")},
                       {"hard_vs_normal_ratio", s.at("audit").at("hard_vs_normal_ratio")}});
  }

  std::vector<fs::path> written;
  if (format == ReportFormat::Json) {
    const fs::path p = dir / "report.json";
    write_text(p, json{{"history", history}, {"metrics", metrics}}.dump(2) + "\n");
    written.push_back(p);
    return written;
  }
  auto table = [&](const json& rows, const fs::path& p) {
    std::vector<std::string> cols{"regime"};
    std::set<std::string> seen{"regime"};
    for (const auto& row : rows)
      for (const auto& [k, _] : row.items())
        if (seen.insert(k).second) cols.push_back(k);
    std::ostringstream os;
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << (row.contains(cols[i]) ? fmt(row[cols[i]]) : "");
      os << '\n';
    }
    write_text(p, os.str());
    written.push_back(p);
  };
  table(history, dir / "report_history.csv");
  table(metrics, dir / "report_metrics.csv");
  return written;
}

}  // namespace lgsim
