#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lgsim/dictionary.hpp"
#include "lgsim/network.hpp"
#include "lgsim/neuron_sets.hpp"
#include "lgsim/sample.hpp"
#include "lgsim/trainer.hpp"

namespace lgsim {

std::string feature_name(const Dictionary& dict, int feature);

struct GeometryRow {
  int head = 0;
  int feature = 0;
  int s_star = 0;
  int s = 0;
};

struct GeometryReport {
  std::vector<GeometryRow> rows;
  double max_star_dev = 0.0;       // max over pairs | |S*(v)|/|S*(v')| - 1 |
  double max_star_vs_s_dev = 0.0;  // max over pairs | |S*(v)|/|S(v')| - 1 |
  double mean_star_dev = 0.0;      // mean over ordered pairs v != v' of | |S*(v)|/|S*(v')| - 1 |
  int max_u = 0;                   // max over neurons of |U(r)|
  int min_star = 0;
  bool failure = false;            // some denominator set was empty
};

GeometryReport init_geometry_report(const NeuronSets& sets);
std::string geometry_csv(const GeometryReport& g, const Dictionary* dict = nullptr);
nlohmann::json to_json(const GeometryReport& g);

struct PhaseBoundaries {
  std::optional<std::int64_t> T0;
  std::optional<std::int64_t> T11;
};

/// T0: first logged step whose max correct-class response reaches 1/d (coarse)
/// or whose max correct-class logit reaches 1/(1.5 k_plus) (fine). T11: first
/// logged step at or after T0 whose diagnostic loss-weight ratio reaches 1 - eps.
PhaseBoundaries detect_phase_boundaries(const TrainHistory& history, const HyperParams& params,
                                        double eps_T11 = 0.1);

struct LogFit {
  bool ok = false;
  double C = 0.0;
  double t0 = 0.0;
  double r2 = 0.0;
  int points = 0;
  std::string message;
};

/// Least squares fit of A(t) ~ ln(C (t - t_lo) + t0) over t in [t_lo, t_hi].
/// Throws ContractError with fewer than 10 points in the window.
LogFit fit_log_growth(const std::vector<double>& t, const std::vector<double>& A, double t_lo, double t_hi);

struct SingletonReport {
  double rate = 1.0;               // singleton-correct fraction of (S* neuron, sample) pairs
  std::int64_t pairs = 0;
  double nesting_violation = 0.0;  // share of neurons firing on v-tagged patches that lie outside S(v)
  std::int64_t firing = 0;
  std::int64_t firing_outside = 0;
};

SingletonReport singleton_report(const Network& net, const Dictionary& dict, const Batch& batch,
                                 const NeuronSets& sets);
double singleton_activation_rate(const Network& net, const Dictionary& dict, const Batch& batch,
                                 const NeuronSets& sets);

/// Max pairwise weight distance and max pairwise update distance inside each
/// strict set, over all heads and designated features.
struct TracerSpread {
  double weight = 0.0;
  double update = 0.0;
};
TracerSpread tracer_spread(const Network& now, const Network& init, const NeuronSets& sets);

/// Mean subclass tracer growth divided by common tracer growth between the
/// first record and the last record at or before `until`.
double phase1_growth_ratio(const TrainHistory& history, std::int64_t until);

struct AuditRecord {
  Variant variant = Variant::Coarse;
  int n_eval = 0;  // per subclass and kind
  double normal_accuracy = 0.0;
  double hard_accuracy = 0.0;
  double normal_mean_Fy = 0.0;
  double hard_mean_Fy = 0.0;
  double normal_mean_Foff = 0.0;
  double hard_mean_Foff = 0.0;
  double hard_vs_normal_ratio = 0.0;
};

AuditRecord hard_example_audit(const Network& net, Variant variant, const Dictionary& dict,
                               const HyperParams& params, int n_eval, std::uint64_t seed);
nlohmann::json to_json(const AuditRecord& a);

/// Mean of 1 - logit_y over a fresh normal set, logits over the network's own heads.
double mean_correct_margin(const Network& net, const Dictionary& dict, const HyperParams& params, int n_eval,
                           std::uint64_t seed);

enum class Lemma { NormTail, InnerProduct };

struct LemmaResult {
  Lemma which = Lemma::NormTail;
  int d = 0;
  std::int64_t trials = 0;
  double frequency = 0.0;
  double bound = 0.0;
  bool respects = false;
};

/// NormTail: frequency of ||g||^2 >= 5 sigma1^2 d against e^-d.
/// InnerProduct: frequency of |<g1,g2>| > 10 sigma1 sigma2 sqrt(d ln(1/delta)) against delta.
LemmaResult lemma_monte_carlo(Lemma which, int d, std::int64_t trials, std::uint64_t seed,
                              double sigma1 = 1.0, double sigma2 = 1.0, double delta = 0.01);

struct PhaseReport {
  PhaseBoundaries boundaries;
  LogFit fit;
  double C_theory = 0.0;
  std::optional<std::int64_t> mid_step;
  SingletonReport singleton;
  TracerSpread spread;
  double spread_bound = 0.0;
  double growth_ratio = 0.0;
  double hard_vs_normal_ratio = 0.0;
  std::string ended_in;  // "init", "phase1", "phase2-early" or "phase2"
};
nlohmann::json to_json(const PhaseReport& r);

}  // namespace lgsim
