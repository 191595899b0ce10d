#include "lgsim/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "lgsim/engine.hpp"
#include "lgsim/error.hpp"
#include "lgsim/rng.hpp"

namespace lgsim {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json opt_json(const std::optional<std::int64_t>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
}  // namespace

std::string feature_name(const Dictionary& dict, int feature) {
  if (feature == dict.index_common_plus) return "v+";
  if (feature == dict.index_common_minus) return "v-";
  for (int c = 0; c < dict.k(); ++c) {
    if (dict.indices_sub_plus[c] == feature) return "v+," + std::to_string(c);
    if (c < static_cast<int>(dict.indices_sub_minus.size()) && dict.indices_sub_minus[c] == feature)
      return "v-," + std::to_string(c);
  }
  return "w" + std::to_string(feature);
}

GeometryReport init_geometry_report(const NeuronSets& sets) {
  GeometryReport g;
  for (std::size_t h = 0; h < sets.s_star.size(); ++h)
    for (int v = 0; v < sets.num_designated; ++v)
      g.rows.push_back({static_cast<int>(h), v, static_cast<int>(sets.s_star[h][v].size()),
                        static_cast<int>(sets.s[h][v].size())});
  for (const auto& head : sets.u)
    for (const auto& u : head) g.max_u = std::max(g.max_u, static_cast<int>(u.size()));
  if (g.rows.empty()) return g;
  g.min_star = std::numeric_limits<int>::max();
  double sum = 0.0;
  std::int64_t pairs = 0;
  for (const auto& a : g.rows) {
    g.min_star = std::min(g.min_star, a.s_star);
    for (const auto& b : g.rows) {
      if (b.s == 0) {
        g.failure = true;
      } else {
        g.max_star_vs_s_dev = std::max(g.max_star_vs_s_dev, std::abs(double(a.s_star) / b.s - 1.0));
      }
      if (&a == &b) continue;
      if (b.s_star == 0) {
        g.failure = true;
        continue;
      }
      const double dev = std::abs(double(a.s_star) / b.s_star - 1.0);
      g.max_star_dev = std::max(g.max_star_dev, dev);
      sum += dev;
      ++pairs;
    }
  }
  g.mean_star_dev = pairs ? sum / pairs : 0.0;
  return g;
}

std::string geometry_csv(const GeometryReport& g, const Dictionary* dict) {
  std::ostringstream os;
  os << "head,feature,feature_name,s_star,s\n";
  for (const auto& r : g.rows)
    os << r.head << ',' << r.feature << ',' << (dict ? feature_name(*dict, r.feature) : std::to_string(r.feature))
       << ',' << r.s_star << ',' << r.s << '\n';
  return os.str();
}

nlohmann::json to_json(const GeometryReport& g) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : g.rows) rows.push_back({{"head", r.head}, {"feature", r.feature}, {"s_star", r.s_star}, {"s", r.s}});
  return {{"rows", rows},
          {"max_star_dev", g.max_star_dev},
          {"max_star_vs_s_dev", g.max_star_vs_s_dev},
          {"mean_star_dev", g.mean_star_dev},
          {"max_u", g.max_u},
          {"min_star", g.min_star},
          {"failure", g.failure}};
}

PhaseBoundaries detect_phase_boundaries(const TrainHistory& history, const HyperParams& params, double eps_T11) {
  PhaseBoundaries b;
  const double t0_threshold =
      history.regime == Variant::Coarse ? 1.0 / params.d : 1.0 / (1.5 * params.k_plus);
  for (const auto& r : history.records) {
    const double stat = history.regime == Variant::Coarse ? r.diag_Fy_max : r.diag_logit_max;
    if (!b.T0 && stat >= t0_threshold) b.T0 = r.step;
    if (b.T0 && !b.T11 && r.diag_ratio >= 1.0 - eps_T11) {
      b.T11 = r.step;
      break;
    }
  }
  return b;
}

LogFit fit_log_growth(const std::vector<double>& t, const std::vector<double>& A, double t_lo, double t_hi) {
  if (t.size() != A.size()) throw ContractError("fit_log_growth: t and A differ in length");
  std::vector<double> tau, y;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] >= t_lo && t[i] <= t_hi && std::isfinite(A[i])) {
      tau.push_back(t[i] - t_lo);
      y.push_back(A[i]);
    }
  LogFit fit;
  fit.points = static_cast<int>(tau.size());
  if (fit.points < 10) throw ContractError("fit_log_growth needs at least 10 points in the window");
  const int n = fit.points;
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sst = 0.0;
  for (double v : y) sst += (v - mean) * (v - mean);
  if (!(sst > 1e-300) || *std::max_element(tau.begin(), tau.end()) <= 0.0) {
    fit.message = "degenerate series";
    return fit;
  }

  auto sse = [&](double lc, double lt) {
    const double C = std::exp(lc), t0 = std::exp(lt);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = std::log(C * tau[i] + t0) - y[i];
      s += r * r;
    }
    return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
  };

  // Initial guess: e^A is linear in tau under the model.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double e = std::exp(std::min(y[i], 700.0));
    sx += tau[i];
    sy += e;
    sxx += tau[i] * tau[i];
    sxy += tau[i] * e;
  }
  const double den = n * sxx - sx * sx;
  double C0 = den > 0 ? (n * sxy - sx * sy) / den : 0.0;
  double T0 = (sy - C0 * sx) / n;
  if (!(C0 > 0) || !std::isfinite(C0)) C0 = std::max(1e-12, std::abs(std::exp(y.back()) - std::exp(y.front())) / (tau.back() + 1.0));
  if (!(T0 > 0) || !std::isfinite(T0)) T0 = std::max(1e-12, std::exp(std::min(y.front(), 700.0)));

  double best_lc = std::log(C0), best_lt = std::log(T0), best = sse(best_lc, best_lt);
  const double lc_c = best_lc, lt_c = best_lt;
  for (int a = -20; a <= 20; ++a)
    for (int b = -20; b <= 20; ++b) {
      const double lc = lc_c + a * 0.25 * std::log(10.0), lt = lt_c + b * 0.25 * std::log(10.0);
      const double s = sse(lc, lt);
      if (s < best) {
        best = s;
        best_lc = lc;
        best_lt = lt;
      }
    }

  // Levenberg-Marquardt in (ln C, ln t0).
  double lambda = 1e-3;
  for (int it = 0; it < 500; ++it) {
    const double C = std::exp(best_lc), t0 = std::exp(best_lt);
    double jtj00 = 0, jtj01 = 0, jtj11 = 0, g0 = 0, g1 = 0;
    for (int i = 0; i < n; ++i) {
      const double q = C * tau[i] + t0;
      const double r = std::log(q) - y[i];
      const double j0 = C * tau[i] / q, j1 = t0 / q;
      jtj00 += j0 * j0;
      jtj01 += j0 * j1;
      jtj11 += j1 * j1;
      g0 += j0 * r;
      g1 += j1 * r;
    }
    bool improved = false;
    while (lambda < 1e12) {
      const double a00 = jtj00 * (1 + lambda), a11 = jtj11 * (1 + lambda), a01 = jtj01;
      const double det = a00 * a11 - a01 * a01;
      if (!(std::abs(det) > 0)) {
        lambda *= 10;
        continue;
      }
      const double d0 = -(a11 * g0 - a01 * g1) / det, d1 = -(a00 * g1 - a01 * g0) / det;
      const double s = sse(best_lc + d0, best_lt + d1);
      if (s < best) {
        const double rel = (best - s) / std::max(best, 1e-300);
        best = s;
        best_lc += d0;
        best_lt += d1;
        lambda = std::max(lambda / 10, 1e-12);
        improved = rel > 1e-15;
        break;
      }
      lambda *= 10;
    }
    if (!improved) break;
  }
  fit.C = std::exp(best_lc);
  fit.t0 = std::exp(best_lt);
  fit.r2 = 1.0 - best / sst;
  fit.ok = std::isfinite(fit.r2);
  if (!fit.ok) fit.message = "non-finite fit";
  return fit;
}

SingletonReport singleton_report(const Network& net, const Dictionary& dict, const Batch& batch,
                                 const NeuronSets& sets) {
  SingletonReport rep;
  std::int64_t correct = 0;
  const int H = net.num_heads();
  const int D = dict.num_designated();
  const int n = static_cast<int>(batch.samples.size());
  Engine eng(dict, net);
  const PatchBlock block = build_block(dict, batch.samples);
  const auto plan = eng.plan(net, block);
  Engine::Gates gates;
  eng.forward(net, block, plan, &gates);

  // v-tagged patch count per (sample, feature)
  std::vector<int> tagged(static_cast<std::size_t>(n) * D, 0);
  for (int i = 0; i < n; ++i) {
    const Sample& s = batch.samples[i];
    for (int p = 0; p < s.num_patches(); ++p) {
      if (s.tags[p] == PatchTag::FeatureNoise) continue;
      ++tagged[static_cast<std::size_t>(i) * D + s.components[s.component_offsets[p]].feature];
    }
  }

  for (int h = 0; h < H; ++h) {
    // slot of every strict-set neuron of this head
    std::vector<int> slot(net.heads[h].size(), -1);
    std::vector<int> owner;
    for (int v = 0; v < D; ++v)
      for (int r : sets.s_star[h][v]) {
        slot[r] = static_cast<int>(owner.size());
        owner.push_back(v);
      }
    const std::size_t S = owner.size();
    std::vector<int> on_v(S * n, 0), off_v(S * n, 0);
    std::vector<std::vector<std::uint8_t>> fires(D, std::vector<std::uint8_t>(net.heads[h].size(), 0));
    for (std::size_t c = 0; c < block.cats.size(); ++c) {
      const PatchCategory& cat = block.cats[c];
      const int feature = (!cat.noise && cat.support.size() == 1) ? cat.support[0] : -1;
      const auto& L = plan.live[c][h];
      const auto& mask = gates.mask[c][h];
      for (std::size_t l = 0; l < L.size(); ++l) {
        const int r = L[l];
        for (int i = 0; i < cat.rows(); ++i) {
          if (!mask[l * cat.rows() + i]) continue;
          if (feature >= 0) fires[feature][r] = 1;
          if (slot[r] < 0) continue;
          const std::size_t idx = static_cast<std::size_t>(slot[r]) * n + block.sample_of[cat.begin + i];
          if (feature == owner[slot[r]])
            ++on_v[idx];
          else
            ++off_v[idx];
        }
      }
    }
    for (std::size_t s = 0; s < S; ++s)
      for (int i = 0; i < n; ++i) {
        const std::size_t idx = s * n + i;
        ++rep.pairs;
        if (on_v[idx] == tagged[static_cast<std::size_t>(i) * D + owner[s]] && off_v[idx] == 0) ++correct;
      }
    for (int v = 0; v < D; ++v) {
      const auto& sv = sets.s[h][v];
      for (int r = 0; r < net.heads[h].size(); ++r) {
        if (!fires[v][r]) continue;
        ++rep.firing;
        if (!std::binary_search(sv.begin(), sv.end(), r)) ++rep.firing_outside;
      }
    }
  }
  rep.rate = rep.pairs ? double(correct) / rep.pairs : 1.0;
  rep.nesting_violation = rep.firing ? double(rep.firing_outside) / rep.firing : 0.0;
  return rep;
}

double singleton_activation_rate(const Network& net, const Dictionary& dict, const Batch& batch,
                                 const NeuronSets& sets) {
  return singleton_report(net, dict, batch, sets).rate;
}

TracerSpread tracer_spread(const Network& now, const Network& init, const NeuronSets& sets) {
  TracerSpread s;
  for (std::size_t h = 0; h < sets.s_star.size(); ++h)
    for (const auto& members : sets.s_star[h])
      for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b) {
          const auto wa = now.heads[h].weights.row(members[a]);
          const auto wb = now.heads[h].weights.row(members[b]);
          s.weight = std::max(s.weight, (wa - wb).norm());
          const Eigen::RowVectorXd ua = wa - init.heads[h].weights.row(members[a]);
          const Eigen::RowVectorXd ub = wb - init.heads[h].weights.row(members[b]);
          s.update = std::max(s.update, (ua - ub).norm());
        }
  return s;
}

double phase1_growth_ratio(const TrainHistory& history, std::int64_t until) {
  const HistoryRecord* first = nullptr;
  const HistoryRecord* last = nullptr;
  for (const auto& r : history.records) {
    if (r.step > until) break;
    if (!first) first = &r;
    last = &r;
  }
  if (!first || last == first) return kNaN;
  const double dc = last->A_common - first->A_common;
  double sum = 0.0;
  int cnt = 0;
  for (std::size_t c = 0; c < first->A_sub.size() && c < last->A_sub.size(); ++c) {
    const double ds = last->A_sub[c] - first->A_sub[c];
    if (std::isfinite(ds)) {
      sum += ds;
      ++cnt;
    }
  }
  if (!cnt || !(std::abs(dc) > 0)) return kNaN;
  return (sum / cnt) / dc;
}

AuditRecord hard_example_audit(const Network& net, Variant variant, const Dictionary& dict,
                               const HyperParams& params, int n_eval, std::uint64_t seed) {
  if (variant != net.variant) throw ContractError("audit variant does not match the network");
  AuditRecord a;
  a.variant = variant;
  a.n_eval = n_eval;
  Engine eng(dict, net);
  for (SampleKind kind : {SampleKind::Normal, SampleKind::Hard}) {
    const auto samples = make_eval_set(dict, params, n_eval, kind, seed, Stream::Audit);
    const PatchBlock block = build_block(dict, samples);
    const CoarseEval e = evaluate(eng, net, block);
    double fy = 0.0, fo = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const bool plus = samples[i].label.sign > 0;
      fy += plus ? e.F_plus[i] : e.F_minus[i];
      fo += plus ? e.F_minus[i] : e.F_plus[i];
    }
    const double n = static_cast<double>(samples.size());
    if (kind == SampleKind::Normal) {
      a.normal_accuracy = coarse_accuracy(e, samples);
      a.normal_mean_Fy = fy / n;
      a.normal_mean_Foff = fo / n;
    } else {
      a.hard_accuracy = coarse_accuracy(e, samples);
      a.hard_mean_Fy = fy / n;
      a.hard_mean_Foff = fo / n;
    }
  }
  a.hard_vs_normal_ratio = a.normal_mean_Fy != 0.0 ? a.hard_mean_Fy / a.normal_mean_Fy : kNaN;
  return a;
}

nlohmann::json to_json(const AuditRecord& a) {
  return {{"variant", std::string(to_string(a.variant))},
          {"n_eval_per_subclass", a.n_eval},
          {"normal_accuracy", a.normal_accuracy},
          {"hard_accuracy", a.hard_accuracy},
          {"normal_mean_Fy", a.normal_mean_Fy},
          {"hard_mean_Fy", a.hard_mean_Fy},
          {"normal_mean_Foff", a.normal_mean_Foff},
          {"hard_mean_Foff", a.hard_mean_Foff},
          {"hard_vs_normal_ratio", a.hard_vs_normal_ratio}};
}

double mean_correct_margin(const Network& net, const Dictionary& dict, const HyperParams& params, int n_eval,
                           std::uint64_t seed) {
  Engine eng(dict, net);
  const auto samples = make_eval_set(dict, params, n_eval, SampleKind::Normal, seed, Stream::Audit);
  const Eigen::MatrixXd F = eng.forward(net, build_block(dict, samples));
  double total = 0.0;
  std::vector<double> f(F.cols());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int h = 0; h < F.cols(); ++h) f[h] = F(static_cast<int>(i), h);
    total += 1.0 - softmax_logits(f)[net.head_of(samples[i].label)];
  }
  return total / static_cast<double>(samples.size());
}

LemmaResult lemma_monte_carlo(Lemma which, int d, std::int64_t trials, std::uint64_t seed, double sigma1,
                              double sigma2, double delta) {
  if (trials < 100000) throw ContractError("lemma_monte_carlo needs at least 1e5 trials");
  if (d < 1) throw ContractError("lemma_monte_carlo needs d >= 1");
  LemmaResult res;
  res.which = which;
  res.d = d;
  res.trials = trials;
  Rng rng = make_rng(seed, Stream::MonteCarlo, {static_cast<std::uint64_t>(which), static_cast<std::uint64_t>(d)});
  std::int64_t hits = 0;
  if (which == Lemma::NormTail) {
    const double limit = 5.0 * sigma1 * sigma1 * d;
    for (std::int64_t t = 0; t < trials; ++t) {
      double sq = 0.0;
      for (int j = 0; j < d; ++j) {
        const double g = sigma1 * standard_normal(rng);
        sq += g * g;
      }
      if (sq >= limit) ++hits;
    }
    res.bound = std::exp(-static_cast<double>(d));
  } else {
    if (!(delta > 0.0 && delta < 1.0)) throw ContractError("delta must lie in (0, 1)");
    const double limit = 10.0 * sigma1 * sigma2 * std::sqrt(d * std::log(1.0 / delta));
    for (std::int64_t t = 0; t < trials; ++t) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) {
        const double a = sigma1 * standard_normal(rng);
        const double b = sigma2 * standard_normal(rng);
        dot += a * b;
      }
      if (std::abs(dot) > limit) ++hits;
    }
    res.bound = delta;
  }
  res.frequency = static_cast<double>(hits) / static_cast<double>(trials);
  res.respects = res.frequency <= res.bound;
  return res;
}

nlohmann::json to_json(const PhaseReport& r) {
  const auto& f = r.fit;
  return {{"T0", opt_json(r.boundaries.T0)},
          {"T11", opt_json(r.boundaries.T11)},
          {"fit", {{"ok", f.ok}, {"C", f.C}, {"t0", f.t0}, {"R2", f.r2}, {"points", f.points}, {"message", f.message}}},
          {"C_theory", r.C_theory},
          {"mid_step", opt_json(r.mid_step)},
          {"singleton_rate", r.singleton.rate},
          {"singleton_pairs", r.singleton.pairs},
          {"nesting_violation", r.singleton.nesting_violation},
          {"tracer_weight_spread", r.spread.weight},
          {"tracer_update_spread", r.spread.update},
          {"tracer_spread_bound", r.spread_bound},
          {"growth_ratio", r.growth_ratio},
          {"hard_vs_normal_ratio", r.hard_vs_normal_ratio},
          {"ended_in", r.ended_in}};
}

}  // namespace lgsim
