#include "lgsim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lgsim/error.hpp"
#include "lgsim/rng.hpp"

namespace lgsim {

std::string_view to_string(BiasRule r) { return r == BiasRule::PlainDecay ? "plain_decay" : "clipped_decay"; }

BiasRule parse_bias_rule(std::string_view s) {
  if (s == "plain_decay") return BiasRule::PlainDecay;
  if (s == "clipped_decay") return BiasRule::ClippedDecay;
  throw ConfigError("unknown bias rule '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be positive");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (dense_log_steps < 0) throw ConfigError("dense_log_steps must be >= 0");
  if (diag_per_subclass < 1) throw ConfigError("diag_per_subclass must be >= 1");
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Workspace {
  std::vector<RowMatrix> grad;
  std::vector<std::vector<std::uint8_t>> touched;
  explicit Workspace(const Network& net) {
    for (const auto& g : net.heads) {
      grad.push_back(RowMatrix::Zero(g.size(), g.weights.cols()));
      touched.emplace_back(g.size(), 0);
    }
  }
};

struct ForwardState {
  Engine::Plan plan;
  Engine::Gates gates;
  Eigen::MatrixXd G;  // n x heads loss weights
  StepStats stats;
};

ForwardState forward_phase(const Network& net, const Engine& eng, const PatchBlock& block,
                           const std::vector<Sample>& samples, std::int64_t step) {
  ForwardState st;
  st.plan = eng.plan(net, block);
  const Eigen::MatrixXd F = eng.forward(net, block, st.plan, &st.gates);
  const int H = net.num_heads();
  const int n = static_cast<int>(samples.size());
  st.G.resize(n, H);
  const double centre = net.variant == Variant::Coarse ? 0.5 : 1.0 - 1.0 / (2.0 * net.params.k_plus);
  double loss = 0.0;
  std::vector<double> f(H);
  st.stats.margins.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int h = 0; h < H; ++h) f[h] = F(i, h);
    const int y = net.head_of(samples[i].label);
    const std::vector<double> g = loss_weights(f, y);
    for (int h = 0; h < H; ++h) st.G(i, h) = g[h];
    loss += cross_entropy(f, y);
    st.stats.margins[i] = g[y];
    st.stats.psi1_max = std::max(st.stats.psi1_max, std::abs(g[y] - centre));
  }
  st.stats.loss = n ? loss / n : 0.0;
  if (!std::isfinite(st.stats.loss)) throw TrainingDiverged(step);
  return st;
}

void update_phase(Network& net, Engine& eng, Workspace& ws, const PatchBlock& block, ForwardState& st,
                  const TrainConfig& cfg, const PatchBlock* next_block) {
  if (cfg.bias_rule == BiasRule::ClippedDecay && !next_block)
    throw ContractError("clipped_decay needs the next batch");
  eng.accumulate(block, st.plan, st.gates, st.G, ws.grad, ws.touched);
  const double scale = cfg.eta / (static_cast<double>(block.n_samples) * block.n_patches);
  const double beta = net.params.bias_decay_beta;
  double sq = 0.0;
  for (int h = 0; h < net.num_heads(); ++h) {
    auto& g = net.heads[h];
    std::vector<int> rows;
    for (int r = 0; r < g.size(); ++r) {
      if (!ws.touched[h][r]) continue;
      ws.touched[h][r] = 0;
      const Eigen::RowVectorXd dw = ws.grad[h].row(r) * scale;
      ws.grad[h].row(r).setZero();
      const double norm = dw.norm();
      if (norm == 0.0) continue;
      rows.push_back(r);
      g.weights.row(r) += dw;
      sq += norm * norm;
      st.stats.max_neuron_step = std::max(st.stats.max_neuron_step, norm);
      double dec = norm / beta;
      if (cfg.bias_rule == BiasRule::ClippedDecay) {
        const double best = eng.max_projection(*next_block, dw, dec);
        dec = std::min(dec, std::max(0.0, 0.1 * best));
      }
      g.biases(r) -= dec;
      st.stats.bias_shift += dec;
    }
    st.stats.touched += static_cast<int>(rows.size());
    eng.refresh(net, h, rows);
  }
  st.stats.grad_norm = std::sqrt(sq);
}

double feature_projection(const Network& net, const Dictionary& dict, int head, int neuron, int feature) {
  if (head < 0 || neuron < 0) return kNaN;
  return net.heads[head].weights.row(neuron).dot(dict.word(feature));
}

}  // namespace

StepStats sgd_step(Network& net, const Dictionary& dict, const Batch& batch, const TrainConfig& cfg,
                   const Batch* next_batch) {
  cfg.validate();
  if (cfg.regime != net.variant) throw ContractError("training regime does not match the network variant");
  Engine eng(dict, net);
  Workspace ws(net);
  const PatchBlock block = build_block(dict, batch.samples);
  std::optional<PatchBlock> next;
  if (next_batch) next = build_block(dict, next_batch->samples);
  ForwardState st = forward_phase(net, eng, block, batch.samples, batch.step_index);
  update_phase(net, eng, ws, block, st, cfg, next ? &*next : nullptr);
  return st.stats;
}

nlohmann::json to_json(const HistoryRecord& r) {
  return nlohmann::json{{"step", r.step},
                        {"loss", r.loss},
                        {"F_normal_plus", r.F_normal_plus},
                        {"F_normal_minus", r.F_normal_minus},
                        {"F_hard_plus", r.F_hard_plus},
                        {"F_hard_minus", r.F_hard_minus},
                        {"F_normal_off", r.F_normal_off},
                        {"F_hard_off", r.F_hard_off},
                        {"A_common", r.A_common},
                        {"A_sub", r.A_sub},
                        {"psi1_max", r.psi1_max},
                        {"tracer_bias", r.tracer_bias},
                        {"diag_Fy_max", r.diag_Fy_max},
                        {"diag_logit_max", r.diag_logit_max},
                        {"diag_ratio", r.diag_ratio},
                        {"acc_normal", r.acc_normal},
                        {"acc_hard", r.acc_hard},
                        {"grad_norm", r.grad_norm},
                        {"live_pairs", r.live_pairs}};
}

namespace {
double num(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  return v.is_null() ? kNaN : v.get<double>();
}
}  // namespace

HistoryRecord history_record_from_json(const nlohmann::json& j) {
  HistoryRecord r;
  r.step = j.at("step").get<std::int64_t>();
  r.loss = num(j, "loss");
  r.F_normal_plus = num(j, "F_normal_plus");
  r.F_normal_minus = num(j, "F_normal_minus");
  r.F_hard_plus = num(j, "F_hard_plus");
  r.F_hard_minus = num(j, "F_hard_minus");
  r.F_normal_off = j.contains("F_normal_off") ? num(j, "F_normal_off") : kNaN;
  r.F_hard_off = j.contains("F_hard_off") ? num(j, "F_hard_off") : kNaN;
  r.A_common = num(j, "A_common");
  for (const auto& v : j.at("A_sub")) r.A_sub.push_back(v.is_null() ? kNaN : v.get<double>());
  r.psi1_max = num(j, "psi1_max");
  r.tracer_bias = num(j, "tracer_bias");
  r.diag_Fy_max = j.contains("diag_Fy_max") ? num(j, "diag_Fy_max") : kNaN;
  r.diag_logit_max = j.contains("diag_logit_max") ? num(j, "diag_logit_max") : kNaN;
  r.diag_ratio = j.contains("diag_ratio") ? num(j, "diag_ratio") : kNaN;
  r.acc_normal = j.contains("acc_normal") ? num(j, "acc_normal") : kNaN;
  r.acc_hard = j.contains("acc_hard") ? num(j, "acc_hard") : kNaN;
  r.grad_norm = j.contains("grad_norm") ? num(j, "grad_norm") : kNaN;
  r.live_pairs = j.value("live_pairs", std::int64_t{0});
  return r;
}

CoarseEval evaluate(const Engine& engine, const Network& net, const PatchBlock& block) {
  CoarseEval e;
  e.F = engine.forward(net, block);
  const int n = static_cast<int>(e.F.rows());
  e.F_plus.resize(n);
  e.F_minus.resize(n);
  const int kp = net.params.k_plus;
  for (int i = 0; i < n; ++i) {
    if (net.variant == Variant::Coarse) {
      e.F_plus[i] = e.F(i, 0);
      e.F_minus[i] = e.F(i, 1);
    } else {
      e.F_plus[i] = e.F.row(i).head(kp).sum();
      e.F_minus[i] = e.F.row(i).tail(e.F.cols() - kp).sum();
    }
  }
  return e;
}

double coarse_accuracy(const CoarseEval& e, const std::vector<Sample>& samples) {
  if (samples.empty()) return kNaN;
  double correct = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double fy = samples[i].label.sign > 0 ? e.F_plus[i] : e.F_minus[i];
    const double fo = samples[i].label.sign > 0 ? e.F_minus[i] : e.F_plus[i];
    correct += fy > fo ? 1.0 : (fy == fo ? 0.5 : 0.0);
  }
  return correct / static_cast<double>(samples.size());
}

namespace {

struct DiagSummary {
  double F_plus = 0, F_minus = 0, F_off = 0, Fy_max = 0, logit_max = 0, ratio = 0, acc = 0;
};

DiagSummary summarize(const CoarseEval& e, const std::vector<Sample>& samples, const Network& net) {
  DiagSummary s;
  int np = 0, nm = 0;
  const int H = static_cast<int>(e.F.cols());
  std::vector<double> f(H);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool plus = samples[i].label.sign > 0;
    const double fy = plus ? e.F_plus[i] : e.F_minus[i];
    const double fo = plus ? e.F_minus[i] : e.F_plus[i];
    if (plus) {
      s.F_plus += fy;
      ++np;
    } else {
      s.F_minus += fy;
      ++nm;
    }
    s.F_off += fo;
    s.Fy_max = std::max(s.Fy_max, fy);
    // exp(F_o) / (exp(F_o - F_y) + 1) rewritten without overflow
    s.ratio += 1.0 / (std::exp(-fy) + std::exp(-fo));
    for (int h = 0; h < H; ++h) f[h] = e.F(i, h);
    s.logit_max = std::max(s.logit_max, softmax_logits(f)[net.head_of(samples[i].label)]);
  }
  const double n = static_cast<double>(samples.size());
  if (np) s.F_plus /= np;
  if (nm) s.F_minus /= nm;
  s.F_off /= n;
  s.ratio /= n;
  s.acc = coarse_accuracy(e, samples);
  return s;
}

}  // namespace

TrainResult train_run(const HyperParams& params, const TrainConfig& cfg, const Dictionary& dict,
                      std::ostream* jsonl, const StepHook& hook) {
  params.validate();
  cfg.validate();
  if (dict.d() != params.d) throw ConfigError("dictionary dimension does not match params.d");
  TrainResult res{init_network(params, cfg.regime, cfg.seed), {}, {}, {}};
  Network& net = res.network;
  res.history.regime = cfg.regime;
  res.init_sets = classify_init_neurons(net, dict, params);
  res.tracers = select_tracers(res.init_sets, net, dict);
  if (cfg.max_steps == 0) {
    if (hook) hook(0, net);
    return res;
  }

  Engine eng(dict, net);
  Workspace ws(net);
  const auto diag_normal =
      make_eval_set(dict, params, cfg.diag_per_subclass, SampleKind::Normal, cfg.seed, Stream::Diagnostic);
  const auto diag_hard =
      make_eval_set(dict, params, cfg.diag_per_subclass, SampleKind::Hard, cfg.seed, Stream::Diagnostic);
  const PatchBlock normal_block = build_block(dict, diag_normal);
  const PatchBlock hard_block = build_block(dict, diag_hard);
  const Tracers& tr = res.tracers;

  Batch batch = make_batch(dict, params, 0, cfg.seed);
  PatchBlock block = build_block(dict, batch.samples);
  for (std::int64_t t = 0;; ++t) {
    if (hook) hook(t, net);
    ForwardState st = forward_phase(net, eng, block, batch.samples, t);
    const bool stop = t >= cfg.max_steps || st.stats.loss <= cfg.loss_floor;
    const bool log = stop || t < cfg.dense_log_steps || t % cfg.log_every == 0;
    HistoryRecord rec;
    if (log) {
      rec.step = t;
      rec.loss = st.stats.loss;
      rec.psi1_max = st.stats.psi1_max;
      rec.live_pairs = st.plan.live_pairs;
      const DiagSummary dn = summarize(evaluate(eng, net, normal_block), diag_normal, net);
      const DiagSummary dh = summarize(evaluate(eng, net, hard_block), diag_hard, net);
      rec.F_normal_plus = dn.F_plus;
      rec.F_normal_minus = dn.F_minus;
      rec.F_normal_off = dn.F_off;
      rec.F_hard_plus = dh.F_plus;
      rec.F_hard_minus = dh.F_minus;
      rec.F_hard_off = dh.F_off;
      rec.diag_Fy_max = dn.Fy_max;
      rec.diag_logit_max = dn.logit_max;
      rec.diag_ratio = dn.ratio;
      rec.acc_normal = dn.acc;
      rec.acc_hard = dh.acc;
      rec.A_common = feature_projection(net, dict, tr.common_head, tr.common, dict.index_common_plus);
      for (int c = 0; c < dict.k(); ++c)
        rec.A_sub.push_back(feature_projection(net, dict, tr.sub_head[c], tr.sub[c], dict.sub(1, c)));
      rec.tracer_bias = tr.common >= 0 ? net.heads[tr.common_head].biases(tr.common) : kNaN;
    }
    if (stop) {
      res.history.reached_loss_floor = st.stats.loss <= cfg.loss_floor;
      res.history.final_loss = st.stats.loss;
    } else {
      Batch next = make_batch(dict, params, t + 1, cfg.seed);
      PatchBlock next_block = build_block(dict, next.samples);
      update_phase(net, eng, ws, block, st, cfg, &next_block);
      rec.grad_norm = st.stats.grad_norm;
      batch = std::move(next);
      block = std::move(next_block);
      res.history.steps_run = t + 1;
    }
    if (log) {
      if (jsonl) *jsonl << to_json(rec).dump() << '\n' << std::flush;
      res.history.records.push_back(std::move(rec));
    }
    if (stop) break;
  }
  return res;
}

std::vector<RowMatrix> batch_gradient(const Network& net, const Dictionary& dict,
                                      const std::vector<Sample>& samples) {
  Engine eng(dict, net);
  Workspace ws(net);
  const PatchBlock block = build_block(dict, samples);
  ForwardState st = forward_phase(net, eng, block, samples, 0);
  eng.accumulate(block, st.plan, st.gates, st.G, ws.grad, ws.touched);
  for (auto& g : ws.grad) g *= -1.0 / static_cast<double>(samples.size());
  return ws.grad;
}

double grad_check(const Network& net, const std::vector<Sample>& samples, double epsilon,
                  std::uint64_t seed, int coords, const Dictionary* dict) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
    throw ContractError("grad_check epsilon must lie in [1e-7, 1e-3]");
  if (samples.empty()) throw ContractError("grad_check needs at least one sample");
  const int H = net.num_heads();
  const int n = static_cast<int>(samples.size());
  const int d = net.d();

  std::vector<Response> base;
  Eigen::MatrixXd F(n, H);
  double xmax = 0.0;
  for (int i = 0; i < n; ++i) {
    base.push_back(forward(net, samples[i], true));
    for (int h = 0; h < H; ++h) F(i, h) = base[i].per_class[h];
    xmax = std::max(xmax, samples[i].patches.cwiseAbs().maxCoeff());
  }
  auto mean_loss = [&](const Eigen::MatrixXd& f) {
    double s = 0.0;
    std::vector<double> row(H);
    for (int i = 0; i < n; ++i) {
      for (int h = 0; h < H; ++h) row[h] = f(i, h);
      s += cross_entropy(row, net.head_of(samples[i].label));
    }
    return s / n;
  };

  Rng rng = make_rng(seed, Stream::GradCheck);
  struct Coord {
    int h, r, j;
  };
  std::vector<Coord> picks;
  for (int c = 0; c < coords; ++c) {
    const int h = uniform_int(rng, 0, H - 1);
    picks.push_back({h, uniform_int(rng, 0, net.heads[h].size() - 1), uniform_int(rng, 0, d - 1)});
  }
  const double guard = 10.0 * epsilon * xmax;
  for (const Coord& c : picks)
    for (int i = 0; i < n; ++i)
      if ((*base[i].activations)[c.h].row(c.r).cwiseAbs().minCoeff() < guard)
        throw RetriableError("sample has a pre-activation within the finite-difference kink guard");

  std::vector<RowMatrix> analytic;
  if (dict) {
    analytic = batch_gradient(net, *dict, samples);
  } else {
    analytic.resize(H);
    for (int h = 0; h < H; ++h) analytic[h] = RowMatrix::Zero(net.heads[h].size(), d);
    for (int i = 0; i < n; ++i) {
      const auto g = loss_weights(base[i].per_class, net.head_of(samples[i].label));
      for (int h = 0; h < H; ++h) {
        const RowMatrix gate = ((*base[i].activations)[h].array() > 0.0).cast<double>();
        analytic[h] -= (g[h] / n) * gate * samples[i].patches;
      }
    }
  }

  double worst = 0.0;
  for (const Coord& c : picks) {
    auto shifted = [&](double delta) {
      Eigen::MatrixXd f = F;
      for (int i = 0; i < n; ++i) {
        const auto pre = (*base[i].activations)[c.h].row(c.r);
        const auto col = samples[i].patches.col(c.j);
        double diff = 0.0;
        for (int p = 0; p < pre.size(); ++p)
          diff += std::max(pre(p) + delta * col(p), 0.0) - std::max(pre(p), 0.0);
        f(i, c.h) += diff;
      }
      return mean_loss(f);
    };
    const double fd = (shifted(epsilon) - shifted(-epsilon)) / (2.0 * epsilon);
    const double a = analytic[c.h](c.r, c.j);
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
    worst = std::max(worst, rel);
  }
  return worst;
}

double grad_check(const Network& net, const Sample& sample, double epsilon, std::uint64_t seed, int coords) {
  return grad_check(net, std::vector<Sample>{sample}, epsilon, seed, coords, nullptr);
}

}  // namespace lgsim
