#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "lgsim/error.hpp"
#include "lgsim/trainer.hpp"

using namespace lgsim;

namespace {

HyperParams small_params() {
  HyperParams p = HyperParams::desk();
  p.d = 16;
  p.P = 32;
  p.s_star = 4;
  p.k_plus = p.k_minus = 2;
  p.N = 8;
  p.m = 200;
  p.sigma_0 = 0.02;
  return p;
}

// Builds a sample from explicit per-patch contents: feature id (or -1 for an
// empty noise patch) and amplitude.
Sample manual_sample(const Dictionary& dict, FineLabel y, const std::vector<std::pair<int, double>>& patches) {
  Sample s;
  s.label = y;
  s.patches = RowMatrix::Zero(static_cast<int>(patches.size()), dict.d());
  s.component_offsets.push_back(0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto [f, a] = patches[i];
    if (f >= 0) {
      s.patches.row(i) = a * dict.word(f);
      s.components.push_back({f, a});
      s.tags.push_back(f == dict.common(y.sign) ? PatchTag::Common : PatchTag::Subclass);
      s.alphas.push_back(a);
    } else {
      s.tags.push_back(PatchTag::FeatureNoise);
      s.alphas.push_back(0.0);
    }
    s.component_offsets.push_back(static_cast<int>(s.components.size()));
  }
  return s;
}

Network zero_network(const HyperParams& p, Variant v) {
  Network net = init_network(p, v, 0);
  for (auto& h : net.heads) {
    h.weights.setZero();
    h.biases.setZero();
  }
  return net;
}

TrainConfig config(Variant v, double eta) {
  TrainConfig c;
  c.regime = v;
  c.eta = eta;
  c.bias_rule = default_bias_rule(v);
  return c;
}

// Reference update straight from the definition, with the dense forward pass.
std::vector<RowMatrix> reference_delta(const Network& net, const Batch& batch, double eta) {
  std::vector<RowMatrix> delta;
  for (const auto& h : net.heads) delta.push_back(RowMatrix::Zero(h.size(), net.d()));
  const double N = static_cast<double>(batch.samples.size());
  for (const auto& s : batch.samples) {
    const Response r = forward(net, s, true);
    const auto logits = softmax_logits(r);
    const int y = net.head_of(s.label);
    const double P = s.num_patches();
    for (int h = 0; h < net.num_heads(); ++h) {
      const double g = (h == y ? 1.0 : 0.0) - logits[h];
      const auto& pre = (*r.activations)[h];
      for (int rr = 0; rr < pre.rows(); ++rr)
        for (int p = 0; p < pre.cols(); ++p)
          if (pre(rr, p) > 0.0) delta[h].row(rr) += eta / (N * P) * g * s.patches.row(p);
    }
  }
  return delta;
}

}  // namespace

TEST_CASE("symmetric logits give half the patch as update") {
  HyperParams p = small_params();
  p.m = 3;
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  Network net = zero_network(p, Variant::Coarse);
  net.heads[0].weights.row(0) = 1e-12 * dict.word(dict.common(1));
  Batch batch;
  batch.samples.push_back(manual_sample(dict, {1, 0}, {{dict.common(1), 1.0}, {-1, 0}, {-1, 0}, {-1, 0}}));
  const Network before = net;
  const double eta = 0.1;
  sgd_step(net, dict, batch, config(Variant::Coarse, eta));
  const Eigen::RowVectorXd expected = eta / (1.0 * 4) * 0.5 * dict.word(dict.common(1));
  const Eigen::RowVectorXd dw = net.heads[0].weights.row(0) - before.heads[0].weights.row(0);
  CHECK((dw - expected).norm() <= 1e-12 * expected.norm());
  CHECK(net.heads[0].biases(0) == doctest::Approx(-expected.norm() / p.bias_decay_beta));
  // every other neuron sees only zero pre-activations and stays put
  for (int h = 0; h < 2; ++h)
    for (int r = (h == 0 ? 1 : 0); r < p.m; ++r) {
      CHECK(net.heads[h].weights.row(r).norm() == 0.0);
      CHECK(net.heads[h].biases(r) == 0.0);
    }
}

TEST_CASE("update matches the finite-sum definition") {
  const HyperParams p = small_params();
  for (auto mode : {DictionaryMode::StandardBasis, DictionaryMode::RandomOrthogonal}) {
    for (Variant v : {Variant::Coarse, Variant::Fine}) {
      const Dictionary dict = build_dictionary(p, mode, 2);
      Network net = init_network(p, v, 3);
      for (int h = 0; h < net.num_heads(); ++h)
        for (int r = 0; r < 30; ++r) net.heads[h].weights.row(r) += 0.5 * dict.word(r % dict.num_designated());
      Batch batch = make_batch(dict, p, 0, 4);
      batch.samples.resize(2);
      const Network before = net;
      const auto ref = reference_delta(before, batch, 0.05);
      TrainConfig cfg = config(v, 0.05);
      cfg.bias_rule = BiasRule::PlainDecay;
      sgd_step(net, dict, batch, cfg);
      for (int h = 0; h < net.num_heads(); ++h) {
        const RowMatrix dw = net.heads[h].weights - before.heads[h].weights;
        const double scale = std::max(ref[h].cwiseAbs().maxCoeff(), 1e-300);
        CHECK((dw - ref[h]).cwiseAbs().maxCoeff() <= 1e-10 * scale);
        for (int r = 0; r < net.heads[h].size(); ++r)
          CHECK(net.heads[h].biases(r) ==
                doctest::Approx(before.heads[h].biases(r) - ref[h].row(r).norm() / p.bias_decay_beta).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("clipped decay uses the next batch") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::RandomOrthogonal, 5);
  Network net = init_network(p, Variant::Fine, 6);
  for (int h = 0; h < net.num_heads(); ++h)
    for (int r = 0; r < 40; ++r) net.heads[h].weights.row(r) += 0.4 * dict.word(r % dict.num_designated());
  const Batch batch = make_batch(dict, p, 0, 1);
  const Batch next = make_batch(dict, p, 1, 1);
  const Network before = net;
  TrainConfig cfg = config(Variant::Fine, 0.05);
  cfg.bias_rule = BiasRule::ClippedDecay;
  CHECK_THROWS_AS(sgd_step(net, dict, batch, cfg), ContractError);
  sgd_step(net, dict, batch, cfg, &next);
  int clipped = 0;
  for (int h = 0; h < net.num_heads(); ++h) {
    for (int r = 0; r < net.heads[h].size(); ++r) {
      const Eigen::RowVectorXd dw = net.heads[h].weights.row(r) - before.heads[h].weights.row(r);
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& s : next.samples) best = std::max(best, (s.patches * dw.transpose()).maxCoeff());
      const double plain = dw.norm() / p.bias_decay_beta;
      const double expected = dw.norm() == 0.0 ? 0.0 : std::min(plain, std::max(0.0, 0.1 * best));
      if (expected < plain) ++clipped;
      CHECK(before.heads[h].biases(r) - net.heads[h].biases(r) ==
            doctest::Approx(expected).epsilon(1e-9).scale(1e-18));
    }
  }
  CHECK(clipped > 0);
}

TEST_CASE("gradient check on kink-guarded cases") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::RandomOrthogonal, 1);
  for (Variant v : {Variant::Coarse, Variant::Fine}) {
    int done = 0;
    for (int seed = 0; done < 20 && seed < 200; ++seed) {
      Network net = init_network(p, v, seed);
      for (int h = 0; h < net.num_heads(); ++h)
        for (int r = 0; r < 30; ++r) net.heads[h].weights.row(r) += 0.5 * dict.word(r % dict.num_designated());
      Batch b = make_batch(dict, p, seed, 7);
      b.samples.resize(2);
      try {
        const double sparse = grad_check(net, b.samples, 1e-5, seed, 100, &dict);
        const double dense = grad_check(net, b.samples[0], 1e-5, seed);
        CHECK(sparse <= 1e-4);
        CHECK(dense <= 1e-4);
        ++done;
      } catch (const RetriableError&) {
      }
    }
    CHECK(done == 20);
  }
}

TEST_CASE("closed gates give an exactly zero gradient") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::RandomOrthogonal, 1);
  Network net = init_network(p, Variant::Coarse, 2);
  net.heads[0].biases(5) = -100.0;
  const Batch b = make_batch(dict, p, 0, 3);
  const auto g = batch_gradient(net, dict, b.samples);
  CHECK(g[0].row(5).norm() == 0.0);
  CHECK_THROWS_AS(grad_check(net, b.samples, 1e-2, 0), ContractError);
  CHECK_THROWS_AS(grad_check(net, b.samples, 1e-9, 0), ContractError);
}

TEST_CASE("loss weight identity") {
  Rng rng = make_rng(5, Stream::GradCheck);
  for (int i = 0; i < 1000; ++i) {
    const double fp = 5 * standard_normal(rng), fm = 5 * standard_normal(rng);
    const double lhs = loss_weights({fp, fm}, 0)[0];
    const double rhs = std::exp(fm) * std::exp(-fp) / (std::exp(fm - fp) + 1.0);
    CHECK(std::abs(lhs - rhs) <= 1e-12);
  }
}

TEST_CASE("batch order does not change the update") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::RandomOrthogonal, 3);
  Network a = init_network(p, Variant::Coarse, 4);
  for (int r = 0; r < 50; ++r) a.heads[r % 2].weights.row(r) += 0.3 * dict.word(r % dict.num_designated());
  Network b = a;
  Batch batch = make_batch(dict, p, 0, 5);
  Batch shuffled = batch;
  std::reverse(shuffled.samples.begin(), shuffled.samples.end());
  std::rotate(shuffled.samples.begin(), shuffled.samples.begin() + 3, shuffled.samples.end());
  sgd_step(a, dict, batch, config(Variant::Coarse, 0.05));
  sgd_step(b, dict, shuffled, config(Variant::Coarse, 0.05));
  for (int h = 0; h < 2; ++h) {
    CHECK((a.heads[h].weights - b.heads[h].weights).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((a.heads[h].biases - b.heads[h].biases).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("biases never increase under either rule") {
  HyperParams p = small_params();
  p.sigma_0 = 1e-3;
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  for (Variant v : {Variant::Coarse, Variant::Fine}) {
    TrainConfig cfg = config(v, 0.05);
    cfg.max_steps = 30;
    cfg.seed = 3;
    std::vector<Eigen::VectorXd> last;
    bool monotone = true;
    train_run(p, cfg, dict, nullptr, [&](std::int64_t, const Network& net) {
      for (int h = 0; h < net.num_heads(); ++h) {
        if (static_cast<int>(last.size()) > h && (net.heads[h].biases.array() > last[h].array()).any())
          monotone = false;
      }
      last.clear();
      for (const auto& h : net.heads) last.push_back(h.biases);
    });
    CHECK(monotone);
  }
}

TEST_CASE("initial loss weights at the desk preset") {
  const HyperParams p = HyperParams::desk();
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  const Batch b = make_batch(dict, p, 0, 1);
  for (Variant v : {Variant::Coarse, Variant::Fine}) {
    Network net = init_network(p, v, 1);
    TrainConfig cfg = config(v, p.eta);
    cfg.bias_rule = BiasRule::PlainDecay;  // margins are taken before the update
    const StepStats st = sgd_step(net, dict, b, cfg);
    const double target = v == Variant::Coarse ? 0.5 : 1.0 - 1.0 / (2.0 * p.k_plus);
    for (double m : st.margins) {
      if (v == Variant::Coarse) {
        CHECK(m >= 0.49);
        CHECK(m <= 0.51);
      } else {
        CHECK(std::abs(m - target) <= 0.02 * target);
      }
    }
  }
}

TEST_CASE("train_run with a zero budget is a no-op") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  TrainConfig cfg = config(Variant::Coarse, 0.01);
  cfg.max_steps = 0;
  cfg.seed = 9;
  const TrainResult r = train_run(p, cfg, dict);
  const Network init = init_network(p, Variant::Coarse, 9);
  CHECK(r.history.records.empty());
  CHECK(r.history.steps_run == 0);
  CHECK(r.network.heads[0].weights == init.heads[0].weights);
}

TEST_CASE("train_run is deterministic and logs increasing steps") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::RandomOrthogonal, 1);
  TrainConfig cfg = config(Variant::Fine, 0.05);
  cfg.max_steps = 25;
  cfg.log_every = 5;
  cfg.dense_log_steps = 3;
  cfg.seed = 11;
  const TrainResult a = train_run(p, cfg, dict);
  const TrainResult b = train_run(p, cfg, dict);
  for (int h = 0; h < a.network.num_heads(); ++h) CHECK(a.network.heads[h].weights == b.network.heads[h].weights);
  std::vector<std::int64_t> steps;
  for (const auto& r : a.history.records) steps.push_back(r.step);
  CHECK(steps == std::vector<std::int64_t>{0, 1, 2, 5, 10, 15, 20, 25});
  CHECK(a.history.steps_run == 25);
  CHECK(a.history.records.back().loss < a.history.records.front().loss);
}

TEST_CASE("non-finite loss reports the step") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  Network net = init_network(p, Variant::Coarse, 1);
  net.heads[0].biases.setConstant(1e308);  // the patch sum overflows
  Batch b = make_batch(dict, p, 7, 1);
  try {
    sgd_step(net, dict, b, config(Variant::Coarse, 0.1));
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.step() == 7);
  }
}

TEST_CASE("history records round trip through JSON") {
  HistoryRecord r;
  r.step = 12;
  r.loss = 0.25;
  r.A_sub = {0.1, 0.2};
  r.F_hard_plus = 1.5;
  r.live_pairs = 99;
  const HistoryRecord back = history_record_from_json(to_json(r));
  CHECK(back.step == 12);
  CHECK(back.loss == 0.25);
  CHECK(back.A_sub == r.A_sub);
  CHECK(back.F_hard_plus == 1.5);
  CHECK(back.live_pairs == 99);
  const auto j = to_json(r);
  for (const char* key : {"step", "loss", "F_normal_plus", "F_normal_minus", "F_hard_plus", "F_hard_minus",
                          "A_common", "A_sub", "psi1_max", "tracer_bias"})
    CHECK(j.contains(key));
}
