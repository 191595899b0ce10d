#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "lgsim/engine.hpp"
#include "lgsim/error.hpp"
#include "lgsim/io.hpp"
#include "lgsim/network.hpp"
#include "lgsim/rng.hpp"

using namespace lgsim;

namespace {

HyperParams small_params() {
  HyperParams p = HyperParams::desk();
  p.d = 16;
  p.P = 32;
  p.s_star = 4;
  p.k_plus = p.k_minus = 2;
  p.N = 8;
  p.m = 64;
  p.sigma_0 = 0.05;
  return p;
}

Network hand_network(int d, int neurons) {
  HyperParams p = small_params();
  p.d = d;
  p.m = neurons;
  Network net = init_network(p, Variant::Coarse, 0);
  for (auto& h : net.heads) {
    h.weights.setZero();
    h.biases.setZero();
  }
  return net;
}

Sample patches_sample(const RowMatrix& X) {
  Sample s;
  s.patches = X;
  s.label = {1, 0};
  return s;
}

}  // namespace

TEST_CASE("initial biases follow the threshold formula") {
  HyperParams p = small_params();
  p.sigma_0 = 0.01;
  p.c_0 = 0.1;
  p.threshold_log_d = 1.0;  // ln d forced to one
  const Network coarse = init_network(p, Variant::Coarse, 1);
  const Network fine = init_network(p, Variant::Fine, 1);
  CHECK(coarse.heads[0].biases(0) == doctest::Approx(-0.020494).epsilon(1e-4));
  CHECK(fine.heads[0].biases(0) == doctest::Approx(-0.014832).epsilon(1e-4));
  CHECK(coarse.num_heads() == 2);
  CHECK(fine.num_heads() == 4);
  CHECK(coarse.heads[0].size() == p.m);
  CHECK(fine.heads[0].size() == p.fine_neurons());
  CHECK((coarse.heads[1].biases.array() == coarse.heads[1].biases(0)).all());
}

TEST_CASE("network init is deterministic and Gaussian") {
  HyperParams p = small_params();
  p.m = 4000;
  const Network a = init_network(p, Variant::Coarse, 5);
  const Network b = init_network(p, Variant::Coarse, 5);
  CHECK(a.heads[0].weights == b.heads[0].weights);
  CHECK(a.heads[1].weights == b.heads[1].weights);
  const double var = a.heads[0].weights.squaredNorm() / static_cast<double>(a.heads[0].weights.size());
  CHECK(var == doctest::Approx(p.sigma_0 * p.sigma_0).epsilon(0.03));
}

TEST_CASE("single ReLU responses") {
  Network net = hand_network(8, 1);
  net.heads[0].weights(0, 0) = 1.0;
  RowMatrix X = RowMatrix::Zero(1, 8);
  X(0, 0) = 2.0;
  CHECK(forward(net, patches_sample(X)).per_class[0] == doctest::Approx(2.0));
  net.heads[0].biases(0) = -3.0;
  CHECK(forward(net, patches_sample(X)).per_class[0] == 0.0);
  net.heads[0].biases(0) = -2.0;  // exactly zero pre-activation is inactive
  const Response r = forward(net, patches_sample(X), true);
  CHECK(r.per_class[0] == 0.0);
  CHECK((*r.activations)[0](0, 0) == 0.0);
}

TEST_CASE("hand-counted patch sum") {
  Network net = hand_network(8, 2);
  net.heads[0].weights(0, 0) = 1.0;  // v+
  net.heads[0].weights(1, 2) = 1.0;  // v+,1
  RowMatrix X = RowMatrix::Zero(10, 8);
  for (int i = 0; i < 3; ++i) X(i, 0) = 1.0;
  for (int i = 3; i < 5; ++i) X(i, 2) = 1.0;
  CHECK(forward(net, patches_sample(X)).per_class[0] == doctest::Approx(5.0));
}

TEST_CASE("dimension mismatch is a contract error") {
  Network net = hand_network(8, 2);
  CHECK_THROWS_AS(forward(net, patches_sample(RowMatrix::Zero(3, 5))), ContractError);
}

TEST_CASE("softmax") {
  auto l = softmax_logits(std::vector<double>{0.0, 0.0});
  CHECK(l[0] == doctest::Approx(0.5));
  l = softmax_logits(std::vector<double>{std::log(3.0), 0.0});
  CHECK(l[0] == doctest::Approx(0.75));
  l = softmax_logits(std::vector<double>{1000.0, 1000.0, 1000.0});
  for (double v : l) CHECK(v == doctest::Approx(1.0 / 3.0));

  Rng rng = make_rng(3, Stream::GradCheck);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> f(5);
    for (double& v : f) v = 10 * standard_normal(rng);
    const auto a = softmax_logits(f);
    double sum = 0.0;
    for (double v : a) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    const double shift = 50 * standard_normal(rng);
    for (double& v : f) v += shift;
    const auto b = softmax_logits(f);
    for (int i = 0; i < 5; ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  }
}

TEST_CASE("fine to coarse aggregation") {
  Response r;
  r.per_class = {1, 2, 0, 0};
  auto c = aggregate_fine_to_coarse(r, 2, 2);
  CHECK(c.per_class == std::vector<double>{3, 0});
  r.per_class = {0, 0, 0, 0};
  CHECK(aggregate_fine_to_coarse(r, 2, 2).per_class == std::vector<double>{0, 0});
  r.per_class = {0.5, 0.5, 0.5, 0.4, 0.4, 0.4};
  c = aggregate_fine_to_coarse(r, 3, 3);
  CHECK(c.per_class[0] > c.per_class[1]);
  for (double s : {0.1, 2.0, 1e3}) {
    Response scaled = r;
    for (double& v : scaled.per_class) v *= s;
    const auto cs = aggregate_fine_to_coarse(scaled, 3, 3);
    CHECK(cs.per_class[0] > cs.per_class[1]);
  }
  CHECK_THROWS_AS(aggregate_fine_to_coarse(r, 2, 2), ContractError);
}

TEST_CASE("positive homogeneity on the active region") {
  Network net = hand_network(6, 3);
  Rng rng = make_rng(1, Stream::GradCheck);
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 6; ++j) net.heads[0].weights(r, j) = 0.5 + uniform(rng, 0.0, 1.0);
  RowMatrix X = RowMatrix::Zero(2, 6);
  for (int j = 0; j < 6; ++j) X(0, j) = uniform(rng, 0.1, 1.0);
  const double base = forward(net, patches_sample(X)).per_class[0];
  RowMatrix X2 = X;
  X2.row(0) *= 2.0;
  CHECK(forward(net, patches_sample(X2)).per_class[0] == doctest::Approx(2 * base));
}

TEST_CASE("recorded activations reproduce the response") {
  const HyperParams p = small_params();
  const Network net = init_network(p, Variant::Fine, 3);
  const Dictionary dict = build_dictionary(p, DictionaryMode::RandomOrthogonal, 1);
  const Batch b = make_batch(dict, p, 0, 1);
  for (const auto& s : b.samples) {
    const Response r = forward(net, s, true);
    for (int h = 0; h < net.num_heads(); ++h) {
      const double sum = (*r.activations)[h].cwiseMax(0.0).sum();
      CHECK(std::abs(sum - r.per_class[h]) <= 1e-10);
    }
  }
}

TEST_CASE("sparse engine equals the dense forward pass") {
  HyperParams p = small_params();
  p.m = 300;
  for (auto mode : {DictionaryMode::StandardBasis, DictionaryMode::RandomOrthogonal}) {
    for (Variant v : {Variant::Coarse, Variant::Fine}) {
      const Dictionary dict = build_dictionary(p, mode, 4);
      Network net = init_network(p, v, 8);
      // push a few neurons onto features so that many pairs are live
      for (int h = 0; h < net.num_heads(); ++h)
        for (int r = 0; r < 20; ++r) net.heads[h].weights.row(r) += 0.3 * dict.word(r % dict.num_designated());
      const Engine eng(dict, net);
      const Batch b = make_batch(dict, p, 2, 3);
      const PatchBlock block = build_block(dict, b.samples);
      const Eigen::MatrixXd F = eng.forward(net, block);
      for (std::size_t n = 0; n < b.samples.size(); ++n) {
        const Response r = forward(net, b.samples[n]);
        for (int h = 0; h < net.num_heads(); ++h)
          CHECK(std::abs(F(static_cast<int>(n), h) - r.per_class[h]) <= 1e-12 * (1 + std::abs(r.per_class[h])));
      }
    }
  }
}

TEST_CASE("network checkpoint round trip") {
  const HyperParams p = small_params();
  const Network net = init_network(p, Variant::Fine, 12);
  const auto path = std::filesystem::temp_directory_path() / "lgsim_test_net.bin";
  save_network(path, net);
  const Network back = load_network(path);
  CHECK(back.variant == Variant::Fine);
  CHECK(back.seed == 12u);
  REQUIRE(back.num_heads() == net.num_heads());
  for (int h = 0; h < net.num_heads(); ++h) {
    CHECK(back.heads[h].weights == net.heads[h].weights);
    CHECK(back.heads[h].biases == net.heads[h].biases);
  }
  CHECK(back.params.m == p.m);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}
