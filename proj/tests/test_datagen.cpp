#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "lgsim/dictionary.hpp"
#include "lgsim/error.hpp"
#include "lgsim/io.hpp"
#include "lgsim/params.hpp"
#include "lgsim/sample.hpp"

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
  return p;
}

HyperParams noiseless(HyperParams p) {
  p.sigma_zeta = 0.0;
  p.gamma = 0.0;
  p.iota = 0.0;
  return p;
}

}  // namespace

TEST_CASE("hyperparameter invariants") {
  HyperParams p = small_params();
  CHECK_NOTHROW(p.validate());
  HyperParams q = p;
  q.k_minus = 3;
  CHECK_THROWS_AS(q.validate(), ConfigError);
  q = p;
  q.N = 10;
  CHECK_THROWS_AS(q.validate(), ConfigError);
  q = p;
  q.d = 5;
  CHECK_THROWS_AS(q.validate(), ConfigError);
  q = p;
  q.s_star = p.P / 2 + 1;
  CHECK_THROWS_AS(q.validate(), ConfigError);

  HyperParams a = HyperParams::paper_asymptotic(128);
  CHECK(a.sigma_zeta == doctest::Approx(1.0 / (std::pow(std::log(128.0), 10) * std::sqrt(128.0))));
  CHECK_NOTHROW(a.validate());
  a.sigma_zeta *= 2;
  CHECK_THROWS_AS(a.validate(), ConfigError);
}

TEST_CASE("standard basis dictionary") {
  HyperParams p = small_params();
  p.d = 8;
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  CHECK((dict.words - RowMatrix::Identity(8, 8)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(orthonormality_error(dict) <= 1e-10);
  std::set<int> ids{dict.index_common_plus, dict.index_common_minus};
  for (int c = 0; c < 2; ++c) {
    ids.insert(dict.sub(1, c));
    ids.insert(dict.sub(-1, c));
  }
  CHECK(ids.size() == 6);
}

TEST_CASE("random orthogonal dictionary is orthonormal and deterministic") {
  const HyperParams p = small_params();
  const Dictionary a = build_dictionary(p, DictionaryMode::RandomOrthogonal, 7);
  const Dictionary b = build_dictionary(p, DictionaryMode::RandomOrthogonal, 7);
  const Dictionary c = build_dictionary(p, DictionaryMode::RandomOrthogonal, 8);
  CHECK(a.words == b.words);
  CHECK(a.words != c.words);
  const RowMatrix G = a.words * a.words.transpose();
  CHECK((G - RowMatrix::Identity(16, 16)).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("dictionary too small is a configuration error") {
  HyperParams p = small_params();
  p.d = 5;
  CHECK_THROWS_AS(build_dictionary(p, DictionaryMode::StandardBasis, 0), ConfigError);
}

TEST_CASE("noiseless normal sample has exact patches") {
  const HyperParams p = noiseless(small_params());
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  Rng rng = make_rng(3, Stream::Batch);
  for (int trial = 0; trial < 20; ++trial) {
    const Sample s = sample_example(dict, p, {1, 1}, SampleKind::Normal, rng);
    for (int i = 0; i < p.P; ++i) {
      const auto row = s.patches.row(i);
      const bool is_common = (row - dict.word(dict.common(1))).norm() == 0.0;
      const bool is_sub = (row - dict.word(dict.sub(1, 1))).norm() == 0.0;
      const bool is_zero = row.norm() == 0.0;
      CHECK((is_common || is_sub || is_zero));
      CHECK(is_common == (s.tags[i] == PatchTag::Common));
      CHECK(is_sub == (s.tags[i] == PatchTag::Subclass));
    }
  }
}

TEST_CASE("hard samples carry no common feature") {
  HyperParams p = small_params();
  p.sigma_zeta = 0.0;
  p.gamma = 0.0;
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  Rng rng = make_rng(4, Stream::Batch);
  for (int trial = 0; trial < 20; ++trial) {
    const Sample s = sample_example(dict, p, {1, 1}, SampleKind::Hard, rng);
    CHECK(s.count(PatchTag::Common) == 0);
    CHECK((s.patches * dict.word(dict.common(1)).transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("sample invariants: alphas, disjoint tags, opposite-class noise") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::RandomOrthogonal, 2);
  Rng rng = make_rng(5, Stream::Batch);
  const double lo = std::sqrt(1 - p.iota), hi = std::sqrt(1 + p.iota);
  for (int trial = 0; trial < 50; ++trial) {
    const FineLabel y{trial % 2 ? 1 : -1, trial % 2};
    const Sample s = sample_example(dict, p, y, SampleKind::Normal, rng);
    REQUIRE(s.tags.size() == static_cast<std::size_t>(p.P));
    CHECK(s.count(PatchTag::Common) + s.count(PatchTag::Subclass) + s.count(PatchTag::FeatureNoise) == p.P);
    const auto pool = dict.opposite_pool(y.sign);
    for (int i = 0; i < p.P; ++i) {
      if (s.tags[i] == PatchTag::FeatureNoise) {
        CHECK(s.alphas[i] == 0.0);
        for (int j = s.component_offsets[i]; j < s.component_offsets[i + 1]; ++j) {
          const Component& c = s.components[j];
          CHECK(std::find(pool.begin(), pool.end(), c.feature) != pool.end());
          CHECK(c.alpha >= 0.0);
          CHECK(c.alpha <= p.gamma);
        }
      } else {
        CHECK(s.alphas[i] >= lo);
        CHECK(s.alphas[i] <= hi);
      }
    }
  }
}

TEST_CASE("common patch count has binomial mean s*") {
  HyperParams p = small_params();
  p.d = 16;
  p.P = 1000;
  p.s_star = 50;
  p.sigma_zeta = 0.0;
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  Rng rng = make_rng(11, Stream::Batch);
  double sum = 0.0;
  const int n = 200;
  for (int i = 0; i < n; ++i) sum += sample_example(dict, p, {1, 0}, SampleKind::Normal, rng).count(PatchTag::Common);
  const double se = std::sqrt(50.0 * (1 - 0.05) / n);
  CHECK(std::abs(sum / n - 50.0) <= 3 * se);
}

TEST_CASE("hard and normal samples from one rng state differ only on common patches") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::RandomOrthogonal, 9);
  for (int seed = 0; seed < 20; ++seed) {
    Rng a = make_rng(seed, Stream::Batch), b = a;
    const Sample n = sample_example(dict, p, {-1, 1}, SampleKind::Normal, a);
    const Sample h = sample_example(dict, p, {-1, 1}, SampleKind::Hard, b);
    for (int i = 0; i < p.P; ++i) {
      if (n.tags[i] == PatchTag::Common) continue;
      CHECK(n.tags[i] == h.tags[i]);
      CHECK(n.patches.row(i) == h.patches.row(i));
    }
  }
}

TEST_CASE("patch noise variance matches sigma_zeta^2") {
  HyperParams p = small_params();
  p.gamma = 0.0;
  p.iota = 0.0;
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  Rng rng = make_rng(1, Stream::Batch);
  double ss = 0.0;
  std::int64_t count = 0;
  while (count < 20000) {
    const Sample s = sample_example(dict, p, {1, 0}, SampleKind::Normal, rng);
    for (int i = 0; i < p.P; ++i) {
      if (s.tags[i] == PatchTag::FeatureNoise) continue;
      const int f = s.tags[i] == PatchTag::Common ? dict.common(1) : dict.sub(1, 0);
      for (int j = 0; j < p.d; ++j) {
        if (j == f) continue;
        ss += s.patches(i, j) * s.patches(i, j);
        ++count;
      }
    }
  }
  CHECK(ss / count == doctest::Approx(p.sigma_zeta * p.sigma_zeta).epsilon(0.1));
}

TEST_CASE("batch composition and determinism") {
  HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::StandardBasis, 0);
  const Batch b = make_batch(dict, p, 3, 42);
  REQUIRE(b.samples.size() == 8u);
  std::map<std::pair<int, int>, int> counts;
  for (const auto& s : b.samples) {
    counts[{s.label.sign, s.label.sub}]++;
    CHECK(s.kind == SampleKind::Normal);
  }
  CHECK(counts.size() == 4u);
  for (const auto& [_, c] : counts) CHECK(c == 2);

  const Batch again = make_batch(dict, p, 3, 42);
  for (std::size_t i = 0; i < b.samples.size(); ++i) {
    CHECK(b.samples[i].label == again.samples[i].label);
    CHECK(b.samples[i].patches == again.samples[i].patches);
  }

  p.N = 40;
  p.k_plus = p.k_minus = 5;
  const Batch big = make_batch(build_dictionary(p, DictionaryMode::StandardBasis, 0), p, 0, 1);
  int plus = 0;
  std::map<std::pair<int, int>, int> bc;
  for (const auto& s : big.samples) {
    plus += s.label.sign > 0;
    bc[{s.label.sign, s.label.sub}]++;
  }
  CHECK(plus == 20);
  for (const auto& [_, c] : bc) CHECK(c == 4);

  p.N = 42;
  CHECK_THROWS_AS(make_batch(dict, p, 0, 1), ConfigError);
}

TEST_CASE("parallel generation is bit-identical to serial") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::RandomOrthogonal, 1);
  setenv("LGSIM_THREADS", "1", 1);
  const Batch serial = make_batch(dict, p, 5, 9);
  setenv("LGSIM_THREADS", "3", 1);
  const Batch parallel = make_batch(dict, p, 5, 9);
  unsetenv("LGSIM_THREADS");
  for (std::size_t i = 0; i < serial.samples.size(); ++i)
    CHECK(serial.samples[i].patches == parallel.samples[i].patches);
}

TEST_CASE("dictionary and batch serialization round trip") {
  const HyperParams p = small_params();
  const Dictionary dict = build_dictionary(p, DictionaryMode::RandomOrthogonal, 3);
  const Batch batch = make_batch(dict, p, 1, 2);
  const auto dir = std::filesystem::temp_directory_path() / "lgsim_test_datagen";
  std::filesystem::create_directories(dir);

  save_dictionary(dir / "dict.bin", dict);
  const Dictionary d2 = load_dictionary(dir / "dict.bin");
  CHECK(d2.words == dict.words);
  CHECK(d2.indices_sub_minus == dict.indices_sub_minus);
  const Dictionary d3 = dictionary_from_json(to_json(dict));
  CHECK(d3.words == dict.words);

  save_batch(dir / "batch.bin", batch);
  const Batch b2 = load_batch(dir / "batch.bin");
  const Batch b3 = batch_from_json(to_json(batch));
  REQUIRE(b2.samples.size() == batch.samples.size());
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    CHECK(b2.samples[i].patches == batch.samples[i].patches);
    CHECK(b2.samples[i].tags == batch.samples[i].tags);
    CHECK(b3.samples[i].patches == batch.samples[i].patches);
    CHECK(b3.samples[i].alphas == batch.samples[i].alphas);
  }
  CHECK(b2.step_index == batch.step_index);

  write_text(dir / "bad.bin", "NOTADICT");
  CHECK_THROWS_AS(load_dictionary(dir / "bad.bin"), ConfigError);
  std::filesystem::remove_all(dir);
}
