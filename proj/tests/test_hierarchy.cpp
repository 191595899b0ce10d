#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "lgsim/error.hpp"
#include "lgsim/hierarchy.hpp"
#include "lgsim/rng.hpp"

using namespace lgsim;

namespace {

// Three well separated 2-d blobs of `per` points each.
RowMatrix blobs(int per, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::GradCheck);
  const double centers[3][2] = {{0, 0}, {20, 0}, {0, 20}};
  RowMatrix X(3 * per, 2);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < per; ++i)
      for (int j = 0; j < 2; ++j) X(c * per + i, j) = centers[c][j] + 0.5 * standard_normal(rng);
  return X;
}

// Fraction of point pairs on which two partitions agree about being together.
double pair_agreement(const std::vector<int>& a, const std::vector<int>& b) {
  std::int64_t same = 0, total = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      ++total;
      if ((a[i] == a[j]) == (b[i] == b[j])) ++same;
    }
  return double(same) / total;
}

}  // namespace

TEST_CASE("k-means separates two obvious pairs") {
  RowMatrix X(4, 1);
  X << 0.0, 0.1, 10.0, 10.1;
  const KMeansResult r = lloyd_kmeans(X, 2, 1);
  CHECK(r.converged);
  CHECK(r.assignments[0] == r.assignments[1]);
  CHECK(r.assignments[2] == r.assignments[3]);
  CHECK(r.assignments[0] != r.assignments[2]);
  CHECK(r.inertia == doctest::Approx(4 * 0.0025));
}

TEST_CASE("k-means with one cluster returns the mean") {
  RowMatrix X(3, 2);
  X << 0, 0, 2, 0, 1, 3;
  const KMeansResult r = lloyd_kmeans(X, 1, 9);
  CHECK(r.centroids(0, 0) == doctest::Approx(1.0));
  CHECK(r.centroids(0, 1) == doctest::Approx(1.0));
  CHECK(std::all_of(r.assignments.begin(), r.assignments.end(), [](int a) { return a == 0; }));
}

TEST_CASE("k-means recovers blobs and is deterministic") {
  const RowMatrix X = blobs(30, 2);
  std::vector<int> truth;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 30; ++i) truth.push_back(c);
  const KMeansResult a = lloyd_kmeans(X, 3, 17);
  const KMeansResult b = lloyd_kmeans(X, 3, 17);
  CHECK(a.assignments == b.assignments);
  CHECK(pair_agreement(a.assignments, truth) == 1.0);
  for (std::size_t i = 1; i < a.inertia_history.size(); ++i)
    CHECK(a.inertia_history[i] <= a.inertia_history[i - 1] + 1e-9);
}

TEST_CASE("k-means inertia never increases on random data") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, Stream::GradCheck);
    RowMatrix X(200, 3);
    for (int i = 0; i < X.rows(); ++i)
      for (int j = 0; j < 3; ++j) X(i, j) = standard_normal(rng);
    const KMeansResult r = lloyd_kmeans(X, 7, seed);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-9);
    std::set<int> used(r.assignments.begin(), r.assignments.end());
    CHECK(used.size() == 7u);
  }
}

TEST_CASE("k-means argument errors") {
  RowMatrix X = RowMatrix::Zero(3, 2);
  CHECK_THROWS_AS(lloyd_kmeans(X, 4, 0), ConfigError);
  CHECK_THROWS_AS(lloyd_kmeans(X, 0, 0), ConfigError);
  CHECK_THROWS_AS(lloyd_kmeans(X, 2, 0, 0), ConfigError);
}

TEST_CASE("per-group fine ids") {
  EmbeddingSet emb;
  emb.vectors = blobs(20, 5);
  // superclass 0: first blob, superclass 1: the other two
  for (int i = 0; i < 60; ++i) emb.base_labels.push_back(i < 20 ? 0 : 1);
  const FineIdResult r = assign_fine_ids(emb, FineIdMode::PerGroup, 2, 3);
  REQUIRE(r.ids.size() == 60u);
  for (int i = 0; i < 60; ++i) {
    if (i < 20)
      CHECK((r.ids[i] == 0 || r.ids[i] == 1));
    else
      CHECK((r.ids[i] == 2 || r.ids[i] == 3));
  }
  // blobs inside superclass 1 get distinct ids
  CHECK(r.ids[20] != r.ids[40]);
  for (int i = 21; i < 40; ++i) CHECK(r.ids[i] == r.ids[20]);

  // id = C * group + cluster
  EmbeddingSet big;
  big.vectors = RowMatrix::Zero(40, 1);
  for (int i = 0; i < 40; ++i) {
    big.vectors(i, 0) = (i % 10) * 100.0;
    big.base_labels.push_back(i < 30 ? 2 : 0);
  }
  const FineIdResult q = assign_fine_ids(big, FineIdMode::PerGroup, 10, 1);
  for (int i = 0; i < 30; ++i) {
    CHECK(q.ids[i] >= 20);
    CHECK(q.ids[i] < 30);
  }
  std::set<std::int64_t> g2(q.ids.begin(), q.ids.begin() + 30);
  CHECK(g2.size() == 10u);
  CHECK(g2.count(29) == 1);
}

TEST_CASE("fine ids of different superclasses never collide") {
  EmbeddingSet emb;
  Rng rng = make_rng(8, Stream::GradCheck);
  emb.vectors.resize(90, 4);
  for (int i = 0; i < 90; ++i) {
    for (int j = 0; j < 4; ++j) emb.vectors(i, j) = standard_normal(rng);
    emb.base_labels.push_back(i % 3);
  }
  for (FineIdMode mode : {FineIdMode::PerGroup, FineIdMode::RandomPerGroup}) {
    const FineIdResult r = assign_fine_ids(emb, mode, 4, 2);
    std::map<std::int64_t, int> owner;
    for (int i = 0; i < 90; ++i) {
      auto [it, inserted] = owner.emplace(r.ids[i], emb.base_labels[i]);
      CHECK(it->second == emb.base_labels[i]);
      CHECK(r.ids[i] / 4 == emb.base_labels[i]);
    }
  }
  const FineIdResult one = assign_fine_ids(emb, FineIdMode::PerGroup, 1, 2);
  for (int i = 0; i < 90; ++i) CHECK(one.ids[i] == emb.base_labels[i]);
}

TEST_CASE("other fine id modes") {
  EmbeddingSet emb;
  emb.vectors = blobs(10, 3);
  const FineIdResult w = assign_fine_ids(emb, FineIdMode::WholeDataset, 3, 1);
  std::vector<int> a(w.ids.begin(), w.ids.end()), truth;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i) truth.push_back(c);
  CHECK(pair_agreement(a, truth) == 1.0);
  const FineIdResult r = assign_fine_ids(emb, FineIdMode::Random, 5, 1);
  for (auto id : r.ids) CHECK((id >= 0 && id < 5));
  CHECK(assign_fine_ids(emb, FineIdMode::Random, 5, 1).ids == r.ids);
  CHECK_THROWS_AS(assign_fine_ids(emb, FineIdMode::PerGroup, 2, 1), ConfigError);  // no labels
  CHECK_THROWS_AS(assign_fine_ids(emb, FineIdMode::Random, 0, 1), ConfigError);
  CHECK(parse_fine_id_mode("random_per_group") == FineIdMode::RandomPerGroup);
  CHECK_THROWS_AS(parse_fine_id_mode("bogus"), ConfigError);
}

TEST_CASE("small groups shrink C with a warning") {
  EmbeddingSet emb;
  emb.vectors = RowMatrix::Zero(5, 1);
  for (int i = 0; i < 5; ++i) {
    emb.vectors(i, 0) = i;
    emb.base_labels.push_back(i < 2 ? 0 : 1);
  }
  const FineIdResult r = assign_fine_ids(emb, FineIdMode::PerGroup, 3, 1);
  CHECK(r.group_C.at(0) == 2);
  CHECK(r.group_C.at(1) == 3);
  CHECK(r.warnings.size() == 1u);
}

TEST_CASE("granularity rebalancing") {
  EmbeddingSet emb;
  // superclass 0: 4 tight blobs of 12, superclass 1: 6 points
  emb.vectors = RowMatrix::Zero(54, 1);
  for (int i = 0; i < 48; ++i) {
    emb.vectors(i, 0) = (i / 12) * 100.0 + 0.01 * (i % 12);
    emb.base_labels.push_back(0);
  }
  for (int i = 48; i < 54; ++i) {
    emb.vectors(i, 0) = i;
    emb.base_labels.push_back(1);
  }
  const RebalanceResult r = rebalance_granularity(emb, {1, 2, 4, 8}, 10, 1);
  CHECK(r.chosen_C.at(0) == 4);
  CHECK(r.chosen_C.at(1) == 1);
  CHECK(r.offsets.at(0) == 0);
  CHECK(r.offsets.at(1) == 4);
  CHECK(r.granularity == 5);
  for (int i = 48; i < 54; ++i) CHECK(r.ids[i] == 4);
  CHECK_THROWS_AS(rebalance_granularity(emb, {4, 2}, 10, 1), ConfigError);
}

TEST_CASE("taxonomy tracing") {
  const Taxonomy tax = Taxonomy::from_edges("# comment\na\tb\nb\tc\n\nc\troot\nx\tc\n");
  CHECK(tax.root == "root");
  CHECK(level_k_label(tax, "a", 0) == "a");
  CHECK(level_k_label(tax, "a", 1) == "b");
  CHECK(level_k_label(tax, "a", 2) == "c");
  CHECK(level_k_label(tax, "a", 99) == "root");
  CHECK_THROWS_AS(level_k_label(tax, "zzz", 1), LookupError);
  CHECK_THROWS_AS(level_k_label(tax, "a", -1), ContractError);
  const auto leaves = tax.leaves();
  CHECK(leaves == std::vector<std::string>{"a", "x"});
  std::size_t prev = granularity(tax, leaves, 0);
  CHECK(prev == 2);
  for (int k = 1; k < 6; ++k) {
    const std::size_t g = granularity(tax, leaves, k);
    CHECK(g <= prev);
    prev = g;
  }
  CHECK(prev == 1);
}

TEST_CASE("malformed taxonomies") {
  CHECK_THROWS_AS(Taxonomy::from_edges("a\tb\nb\ta\n"), ConfigError);        // cycle, no root
  CHECK_THROWS_AS(Taxonomy::from_edges("a\tr1\nb\tr2\n"), ConfigError);      // two roots
  CHECK_THROWS_AS(Taxonomy::from_edges("a\tb\na\tc\nb\tr\nc\tr\n"), ConfigError);  // two parents
  CHECK_THROWS_AS(Taxonomy::from_edges("a b\n"), ConfigError);
}

TEST_CASE("embedding and label files") {
  const auto dir = std::filesystem::temp_directory_path() / "lgsim_hier_test";
  std::filesystem::create_directories(dir);
  const RowMatrix X = blobs(2, 1);
  save_embeddings_bin(dir / "e.bin", X);
  const EmbeddingSet back = load_embeddings(dir / "e.bin");
  CHECK(back.vectors.rows() == X.rows());
  CHECK((back.vectors - X).cwiseAbs().maxCoeff() < 1e-5);
  {
    std::ofstream(dir / "e.csv") << "x,y\n1,2\n3,4\n";
    std::ofstream(dir / "l.txt") << "0\n1\n";
    std::ofstream(dir / "bad.csv") << "1,2\n3\n";
  }
  const EmbeddingSet csv = load_embeddings(dir / "e.csv");
  CHECK(csv.vectors.rows() == 2);
  CHECK(csv.vectors(1, 1) == 4.0);
  CHECK(load_labels(dir / "l.txt") == std::vector<int>{0, 1});
  CHECK_THROWS_AS(load_embeddings(dir / "bad.csv"), ConfigError);
  CHECK(id_mapping_csv({3, 5}) == "sample_index,fine_id\n0,3\n1,5\n");
  std::filesystem::remove_all(dir);
}
