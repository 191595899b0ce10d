#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lgsim/dictionary.hpp"

namespace lgsim {

struct EmbeddingSet {
  RowMatrix vectors;             // n x e
  std::vector<int> base_labels;  // superclass id per row, may be empty
  void validate() const;
  int size() const { return static_cast<int>(vectors.rows()); }
};

struct KMeansResult {
  std::vector<int> assignments;
  RowMatrix centroids;
  std::vector<double> inertia_history;  // after every Lloyd iteration
  double inertia = 0.0;
  int iterations = 0;
  bool converged = false;  // reached an assignment fixpoint
};

/// k-means++ seeding then Lloyd iterations until the assignment is a fixpoint
/// or max_iters is reached. Empty clusters take the point farthest from its centroid.
KMeansResult lloyd_kmeans(const RowMatrix& vectors, int k, std::uint64_t seed, int max_iters = 300);

enum class FineIdMode { PerGroup, WholeDataset, Random, RandomPerGroup };
std::string_view to_string(FineIdMode m);
FineIdMode parse_fine_id_mode(std::string_view s);

struct FineIdResult {
  FineIdMode mode = FineIdMode::PerGroup;
  int C = 1;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> ids;
  std::map<int, int> group_C;  // clusters actually used per superclass
  std::vector<std::string> warnings;
};

/// per_group: cluster every superclass k separately, id = C*k + c.
/// whole_dataset: one clustering of all rows, id = cluster.
/// random: uniform id in [0, C). random_per_group: C*k + uniform c.
FineIdResult assign_fine_ids(const EmbeddingSet& emb, FineIdMode mode, int C, std::uint64_t seed);

struct RebalanceResult {
  std::map<int, int> chosen_C;
  std::map<int, std::int64_t> offsets;  // first fine id of every superclass
  std::vector<std::int64_t> ids;
  std::int64_t granularity = 0;
};

/// Per superclass, the largest candidate C whose clusters all hold more than
/// min_count members, else C = 1. Ids are offset cumulatively by superclass.
RebalanceResult rebalance_granularity(const EmbeddingSet& emb, const std::vector<int>& candidate_Cs,
                                      int min_count, std::uint64_t seed);

struct Taxonomy {
  std::map<std::string, std::string> parent;  // root has no entry
  std::string root;

  /// Parses "child<TAB>parent" lines. Blank lines and lines starting with '#' are skipped.
  static Taxonomy from_edges(const std::string& text);
  static Taxonomy load(const std::filesystem::path& path);
  void validate() const;
  bool contains(const std::string& node) const { return node == root || parent.count(node) > 0; }
  std::vector<std::string> leaves() const;
};

/// The node k parent hops above `leaf`, clamped at the root.
std::string level_k_label(const Taxonomy& tax, const std::string& leaf, int k);

/// Number of distinct level-k labels over the given leaves.
std::size_t granularity(const Taxonomy& tax, const std::vector<std::string>& leaves, int k);

EmbeddingSet load_embeddings(const std::filesystem::path& path);
std::vector<int> load_labels(const std::filesystem::path& path);
void save_embeddings_bin(const std::filesystem::path& path, const RowMatrix& vectors);
std::string id_mapping_csv(const std::vector<std::int64_t>& ids);

}  // namespace lgsim
