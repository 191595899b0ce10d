#include "lgsim/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "lgsim/error.hpp"
#include "lgsim/io.hpp"
#include "lgsim/rng.hpp"

namespace lgsim {

void EmbeddingSet::validate() const {
  if (vectors.rows() < 1) throw ConfigError("embedding set is empty");
  if (!vectors.allFinite()) throw ConfigError("embedding set contains non-finite values");
  if (!base_labels.empty() && static_cast<int>(base_labels.size()) != vectors.rows())
    throw ConfigError("label count does not match embedding rows");
}

namespace {

double sq_dist(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  return (a - b).squaredNorm();
}

// Nearest centroid per row, ties to the lowest index. Returns inertia.
double assign(const RowMatrix& X, const RowMatrix& C, std::vector<int>& out, std::vector<double>& dist) {
  double inertia = 0.0;
  for (int i = 0; i < X.rows(); ++i) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int c = 0; c < C.rows(); ++c) {
      const double dd = sq_dist(X.row(i), C.row(c));
      if (dd < bd) {
        bd = dd;
        best = c;
      }
    }
    out[i] = best;
    dist[i] = bd;
    inertia += bd;
  }
  return inertia;
}

}  // namespace

KMeansResult lloyd_kmeans(const RowMatrix& X, int k, std::uint64_t seed, int max_iters) {
  const int n = static_cast<int>(X.rows());
  if (k < 1) throw ConfigError("k-means needs k >= 1");
  if (k > n) throw ConfigError("k-means with k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  if (max_iters < 1) throw ConfigError("k-means needs max_iters >= 1");
  Rng rng = make_rng(seed, Stream::Clustering);

  // k-means++ seeding
  RowMatrix C(k, X.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  int pick = uniform_int(rng, 0, n - 1);
  for (int c = 0; c < k; ++c) {
    C.row(c) = X.row(pick);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(X.row(i), C.row(c)));
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (total > 0.0) {
      double u = uniform(rng, 0.0, total);
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        if (u < d2[i]) {
          pick = i;
          break;
        }
        u -= d2[i];
      }
      while (d2[pick] == 0.0 && pick > 0) --pick;  // never re-pick an existing centre
    } else {
      pick = uniform_int(rng, 0, n - 1);
    }
  }

  KMeansResult res;
  res.assignments.assign(n, -1);
  std::vector<int> next(n);
  std::vector<double> dist(n);
  for (int it = 0; it < max_iters; ++it) {
    assign(X, C, next, dist);
    const bool changed = next != res.assignments;
    res.assignments = next;
    ++res.iterations;
    // repair empty clusters with the point farthest from its centroid
    std::vector<int> counts(k, 0);
    for (int a : res.assignments) ++counts[a];
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      int far = -1;
      for (int i = 0; i < n; ++i)
        if (counts[res.assignments[i]] > 1 && (far < 0 || dist[i] > dist[far])) far = i;
      if (far < 0) break;
      --counts[res.assignments[far]];
      res.assignments[far] = c;
      dist[far] = 0.0;
      ++counts[c];
    }
    C.setZero();
    for (int i = 0; i < n; ++i) C.row(res.assignments[i]) += X.row(i);
    for (int c = 0; c < k; ++c) C.row(c) /= static_cast<double>(counts[c]);
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) inertia += sq_dist(X.row(i), C.row(res.assignments[i]));
    res.inertia_history.push_back(inertia);
    res.inertia = inertia;
    if (!changed) {
      res.converged = true;
      break;
    }
  }
  res.centroids = C;
  return res;
}

std::string_view to_string(FineIdMode m) {
  switch (m) {
    case FineIdMode::PerGroup: return "per_group";
    case FineIdMode::WholeDataset: return "whole_dataset";
    case FineIdMode::Random: return "random";
    default: return "random_per_group";
  }
}

FineIdMode parse_fine_id_mode(std::string_view s) {
  if (s == "per_group") return FineIdMode::PerGroup;
  if (s == "whole_dataset") return FineIdMode::WholeDataset;
  if (s == "random") return FineIdMode::Random;
  if (s == "random_per_group") return FineIdMode::RandomPerGroup;
  throw ConfigError("unknown fine id mode '" + std::string(s) + "'");
}

namespace {

std::map<int, std::vector<int>> groups_of(const EmbeddingSet& emb) {
  if (emb.base_labels.empty()) throw ConfigError("this mode needs superclass labels");
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < emb.size(); ++i) {
    if (emb.base_labels[i] < 0) throw ConfigError("superclass labels must be non-negative");
    groups[emb.base_labels[i]].push_back(i);
  }
  return groups;
}

RowMatrix rows_of(const RowMatrix& X, const std::vector<int>& idx) {
  RowMatrix out(idx.size(), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = X.row(idx[i]);
  return out;
}

std::uint64_t group_seed(std::uint64_t seed, int group) {
  return derive_seed(seed, Stream::Clustering, {static_cast<std::uint64_t>(group)});
}

}  // namespace

FineIdResult assign_fine_ids(const EmbeddingSet& emb, FineIdMode mode, int C, std::uint64_t seed) {
  emb.validate();
  if (C < 1) throw ConfigError("C must be >= 1");
  FineIdResult res;
  res.mode = mode;
  res.C = C;
  res.seed = seed;
  res.ids.assign(emb.size(), 0);
  switch (mode) {
    case FineIdMode::PerGroup:
      for (const auto& [g, idx] : groups_of(emb)) {
        int k = C;
        if (static_cast<int>(idx.size()) < C) {
          k = static_cast<int>(idx.size());
          res.warnings.push_back("superclass " + std::to_string(g) + " has " + std::to_string(idx.size()) +
                                 " members, fewer than C=" + std::to_string(C) + "; using " + std::to_string(k) +
                                 " clusters");
        }
        res.group_C[g] = k;
        const auto km = lloyd_kmeans(rows_of(emb.vectors, idx), k, group_seed(seed, g));
        for (std::size_t i = 0; i < idx.size(); ++i)
          res.ids[idx[i]] = static_cast<std::int64_t>(C) * g + km.assignments[i];
      }
      break;
    case FineIdMode::WholeDataset: {
      int k = C;
      if (emb.size() < C) {
        k = emb.size();
        res.warnings.push_back("dataset smaller than C; using " + std::to_string(k) + " clusters");
      }
      const auto km = lloyd_kmeans(emb.vectors, k, seed);
      for (int i = 0; i < emb.size(); ++i) res.ids[i] = km.assignments[i];
      res.group_C[-1] = k;
      break;
    }
    case FineIdMode::Random: {
      Rng rng = make_rng(seed, Stream::Clustering, {0x72616e64ULL});
      for (int i = 0; i < emb.size(); ++i) res.ids[i] = uniform_int(rng, 0, C - 1);
      res.group_C[-1] = C;
      break;
    }
    case FineIdMode::RandomPerGroup:
      for (const auto& [g, idx] : groups_of(emb)) {
        Rng rng(group_seed(seed, g));
        for (int i : idx) res.ids[i] = static_cast<std::int64_t>(C) * g + uniform_int(rng, 0, C - 1);
        res.group_C[g] = C;
      }
      break;
  }
  return res;
}

RebalanceResult rebalance_granularity(const EmbeddingSet& emb, const std::vector<int>& candidate_Cs,
                                      int min_count, std::uint64_t seed) {
  emb.validate();
  if (!std::is_sorted(candidate_Cs.begin(), candidate_Cs.end()))
    throw ConfigError("candidate C values must be sorted ascending");
  for (int c : candidate_Cs)
    if (c < 1) throw ConfigError("candidate C values must be >= 1");
  RebalanceResult res;
  res.ids.assign(emb.size(), 0);
  std::int64_t offset = 0;
  for (const auto& [g, idx] : groups_of(emb)) {
    const RowMatrix X = rows_of(emb.vectors, idx);
    int chosen = 1;
    std::vector<int> assignment(idx.size(), 0);
    for (auto it = candidate_Cs.rbegin(); it != candidate_Cs.rend(); ++it) {
      const int C = *it;
      if (C > static_cast<int>(idx.size())) continue;
      const auto km = lloyd_kmeans(X, C, group_seed(seed, g));
      std::vector<int> counts(C, 0);
      for (int a : km.assignments) ++counts[a];
      if (*std::min_element(counts.begin(), counts.end()) > min_count) {
        chosen = C;
        assignment = km.assignments;
        break;
      }
    }
    res.chosen_C[g] = chosen;
    res.offsets[g] = offset;
    for (std::size_t i = 0; i < idx.size(); ++i) res.ids[idx[i]] = offset + assignment[i];
    offset += chosen;
  }
  res.granularity = offset;
  return res;
}

Taxonomy Taxonomy::from_edges(const std::string& text) {
  Taxonomy t;
  std::set<std::string> nodes;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw ConfigError("taxonomy line " + std::to_string(lineno) + ": expected child<TAB>parent");
    const std::string child = line.substr(0, tab), par = line.substr(tab + 1);
    if (child.empty() || par.empty()) throw ConfigError("taxonomy line " + std::to_string(lineno) + ": empty node id");
    auto [it, fresh] = t.parent.emplace(child, par);
    if (!fresh && it->second != par)
      throw ConfigError("taxonomy line " + std::to_string(lineno) + ": node '" + child + "' has two parents");
    nodes.insert(child);
    nodes.insert(par);
  }
  std::vector<std::string> roots;
  for (const auto& n : nodes)
    if (!t.parent.count(n)) roots.push_back(n);
  if (roots.size() != 1)
    throw ConfigError("taxonomy must have exactly one root, found " + std::to_string(roots.size()));
  t.root = roots[0];
  t.validate();
  return t;
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) { return from_edges(read_text(path)); }

void Taxonomy::validate() const {
  if (parent.count(root)) throw ConfigError("taxonomy root has a parent");
  for (const auto& [node, _] : parent) {
    std::string cur = node;
    std::size_t hops = 0;
    while (cur != root) {
      auto it = parent.find(cur);
      if (it == parent.end()) throw ConfigError("node '" + cur + "' does not reach the root");
      cur = it->second;
      if (++hops > parent.size()) throw ConfigError("taxonomy contains a cycle through '" + node + "'");
    }
  }
}

std::vector<std::string> Taxonomy::leaves() const {
  std::set<std::string> inner;
  for (const auto& [c, p] : parent) inner.insert(p);
  std::vector<std::string> out;
  for (const auto& [c, p] : parent)
    if (!inner.count(c)) out.push_back(c);
  if (parent.empty()) out.push_back(root);
  return out;
}

std::string level_k_label(const Taxonomy& tax, const std::string& leaf, int k) {
  if (!tax.contains(leaf)) throw LookupError("unknown taxonomy node '" + leaf + "'");
  if (k < 0) throw ContractError("level k must be >= 0");
  std::string cur = leaf;
  for (int i = 0; i < k && cur != tax.root; ++i) cur = tax.parent.at(cur);
  return cur;
}

std::size_t granularity(const Taxonomy& tax, const std::vector<std::string>& leaves, int k) {
  std::set<std::string> labels;
  for (const auto& l : leaves) labels.insert(level_k_label(tax, l, k));
  return labels.size();
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  EmbeddingSet emb;
  const std::string ext = path.extension().string();
  if (ext == ".csv" || ext == ".txt") {
    std::istringstream in(read_text(path));
    std::string line;
    std::vector<std::vector<double>> rows;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::vector<double> row;
      std::istringstream ls(line);
      std::string cell;
      bool numeric = true;
      while (std::getline(ls, cell, ',')) {
        try {
          std::size_t used = 0;
          row.push_back(std::stod(cell, &used));
        } catch (const std::exception&) {
          numeric = false;
          break;
        }
      }
      if (!numeric) {
        if (rows.empty() && lineno == 1) continue;  // header
        throw ConfigError(path.string() + " line " + std::to_string(lineno) + ": non-numeric value");
      }
      if (!rows.empty() && row.size() != rows[0].size())
        throw ConfigError(path.string() + " line " + std::to_string(lineno) + ": ragged row");
      rows.push_back(std::move(row));
    }
    emb.vectors.resize(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows[i].size(); ++j) emb.vectors(i, j) = rows[i][j];
    return emb;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::int64_t n = 0, e = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  in.read(reinterpret_cast<char*>(&e), sizeof e);
  if (!in || n < 0 || e < 0 || n > (1LL << 32) || e > (1LL << 24)) throw ConfigError(path.string() + ": bad header");
  std::vector<float> buf(static_cast<std::size_t>(n * e));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw ConfigError(path.string() + ": truncated embedding file");
  emb.vectors.resize(n, e);
  for (std::int64_t i = 0; i < n * e; ++i) emb.vectors.data()[i] = buf[i];
  return emb;
}

void save_embeddings_bin(const std::filesystem::path& path, const RowMatrix& vectors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::int64_t n = vectors.rows(), e = vectors.cols();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(&e), sizeof e);
  for (std::int64_t i = 0; i < n * e; ++i) {
    const float f = static_cast<float>(vectors.data()[i]);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
}

std::vector<int> load_labels(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<int> labels;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    try {
      labels.push_back(std::stoi(line));
    } catch (const std::exception&) {
      throw ConfigError(path.string() + " line " + std::to_string(lineno) + ": expected an integer label");
    }
  }
  return labels;
}

std::string id_mapping_csv(const std::vector<std::int64_t>& ids) {
  std::ostringstream os;
  os << "sample_index,fine_id\n";
  for (std::size_t i = 0; i < ids.size(); ++i) os << i << ',' << ids[i] << '\n';
  return os.str();
}

}  // namespace lgsim
