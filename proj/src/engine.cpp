#include "lgsim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <cstring>

#include "lgsim/error.hpp"

namespace lgsim {

namespace {

constexpr double kMarginRel = 1e-10;

// Nominal amplitude of every designated feature in one patch, summed over
// repeats and sorted by feature id.
void nominal_of(const Sample& s, int p, std::vector<std::pair<int, double>>& out) {
  out.clear();
  for (int i = s.component_offsets[p]; i < s.component_offsets[p + 1]; ++i) {
    const Component& c = s.components[i];
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == c.feature; });
    if (it == out.end())
      out.emplace_back(c.feature, c.alpha);
    else
      it->second += c.alpha;
  }
  std::sort(out.begin(), out.end());
}

std::string key_of(bool noise, const std::vector<std::pair<int, double>>& nom) {
  std::string key(1, noise ? 'n' : 'f');
  for (const auto& e : nom) key.append(reinterpret_cast<const char*>(&e.first), sizeof(int));
  return key;
}

}  // namespace

PatchBlock build_block(const Dictionary& dict, const std::vector<Sample>& samples) {
  PatchBlock b;
  const int D = dict.num_designated();
  const int d = dict.d();
  b.n_samples = static_cast<int>(samples.size());
  if (samples.empty()) {
    b.zmax = Eigen::VectorXd::Zero(D);
    return b;
  }
  const int P = samples[0].num_patches();
  b.n_patches = P;

  // Categories are ordered by key so the layout does not depend on sample order.
  std::map<std::string, int> counts;
  std::vector<int> cat_of(static_cast<std::size_t>(b.n_samples) * P);
  std::vector<std::vector<std::pair<int, double>>> noms(static_cast<std::size_t>(b.n_samples) * P);
  std::vector<std::string> keys;
  std::unordered_map<std::string, int> local;
  for (int n = 0; n < b.n_samples; ++n) {
    const Sample& s = samples[n];
    if (s.num_patches() != P || s.patches.cols() != d)
      throw ContractError("all samples in a block must share P and d");
    for (int p = 0; p < P; ++p) {
      auto& nom = noms[static_cast<std::size_t>(n) * P + p];
      nominal_of(s, p, nom);
      for (const auto& e : nom)
        if (e.first < 0 || e.first >= D) throw ContractError("patch component outside the designated features");
      std::string key = key_of(s.tags[p] == PatchTag::FeatureNoise, nom);
      auto [it, fresh] = local.emplace(key, static_cast<int>(keys.size()));
      if (fresh) keys.push_back(key);
      cat_of[static_cast<std::size_t>(n) * P + p] = it->second;
      ++counts[key];
    }
  }

  std::vector<int> remap(keys.size());
  int offset = 0;
  for (auto& [key, count] : counts) {
    PatchCategory c;
    c.begin = offset;
    c.end = offset + count;
    c.noise = key[0] == 'n';
    for (std::size_t i = 1; i < key.size(); i += sizeof(int)) {
      int f;
      std::memcpy(&f, key.data() + i, sizeof(int));
      c.support.push_back(f);
    }
    c.amax.assign(c.support.size(), 0.0);
    remap[local.at(key)] = static_cast<int>(b.cats.size());
    b.cats.push_back(std::move(c));
    offset += count;
  }

  const int total = offset;
  b.X.resize(total, d);
  b.sample_of.resize(total);
  b.patch_of.resize(total);
  RowMatrix nominal = RowMatrix::Zero(total, D);
  std::vector<int> cursor(b.cats.size());
  for (std::size_t c = 0; c < b.cats.size(); ++c) cursor[c] = b.cats[c].begin;
  for (int n = 0; n < b.n_samples; ++n) {
    const Sample& s = samples[n];
    for (int p = 0; p < P; ++p) {
      const std::size_t idx = static_cast<std::size_t>(n) * P + p;
      const int c = remap[cat_of[idx]];
      const int row = cursor[c]++;
      b.X.row(row) = s.patches.row(p);
      b.sample_of[row] = n;
      b.patch_of[row] = p;
      PatchCategory& cat = b.cats[c];
      const auto& nom = noms[idx];
      for (std::size_t i = 0; i < nom.size(); ++i) {
        nominal(row, nom[i].first) = nom[i].second;
        cat.amax[i] = std::max(cat.amax[i], nom[i].second);
      }
    }
  }

  const RowMatrix VD = dict.words.topRows(D);
  RowMatrix XD = b.X * VD.transpose();
  b.zmax = (XD - nominal).cwiseAbs().colwise().maxCoeff().transpose();
  for (int row = 0; row < total; ++row) {
    const double sq = b.X.row(row).squaredNorm();
    b.xmax = std::max(b.xmax, std::sqrt(sq));
    b.rest_max = std::max(b.rest_max, std::sqrt(std::max(0.0, sq - XD.row(row).squaredNorm())));
  }
  b.rest_max = b.rest_max * (1.0 + 1e-9) + 1e-12;
  b.zmax = b.zmax * (1.0 + 1e-9);
  return b;
}

Engine::Engine(const Dictionary& dict, const Network& net) {
  if (dict.d() != net.d()) throw ContractError("dictionary and network dimensions differ");
  VD_ = dict.words.topRows(dict.num_designated());
  caches_.resize(net.heads.size());
  refresh_all(net);
}

void Engine::refresh_all(const Network& net) {
  for (int h = 0; h < net.num_heads(); ++h) {
    const auto& W = net.heads[h].weights;
    NeuronCache& c = caches_[h];
    c.wD = W * VD_.transpose();
    RowMatrix rest = W - c.wD * VD_;
    c.rest_norm = rest.rowwise().norm();
    c.w_norm = W.rowwise().norm();
  }
}

void Engine::refresh(const Network& net, int h, const std::vector<int>& rows) {
  const auto& W = net.heads[h].weights;
  NeuronCache& c = caches_[h];
  for (int r : rows) {
    Eigen::RowVectorXd proj = W.row(r) * VD_.transpose();
    c.wD.row(r) = proj;
    c.rest_norm(r) = (W.row(r) - proj * VD_).norm();
    c.w_norm(r) = W.row(r).norm();
  }
}

Engine::Plan Engine::plan(const Network& net, const PatchBlock& block) const {
  Plan pl;
  const int H = net.num_heads();
  const int D = static_cast<int>(VD_.rows());
  pl.live.assign(block.cats.size(), std::vector<std::vector<int>>(H));
  Eigen::VectorXd amax_global = Eigen::VectorXd::Zero(D);
  for (const auto& c : block.cats)
    for (std::size_t i = 0; i < c.support.size(); ++i)
      amax_global(c.support[i]) = std::max(amax_global(c.support[i]), c.amax[i]);

  for (int h = 0; h < H; ++h) {
    const NeuronCache& nc = caches_[h];
    const auto& bias = net.heads[h].biases;
    const int m = static_cast<int>(bias.size());
    for (int r = 0; r < m; ++r) {
      const auto wD = nc.wD.row(r);
      const double base = bias(r) + wD.cwiseAbs().dot(block.zmax.transpose()) +
                          nc.rest_norm(r) * block.rest_max +
                          kMarginRel * (nc.w_norm(r) * block.xmax + std::abs(bias(r)));
      const double reach = wD.cwiseMax(0.0).dot(amax_global.transpose());
      if (base + reach <= 0.0) continue;
      for (std::size_t c = 0; c < block.cats.size(); ++c) {
        const PatchCategory& cat = block.cats[c];
        double ub = base;
        for (std::size_t i = 0; i < cat.support.size(); ++i)
          ub += std::max(wD(cat.support[i]), 0.0) * cat.amax[i];
        if (ub > 0.0) pl.live[c][h].push_back(r);
      }
    }
  }
  for (const auto& per_cat : pl.live)
    for (std::size_t h = 0; h < per_cat.size(); ++h)
      pl.live_pairs += static_cast<std::int64_t>(per_cat[h].size());
  return pl;
}

Eigen::MatrixXd Engine::forward(const Network& net, const PatchBlock& block, const Plan& plan,
                                Gates* gates) const {
  const int H = net.num_heads();
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(block.n_samples, H);
  if (gates) gates->mask.assign(block.cats.size(), std::vector<std::vector<std::uint8_t>>(H));
  Eigen::MatrixXd Wl;
  for (std::size_t c = 0; c < block.cats.size(); ++c) {
    const PatchCategory& cat = block.cats[c];
    const int rows = cat.rows();
    for (int h = 0; h < H; ++h) {
      const auto& L = plan.live[c][h];
      if (L.empty()) continue;
      const auto& g = net.heads[h];
      const int nl = static_cast<int>(L.size());
      Wl.resize(nl, g.weights.cols());
      Eigen::VectorXd bl(nl);
      for (int l = 0; l < nl; ++l) {
        Wl.row(l) = g.weights.row(L[l]);
        bl(l) = g.biases(L[l]);
      }
      Eigen::MatrixXd Z = block.X.middleRows(cat.begin, rows) * Wl.transpose();
      std::vector<std::uint8_t>* mask = nullptr;
      if (gates) {
        mask = &gates->mask[c][h];
        mask->assign(static_cast<std::size_t>(rows) * nl, 0);
      }
      Eigen::VectorXd rowsum = Eigen::VectorXd::Zero(rows);
      for (int l = 0; l < nl; ++l) {
        const double bias = bl(l);
        for (int i = 0; i < rows; ++i) {
          const double v = Z(i, l) + bias;
          if (v > 0.0) {
            rowsum(i) += v;
            if (mask) (*mask)[static_cast<std::size_t>(l) * rows + i] = 1;
          }
        }
      }
      for (int i = 0; i < rows; ++i) F(block.sample_of[cat.begin + i], h) += rowsum(i);
    }
  }
  return F;
}

void Engine::accumulate(const PatchBlock& block, const Plan& plan, const Gates& gates,
                        const Eigen::MatrixXd& g, std::vector<RowMatrix>& grad,
                        std::vector<std::vector<std::uint8_t>>& touched) const {
  const int H = static_cast<int>(grad.size());
  Eigen::MatrixXd G;
  for (std::size_t c = 0; c < block.cats.size(); ++c) {
    const PatchCategory& cat = block.cats[c];
    const int rows = cat.rows();
    for (int h = 0; h < H; ++h) {
      const auto& L = plan.live[c][h];
      if (L.empty()) continue;
      const auto& mask = gates.mask[c][h];
      const int nl = static_cast<int>(L.size());
      G.setZero(rows, nl);
      bool any = false;
      for (int l = 0; l < nl; ++l)
        for (int i = 0; i < rows; ++i)
          if (mask[static_cast<std::size_t>(l) * rows + i]) {
            G(i, l) = g(block.sample_of[cat.begin + i], h);
            any = true;
          }
      if (!any) continue;
      Eigen::MatrixXd dW = G.transpose() * block.X.middleRows(cat.begin, rows);
      for (int l = 0; l < nl; ++l) {
        bool active = false;
        for (int i = 0; i < rows && !active; ++i) active = mask[static_cast<std::size_t>(l) * rows + i];
        if (!active) continue;
        grad[h].row(L[l]) += dW.row(l);
        touched[h][L[l]] = 1;
      }
    }
  }
}

double Engine::max_projection(const PatchBlock& block, const Eigen::Ref<const Eigen::RowVectorXd>& delta,
                              double cap) const {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  if (block.cats.empty()) return neg_inf;
  Eigen::RowVectorXd dD = delta * VD_.transpose();
  const double rest = (delta - dD * VD_).norm();
  const double base = dD.cwiseAbs().dot(block.zmax.transpose()) + rest * block.rest_max +
                      kMarginRel * delta.norm() * block.xmax;
  std::vector<double> ub(block.cats.size());
  for (std::size_t c = 0; c < block.cats.size(); ++c) {
    const PatchCategory& cat = block.cats[c];
    double u = base;
    for (std::size_t i = 0; i < cat.support.size(); ++i)
      u += std::max(dD(cat.support[i]), 0.0) * cat.amax[i];
    ub[c] = u;
  }
  std::vector<int> order(block.cats.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return ub[a] > ub[b]; });

  double best = neg_inf;
  for (int c : order) {
    if (0.1 * best >= cap || ub[c] <= best) break;
    const PatchCategory& cat = block.cats[c];
    best = std::max(best, block.X.row(cat.begin).dot(delta));
    if (0.1 * best >= cap) break;
    Eigen::VectorXd vals = block.X.middleRows(cat.begin, cat.rows()) * delta.transpose();
    best = std::max(best, vals.maxCoeff());
  }
  return best;
}

}  // namespace lgsim
