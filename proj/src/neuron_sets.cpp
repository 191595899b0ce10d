#include "lgsim/neuron_sets.hpp"

#include "lgsim/error.hpp"

namespace lgsim {

NeuronSets classify_init_neurons(const Network& net, const Dictionary& dict, const HyperParams& params) {
  if (dict.d() != net.d()) throw ContractError("dictionary and network dimensions differ");
  NeuronSets sets;
  sets.variant = net.variant;
  sets.theta_hi = params.threshold_hi(net.variant);
  sets.theta_lo = params.threshold_lo(net.variant);
  const int D = dict.num_designated();
  sets.num_designated = D;
  const int H = net.num_heads();
  sets.s_star.assign(H, std::vector<std::vector<int>>(D));
  sets.s.assign(H, std::vector<std::vector<int>>(D));
  sets.u.resize(H);
  for (int h = 0; h < H; ++h) {
    const RowMatrix proj = net.heads[h].weights * dict.words.transpose();  // m x d
    const int m = static_cast<int>(proj.rows());
    sets.u[h].resize(m);
    for (int r = 0; r < m; ++r) {
      auto& u = sets.u[h][r];
      for (int j = 0; j < proj.cols(); ++j)
        if (proj(r, j) >= sets.theta_lo) u.push_back(j);
      for (int j : u)
        if (j < D) sets.s[h][j].push_back(r);
      for (int v = 0; v < D; ++v) {
        if (proj(r, v) < sets.theta_hi) continue;
        // exclusivity: no other word reaches theta_lo
        if (u.size() == 1 && u[0] == v) sets.s_star[h][v].push_back(r);
      }
    }
  }
  return sets;
}

Tracers select_tracers(const NeuronSets& sets, const Network& net, const Dictionary& dict) {
  Tracers t;
  const int k = dict.k();
  t.sub_head.assign(k, -1);
  t.sub.assign(k, -1);
  auto first = [&](int h, int f) { return sets.star(h, f).empty() ? -1 : sets.star(h, f).front(); };
  if (net.variant == Variant::Coarse) {
    t.common_head = 0;
    t.common = first(0, dict.index_common_plus);
    for (int c = 0; c < k; ++c) {
      t.sub_head[c] = 0;
      t.sub[c] = first(0, dict.sub(1, c));
    }
  } else {
    for (int c = 0; c < k && t.common < 0; ++c) {
      const int h = net.head_of({1, c});
      const int r = first(h, dict.index_common_plus);
      if (r >= 0) {
        t.common_head = h;
        t.common = r;
      }
    }
    for (int c = 0; c < k; ++c) {
      t.sub_head[c] = net.head_of({1, c});
      t.sub[c] = first(t.sub_head[c], dict.sub(1, c));
    }
  }
  if (t.common >= 0) t.common_set_size = static_cast<int>(sets.star(t.common_head, dict.index_common_plus).size());
  return t;
}

}  // namespace lgsim
