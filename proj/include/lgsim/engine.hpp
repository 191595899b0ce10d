#pragma once

#include <cstdint>
#include <vector>

#include "lgsim/dictionary.hpp"
#include "lgsim/network.hpp"
#include "lgsim/sample.hpp"

namespace lgsim {

// Exact sparse evaluation of the network on many samples.
//
// Patches are grouped into categories sharing the same nominal dictionary
// support. For every (neuron, category) pair a rigorous upper bound on the
// pre-activation is computed from the neuron's projections onto the designated
// words; pairs whose bound is non-positive cannot fire and are skipped, the
// rest are evaluated exactly with dense matrix products. Results equal the
// dense forward pass up to floating point summation order.

struct PatchCategory {
  int begin = 0;
  int end = 0;
  bool noise = false;
  std::vector<int> support;   // designated feature ids present in the category
  std::vector<double> amax;   // largest nominal amplitude per support entry
  int rows() const { return end - begin; }
};

struct PatchBlock {
  RowMatrix X;                  // all patches, grouped by category
  std::vector<int> sample_of;   // row -> sample index
  std::vector<int> patch_of;    // row -> patch index within its sample
  std::vector<PatchCategory> cats;
  Eigen::VectorXd zmax;         // per designated word: max |<x - nominal, v_j>|
  double rest_max = 0.0;        // max norm of the patch component orthogonal to the designated words
  double xmax = 0.0;            // max patch norm
  int n_samples = 0;
  int n_patches = 0;            // patches per sample
};

PatchBlock build_block(const Dictionary& dict, const std::vector<Sample>& samples);

/// Per-neuron projections used by the bounds.
struct NeuronCache {
  Eigen::MatrixXd wD;         // m x D projections onto designated words
  Eigen::VectorXd rest_norm;  // norm of the part orthogonal to the designated words
  Eigen::VectorXd w_norm;
};

class Engine {
 public:
  Engine(const Dictionary& dict, const Network& net);

  /// Recomputes cached projections for the listed neurons of head h.
  void refresh(const Network& net, int h, const std::vector<int>& rows);
  void refresh_all(const Network& net);

  struct Plan {
    // live[c][h] = ascending neuron ids of head h that may fire on category c
    std::vector<std::vector<std::vector<int>>> live;
    std::int64_t live_pairs = 0;
  };
  Plan plan(const Network& net, const PatchBlock& block) const;

  struct Gates {
    // gates[c][h]: rows(c) x live(c,h), column major, 1 where pre-activation > 0
    std::vector<std::vector<std::vector<std::uint8_t>>> mask;
  };

  /// F as an n_samples x heads matrix.
  Eigen::MatrixXd forward(const Network& net, const PatchBlock& block, const Plan& plan,
                          Gates* gates = nullptr) const;
  Eigen::MatrixXd forward(const Network& net, const PatchBlock& block) const {
    return forward(net, block, plan(net, block));
  }

  /// Accumulates sum_n sum_p g(n,h) 1{pre>0} x_p into the per-head gradient buffers.
  /// g is n_samples x heads.
  void accumulate(const PatchBlock& block, const Plan& plan, const Gates& gates,
                  const Eigen::MatrixXd& g, std::vector<RowMatrix>& grad,
                  std::vector<std::vector<std::uint8_t>>& touched) const;

  /// max over all patches of <delta, x_p>, stopping early once 0.1 * max
  /// provably reaches `cap`. Returns the running maximum at stop.
  double max_projection(const PatchBlock& block, const Eigen::Ref<const Eigen::RowVectorXd>& delta,
                        double cap) const;

  const NeuronCache& cache(int h) const { return caches_[h]; }
  const RowMatrix& designated() const { return VD_; }

 private:
  RowMatrix VD_;  // D x d
  std::vector<NeuronCache> caches_;
};

}  // namespace lgsim
