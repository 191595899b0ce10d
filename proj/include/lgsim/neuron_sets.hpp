#pragma once

#include <vector>

#include "lgsim/dictionary.hpp"
#include "lgsim/network.hpp"

namespace lgsim {

/// Initialization-defined neuron sets, per head and designated feature.
struct NeuronSets {
  Variant variant = Variant::Coarse;
  double theta_hi = 0.0;
  double theta_lo = 0.0;
  int num_designated = 0;
  // [head][designated feature] -> ascending neuron ids
  std::vector<std::vector<std::vector<int>>> s_star;
  std::vector<std::vector<std::vector<int>>> s;
  // [head][neuron] -> words (any dictionary index) at or above theta_lo
  std::vector<std::vector<std::vector<int>>> u;

  const std::vector<int>& star(int head, int feature) const { return s_star.at(head).at(feature); }
};

NeuronSets classify_init_neurons(const Network& net, const Dictionary& dict, const HyperParams& params);

/// Neurons whose evolution the trainer records. Entries are -1 when the
/// corresponding strict set is empty.
struct Tracers {
  int common_head = -1;
  int common = -1;             // neuron aligned with v+
  std::vector<int> sub_head;   // per subclass c of '+'
  std::vector<int> sub;        // neuron aligned with v+,c
  int common_set_size = 0;     // |S*(v+)| in common_head
};

/// Smallest id of each relevant strict set. Coarse: head '+'. Fine: the
/// first (+,c) head with a non-empty S*(v+) for the common tracer, head (+,c)
/// for the subclass tracer c.
Tracers select_tracers(const NeuronSets& sets, const Network& net, const Dictionary& dict);

}  // namespace lgsim
