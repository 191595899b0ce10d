#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lgsim/dictionary.hpp"
#include "lgsim/params.hpp"
#include "lgsim/sample.hpp"

namespace lgsim {

struct NeuronGroup {
  RowMatrix weights;       // m x d, one neuron per row
  Eigen::VectorXd biases;  // m
  int size() const { return static_cast<int>(weights.rows()); }
};

/// Two-layer convolutional ReLU network with frozen unit top layer.
/// Coarse heads: 0 = '+', 1 = '-'. Fine heads: (+,c) -> c, (-,c) -> k_plus + c.
struct Network {
  Variant variant = Variant::Coarse;
  std::vector<NeuronGroup> heads;
  std::vector<FineLabel> head_labels;  // coarse heads carry sub = -1
  HyperParams params;
  std::uint64_t seed = 0;

  int num_heads() const { return static_cast<int>(heads.size()); }
  int d() const { return heads.empty() ? 0 : static_cast<int>(heads[0].weights.cols()); }
  /// Index of the head that is the correct class for this label.
  int head_of(FineLabel y) const;
  std::string head_name(int h) const;
};

Network init_network(const HyperParams& params, Variant variant, std::uint64_t seed);

struct Response {
  std::vector<double> per_class;                    // F_c(X) per head
  std::optional<std::vector<RowMatrix>> activations;  // per head, m x P pre-ReLU values
};

/// Dense reference forward pass.
Response forward(const Network& net, const Sample& sample, bool record_activations = false);
/// Same as above for a raw P x d patch matrix.
Response forward(const Network& net, const RowMatrix& patches, bool record_activations = false);

/// Softmax with max-subtraction.
std::vector<double> softmax_logits(const std::vector<double>& responses);
inline std::vector<double> softmax_logits(const Response& r) { return softmax_logits(r.per_class); }

/// Sums fine heads into coarse '+' and '-' responses.
Response aggregate_fine_to_coarse(const Response& resp, int k_plus, int k_minus);

/// Per-class loss weight g = 1{y=c} - logit_c.
std::vector<double> loss_weights(const std::vector<double>& responses, int target_head);
double cross_entropy(const std::vector<double>& responses, int target_head);

}  // namespace lgsim
