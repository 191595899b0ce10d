#include "lgsim/network.hpp"

#include <algorithm>
#include <cmath>

#include "lgsim/error.hpp"
#include "lgsim/rng.hpp"

namespace lgsim {

int Network::head_of(FineLabel y) const {
  if (variant == Variant::Coarse) return y.sign > 0 ? 0 : 1;
  const int k = params.k_plus;
  if (y.sub < 0 || y.sub >= (y.sign > 0 ? params.k_plus : params.k_minus))
    throw ContractError("fine label out of range");
  return y.sign > 0 ? y.sub : k + y.sub;
}

std::string Network::head_name(int h) const {
  const FineLabel& l = head_labels.at(h);
  std::string s = l.sign > 0 ? "+" : "-";
  if (l.sub >= 0) s += "," + std::to_string(l.sub);
  return s;
}

Network init_network(const HyperParams& params, Variant variant, std::uint64_t seed) {
  params.validate();
  Network net;
  net.variant = variant;
  net.params = params;
  net.seed = seed;
  const int m = params.neurons_per_head(variant);
  const double bias = params.init_bias(variant);
  if (variant == Variant::Coarse) {
    net.head_labels = {{1, -1}, {-1, -1}};
  } else {
    for (int c = 0; c < params.k_plus; ++c) net.head_labels.push_back({1, c});
    for (int c = 0; c < params.k_minus; ++c) net.head_labels.push_back({-1, c});
  }
  for (int h = 0; h < static_cast<int>(net.head_labels.size()); ++h) {
    Rng rng = make_rng(seed, Stream::Init, {static_cast<std::uint64_t>(variant), static_cast<std::uint64_t>(h)});
    NeuronGroup g;
    g.weights.resize(m, params.d);
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < params.d; ++j) g.weights(r, j) = params.sigma_0 * standard_normal(rng);
    g.biases = Eigen::VectorXd::Constant(m, bias);
    net.heads.push_back(std::move(g));
  }
  return net;
}

Response forward(const Network& net, const RowMatrix& patches, bool record_activations) {
  if (patches.cols() != net.d())
    throw ContractError("patch dimension " + std::to_string(patches.cols()) +
                        " does not match network dimension " + std::to_string(net.d()));
  Response resp;
  resp.per_class.resize(net.heads.size());
  if (record_activations) resp.activations.emplace();
  for (std::size_t h = 0; h < net.heads.size(); ++h) {
    const auto& g = net.heads[h];
    RowMatrix pre = g.weights * patches.transpose();
    pre.colwise() += g.biases;
    resp.per_class[h] = pre.cwiseMax(0.0).sum();
    if (record_activations) resp.activations->push_back(std::move(pre));
  }
  return resp;
}

Response forward(const Network& net, const Sample& sample, bool record_activations) {
  return forward(net, sample.patches, record_activations);
}

std::vector<double> softmax_logits(const std::vector<double>& responses) {
  if (responses.empty()) return {};
  const double mx = *std::max_element(responses.begin(), responses.end());
  std::vector<double> out(responses.size());
  double z = 0.0;
  for (std::size_t i = 0; i < responses.size(); ++i) z += out[i] = std::exp(responses[i] - mx);
  for (double& v : out) v /= z;
  return out;
}

Response aggregate_fine_to_coarse(const Response& resp, int k_plus, int k_minus) {
  if (static_cast<int>(resp.per_class.size()) != k_plus + k_minus)
    throw ContractError("fine response has " + std::to_string(resp.per_class.size()) +
                        " heads, expected " + std::to_string(k_plus + k_minus));
  Response out;
  double plus = 0.0, minus = 0.0;
  for (int c = 0; c < k_plus; ++c) plus += resp.per_class[c];
  for (int c = 0; c < k_minus; ++c) minus += resp.per_class[k_plus + c];
  out.per_class = {plus, minus};
  return out;
}

std::vector<double> loss_weights(const std::vector<double>& responses, int target_head) {
  std::vector<double> g = softmax_logits(responses);
  for (double& v : g) v = -v;
  g.at(target_head) += 1.0;
  return g;
}

double cross_entropy(const std::vector<double>& responses, int target_head) {
  const double mx = *std::max_element(responses.begin(), responses.end());
  double z = 0.0;
  for (double f : responses) z += std::exp(f - mx);
  return mx + std::log(z) - responses.at(target_head);
}

}  // namespace lgsim
