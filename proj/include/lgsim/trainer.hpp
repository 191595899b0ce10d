#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lgsim/dictionary.hpp"
#include "lgsim/engine.hpp"
#include "lgsim/network.hpp"
#include "lgsim/neuron_sets.hpp"
#include "lgsim/sample.hpp"

namespace lgsim {

enum class BiasRule { PlainDecay, ClippedDecay };
std::string_view to_string(BiasRule r);
BiasRule parse_bias_rule(std::string_view s);
inline BiasRule default_bias_rule(Variant v) {
  return v == Variant::Coarse ? BiasRule::PlainDecay : BiasRule::ClippedDecay;
}

struct TrainConfig {
  Variant regime = Variant::Coarse;
  std::int64_t max_steps = 2000;  // 0 is a no-op run
  double eta = 2.5e-4;
  BiasRule bias_rule = BiasRule::PlainDecay;
  int log_every = 10;
  int dense_log_steps = 20;  // every step is logged below this step
  double loss_floor = 0.05;
  std::uint64_t seed = 0;    // master seed: network init, batches, diagnostic sets
  int diag_per_subclass = 8;

  void validate() const;
};

struct StepStats {
  double loss = 0.0;
  double grad_norm = 0.0;       // Frobenius norm of the weight update over all heads
  double max_neuron_step = 0.0; // largest per-neuron update norm
  double bias_shift = 0.0;      // total bias decrease
  int touched = 0;              // neurons with a non-zero update
  double psi1_max = 0.0;
  std::vector<double> margins;  // 1 - logit_y per sample, pre-update
};

/// One SGD step: weights from pre-update logits, then the configured bias rule.
/// ClippedDecay requires the next batch. Throws TrainingDiverged on a
/// non-finite loss.
StepStats sgd_step(Network& net, const Dictionary& dict, const Batch& batch, const TrainConfig& cfg,
                   const Batch* next_batch = nullptr);

struct HistoryRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double F_normal_plus = 0.0;   // mean F+ over '+' normal diagnostic samples
  double F_normal_minus = 0.0;  // mean F- over '-' normal diagnostic samples
  double F_hard_plus = 0.0;
  double F_hard_minus = 0.0;
  double F_normal_off = 0.0;    // mean wrong-class response on normal samples
  double F_hard_off = 0.0;
  double A_common = 0.0;        // <w_tracer, v+>
  std::vector<double> A_sub;    // <w_tracer_c, v+,c>
  double psi1_max = 0.0;
  double tracer_bias = 0.0;
  double diag_Fy_max = 0.0;     // max correct-class coarse response, normal set
  double diag_logit_max = 0.0;  // max correct-class logit, normal set
  double diag_ratio = 0.0;      // mean of exp(F_o)/(exp(F_o - F_y) + 1), normal set
  double acc_normal = 0.0;
  double acc_hard = 0.0;
  double grad_norm = 0.0;
  std::int64_t live_pairs = 0;
};

nlohmann::json to_json(const HistoryRecord& r);
HistoryRecord history_record_from_json(const nlohmann::json& j);

struct TrainHistory {
  Variant regime = Variant::Coarse;
  std::vector<HistoryRecord> records;
  std::int64_t steps_run = 0;
  bool reached_loss_floor = false;
  double final_loss = 0.0;
};

struct TrainResult {
  Network network;
  TrainHistory history;
  NeuronSets init_sets;
  Tracers tracers;
};

/// Coarse (+/-) responses of a batch evaluation, aggregated for fine networks.
struct CoarseEval {
  Eigen::MatrixXd F;            // n x heads, raw
  std::vector<double> F_plus;   // aggregated
  std::vector<double> F_minus;
};
CoarseEval evaluate(const Engine& engine, const Network& net, const PatchBlock& block);

/// Accuracy of argmax over coarse heads; ties count one half.
double coarse_accuracy(const CoarseEval& e, const std::vector<Sample>& samples);

/// Called with the network after `step` updates, before that step's update.
using StepHook = std::function<void(std::int64_t step, const Network& net)>;

/// Runs SGD on a fresh batch per step. Diagnostic normal and hard sets are drawn
/// once from a dedicated stream; tracers are fixed at step 0. Records stream to
/// `jsonl` when given.
TrainResult train_run(const HyperParams& params, const TrainConfig& cfg, const Dictionary& dict,
                      std::ostream* jsonl = nullptr, const StepHook& hook = {});

/// Analytic gradient of the mean batch cross-entropy through the trainer's
/// update path, per head (m x d).
std::vector<RowMatrix> batch_gradient(const Network& net, const Dictionary& dict,
                                      const std::vector<Sample>& samples);

/// Max relative error between the analytic gradient and central finite
/// differences on at least `coords` random weight coordinates. With a
/// dictionary the analytic side goes through the sparse engine, otherwise
/// through the dense forward pass. Throws ContractError for epsilon outside
/// [1e-7, 1e-3] and RetriableError when a perturbed neuron has a
/// pre-activation within 10*epsilon*|x| of zero.
double grad_check(const Network& net, const std::vector<Sample>& samples, double epsilon,
                  std::uint64_t seed, int coords = 100, const Dictionary* dict = nullptr);
double grad_check(const Network& net, const Sample& sample, double epsilon, std::uint64_t seed = 0,
                  int coords = 100);

}  // namespace lgsim
