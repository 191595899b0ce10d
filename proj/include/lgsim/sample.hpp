#pragma once

#include <cstdint>
#include <vector>

#include "lgsim/dictionary.hpp"
#include "lgsim/params.hpp"
#include "lgsim/rng.hpp"

namespace lgsim {

enum class PatchTag : std::uint8_t { Common = 0, Subclass = 1, FeatureNoise = 2 };
enum class SampleKind : std::uint8_t { Normal = 0, Hard = 1 };

struct FineLabel {
  int sign = 1;  // +1 or -1
  int sub = 0;   // 0-based subclass index
  bool operator==(const FineLabel&) const = default;
};

/// One weighted dictionary word inside a patch.
struct Component {
  int feature = 0;
  double alpha = 0.0;
};

struct Sample {
  RowMatrix patches;  // P x d
  FineLabel label;
  SampleKind kind = SampleKind::Normal;
  std::vector<PatchTag> tags;
  std::vector<double> alphas;          // feature strength per patch, 0 on feature-noise patches
  std::vector<int> component_offsets;  // P + 1 offsets into components
  std::vector<Component> components;   // nominal (noise-free) content of every patch

  int coarse_label() const { return label.sign; }
  int num_patches() const { return static_cast<int>(patches.rows()); }
  int count(PatchTag t) const;
};

struct Batch {
  std::vector<Sample> samples;
  std::int64_t step_index = 0;
};

/// Draws one sample from a dedicated rng. A hard sample drawn from a copy of
/// the same rng state as a normal sample reproduces it except on the patches
/// the normal sample tagged common.
Sample sample_example(const Dictionary& dict, const HyperParams& params, FineLabel label,
                      SampleKind kind, Rng& rng);

/// Seed of sample `index` in batch `step`; used by make_batch and diagnostic sets.
std::uint64_t sample_seed(std::uint64_t master, Stream stream, std::int64_t step, std::int64_t index);

/// N fresh normal samples, exactly N/(2k) per subclass, in shuffled order.
Batch make_batch(const Dictionary& dict, const HyperParams& params, std::int64_t step,
                 std::uint64_t master_seed);

/// n_per_subclass samples of every subclass, label-sorted, each seeded from
/// (master, stream, set_id, index). Normal and hard sets built with the same
/// arguments are coupled sample by sample.
std::vector<Sample> make_eval_set(const Dictionary& dict, const HyperParams& params,
                                  int n_per_subclass, SampleKind kind, std::uint64_t master_seed,
                                  Stream stream, std::int64_t set_id = 0);

/// Number of worker threads for embarrassingly parallel loops (LGSIM_THREADS, default 1).
int worker_threads();

}  // namespace lgsim
