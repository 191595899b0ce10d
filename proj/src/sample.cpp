#include "lgsim/sample.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>

#include "lgsim/error.hpp"
#include "lgsim/rng.hpp"

namespace lgsim {

int Sample::count(PatchTag t) const {
  return static_cast<int>(std::count(tags.begin(), tags.end(), t));
}

Sample sample_example(const Dictionary& dict, const HyperParams& params, FineLabel label,
                      SampleKind kind, Rng& rng) {
  const int k = label.sign > 0 ? params.k_plus : params.k_minus;
  if (label.sign != 1 && label.sign != -1) throw ContractError("label sign must be +1 or -1");
  if (label.sub < 0 || label.sub >= k) throw ContractError("subclass index out of range");
  const int d = params.d;
  const int P = params.P;
  if (dict.d() != d) throw ContractError("dictionary dimension does not match params.d");

  const double p_tag = static_cast<double>(params.s_star) / P;
  const double a_lo = std::sqrt(1.0 - params.iota);
  const double a_hi = std::sqrt(1.0 + params.iota);
  const int common = dict.common(label.sign);
  const int subf = dict.sub(label.sign, label.sub);
  const std::vector<int> pool = dict.opposite_pool(label.sign);
  const int pool_hi = static_cast<int>(pool.size()) - 1;

  Sample s;
  s.label = label;
  s.kind = kind;
  s.patches.resize(P, d);
  s.tags.resize(P);
  s.alphas.assign(P, 0.0);
  s.component_offsets.assign(P + 1, 0);
  s.components.reserve(static_cast<std::size_t>(P) * std::max(1, params.s_f));

  std::vector<Component> noise_terms(params.s_f);
  for (int p = 0; p < P; ++p) {
    // Every patch consumes the same draws whatever its tag, which keeps
    // normal and hard samples from one seed aligned patch by patch.
    const double u_common = uniform(rng, 0.0, 1.0);
    const double u_sub = uniform(rng, 0.0, 1.0);
    const double alpha = uniform(rng, a_lo, a_hi);
    for (auto& t : noise_terms) {
      t.feature = pool[uniform_int(rng, 0, pool_hi)];
      t.alpha = uniform(rng, 0.0, params.gamma);
    }
    auto row = s.patches.row(p);
    for (int j = 0; j < d; ++j) row(j) = params.sigma_zeta * standard_normal(rng);

    PatchTag tag = PatchTag::FeatureNoise;
    if (kind == SampleKind::Normal && u_common < p_tag)
      tag = PatchTag::Common;
    else if (u_sub < p_tag)
      tag = PatchTag::Subclass;
    s.tags[p] = tag;
    if (tag == PatchTag::FeatureNoise) {
      for (const auto& t : noise_terms) {
        row += t.alpha * dict.word(t.feature);
        s.components.push_back(t);
      }
    } else {
      const int f = tag == PatchTag::Common ? common : subf;
      row += alpha * dict.word(f);
      s.alphas[p] = alpha;
      s.components.push_back({f, alpha});
    }
    s.component_offsets[p + 1] = static_cast<int>(s.components.size());
  }
  return s;
}

std::uint64_t sample_seed(std::uint64_t master, Stream stream, std::int64_t step, std::int64_t index) {
  return derive_seed(master, stream, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(index)});
}

int worker_threads() {
  const char* env = std::getenv("LGSIM_THREADS");
  if (!env) return 1;
  try {
    return std::max(1, std::stoi(env));
  } catch (const std::exception&) {
    throw ConfigError(std::string("LGSIM_THREADS must be an integer, got '") + env + "'");
  }
}

namespace {

template <class Fn>
void parallel_for(int n, Fn&& fn) {
  const int threads = std::min(worker_threads(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) fn(i);
    });
  for (auto& th : pool) th.join();
}

std::vector<Sample> generate(const Dictionary& dict, const HyperParams& params,
                             const std::vector<FineLabel>& labels, SampleKind kind,
                             std::uint64_t master, Stream stream, std::int64_t step) {
  std::vector<Sample> out(labels.size());
  parallel_for(static_cast<int>(labels.size()), [&](int i) {
    Rng rng(sample_seed(master, stream, step, i));
    out[i] = sample_example(dict, params, labels[i], kind, rng);
  });
  return out;
}

}  // namespace

Batch make_batch(const Dictionary& dict, const HyperParams& params, std::int64_t step,
                 std::uint64_t master_seed) {
  if (params.k_plus < 1 || params.N % (2 * params.k_plus) != 0)
    throw ConfigError("batch size N=" + std::to_string(params.N) + " is not divisible by 2*k_plus");
  const int per = params.N / (2 * params.k_plus);
  std::vector<FineLabel> labels;
  labels.reserve(params.N);
  for (int sign : {1, -1})
    for (int c = 0; c < params.k_plus; ++c)
      for (int i = 0; i < per; ++i) labels.push_back({sign, c});
  Rng order = make_rng(master_seed, Stream::BatchOrder, {static_cast<std::uint64_t>(step)});
  for (int i = static_cast<int>(labels.size()) - 1; i > 0; --i)
    std::swap(labels[i], labels[uniform_int(order, 0, i)]);

  Batch b;
  b.step_index = step;
  b.samples = generate(dict, params, labels, SampleKind::Normal, master_seed, Stream::Batch, step);
  return b;
}

std::vector<Sample> make_eval_set(const Dictionary& dict, const HyperParams& params,
                                  int n_per_subclass, SampleKind kind, std::uint64_t master_seed,
                                  Stream stream, std::int64_t set_id) {
  std::vector<FineLabel> labels;
  for (int sign : {1, -1}) {
    const int k = sign > 0 ? params.k_plus : params.k_minus;
    for (int c = 0; c < k; ++c)
      for (int i = 0; i < n_per_subclass; ++i) labels.push_back({sign, c});
  }
  return generate(dict, params, labels, kind, master_seed, stream, set_id);
}

}  // namespace lgsim
