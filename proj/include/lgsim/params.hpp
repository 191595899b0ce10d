#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace lgsim {

enum class Preset { Desk, PaperAsymptotic };
enum class Variant { Coarse, Fine };

std::string_view to_string(Preset p);
std::string_view to_string(Variant v);
Preset parse_preset(std::string_view s);
Variant parse_variant(std::string_view s);

/// Every scalar of the data model and learner.
///
/// `threshold_log_d` replaces ln(d) inside the initial-bias and neuron-set
/// threshold formulas; zero means "use ln(d)". `threshold_gap_multiplier`
/// scales the ±1/L^5 correction separating the strict and loose thresholds.
/// Both exist because at laptop-scale d the literal formulas leave every
/// neuron set empty unless m is in the tens of millions.
struct HyperParams {
  int d = 128;
  int P = 256;
  int s_star = 16;
  int s_f = 2;
  double iota = 0.05;
  double gamma = 0.02;
  double sigma_zeta = 0.002;
  int k_plus = 8;
  int k_minus = 8;
  int m = 40000;
  int m_sub = 0;  // 0 selects ceil(m / k_plus)
  double sigma_0 = 1e-6;
  double c_0 = 0.1;
  double eta = 1e-4;
  int N = 256;
  double bias_decay_beta = 50.0;
  double threshold_log_d = 0.0;
  double threshold_gap_multiplier = 1.0;
  Preset preset = Preset::Desk;

  static HyperParams desk();
  /// Derives sigma_zeta, gamma, beta, thresholds, m, sigma_0 and eta from
  /// the asymptotic parameter formulas at the given d.
  static HyperParams paper_asymptotic(int d);

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  int num_designated() const { return 2 + k_plus + k_minus; }
  int fine_neurons() const;
  int neurons_per_head(Variant v) const { return v == Variant::Coarse ? m : fine_neurons(); }
  int num_heads(Variant v) const { return v == Variant::Coarse ? 2 : k_plus + k_minus; }

  double log_d() const;
  /// sqrt(4 + 2 c0) for the coarse learner, sqrt(2 + 2 c0) for the fine one.
  double init_scale(Variant v) const;
  double init_bias(Variant v) const;
  double threshold_hi(Variant v) const;
  double threshold_lo(Variant v) const;
};

double paper_sigma_zeta(int d);

}  // namespace lgsim
