#include "lgsim/params.hpp"

#include <cmath>

#include "lgsim/error.hpp"

namespace lgsim {

std::string_view to_string(Preset p) { return p == Preset::Desk ? "desk" : "paper-asymptotic"; }
std::string_view to_string(Variant v) { return v == Variant::Coarse ? "coarse" : "fine"; }

Preset parse_preset(std::string_view s) {
  if (s == "desk") return Preset::Desk;
  if (s == "paper-asymptotic") return Preset::PaperAsymptotic;
  throw ConfigError("unknown preset '" + std::string(s) + "' (expected desk or paper-asymptotic)");
}

Variant parse_variant(std::string_view s) {
  if (s == "coarse") return Variant::Coarse;
  if (s == "fine") return Variant::Fine;
  throw ConfigError("unknown regime '" + std::string(s) + "' (expected coarse or fine)");
}

double paper_sigma_zeta(int d) {
  const double ld = std::log(static_cast<double>(d));
  return 1.0 / (std::pow(ld, 10.0) * std::sqrt(static_cast<double>(d)));
}

HyperParams HyperParams::desk() {
  HyperParams p;
  p.d = 128;
  p.P = 256;
  p.s_star = 16;
  p.s_f = 2;
  p.iota = 0.05;
  p.gamma = 0.02;
  p.sigma_zeta = 0.002;
  p.k_plus = p.k_minus = 8;
  p.N = 256;
  p.bias_decay_beta = 50.0;
  p.c_0 = 0.1;
  p.m = 40000;
  p.m_sub = 0;
  p.sigma_0 = 1e-6;
  p.eta = 1e-4;
  p.threshold_log_d = 2.0;
  p.threshold_gap_multiplier = 6.0;
  p.preset = Preset::Desk;
  return p;
}

HyperParams HyperParams::paper_asymptotic(int d) {
  HyperParams p = desk();
  const double ld = std::log(static_cast<double>(d));
  p.d = d;
  p.preset = Preset::PaperAsymptotic;
  p.sigma_zeta = paper_sigma_zeta(d);
  p.gamma = 1.0 / std::pow(ld, 10.0);
  p.iota = 1.0 / std::pow(ld, 5.0);
  p.bias_decay_beta = std::pow(ld, 5.0);
  p.threshold_log_d = 0.0;
  p.threshold_gap_multiplier = 1.0;
  p.m = static_cast<int>(std::ceil(std::pow(d, 2.0 + 2.0 * p.c_0)));
  p.m_sub = static_cast<int>(std::ceil(std::pow(d, 1.0 + 2.0 * p.c_0)));
  // smallest integer C_init with d^C_init > d^3 ln d
  int c_init = 3;
  while (std::pow(d, c_init) <= std::pow(d, 3) * ld) ++c_init;
  p.sigma_0 = std::pow(d, -c_init);
  p.eta = p.sigma_0;
  return p;
}

int HyperParams::fine_neurons() const {
  if (m_sub > 0) return m_sub;
  return (m + k_plus - 1) / k_plus;
}

double HyperParams::log_d() const {
  return threshold_log_d > 0.0 ? threshold_log_d : std::log(static_cast<double>(d));
}

double HyperParams::init_scale(Variant v) const {
  return std::sqrt((v == Variant::Coarse ? 4.0 : 2.0) + 2.0 * c_0);
}

double HyperParams::init_bias(Variant v) const {
  return -sigma_0 * init_scale(v) * std::sqrt(log_d());
}

double HyperParams::threshold_hi(Variant v) const {
  const double L = log_d();
  return sigma_0 * init_scale(v) * std::sqrt(L + threshold_gap_multiplier / std::pow(L, 5.0));
}

double HyperParams::threshold_lo(Variant v) const {
  const double L = log_d();
  return sigma_0 * init_scale(v) *
         std::sqrt(std::max(0.0, L - threshold_gap_multiplier / std::pow(L, 5.0)));
}

void HyperParams::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid hyperparameters: " + msg); };
  if (d < 1 || P < 1 || N < 1) fail("d, P and N must be positive");
  if (s_star < 0 || s_f < 0) fail("s_star and s_f must be non-negative");
  if (iota < 0.0 || iota > 1.0) fail("iota must lie in [0, 1]");
  if (gamma < 0.0) fail("gamma must be non-negative");
  if (sigma_zeta < 0.0) fail("sigma_zeta must be non-negative");
  if (k_plus < 1 || k_minus < 1) fail("subclass counts must be positive");
  if (k_plus != k_minus) fail("k_plus must equal k_minus");
  if (N % (2 * k_plus) != 0) fail("N must be divisible by 2*k_plus");
  if (2 + k_plus + k_minus > d) fail("dictionary too small: need 2 + k_plus + k_minus <= d");
  if (2 * s_star > P) fail("s_star must not exceed P/2");
  if (m < 1 || m_sub < 0) fail("neuron counts must be positive");
  if (!(sigma_0 >= 0.0) || !(eta > 0.0)) fail("sigma_0 must be >= 0 and eta > 0");
  if (!(bias_decay_beta > 0.0)) fail("bias_decay_beta must be positive");
  if (threshold_log_d < 0.0 || threshold_gap_multiplier < 0.0) fail("threshold knobs must be >= 0");
  if (preset == Preset::PaperAsymptotic) {
    const double expected = paper_sigma_zeta(d);
    if (std::abs(sigma_zeta - expected) > 1e-12 * expected)
      fail("paper-asymptotic preset requires sigma_zeta = 1/(ln^10(d) sqrt(d))");
  }
}

}  // namespace lgsim
