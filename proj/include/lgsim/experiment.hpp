#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lgsim/dictionary.hpp"
#include "lgsim/params.hpp"
#include "lgsim/probes.hpp"
#include "lgsim/trainer.hpp"

namespace lgsim {

struct ProbeConfig {
  bool checks = true;  // false records every check as disabled
  double eps_T11 = 0.1;
  int audit_n_eval = 32;         // per subclass and kind
  bool phase1_probe = true;      // re-run to mid-Phase-I and T0 for the singleton and spread probes
  double singleton_min_rate = 0.99;
  double nesting_max_violation = 0.01;
  double tracer_spread_factor = 10.0;  // bound = factor * sigma_0 * sqrt(ln d)
  double coarse_margin_lo = 0.49;
  double coarse_margin_hi = 0.51;
  double fine_margin_rel_tol = 0.02;
  double log_fit_min_r2 = 0.99;
  double log_fit_C_factor = 2.0;
  double growth_ratio_factor = 3.0;
  double coarse_normal_acc_min = 0.99;
  double coarse_hard_ratio_max = 0.1;
  double coarse_hard_acc_max = 0.65;
  double fine_acc_min = 0.95;
};

struct RegimeConfig {
  bool enabled = true;
  TrainConfig train;
};

struct ExperimentConfig {
  HyperParams hyperparams = HyperParams::desk();
  DictionaryMode dictionary_mode = DictionaryMode::StandardBasis;
  RegimeConfig coarse;
  RegimeConfig fine;
  ProbeConfig probes;
  std::filesystem::path output_dir = "runs/desk";
  std::uint64_t master_seed = 1;

  /// Defaults for a preset; regimes use their default bias rules.
  static ExperimentConfig defaults(Preset preset, int d = 128);
  /// Propagates master_seed into both regimes and validates everything.
  void finalize();
};

/// Parses the sectioned YAML config. Unknown keys and malformed values raise
/// ConfigError carrying the source name and line number.
/// A preset override swaps the base defaults before the file's own keys apply.
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source = "<config>",
                                         std::optional<Preset> preset_override = std::nullopt);
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::optional<Preset> preset_override = std::nullopt);
std::string to_yaml(const ExperimentConfig& cfg);

struct RegimeOutcome {
  Variant regime = Variant::Coarse;
  TrainResult result;
  PhaseReport report;
  AuditRecord audit;
  GeometryReport geometry;
  double initial_margin = 0.0;
  nlohmann::json summary;  // per-regime summary block
};

/// Trains one regime, runs its probes and writes history.jsonl, checkpoint.bin,
/// phase_report.json, audit.json and init_geometry.csv under `dir`.
RegimeOutcome run_regime(const ExperimentConfig& cfg, const Dictionary& dict, Variant regime,
                         const std::filesystem::path& dir, std::ostream* log = nullptr);

struct ExperimentOutcome {
  int exit_code = 0;
  std::filesystem::path dir;
  nlohmann::json summary;
};

/// Full pipeline: dictionary, both regimes from the same seeds, probes and
/// summary.json. exit_code is 1 iff an enabled check failed.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Throws ContractError when the summary's key set differs from the fixed schema.
void check_summary_schema(const nlohmann::json& summary);

enum class ReportFormat { Csv, Json };
ReportFormat parse_report_format(std::string_view s);

/// Flattens histories (one row per logged step per regime) and the metrics
/// table. Throws MissingArtifactError naming every absent file.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir, ReportFormat format);

}  // namespace lgsim
