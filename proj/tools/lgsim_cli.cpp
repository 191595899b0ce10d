#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lgsim/error.hpp"
#include "lgsim/experiment.hpp"
#include "lgsim/hierarchy.hpp"
#include "lgsim/io.hpp"

namespace fs = std::filesystem;
using namespace lgsim;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string preset;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config (YAML)")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--seed", c.seed, "Override the master seed");
  app->add_option("--preset", c.preset, "Base preset")->check(CLI::IsMember({"desk", "paper-asymptotic"}));
}

ExperimentConfig resolve(const Common& c) {
  std::optional<Preset> preset;
  if (!c.preset.empty()) preset = parse_preset(c.preset);
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig::defaults(preset.value_or(Preset::Desk))
                                          : load_experiment_config(c.config, preset);
  if (c.seed) cfg.master_seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.finalize();
  return cfg;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse versus fine label training on a sparse-coding data model"};
  app.require_subcommand(1);

  Common gen_opts;
  bool gen_json = false;
  auto* gen = app.add_subcommand("gen-dict", "Build the feature dictionary");
  add_common(gen, gen_opts);
  gen->add_flag("--json", gen_json, "Also write dictionary.json");

  Common train_opts;
  std::string regime = "coarse";
  auto* train = app.add_subcommand("train", "Train one regime and run its probes");
  add_common(train, train_opts);
  train->add_option("--regime", regime)->check(CLI::IsMember({"coarse", "fine"}));

  Common probe_opts;
  std::string probe_kind = "audit", checkpoint, dict_path;
  int n_eval = 32, lemma_d = 5;
  std::int64_t trials = 1000000;
  double delta = 0.01;
  auto* probe = app.add_subcommand("probe", "Probes on a checkpoint, or the Gaussian lemma Monte-Carlo");
  add_common(probe, probe_opts);
  probe->add_option("--kind", probe_kind)
      ->check(CLI::IsMember({"audit", "geometry", "margin", "lemma-norm-tail", "lemma-inner-product"}));
  probe->add_option("--checkpoint", checkpoint, "Network checkpoint (.bin)");
  probe->add_option("--dict", dict_path, "Dictionary (.bin)");
  probe->add_option("--n-eval", n_eval, "Evaluation samples per subclass and kind");
  probe->add_option("--d", lemma_d, "Dimension for the lemma Monte-Carlo");
  probe->add_option("--trials", trials, "Monte-Carlo trials");
  probe->add_option("--delta", delta, "Failure probability for the inner-product lemma");

  std::string emb_path, labels_path, mode = "per_group", candidates = "1,2,4,8", taxonomy_path, leaf, hier_out;
  int C = 4, min_count = 10, level = 1;
  std::uint64_t hier_seed = 1;
  auto* hier = app.add_subcommand("hierarchy", "Fine-grained ids from embeddings, or taxonomy tracing");
  hier->require_subcommand(1);
  auto* ids = hier->add_subcommand("ids", "Cluster embeddings into fine ids");
  ids->add_option("--embeddings", emb_path)->required()->check(CLI::ExistingFile);
  ids->add_option("--labels", labels_path)->check(CLI::ExistingFile);
  ids->add_option("--mode", mode)->check(CLI::IsMember({"per_group", "whole_dataset", "random", "random_per_group"}));
  ids->add_option("--C", C, "Clusters per superclass");
  ids->add_option("--seed", hier_seed);
  ids->add_option("--out", hier_out)->required();
  auto* rebalance = hier->add_subcommand("rebalance", "Per-superclass granularity from candidate cluster counts");
  rebalance->add_option("--embeddings", emb_path)->required()->check(CLI::ExistingFile);
  rebalance->add_option("--labels", labels_path)->required()->check(CLI::ExistingFile);
  rebalance->add_option("--candidates", candidates, "Comma-separated ascending C values");
  rebalance->add_option("--min-count", min_count);
  rebalance->add_option("--seed", hier_seed);
  rebalance->add_option("--out", hier_out)->required();
  auto* trace = hier->add_subcommand("trace", "Level-k label of a taxonomy leaf");
  trace->add_option("--taxonomy", taxonomy_path)->required()->check(CLI::ExistingFile);
  trace->add_option("--leaf", leaf);
  trace->add_option("--k", level);

  Common run_opts;
  auto* run = app.add_subcommand("run", "Full coarse versus fine pipeline");
  add_common(run, run_opts);

  std::string report_dir, report_format = "csv";
  auto* report = app.add_subcommand("report", "Flatten a completed run into CSV or JSON");
  report->add_option("--out", report_dir, "Artifact directory of a completed run")->required();
  report->add_option("--format", report_format)->check(CLI::IsMember({"csv", "json"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const ExperimentConfig cfg = resolve(gen_opts);
      fs::create_directories(cfg.output_dir);
      const Dictionary dict = build_dictionary(cfg.hyperparams, cfg.dictionary_mode,
                                               derive_seed(cfg.master_seed, Stream::Dictionary));
      save_dictionary(cfg.output_dir / "dictionary.bin", dict);
      if (gen_json) write_text(cfg.output_dir / "dictionary.json", to_json(dict).dump() + "\n");
      std::cout << "wrote " << (cfg.output_dir / "dictionary.bin").string() << "\n";
      return 0;
    }
    if (*train) {
      const ExperimentConfig cfg = resolve(train_opts);
      const Dictionary dict = build_dictionary(cfg.hyperparams, cfg.dictionary_mode,
                                               derive_seed(cfg.master_seed, Stream::Dictionary));
      fs::create_directories(cfg.output_dir);
      save_dictionary(cfg.output_dir / "dictionary.bin", dict);
      const RegimeOutcome o = run_regime(cfg, dict, parse_variant(regime), cfg.output_dir / regime, &std::cout);
      std::cout << o.summary.dump(2) << "\n";
      return 0;
    }
    if (*probe) {
      if (probe_kind == "lemma-norm-tail" || probe_kind == "lemma-inner-product") {
        const auto which = probe_kind == "lemma-norm-tail" ? Lemma::NormTail : Lemma::InnerProduct;
        const std::uint64_t seed = probe_opts.seed.value_or(1);
        const LemmaResult r = lemma_monte_carlo(which, lemma_d, trials, seed, 1.0, 1.0, delta);
        std::cout << nlohmann::json{{"d", r.d},
                                    {"trials", r.trials},
                                    {"frequency", r.frequency},
                                    {"bound", r.bound},
                                    {"respects", r.respects}}
                         .dump(2)
                  << "\n";
        return r.respects ? 0 : 1;
      }
      if (checkpoint.empty() || dict_path.empty()) throw ConfigError("--checkpoint and --dict are required");
      const Network net = load_network(checkpoint);
      const Dictionary dict = load_dictionary(dict_path);
      const std::uint64_t seed = probe_opts.seed.value_or(net.seed);
      nlohmann::json out;
      if (probe_kind == "audit") {
        out = to_json(hard_example_audit(net, net.variant, dict, net.params, n_eval, seed));
      } else if (probe_kind == "margin") {
        out = {{"mean_one_minus_logit", mean_correct_margin(net, dict, net.params, n_eval, seed)}};
      } else {
        const NeuronSets sets = classify_init_neurons(net, dict, net.params);
        const GeometryReport g = init_geometry_report(sets);
        if (!probe_opts.out.empty()) write_text(probe_opts.out, geometry_csv(g, &dict));
        out = to_json(g);
      }
      std::cout << out.dump(2) << "\n";
      return 0;
    }
    if (*hier) {
      if (*trace) {
        const Taxonomy tax = Taxonomy::load(taxonomy_path);
        if (leaf.empty()) {
          for (const auto& l : tax.leaves()) std::cout << l << '\t' << level_k_label(tax, l, level) << '\n';
          std::cout << "granularity " << granularity(tax, tax.leaves(), level) << "\n";
        } else {
          std::cout << level_k_label(tax, leaf, level) << "\n";
        }
        return 0;
      }
      EmbeddingSet emb = load_embeddings(emb_path);
      if (!labels_path.empty()) emb.base_labels = load_labels(labels_path);
      fs::create_directories(hier_out);
      nlohmann::json manifest;
      std::vector<std::int64_t> fine_ids;
      if (*ids) {
        const FineIdResult r = assign_fine_ids(emb, parse_fine_id_mode(mode), C, hier_seed);
        fine_ids = r.ids;
        nlohmann::json groups = nlohmann::json::object();
        for (const auto& [g, c] : r.group_C) groups[std::to_string(g)] = c;
        manifest = {{"mode", std::string(to_string(r.mode))},
                    {"C", r.C},
                    {"group_C", groups},
                    {"seed", r.seed},
                    {"warnings", r.warnings}};
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      } else {
        const RebalanceResult r = rebalance_granularity(emb, parse_int_list(candidates), min_count, hier_seed);
        fine_ids = r.ids;
        nlohmann::json groups = nlohmann::json::object();
        for (const auto& [g, c] : r.chosen_C)
          groups[std::to_string(g)] = {{"C", c}, {"offset", r.offsets.at(g)}};
        manifest = {{"mode", "rebalance"},
                    {"candidates", parse_int_list(candidates)},
                    {"min_count", min_count},
                    {"groups", groups},
                    {"granularity", r.granularity},
                    {"seed", hier_seed},
                    {"warnings", nlohmann::json::array()}};
      }
      write_text(fs::path(hier_out) / "fine_ids.csv", id_mapping_csv(fine_ids));
      write_text(fs::path(hier_out) / "manifest.json", manifest.dump(2) + "\n");
      std::cout << "wrote " << fine_ids.size() << " ids to " << (fs::path(hier_out) / "fine_ids.csv").string() << "\n";
      return 0;
    }
    if (*run) {
      const ExperimentConfig cfg = resolve(run_opts);
      const ExperimentOutcome o = run_experiment(cfg, &std::cout);
      std::cout << "summary: " << (o.dir / "summary.json").string() << "\n";
      return o.exit_code;
    }
    if (*report) {
      for (const auto& p : emit_report(report_dir, parse_report_format(report_format)))
        std::cout << "wrote " << p.string() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  }
  return 0;
}
