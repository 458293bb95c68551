#include "mmfl/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "mmfl/ablation.hpp"
#include "mmfl/config.hpp"
#include "mmfl/engine.hpp"
#include "mmfl/error.hpp"

namespace mmfl {

namespace {

std::string fixed(double v, int precision = 4) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

ExperimentConfig load_with_seed(const std::string& path, const std::optional<std::uint64_t>& seed) {
  ExperimentConfig cfg = load_config(path);
  if (seed) cfg.set_seed(*seed);
  return cfg;
}

void print_final(const ExperimentLog& log, const ExperimentConfig& cfg, std::ostream& out) {
  out << "mode        micro_f1  macro_f1  accuracy\n";
  for (const std::string& mode : cfg.resolved_inference_modes()) {
    const LogRow& r = log.final_row(mode);
    char line[128];
    std::snprintf(line, sizeof(line), "%-10s  %8s  %8s  %8s\n", mode.c_str(), fixed(r.micro_f1).c_str(),
                  fixed(r.macro_f1).c_str(), fixed(r.accuracy).c_str());
    out << line;
  }
}

void gen_data(const ExperimentConfig& cfg, const std::filesystem::path& dir, std::ostream& out) {
  const PreparedData data = prepare_data(cfg);
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["dataset"] = dataset_spec_to_json(data.dataset.spec);
  manifest["scenario"] = {{"kind", scenario_kind_name(cfg.scenario.kind)},
                          {"missing_fraction", cfg.scenario.missing_fraction},
                          {"jitter", cfg.scenario.jitter}};
  manifest["K"] = cfg.scenario.clients;
  manifest["seed"] = cfg.seed;
  nlohmann::json shards = nlohmann::json::array();
  for (std::size_t c = 0; c < data.shards.size(); ++c) {
    const std::string name = "client_" + std::to_string(c) + ".mfsh";
    save_shard(*data.shards[c], dir / name);
    shards.push_back({{"client", c}, {"modality", data.shards[c]->modality_id},
                      {"samples", data.shards[c]->size()}, {"path", name}});
  }
  manifest["shards"] = shards;
  nlohmann::json tests = nlohmann::json::array();
  for (const Shard& s : data.dataset.test.by_modality) {
    const std::string name = "test_" + std::to_string(s.modality_id) + ".mfsh";
    save_shard(s, dir / name);
    tests.push_back({{"modality", s.modality_id}, {"samples", s.size()}, {"path", name}});
  }
  manifest["test"] = tests;
  std::ofstream f(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write manifest in '" + dir.string() + "'");
  f << manifest.dump(2) << '\n';
  out << "wrote " << data.shards.size() << " client shards and " << tests.size() << " test shards to "
      << dir.string() << '\n';
}

}  // namespace

std::string format_report(const std::string& log_path) {
  const std::vector<LogRow> rows = read_log_csv(log_path);
  if (rows.empty()) throw ValidationError("log '" + log_path + "' has no rows");
  std::vector<std::string> modes;
  std::map<std::string, const LogRow*> last;
  std::map<std::uint32_t, std::map<std::string, double>> trajectory;
  for (const LogRow& r : rows) {
    if (!last.count(r.mode)) modes.push_back(r.mode);
    last[r.mode] = &r;
    trajectory[r.round][r.mode] = r.micro_f1;
  }
  std::ostringstream os;
  os << "final round " << rows.back().round << '\n';
  os << "mode        micro_f1  macro_f1  accuracy\n";
  for (const std::string& m : modes) {
    const LogRow& r = *last[m];
    char line[128];
    std::snprintf(line, sizeof(line), "%-10s  %8s  %8s  %8s\n", m.c_str(), fixed(r.micro_f1).c_str(),
                  fixed(r.macro_f1).c_str(), fixed(r.accuracy).c_str());
    os << line;
  }
  os << "\nmicro_f1 by round\nround";
  for (const std::string& m : modes) os << "  " << m;
  os << '\n';
  for (const auto& [round, values] : trajectory) {
    os << round;
    for (const std::string& m : modes) {
      auto it = values.find(m);
      os << "  " << (it == values.end() ? std::string("-") : fixed(it->second));
    }
    os << '\n';
  }
  return os.str();
}

int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"multi-modal federated learning simulator", argv.empty() ? "mmfl" : argv.front()};
  app.require_subcommand(1);

  std::string config_path, spec_path, out_dir, log_path;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset and write client shards");
  gen->add_option("--spec", spec_path, "config file with dataset and scenario sections")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "override the config seed");

  auto* run = app.add_subcommand("run", "train the multi-modal framework");
  auto* base = app.add_subcommand("baseline", "train the per-modality FedAvg late-fusion baseline");
  auto* abl = app.add_subcommand("ablate", "run the four module combinations");
  for (CLI::App* sub : {run, base, abl}) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
  }
  auto* rep = app.add_subcommand("report", "summarize a log CSV");
  rep->add_option("--log", log_path, "log CSV")->required();

  std::vector<std::string> args(argv.size() > 1 ? argv.begin() + 1 : argv.end(), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      gen_data(load_with_seed(spec_path, seed), out_dir, out);
    } else if (*run) {
      const ExperimentConfig cfg = load_with_seed(config_path, seed);
      const ExperimentLog log = run_experiment(cfg);
      print_final(log, cfg, out);
    } else if (*base) {
      const ExperimentConfig cfg = load_with_seed(config_path, seed);
      const ExperimentLog log = baseline_fedavg_latefusion(cfg);
      print_final(log, cfg, out);
    } else if (*abl) {
      out << ablation_to_csv(run_ablation(load_with_seed(config_path, seed)));
    } else if (*rep) {
      out << format_report(log_path);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace mmfl
