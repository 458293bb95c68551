#include "mmfl/config.hpp"

#include <fstream>
#include <set>

#include "mmfl/error.hpp"
#include "mmfl/random.hpp"

namespace mmfl {

namespace {

using nlohmann::json;

constexpr std::uint64_t kDatasetSeedStream = 0xDA7A;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

void read_count(const json& j, const char* key, std::size_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("'" + std::string(key) + "' in " + where + " must be a non-negative integer");
  }
  out = v.get<std::size_t>();
}

}  // namespace

DatasetSpec dataset_spec_from_json(const json& j, bool* seed_pinned) {
  const std::string where = "dataset";
  reject_unknown(j, {"n_sites", "latent_dim", "input_dims", "num_labels", "task_kind", "n_groups",
                     "noise_sigma", "group_shift", "seed"},
                 where);
  DatasetSpec spec;
  read_count(j, "n_sites", spec.n_sites, where);
  read_count(j, "latent_dim", spec.latent_dim, where);
  read(j, "input_dims", spec.input_dims, where);
  read_count(j, "num_labels", spec.num_labels, where);
  if (j.contains("task_kind")) {
    std::string kind;
    read(j, "task_kind", kind, where);
    spec.task = parse_task_kind(kind);
    if (!j.contains("num_labels") && spec.task == TaskKind::kSingleLabel) spec.num_labels = 6;
  }
  read_count(j, "n_groups", spec.n_groups, where);
  read(j, "noise_sigma", spec.noise_sigma, where);
  read(j, "group_shift", spec.group_shift, where);
  read(j, "seed", spec.seed, where);
  if (seed_pinned != nullptr) *seed_pinned = j.contains("seed");
  return spec;
}

json dataset_spec_to_json(const DatasetSpec& spec) {
  return json{{"n_sites", spec.n_sites},         {"latent_dim", spec.latent_dim},
              {"input_dims", spec.input_dims},   {"num_labels", spec.num_labels},
              {"task_kind", task_kind_name(spec.task)}, {"n_groups", spec.n_groups},
              {"noise_sigma", spec.noise_sigma}, {"group_shift", spec.group_shift},
              {"seed", spec.seed}};
}

ExperimentConfig config_from_json(const json& j) {
  const std::string where = "config";
  reject_unknown(j, {"dataset", "scenario", "K", "R", "E", "batch_size", "lr", "adam_beta1",
                     "adam_beta2", "adam_eps", "weight_decay", "tau", "lambda_mim",
                     "ntxent_variant", "use_fw", "use_mim", "eval_every", "inference_modes", "seed",
                     "output_dir", "hidden_dim", "feature_dim", "whitening_eps",
                     "whitening_momentum", "whitening_group", "threads", "log_wall_time", "ablation_scenarios"},
                 where);
  ExperimentConfig cfg;
  if (j.contains("dataset")) cfg.dataset = dataset_spec_from_json(j.at("dataset"), &cfg.dataset_seed_pinned);
  if (j.contains("scenario")) {
    const json& s = j.at("scenario");
    reject_unknown(s, {"kind", "missing_fraction", "jitter"}, "scenario");
    if (s.contains("kind")) {
      std::string kind;
      read(s, "kind", kind, "scenario");
      cfg.scenario.kind = parse_scenario_kind(kind);
    }
    read(s, "missing_fraction", cfg.scenario.missing_fraction, "scenario");
    read(s, "jitter", cfg.scenario.jitter, "scenario");
  }
  read_count(j, "K", cfg.scenario.clients, where);
  read_count(j, "R", cfg.rounds, where);
  read_count(j, "E", cfg.local_epochs, where);
  read_count(j, "batch_size", cfg.batch_size, where);
  read(j, "lr", cfg.adam.lr, where);
  read(j, "adam_beta1", cfg.adam.beta1, where);
  read(j, "adam_beta2", cfg.adam.beta2, where);
  read(j, "adam_eps", cfg.adam.eps, where);
  read(j, "weight_decay", cfg.adam.weight_decay, where);
  read(j, "tau", cfg.loss.tau, where);
  read(j, "lambda_mim", cfg.loss.lambda_mim, where);
  if (j.contains("ntxent_variant")) {
    std::string v;
    read(j, "ntxent_variant", v, where);
    cfg.loss.variant = parse_ntxent_variant(v);
  }
  read(j, "use_fw", cfg.use_fw, where);
  read(j, "use_mim", cfg.use_mim, where);
  read_count(j, "eval_every", cfg.eval_every, where);
  read(j, "inference_modes", cfg.inference_modes, where);
  read(j, "seed", cfg.seed, where);
  read(j, "output_dir", cfg.output_dir, where);
  read_count(j, "hidden_dim", cfg.hidden_dim, where);
  read_count(j, "feature_dim", cfg.feature_dim, where);
  read(j, "whitening_eps", cfg.whitening_eps, where);
  read(j, "whitening_momentum", cfg.whitening_momentum, where);
  read_count(j, "whitening_group", cfg.whitening_group, where);
  read_count(j, "threads", cfg.threads, where);
  read(j, "log_wall_time", cfg.log_wall_time, where);
  read(j, "ablation_scenarios", cfg.ablation_scenarios, where);
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json dataset = dataset_spec_to_json(cfg.dataset);
  if (!cfg.dataset_seed_pinned) dataset.erase("seed");
  return json{{"dataset", dataset},
              {"scenario",
               {{"kind", scenario_kind_name(cfg.scenario.kind)},
                {"missing_fraction", cfg.scenario.missing_fraction},
                {"jitter", cfg.scenario.jitter}}},
              {"K", cfg.scenario.clients},
              {"R", cfg.rounds},
              {"E", cfg.local_epochs},
              {"batch_size", cfg.batch_size},
              {"lr", cfg.adam.lr},
              {"adam_beta1", cfg.adam.beta1},
              {"adam_beta2", cfg.adam.beta2},
              {"adam_eps", cfg.adam.eps},
              {"weight_decay", cfg.adam.weight_decay},
              {"tau", cfg.loss.tau},
              {"lambda_mim", cfg.loss.lambda_mim},
              {"ntxent_variant", ntxent_variant_name(cfg.loss.variant)},
              {"use_fw", cfg.use_fw},
              {"use_mim", cfg.use_mim},
              {"eval_every", cfg.eval_every},
              {"inference_modes", cfg.inference_modes},
              {"seed", cfg.seed},
              {"output_dir", cfg.output_dir},
              {"hidden_dim", cfg.hidden_dim},
              {"feature_dim", cfg.feature_dim},
              {"whitening_eps", cfg.whitening_eps},
              {"whitening_momentum", cfg.whitening_momentum},
              {"whitening_group", cfg.whitening_group},
              {"threads", cfg.threads},
              {"log_wall_time", cfg.log_wall_time},
              {"ablation_scenarios", cfg.ablation_scenarios}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void ExperimentConfig::validate() const {
  dataset.validate();
  scenario.validate(dataset.modalities());
  loss.validate();
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (eval_every == 0) throw ConfigError("eval_every must be at least 1");
  if (threads == 0) throw ConfigError("threads must be at least 1");
  if (hidden_dim == 0 || feature_dim == 0) throw ConfigError("hidden_dim and feature_dim must be positive");
  if (!(adam.lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(adam.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(whitening_eps > 0.0)) throw ConfigError("whitening_eps must be positive");
  if (!(whitening_momentum > 0.0 && whitening_momentum <= 1.0)) {
    throw ConfigError("whitening_momentum must lie in (0, 1]");
  }
  const std::size_t p = dataset.modalities();
  for (const std::string& mode : inference_modes) {
    if (mode == "both") continue;
    bool ok = false;
    for (std::size_t m = 0; m < p; ++m) ok = ok || mode == "only-" + std::to_string(m);
    if (!ok) throw ConfigError("inference mode '" + mode + "' does not name a modality");
  }
  for (const std::string& kind : ablation_scenarios) parse_scenario_kind(kind);
}

DatasetSpec ExperimentConfig::resolved_dataset() const {
  DatasetSpec spec = dataset;
  if (!dataset_seed_pinned) spec.seed = derive_seed(seed, kDatasetSeedStream);
  return spec;
}

std::vector<std::string> ExperimentConfig::resolved_inference_modes() const {
  if (!inference_modes.empty()) return inference_modes;
  std::vector<std::string> modes{"both"};
  for (std::size_t m = 0; m < dataset.modalities(); ++m) modes.push_back("only-" + std::to_string(m));
  return modes;
}

}  // namespace mmfl
