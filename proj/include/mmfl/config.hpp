#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmfl/data.hpp"
#include "mmfl/losses.hpp"
#include "mmfl/nn.hpp"

namespace mmfl {

// Everything an experiment needs; together with `seed` it fully determines
// the run. JSON keys match the field names; unknown keys are rejected.
struct ExperimentConfig {
  DatasetSpec dataset;
  bool dataset_seed_pinned = false;  // dataset.seed given explicitly in the file
  ScenarioSpec scenario;             // scenario.clients is the top-level "K"
  std::size_t rounds = 40;           // "R"
  std::size_t local_epochs = 1;      // "E"
  std::size_t batch_size = 64;
  AdamConfig adam;
  LossConfig loss;
  bool use_fw = true;
  bool use_mim = true;
  std::size_t eval_every = 1;
  std::vector<std::string> inference_modes;  // empty: "both" plus every "only-m"
  std::uint64_t seed = 0;
  std::string output_dir;  // empty: nothing written
  std::size_t hidden_dim = 64;
  std::size_t feature_dim = 32;
  double whitening_eps = 1e-5;
  double whitening_momentum = 0.1;
  std::size_t whitening_group = 4;  // 0: whiten all hidden features jointly
  std::size_t threads = 1;
  bool log_wall_time = false;
  std::vector<std::string> ablation_scenarios;  // empty: the scenario above

  void validate() const;
  // Dataset spec with the seed resolved (derived from `seed` unless pinned).
  DatasetSpec resolved_dataset() const;
  std::vector<std::string> resolved_inference_modes() const;
  void set_seed(std::uint64_t s) { seed = s; }
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

DatasetSpec dataset_spec_from_json(const nlohmann::json& j, bool* seed_pinned = nullptr);
nlohmann::json dataset_spec_to_json(const DatasetSpec& spec);

}  // namespace mmfl
