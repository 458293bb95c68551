#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mmfl/config.hpp"
#include "mmfl/error.hpp"

using namespace mmfl;
using nlohmann::json;

TEST_CASE("defaults") {
  const ExperimentConfig c = config_from_json(json::object());
  CHECK(c.rounds == 40u);
  CHECK(c.local_epochs == 1u);
  CHECK(c.scenario.clients == 14u);
  CHECK(c.batch_size == 64u);
  CHECK(c.adam.lr == 1e-3);
  CHECK(c.adam.beta1 == 0.9);
  CHECK(c.adam.weight_decay == 0.0);
  CHECK(c.loss.tau == 0.5);
  CHECK(c.loss.lambda_mim == 1.0);
  CHECK(c.loss.variant == NtxentVariant::kPaperLiteral);
  CHECK(c.use_fw);
  CHECK(c.use_mim);
  CHECK(c.hidden_dim == 64u);
  CHECK(c.feature_dim == 32u);
  CHECK(c.whitening_eps == 1e-5);
  CHECK(c.whitening_momentum == 0.1);
  CHECK(c.dataset.n_sites == 2000u);
  CHECK(c.dataset.input_dims == std::vector<std::size_t>{24, 40});
  CHECK(c.dataset.n_groups == 7u);
  CHECK(c.resolved_inference_modes() == std::vector<std::string>{"both", "only-0", "only-1"});
}

TEST_CASE("json roundtrip") {
  json j = {{"K", 6},
            {"R", 3},
            {"lr", 0.01},
            {"use_fw", false},
            {"ntxent_variant", "standard"},
            {"scenario", {{"kind", "missing-B"}, {"missing_fraction", 0.25}}},
            {"dataset", {{"n_sites", 300}, {"seed", 4}}},
            {"inference_modes", {"both", "only-1"}},
            {"seed", 12}};
  const ExperimentConfig c = config_from_json(j);
  CHECK(c.scenario.clients == 6u);
  CHECK(c.scenario.kind == ScenarioKind::kMissingB);
  CHECK(c.loss.variant == NtxentVariant::kStandard);
  CHECK(c.dataset_seed_pinned);
  CHECK(c.resolved_dataset().seed == 4u);
  const json back = config_to_json(c);
  const ExperimentConfig again = config_from_json(back);
  CHECK(config_to_json(again) == back);
}

TEST_CASE("dataset seed follows the experiment seed unless pinned") {
  ExperimentConfig a = config_from_json(json{{"seed", 1}});
  ExperimentConfig b = config_from_json(json{{"seed", 2}});
  CHECK(a.resolved_dataset().seed != b.resolved_dataset().seed);
  CHECK(a.resolved_dataset().seed == config_from_json(json{{"seed", 1}}).resolved_dataset().seed);
  CHECK_FALSE(config_to_json(a)["dataset"].contains("seed"));
}

TEST_CASE("invalid configs are rejected before any compute") {
  CHECK_THROWS_AS(config_from_json(json{{"learning_rate", 0.1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"dataset", {{"sites", 5}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"K", -1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"K", "many"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"tau", 0}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"lambda_mim", -0.5}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"batch_size", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"adam_beta1", 1.0}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"whitening_momentum", 0}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"inference_modes", {"only-2"}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"scenario", {{"kind", "ds7"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"ablation_scenarios", {"nope"}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);
}

TEST_CASE("config files") {
  const auto dir = std::filesystem::temp_directory_path() / "mmfl_test_config";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "ok.json") << R"({"R": 2, "seed": 3})";
    std::ofstream(dir / "broken.json") << R"({"R": 2,)";
  }
  CHECK(load_config(dir / "ok.json").rounds == 2u);
  CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  std::filesystem::remove_all(dir);
}
