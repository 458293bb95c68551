#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "mmfl/models.hpp"
#include "mmfl/tensor.hpp"

namespace mmfl {

struct Sample {
  std::uint64_t geo_key = 0;  // site identity shared by all modality views
  std::uint16_t modality_id = 0;
  std::vector<double> features;  // length V_m
  std::vector<double> labels;    // length L; 0/1, one-hot for single-label tasks

  bool operator==(const Sample&) const = default;
};

struct Shard {
  std::uint16_t modality_id = 0;
  TaskKind task = TaskKind::kMultiLabel;
  std::uint32_t feature_dim = 0;
  std::uint32_t num_labels = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool operator==(const Shard&) const = default;
};

// Dense copies of a shard, for batching.
Tensor shard_features(const Shard& shard);
Tensor shard_labels(const Shard& shard);

struct DatasetSpec {
  std::size_t n_sites = 2000;
  std::size_t latent_dim = 16;
  std::vector<std::size_t> input_dims{24, 40};
  std::size_t num_labels = 8;
  TaskKind task = TaskKind::kMultiLabel;
  std::size_t n_groups = 7;
  double noise_sigma = 0.5;
  double group_shift = 1.0;  // std-dev of the per-group latent mean offset
  std::uint64_t seed = 0;

  std::size_t modalities() const { return input_dims.size(); }
  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

// One shard per modality, modality-id order, samples ascending by geo_key.
struct Split {
  std::vector<Shard> by_modality;
};

struct Dataset {
  DatasetSpec spec;
  Split train;
  Split test;
  std::vector<std::uint32_t> site_group;  // indexed by geo_key
};

// Sites draw a latent from a group-shifted Gaussian; even modalities are a
// linear view W z + noise and odd modalities tanh(W z) + noise. Multi-label
// thresholds are calibrated on the train split so every label's prevalence
// lies in [0.2, 0.5]. 80/20 train/test split by site.
Dataset gen_synthetic(const DatasetSpec& spec);

// Fraction of train-split positives per label for one modality shard.
std::vector<double> label_prevalence(const Shard& shard);

enum class ScenarioKind { kIid, kGroupSkew, kGroupSkewMixed, kMissingA, kMissingB };

ScenarioKind parse_scenario_kind(std::string_view name);
const char* scenario_kind_name(ScenarioKind kind);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::kIid;
  std::size_t clients = 14;       // K
  double missing_fraction = 0.5;  // missing-A / missing-B
  double jitter = 1.0;            // group-skew-mixed: max extra noise, in units of noise_sigma

  void validate(std::size_t modalities) const;
};

// Number of clients holding each modality: K split as evenly as possible,
// lower modality ids taking the remainder. Clients of modality m have
// contiguous ids.
std::vector<std::size_t> clients_per_modality(std::size_t clients, std::size_t modalities);
std::vector<std::uint16_t> client_modalities(std::size_t clients, std::size_t modalities);

// Returns K shards indexed by client id. `seed` drives shuffles, removal and
// jitter noise.
std::vector<Shard> build_scenario(const Dataset& dataset, const ScenarioSpec& scenario,
                                  std::uint64_t seed);

// The train split after missing-modality removal, i.e. exactly the union of
// the shards build_scenario returns (before jitter noise).
Split scenario_train_pool(const Dataset& dataset, const ScenarioSpec& scenario,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Shard file: "MFSH", u16 version, u16 modality, u8 task kind, u32 count,
// u32 V_m, u32 L, then per sample u64 geo_key, V_m f64 features, L f64 labels.

inline constexpr std::uint16_t kShardVersion = 1;

std::vector<std::uint8_t> encode_shard(const Shard& shard);
Shard decode_shard(std::span<const std::uint8_t> bytes);
void save_shard(const Shard& shard, const std::filesystem::path& path);
Shard load_shard(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

// Shuffled index batches for one epoch. A trailing batch smaller than 2 is
// dropped. ConfigError when batch_size < 2.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::mt19937_64& rng);
std::vector<std::vector<std::size_t>> batches(const Shard& shard, std::size_t batch_size,
                                              std::mt19937_64& rng);

// Test-time view: sites present in every modality, ascending geo_key.
struct PairedSet {
  std::vector<std::uint64_t> geo_keys;
  std::vector<Tensor> features;  // per modality, [N x V_m]
  Tensor labels;                 // [N x L]
  TaskKind task = TaskKind::kMultiLabel;

  std::size_t size() const { return geo_keys.size(); }
};

PairedSet make_paired(const Split& split);

}  // namespace mmfl
