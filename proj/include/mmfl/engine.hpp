#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mmfl/config.hpp"
#include "mmfl/data.hpp"
#include "mmfl/losses.hpp"
#include "mmfl/metrics.hpp"
#include "mmfl/models.hpp"

namespace mmfl {

// Local-training hyperparameters shared by every client of a federation.
struct TrainingConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  AdamConfig adam;
  LossConfig loss;
  bool use_mim = true;

  LossConfig effective_loss() const;
};

struct ClientState {
  std::size_t client_id = 0;
  std::size_t slot = 0;  // modality slot in the federation's topology
  std::shared_ptr<const Shard> shard;
  Tensor features;  // dense copy of the shard, [M_i x V_m]
  Tensor labels;    // [M_i x L]
  Encoder encoder;  // w_i; running whitening statistics are kept across rounds
  TaskHead head;
  AdamState optimizer;
  std::mt19937_64 rng;
  bool received_broadcast = false;

  // Stream seeded from (experiment seed, client id).
  static ClientState create(std::size_t client_id, std::size_t slot, std::shared_ptr<const Shard> shard,
                            std::uint64_t experiment_seed);
  std::size_t samples() const { return shard ? shard->size() : 0; }
};

struct ClientUpdate {
  std::size_t client_id = 0;
  std::size_t slot = 0;
  Encoder encoder;
  TaskHead head;
  std::size_t samples = 0;  // M_i
  double mean_ce = 0.0;     // mean over local batches
  double mean_ntx = 0.0;
  std::size_t steps = 0;
  bool skipped = false;  // empty shard
};

// Copies the broadcast encoder of the client's modality and the head, then
// runs `epochs` epochs of minibatch Adam on the local objective. Other
// modalities' global encoders are only read.
ClientUpdate client_update(ClientState& client, const GlobalModelSet& global, const TrainingConfig& cfg);

struct AggregationPlan {
  std::vector<std::size_t> client_ids;                // canonical (ascending) order
  std::vector<double> alpha;                          // M_i / sum M over all clients
  std::vector<double> group_weight;                   // M_i / sum M within the modality group
  std::vector<std::vector<std::size_t>> groups;       // per slot, indices into client_ids
};

AggregationPlan make_aggregation_plan(const std::vector<ClientUpdate>& updates, std::size_t modalities);

// Encoder of slot m: within-group weighted mean; head: weighted mean over all
// clients. Sums run in ascending client-id order anchored at the first
// client's parameters, so identical inputs reproduce themselves exactly.
// Running whitening statistics are not averaged into the clients; the server
// copy receives the pooled mixture moments of its group for evaluation.
GlobalModelSet aggregate(const std::vector<ClientUpdate>& updates, const GlobalModelSet& previous);

struct ClientMetrics {
  std::size_t client_id = 0;
  double mean_ce = 0.0;
  double mean_ntx = 0.0;
  std::size_t samples = 0;
  bool skipped = false;
};

struct RoundLog {
  std::uint32_t round = 0;
  std::vector<ClientMetrics> clients;
  double seconds = 0.0;
  std::uint64_t bytes_exchanged = 0;  // broadcast + upload, float64 payloads

  double mean_ce() const;
  double mean_ntx() const;
};

// One federation: a global model plus the clients that train it.
class Federation {
 public:
  Federation(GlobalModelSet global, std::vector<ClientState> clients, TrainingConfig cfg,
             std::size_t threads = 1);

  // Broadcast, local training on every client, aggregation. Any client
  // failure aborts the round and propagates.
  RoundLog run_round();

  const GlobalModelSet& global() const { return global_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  std::vector<ClientState>& clients() { return clients_; }
  const TrainingConfig& training() const { return cfg_; }

 private:
  GlobalModelSet global_;
  std::vector<ClientState> clients_;
  TrainingConfig cfg_;
  std::size_t threads_;
};

// Bytes moved in one round: every client downloads and uploads its encoder
// and the head as float64.
std::uint64_t round_bytes(const std::vector<ClientState>& clients);

// ---------------------------------------------------------------------------
// Evaluation.

// "both" or "only-<m>".
struct InferenceMode {
  std::optional<std::size_t> only;
  std::string name() const;
  static InferenceMode parse(const std::string& text, std::size_t modalities);
};

// Multi-modal fusion model: present modalities in their slots, zeros elsewhere.
Prediction predict(const GlobalModelSet& model, const PairedSet& data, const InferenceMode& mode);
MetricsReport evaluate(const GlobalModelSet& model, const PairedSet& data, const InferenceMode& mode);

// Late fusion over per-modality single-modality models (model m is P = 1
// and reads modality m): mean of the available modalities' probabilities.
Prediction predict_late_fusion(const std::vector<GlobalModelSet>& models, const PairedSet& data,
                               const InferenceMode& mode);
Prediction late_fusion(const std::vector<Prediction>& per_modality);

// ---------------------------------------------------------------------------
// Experiments.

struct LogRow {
  std::uint32_t round = 0;
  std::string mode;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  double mean_ce = 0.0;
  double mean_ntx = 0.0;
  double seconds = 0.0;
  std::uint64_t bytes_exchanged = 0;
};

struct ExperimentLog {
  std::vector<LogRow> rows;
  std::vector<RoundLog> rounds;
  // Final models: one entry for the fusion framework, P entries (one per
  // modality) for the late-fusion baseline.
  std::vector<GlobalModelSet> models;

  // Last row for `mode`; throws if the mode never appears.
  const LogRow& final_row(const std::string& mode) const;
};

std::string log_csv_header();
std::string log_to_csv(const ExperimentLog& log);
void write_log_csv(const ExperimentLog& log, const std::filesystem::path& path);
std::vector<LogRow> read_log_csv(const std::filesystem::path& path);

// Dataset, shards and test pairing shared by the framework and the baseline.
struct PreparedData {
  Dataset dataset;
  std::vector<std::shared_ptr<const Shard>> shards;  // by client id
  PairedSet test;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

Topology framework_topology(const ExperimentConfig& cfg);
TrainingConfig training_config(const ExperimentConfig& cfg, bool use_mim);

// Multi-modal fusion framework (MF, plus FW/MIM per flags). Writes log.csv
// and final.mfmm under output_dir when it is set.
ExperimentLog run_experiment(const ExperimentConfig& cfg);
ExperimentLog run_experiment(const ExperimentConfig& cfg, const PreparedData& data);

// FedAvg per modality, late fusion at inference. Writes baseline_log.csv and
// baseline_<m>.mfmm under output_dir when it is set.
ExperimentLog baseline_fedavg_latefusion(const ExperimentConfig& cfg);
ExperimentLog baseline_fedavg_latefusion(const ExperimentConfig& cfg, const PreparedData& data);

// Seed for model initialization of federation `index`, and for client
// `client_id`'s batching stream.
std::uint64_t model_init_seed(std::uint64_t experiment_seed, std::size_t index);
std::uint64_t client_stream_seed(std::uint64_t experiment_seed, std::size_t client_id);

}  // namespace mmfl
