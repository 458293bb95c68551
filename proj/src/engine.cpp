#include "mmfl/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "mmfl/error.hpp"
#include "mmfl/random.hpp"

namespace mmfl {

namespace {

constexpr std::uint64_t kModelInitStream = 0x1000;
constexpr std::uint64_t kClientStream = 0x2000;
constexpr std::uint64_t kScenarioStream = 0x3000;

// ref + sum_i w_i (x_i - ref): exact when every x_i equals ref.
Tensor anchored_weighted_sum(const std::vector<Tensor>& values, const std::vector<double>& weights) {
  const Tensor& ref = values.front();
  Tensor acc = ref;
  for (std::size_t i = 1; i < values.size(); ++i) {
    const Tensor& x = values[i];
    if (x.size() != ref.size()) throw DimensionError("aggregate: parameter vector lengths differ");
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += weights[i] * (x[j] - ref[j]);
  }
  // The anchor itself contributes (w_0 - 1) * 0 implicitly; the identity
  // holds because the weights sum to one.
  return acc;
}

// Mixture moments of the clients' running statistics, one whitening layer.
void pool_running_stats(WhiteningState& target, const std::vector<const WhiteningState*>& states,
                        const std::vector<double>& weights) {
  const std::size_t d = target.dim();
  Tensor mean({d});
  for (std::size_t i = 0; i < states.size(); ++i)
    for (std::size_t k = 0; k < d; ++k) mean[k] += weights[i] * states[i]->running_mean[k];
  Tensor cov({d, d});
  for (std::size_t i = 0; i < states.size(); ++i) {
    const WhiteningState& s = *states[i];
    for (std::size_t a = 0; a < d; ++a) {
      const double da = s.running_mean[a] - mean[a];
      for (std::size_t b = 0; b < d; ++b) {
        const double db = s.running_mean[b] - mean[b];
        cov.at(a, b) += weights[i] * (s.running_cov.at(a, b) + da * db);
      }
    }
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b) cov.at(b, a) = cov.at(a, b);
  target.set_running_stats(std::move(mean), std::move(cov));
}

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

}  // namespace

std::uint64_t model_init_seed(std::uint64_t experiment_seed, std::size_t index) {
  return derive_seed(experiment_seed, kModelInitStream + index);
}

std::uint64_t client_stream_seed(std::uint64_t experiment_seed, std::size_t client_id) {
  return derive_seed(experiment_seed, kClientStream + client_id);
}

LossConfig TrainingConfig::effective_loss() const {
  LossConfig l = loss;
  if (!use_mim) l.lambda_mim = 0.0;
  return l;
}

ClientState ClientState::create(std::size_t client_id, std::size_t slot, std::shared_ptr<const Shard> shard,
                                std::uint64_t experiment_seed) {
  ClientState c;
  c.client_id = client_id;
  c.slot = slot;
  c.shard = std::move(shard);
  if (c.shard) {
    c.features = shard_features(*c.shard);
    c.labels = shard_labels(*c.shard);
  }
  c.rng.seed(client_stream_seed(experiment_seed, client_id));
  return c;
}

ClientUpdate client_update(ClientState& client, const GlobalModelSet& global, const TrainingConfig& cfg) {
  if (client.slot >= global.encoders.size()) {
    throw DimensionError("client " + std::to_string(client.client_id) + ": slot " +
                         std::to_string(client.slot) + " has no global encoder");
  }
  const Encoder& broadcast = global.encoders[client.slot];
  if (client.samples() > 0 && client.features.cols() != broadcast.input_dim()) {
    throw DimensionError("client " + std::to_string(client.client_id) + ": shard has " +
                         std::to_string(client.features.cols()) + " features, encoder expects " +
                         std::to_string(broadcast.input_dim()));
  }
  if (!client.received_broadcast) {
    client.encoder = broadcast;
    client.received_broadcast = true;
  } else {
    copy_params(broadcast, client.encoder);
  }
  client.head = global.head;

  ClientUpdate up;
  up.client_id = client.client_id;
  up.slot = client.slot;
  up.samples = client.samples();
  if (up.samples == 0) {
    up.skipped = true;
    up.encoder = client.encoder;
    up.head = client.head;
    return up;
  }

  const std::size_t n_params = param_count(client.encoder) + param_count(client.head);
  if (client.optimizer.first_moment.size() != n_params) {
    client.optimizer = AdamState::for_size(n_params, cfg.adam);
  }
  const LossConfig loss = cfg.effective_loss();
  double ce_total = 0.0;
  double ntx_total = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : batches(up.samples, cfg.batch_size, client.rng)) {
      const Tensor x = gather_rows(client.features, idx);
      const Tensor y = gather_rows(client.labels, idx);
      LocalObjectiveResult res =
          local_objective(x, y, client.encoder, client.slot, client.head, global, loss);
      update_running_stats(client.encoder, res.trace);
      Tensor params = flatten_params(client.encoder, client.head);
      const Tensor grads = flatten_params(res.grad_encoder, res.grad_head);
      adam_step(params, grads, client.optimizer);
      unflatten_params(params, client.encoder, client.head);
      ce_total += res.ce;
      ntx_total += res.ntx;
      ++up.steps;
    }
  }
  if (up.steps > 0) {
    up.mean_ce = ce_total / static_cast<double>(up.steps);
    up.mean_ntx = ntx_total / static_cast<double>(up.steps);
  }
  up.encoder = client.encoder;
  up.head = client.head;
  return up;
}

AggregationPlan make_aggregation_plan(const std::vector<ClientUpdate>& updates, std::size_t modalities) {
  std::vector<const ClientUpdate*> live;
  for (const ClientUpdate& u : updates)
    if (!u.skipped && u.samples > 0) live.push_back(&u);
  std::sort(live.begin(), live.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });

  AggregationPlan plan;
  plan.groups.resize(modalities);
  std::size_t total = 0;
  std::vector<std::size_t> group_total(modalities, 0);
  for (std::size_t i = 0; i < live.size(); ++i) {
    const ClientUpdate& u = *live[i];
    if (u.slot >= modalities) {
      throw DimensionError("aggregate: client " + std::to_string(u.client_id) + " reports slot " +
                           std::to_string(u.slot));
    }
    if (i > 0 && live[i - 1]->client_id == u.client_id) {
      throw ValidationError("aggregate: duplicate update from client " + std::to_string(u.client_id));
    }
    plan.client_ids.push_back(u.client_id);
    plan.groups[u.slot].push_back(i);
    total += u.samples;
    group_total[u.slot] += u.samples;
  }
  for (std::size_t m = 0; m < modalities; ++m) {
    if (plan.groups[m].empty()) {
      throw ValidationError("aggregate: modality " + std::to_string(m) + " received no client updates");
    }
  }
  for (std::size_t i = 0; i < live.size(); ++i) {
    const double samples = static_cast<double>(live[i]->samples);
    plan.alpha.push_back(samples / static_cast<double>(total));
    plan.group_weight.push_back(samples / static_cast<double>(group_total[live[i]->slot]));
  }
  return plan;
}

GlobalModelSet aggregate(const std::vector<ClientUpdate>& updates, const GlobalModelSet& previous) {
  const std::size_t p = previous.topology.modalities();
  const AggregationPlan plan = make_aggregation_plan(updates, p);

  std::vector<const ClientUpdate*> by_index;
  for (std::size_t id : plan.client_ids) {
    for (const ClientUpdate& u : updates)
      if (u.client_id == id && !u.skipped && u.samples > 0) {
        by_index.push_back(&u);
        break;
      }
  }

  GlobalModelSet next = previous;
  next.round = previous.round + 1;
  for (std::size_t m = 0; m < p; ++m) {
    std::vector<Tensor> flats;
    std::vector<double> weights;
    for (std::size_t i : plan.groups[m]) {
      flats.push_back(flatten_params(by_index[i]->encoder));
      weights.push_back(plan.group_weight[i]);
    }
    Encoder& target = next.encoders[m];
    if (flats.front().size() != param_count(target)) {
      throw DimensionError("aggregate: modality " + std::to_string(m) + " update has " +
                           std::to_string(flats.front().size()) + " parameters, expected " +
                           std::to_string(param_count(target)));
    }
    target = unflatten_params(anchored_weighted_sum(flats, weights), target);

    for (std::size_t layer = 0; layer < target.body.size(); ++layer) {
      if (!target.body[layer].whitening) continue;
      std::vector<const WhiteningState*> states;
      std::vector<double> w;
      for (std::size_t i : plan.groups[m]) {
        const auto& ws = by_index[i]->encoder.body.at(layer).whitening;
        if (ws && ws->has_running_stats()) {
          states.push_back(&*ws);
          w.push_back(plan.group_weight[i]);
        }
      }
      if (states.empty()) continue;
      double total = 0.0;
      for (double v : w) total += v;
      for (double& v : w) v /= total;
      pool_running_stats(*target.body[layer].whitening, states, w);
    }
  }

  std::vector<Tensor> heads;
  for (const ClientUpdate* u : by_index) heads.push_back(flatten_params(u->head));
  if (heads.front().size() != param_count(next.head)) {
    throw DimensionError("aggregate: head update length mismatch");
  }
  next.head = unflatten_params(anchored_weighted_sum(heads, plan.alpha), next.head);
  return next;
}

double RoundLog::mean_ce() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const ClientMetrics& c : clients)
    if (!c.skipped) {
      s += c.mean_ce;
      ++n;
    }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

double RoundLog::mean_ntx() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const ClientMetrics& c : clients)
    if (!c.skipped) {
      s += c.mean_ntx;
      ++n;
    }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

std::uint64_t round_bytes(const std::vector<ClientState>& clients) {
  std::uint64_t values = 0;
  for (const ClientState& c : clients) values += param_count(c.encoder) + param_count(c.head);
  return 2 * values * sizeof(double);
}

Federation::Federation(GlobalModelSet global, std::vector<ClientState> clients, TrainingConfig cfg,
                       std::size_t threads)
    : global_(std::move(global)), clients_(std::move(clients)), cfg_(std::move(cfg)), threads_(std::max<std::size_t>(1, threads)) {
  std::sort(clients_.begin(), clients_.end(),
            [](const ClientState& a, const ClientState& b) { return a.client_id < b.client_id; });
}

RoundLog Federation::run_round() {
  const auto start = std::chrono::steady_clock::now();
  const GlobalModelSet& snapshot = global_;
  const std::size_t n = clients_.size();
  std::vector<ClientUpdate> updates(n);
  std::vector<std::exception_ptr> errors(n);

  auto work = [&](std::size_t i) {
    try {
      updates[i] = client_update(clients_[i], snapshot, cfg_);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(threads_, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  global_ = aggregate(updates, global_);

  RoundLog log;
  log.round = global_.round;
  for (const ClientUpdate& u : updates) {
    log.clients.push_back(ClientMetrics{u.client_id, u.mean_ce, u.mean_ntx, u.samples, u.skipped});
  }
  log.bytes_exchanged = round_bytes(clients_);
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

// ---------------------------------------------------------------------------

std::string InferenceMode::name() const { return only ? "only-" + std::to_string(*only) : "both"; }

InferenceMode InferenceMode::parse(const std::string& text, std::size_t modalities) {
  if (text == "both") return InferenceMode{};
  if (text.rfind("only-", 0) == 0) {
    const std::string digits = text.substr(5);
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      const std::size_t m = std::stoul(digits);
      if (m < modalities) return InferenceMode{m};
    }
  }
  throw ConfigError("inference mode '" + text + "' does not name one of " + std::to_string(modalities) +
                    " modalities");
}

Prediction predict(const GlobalModelSet& model, const PairedSet& data, const InferenceMode& mode) {
  const std::size_t p = model.topology.modalities();
  if (data.features.size() != p) {
    throw DimensionError("predict: data has " + std::to_string(data.features.size()) + " modalities, model " +
                         std::to_string(p));
  }
  if (mode.only && *mode.only >= p) throw ConfigError("predict: mode " + mode.name() + " names an absent modality");
  if (data.size() == 0) throw ValidationError("predict: empty evaluation set");
  std::vector<std::optional<Tensor>> features(p);
  for (std::size_t m = 0; m < p; ++m) {
    if (mode.only && *mode.only != m) continue;
    features[m] = encode(model.encoders[m], data.features[m], Mode::kEval);
  }
  return head_forward(model.head, fuse_full(features, p, model.topology.feature_dim));
}

MetricsReport evaluate(const GlobalModelSet& model, const PairedSet& data, const InferenceMode& mode) {
  const Prediction pred = predict(model, data, mode);
  return compute_metrics(pred.probabilities, data.labels, model.head.task);
}

Prediction late_fusion(const std::vector<Prediction>& per_modality) {
  if (per_modality.empty()) throw ValidationError("late_fusion: no predictions");
  Tensor acc = per_modality.front().probabilities;
  for (std::size_t i = 1; i < per_modality.size(); ++i) add_inplace(acc, per_modality[i].probabilities);
  if (per_modality.size() > 1) scale_inplace(acc, 1.0 / static_cast<double>(per_modality.size()));
  return Prediction{std::move(acc)};
}

Prediction predict_late_fusion(const std::vector<GlobalModelSet>& models, const PairedSet& data,
                               const InferenceMode& mode) {
  if (models.size() != data.features.size()) {
    throw DimensionError("predict_late_fusion: " + std::to_string(models.size()) + " models for " +
                         std::to_string(data.features.size()) + " modalities");
  }
  if (mode.only && *mode.only >= models.size()) {
    throw ConfigError("predict_late_fusion: mode " + mode.name() + " names an absent modality");
  }
  std::vector<Prediction> preds;
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (mode.only && *mode.only != m) continue;
    const GlobalModelSet& model = models[m];
    const Tensor f = encode(model.encoders.at(0), data.features[m], Mode::kEval);
    preds.push_back(head_forward(model.head, f));
  }
  return late_fusion(preds);
}

// ---------------------------------------------------------------------------

const LogRow& ExperimentLog::final_row(const std::string& mode) const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it)
    if (it->mode == mode) return *it;
  throw ValidationError("experiment log has no rows for mode '" + mode + "'");
}

std::string log_csv_header() {
  return "round,mode,micro_f1,macro_f1,accuracy,mean_ce,mean_ntx,seconds,bytes_exchanged";
}

std::string log_to_csv(const ExperimentLog& log) {
  std::ostringstream os;
  os << log_csv_header() << '\n';
  for (const LogRow& r : log.rows) {
    os << r.round << ',' << r.mode << ',' << format_double(r.micro_f1, 8) << ','
       << format_double(r.macro_f1, 8) << ',' << format_double(r.accuracy, 8) << ','
       << format_double(r.mean_ce, 8) << ',' << format_double(r.mean_ntx, 8) << ','
       << format_double(r.seconds, 3) << ',' << r.bytes_exchanged << '\n';
  }
  return os.str();
}

void write_log_csv(const ExperimentLog& log, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << log_to_csv(log);
}

std::vector<LogRow> read_log_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read log '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != log_csv_header()) {
    throw ValidationError("'" + path.string() + "' is not an experiment log (unexpected header)");
  }
  std::vector<LogRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) {
      throw ValidationError("log line " + std::to_string(line_no) + ": expected 9 columns");
    }
    try {
      LogRow r;
      r.round = static_cast<std::uint32_t>(std::stoul(cells[0]));
      r.mode = cells[1];
      r.micro_f1 = std::stod(cells[2]);
      r.macro_f1 = std::stod(cells[3]);
      r.accuracy = std::stod(cells[4]);
      r.mean_ce = std::stod(cells[5]);
      r.mean_ntx = std::stod(cells[6]);
      r.seconds = std::stod(cells[7]);
      r.bytes_exchanged = std::stoull(cells[8]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ValidationError("log line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------

PreparedData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  PreparedData out;
  out.dataset = gen_synthetic(cfg.resolved_dataset());
  for (Shard& s : build_scenario(out.dataset, cfg.scenario, derive_seed(cfg.seed, kScenarioStream))) {
    out.shards.push_back(std::make_shared<const Shard>(std::move(s)));
  }
  out.test = make_paired(out.dataset.test);
  return out;
}

Topology framework_topology(const ExperimentConfig& cfg) {
  Topology t;
  t.input_dims = cfg.dataset.input_dims;
  t.hidden_dim = cfg.hidden_dim;
  t.feature_dim = cfg.feature_dim;
  t.num_labels = cfg.dataset.num_labels;
  t.task = cfg.dataset.task;
  t.whitening = cfg.use_fw;
  t.whitening_eps = cfg.whitening_eps;
  t.whitening_momentum = cfg.whitening_momentum;
  t.whitening_group = cfg.whitening_group;
  return t;
}

TrainingConfig training_config(const ExperimentConfig& cfg, bool use_mim) {
  TrainingConfig t;
  t.epochs = cfg.local_epochs;
  t.batch_size = cfg.batch_size;
  t.adam = cfg.adam;
  t.loss = cfg.loss;
  t.use_mim = use_mim;
  return t;
}

namespace {

template <typename Predictor>
void append_eval_rows(ExperimentLog& log, const ExperimentConfig& cfg, const PairedSet& test, TaskKind task,
                      const RoundLog& round, bool record_time, Predictor&& predictor) {
  for (const std::string& name : cfg.resolved_inference_modes()) {
    const InferenceMode mode = InferenceMode::parse(name, cfg.dataset.modalities());
    const Prediction pred = predictor(mode);
    const MetricsReport rep = compute_metrics(pred.probabilities, test.labels, task);
    LogRow row;
    row.round = round.round;
    row.mode = name;
    row.micro_f1 = rep.micro_f1;
    row.macro_f1 = rep.macro_f1;
    row.accuracy = rep.accuracy;
    row.mean_ce = round.mean_ce();
    row.mean_ntx = round.mean_ntx();
    row.seconds = record_time ? round.seconds : 0.0;
    row.bytes_exchanged = round.bytes_exchanged;
    log.rows.push_back(std::move(row));
  }
}

bool should_evaluate(const ExperimentConfig& cfg, std::size_t round) {
  return round % cfg.eval_every == 0 || round == cfg.rounds;
}

}  // namespace

ExperimentLog run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, prepare_data(cfg)); }

ExperimentLog run_experiment(const ExperimentConfig& cfg, const PreparedData& data) {
  cfg.validate();
  const Topology topo = framework_topology(cfg);
  std::vector<ClientState> clients;
  for (std::size_t c = 0; c < data.shards.size(); ++c) {
    clients.push_back(ClientState::create(c, data.shards[c]->modality_id, data.shards[c], cfg.seed));
  }
  Federation fed(GlobalModelSet::create(topo, model_init_seed(cfg.seed, 0)), std::move(clients),
                 training_config(cfg, cfg.use_mim), cfg.threads);

  ExperimentLog log;
  auto predictor = [&](const InferenceMode& mode) { return predict(fed.global(), data.test, mode); };
  append_eval_rows(log, cfg, data.test, topo.task, RoundLog{}, cfg.log_wall_time, predictor);
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    RoundLog round = fed.run_round();
    if (should_evaluate(cfg, r)) {
      append_eval_rows(log, cfg, data.test, topo.task, round, cfg.log_wall_time, predictor);
    }
    log.rounds.push_back(std::move(round));
  }
  log.models.push_back(fed.global());

  if (!cfg.output_dir.empty()) {
    const std::filesystem::path dir(cfg.output_dir);
    write_log_csv(log, dir / "log.csv");
    save_checkpoint(fed.global(), dir / "final.mfmm");
  }
  return log;
}

ExperimentLog baseline_fedavg_latefusion(const ExperimentConfig& cfg) {
  return baseline_fedavg_latefusion(cfg, prepare_data(cfg));
}

ExperimentLog baseline_fedavg_latefusion(const ExperimentConfig& cfg, const PreparedData& data) {
  cfg.validate();
  const std::size_t p = cfg.dataset.modalities();
  std::vector<Federation> feds;
  for (std::size_t m = 0; m < p; ++m) {
    Topology topo = framework_topology(cfg);
    topo.input_dims = {cfg.dataset.input_dims[m]};
    topo.whitening = false;
    std::vector<ClientState> clients;
    for (std::size_t c = 0; c < data.shards.size(); ++c) {
      if (data.shards[c]->modality_id != m) continue;
      clients.push_back(ClientState::create(c, 0, data.shards[c], cfg.seed));
    }
    feds.emplace_back(GlobalModelSet::create(topo, model_init_seed(cfg.seed, m)), std::move(clients),
                      training_config(cfg, false), cfg.threads);
  }

  auto current_models = [&] {
    std::vector<GlobalModelSet> models;
    for (const Federation& f : feds) models.push_back(f.global());
    return models;
  };
  ExperimentLog log;
  std::vector<GlobalModelSet> models = current_models();
  auto predictor = [&](const InferenceMode& mode) { return predict_late_fusion(models, data.test, mode); };
  append_eval_rows(log, cfg, data.test, cfg.dataset.task, RoundLog{}, cfg.log_wall_time, predictor);
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    RoundLog combined;
    combined.round = static_cast<std::uint32_t>(r);
    for (Federation& f : feds) {
      RoundLog part = f.run_round();
      combined.clients.insert(combined.clients.end(), part.clients.begin(), part.clients.end());
      combined.seconds += part.seconds;
      combined.bytes_exchanged += part.bytes_exchanged;
    }
    std::sort(combined.clients.begin(), combined.clients.end(),
              [](const ClientMetrics& a, const ClientMetrics& b) { return a.client_id < b.client_id; });
    if (should_evaluate(cfg, r)) {
      models = current_models();
      append_eval_rows(log, cfg, data.test, cfg.dataset.task, combined, cfg.log_wall_time, predictor);
    }
    log.rounds.push_back(std::move(combined));
  }
  log.models = current_models();

  if (!cfg.output_dir.empty()) {
    const std::filesystem::path dir(cfg.output_dir);
    write_log_csv(log, dir / "baseline_log.csv");
    for (std::size_t m = 0; m < p; ++m) {
      save_checkpoint(log.models[m], dir / ("baseline_" + std::to_string(m) + ".mfmm"));
    }
  }
  return log;
}

}  // namespace mmfl
