#include "mmfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "mmfl/binary_io.hpp"
#include "mmfl/error.hpp"
#include "mmfl/random.hpp"

namespace mmfl {

namespace {

constexpr double kTrainFraction = 0.8;
constexpr double kMinPrevalence = 0.2;
constexpr double kMaxPrevalence = 0.5;
constexpr int kCalibrationAttempts = 100;

// Stream ids for derive_seed, one per independent random decision.
enum Stream : std::uint64_t {
  kStreamScenarioShuffle = 1,
  kStreamScenarioRemoval = 2,
  kStreamScenarioJitter = 3,
};

std::vector<std::vector<double>> gaussian_matrix(std::size_t rows, std::size_t cols, double sd,
                                                 std::mt19937_64& rng) {
  std::vector<std::vector<double>> m(rows, std::vector<double>(cols));
  for (auto& row : m)
    for (double& v : row) v = sd * standard_normal(rng);
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Value at which a fraction `upper` of `values` lies strictly above.
double upper_quantile_threshold(std::vector<double> values, double upper) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  std::size_t above = static_cast<std::size_t>(std::llround(upper * static_cast<double>(n)));
  above = std::clamp<std::size_t>(above, 1, n - 1);
  const std::size_t idx = n - above;  // values[idx..] are the positives
  return 0.5 * (values[idx - 1] + values[idx]);
}

Shard empty_shard(const DatasetSpec& spec, std::size_t m) {
  Shard s;
  s.modality_id = static_cast<std::uint16_t>(m);
  s.task = spec.task;
  s.feature_dim = static_cast<std::uint32_t>(spec.input_dims[m]);
  s.num_labels = static_cast<std::uint32_t>(spec.num_labels);
  return s;
}

}  // namespace

Tensor shard_features(const Shard& shard) {
  Tensor x({shard.size(), shard.feature_dim});
  for (std::size_t i = 0; i < shard.size(); ++i) {
    const auto& f = shard.samples[i].features;
    if (f.size() != shard.feature_dim) throw DimensionError("shard_features: sample width mismatch");
    std::copy(f.begin(), f.end(), x.row(i).begin());
  }
  return x;
}

Tensor shard_labels(const Shard& shard) {
  Tensor y({shard.size(), shard.num_labels});
  for (std::size_t i = 0; i < shard.size(); ++i) {
    const auto& l = shard.samples[i].labels;
    if (l.size() != shard.num_labels) throw DimensionError("shard_labels: label width mismatch");
    std::copy(l.begin(), l.end(), y.row(i).begin());
  }
  return y;
}

void DatasetSpec::validate() const {
  if (n_sites < 10) throw ConfigError("dataset.n_sites must be at least 10");
  if (latent_dim == 0) throw ConfigError("dataset.latent_dim must be positive");
  if (input_dims.empty()) throw ConfigError("dataset.input_dims must list at least one modality");
  for (std::size_t v : input_dims)
    if (v == 0) throw ConfigError("dataset.input_dims entries must be positive");
  if (num_labels < 2) throw ConfigError("dataset.num_labels must be at least 2");
  if (n_groups == 0) throw ConfigError("dataset.n_groups must be at least 1");
  if (n_groups > n_sites) throw ConfigError("dataset.n_groups exceeds n_sites");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("dataset.noise_sigma must be a non-negative finite number");
  }
  if (!(group_shift >= 0.0) || !std::isfinite(group_shift)) {
    throw ConfigError("dataset.group_shift must be a non-negative finite number");
  }
}

Dataset gen_synthetic(const DatasetSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t n = spec.n_sites;
  const std::size_t k = spec.latent_dim;
  const std::size_t p = spec.modalities();

  const auto offsets = gaussian_matrix(spec.n_groups, k, spec.group_shift, rng);
  std::vector<std::vector<std::vector<double>>> mixing;
  for (std::size_t m = 0; m < p; ++m) {
    mixing.push_back(gaussian_matrix(spec.input_dims[m], k, 1.0 / std::sqrt(static_cast<double>(k)), rng));
  }

  Dataset ds;
  ds.spec = spec;
  ds.site_group.resize(n);
  std::vector<std::vector<double>> latent(n, std::vector<double>(k));
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t g = s % spec.n_groups;
    ds.site_group[s] = static_cast<std::uint32_t>(g);
    for (std::size_t j = 0; j < k; ++j) latent[s][j] = offsets[g][j] + standard_normal(rng);
  }

  std::vector<std::vector<std::vector<double>>> views(p, std::vector<std::vector<double>>(n));
  for (std::size_t m = 0; m < p; ++m) {
    const bool nonlinear = m % 2 == 1;
    for (std::size_t s = 0; s < n; ++s) {
      auto& v = views[m][s];
      v.resize(spec.input_dims[m]);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double clean = dot(mixing[m][i], latent[s]);
        v[i] = (nonlinear ? std::tanh(clean) : clean) + spec.noise_sigma * standard_normal(rng);
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  fisher_yates(std::span<std::size_t>(order), rng);
  const std::size_t n_train = static_cast<std::size_t>(std::llround(kTrainFraction * static_cast<double>(n)));
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  const std::size_t l = spec.num_labels;
  std::vector<std::vector<double>> labels(n, std::vector<double>(l, 0.0));
  if (spec.task == TaskKind::kMultiLabel) {
    for (std::size_t label = 0; label < l; ++label) {
      bool ok = false;
      for (int attempt = 0; attempt < kCalibrationAttempts && !ok; ++attempt) {
        std::vector<double> u(k);
        for (double& v : u) v = standard_normal(rng);
        const double target = uniform(rng, 0.25, 0.45);
        std::vector<double> train_scores;
        std::vector<double> scores(n);
        for (std::size_t s = 0; s < n; ++s) {
          scores[s] = dot(u, latent[s]);
          if (in_train[s]) train_scores.push_back(scores[s]);
        }
        const double threshold = upper_quantile_threshold(train_scores, target);
        std::size_t positives = 0;
        for (std::size_t s = 0; s < n; ++s)
          if (in_train[s] && scores[s] > threshold) ++positives;
        const double prevalence = static_cast<double>(positives) / static_cast<double>(n_train);
        if (prevalence >= kMinPrevalence && prevalence <= kMaxPrevalence) {
          ok = true;
          for (std::size_t s = 0; s < n; ++s) labels[s][label] = scores[s] > threshold ? 1.0 : 0.0;
        }
      }
      if (!ok) {
        throw GenerationError("label " + std::to_string(label) + ": prevalence calibration failed after " +
                              std::to_string(kCalibrationAttempts) + " attempts");
      }
    }
  } else {
    const auto class_dirs = gaussian_matrix(l, k, 1.0, rng);
    for (std::size_t s = 0; s < n; ++s) {
      std::size_t best = 0;
      double best_score = -1e300;
      for (std::size_t c = 0; c < l; ++c) {
        const double score = dot(class_dirs[c], latent[s]);
        if (score > best_score) {
          best_score = score;
          best = c;
        }
      }
      labels[s][best] = 1.0;
    }
  }

  for (std::size_t m = 0; m < p; ++m) {
    ds.train.by_modality.push_back(empty_shard(spec, m));
    ds.test.by_modality.push_back(empty_shard(spec, m));
  }
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t m = 0; m < p; ++m) {
      Sample sample{static_cast<std::uint64_t>(s), static_cast<std::uint16_t>(m), std::move(views[m][s]), labels[s]};
      (in_train[s] ? ds.train : ds.test).by_modality[m].samples.push_back(std::move(sample));
    }
  }
  return ds;
}

std::vector<double> label_prevalence(const Shard& shard) {
  std::vector<double> prev(shard.num_labels, 0.0);
  if (shard.samples.empty()) return prev;
  for (const Sample& s : shard.samples)
    for (std::size_t l = 0; l < prev.size(); ++l) prev[l] += s.labels[l];
  for (double& v : prev) v /= static_cast<double>(shard.size());
  return prev;
}

// ---------------------------------------------------------------------------

ScenarioKind parse_scenario_kind(std::string_view name) {
  if (name == "iid") return ScenarioKind::kIid;
  if (name == "group-skew") return ScenarioKind::kGroupSkew;
  if (name == "group-skew-mixed") return ScenarioKind::kGroupSkewMixed;
  if (name == "missing-A") return ScenarioKind::kMissingA;
  if (name == "missing-B") return ScenarioKind::kMissingB;
  throw ConfigError("unknown scenario kind '" + std::string(name) + "'");
}

const char* scenario_kind_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kIid: return "iid";
    case ScenarioKind::kGroupSkew: return "group-skew";
    case ScenarioKind::kGroupSkewMixed: return "group-skew-mixed";
    case ScenarioKind::kMissingA: return "missing-A";
    case ScenarioKind::kMissingB: return "missing-B";
  }
  return "unknown";
}

void ScenarioSpec::validate(std::size_t modalities) const {
  if (clients < modalities) {
    throw ConfigError("K = " + std::to_string(clients) + " leaves some of the " +
                      std::to_string(modalities) + " modalities without clients");
  }
  if (!(missing_fraction >= 0.0 && missing_fraction <= 1.0)) {
    throw ConfigError("scenario.missing_fraction must lie in [0, 1]");
  }
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw ConfigError("scenario.jitter must be non-negative");
  if ((kind == ScenarioKind::kMissingA || kind == ScenarioKind::kMissingB) && modalities < 2) {
    throw ConfigError("missing-modality scenarios need at least two modalities");
  }
}

std::vector<std::size_t> clients_per_modality(std::size_t clients, std::size_t modalities) {
  std::vector<std::size_t> counts(modalities, clients / modalities);
  for (std::size_t m = 0; m < clients % modalities; ++m) ++counts[m];
  return counts;
}

std::vector<std::uint16_t> client_modalities(std::size_t clients, std::size_t modalities) {
  std::vector<std::uint16_t> out;
  const auto counts = clients_per_modality(clients, modalities);
  for (std::size_t m = 0; m < modalities; ++m)
    out.insert(out.end(), counts[m], static_cast<std::uint16_t>(m));
  return out;
}

Split scenario_train_pool(const Dataset& dataset, const ScenarioSpec& scenario, std::uint64_t seed) {
  Split pool = dataset.train;
  if (scenario.kind != ScenarioKind::kMissingA && scenario.kind != ScenarioKind::kMissingB) return pool;
  const std::size_t m = scenario.kind == ScenarioKind::kMissingA ? 0 : 1;
  auto& samples = pool.by_modality[m].samples;
  const std::size_t n = samples.size();
  const std::size_t remove =
      static_cast<std::size_t>(std::llround(scenario.missing_fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, kStreamScenarioRemoval));
  fisher_yates(std::span<std::size_t>(idx), rng);
  std::vector<bool> drop(n, false);
  for (std::size_t i = 0; i < remove; ++i) drop[idx[i]] = true;
  std::vector<Sample> kept;
  kept.reserve(n - remove);
  for (std::size_t i = 0; i < n; ++i)
    if (!drop[i]) kept.push_back(samples[i]);
  samples = std::move(kept);
  return pool;
}

std::vector<Shard> build_scenario(const Dataset& dataset, const ScenarioSpec& scenario,
                                  std::uint64_t seed) {
  const DatasetSpec& spec = dataset.spec;
  const std::size_t p = spec.modalities();
  scenario.validate(p);
  const auto per_modality = clients_per_modality(scenario.clients, p);
  const bool grouped =
      scenario.kind == ScenarioKind::kGroupSkew || scenario.kind == ScenarioKind::kGroupSkewMixed;
  if (grouped) {
    for (std::size_t count : per_modality) {
      if (spec.n_groups < count) {
        throw ScenarioError("group-skew scenario needs at least " + std::to_string(count) +
                            " groups, dataset has " + std::to_string(spec.n_groups));
      }
    }
  }

  const Split pool = scenario_train_pool(dataset, scenario, seed);
  std::mt19937_64 shuffle_rng(derive_seed(seed, kStreamScenarioShuffle));
  std::vector<Shard> shards;
  for (std::size_t m = 0; m < p; ++m) {
    const Shard& source = pool.by_modality[m];
    const std::size_t n_clients = per_modality[m];
    std::vector<Shard> group(n_clients, empty_shard(spec, m));
    if (grouped) {
      for (const Sample& s : source.samples) {
        const std::size_t g = dataset.site_group.at(s.geo_key);
        group[g % n_clients].samples.push_back(s);
      }
    } else {
      std::vector<std::size_t> order(source.size());
      std::iota(order.begin(), order.end(), 0);
      fisher_yates(std::span<std::size_t>(order), shuffle_rng);
      const std::size_t base = order.size() / n_clients;
      const std::size_t extra = order.size() % n_clients;
      std::size_t pos = 0;
      for (std::size_t c = 0; c < n_clients; ++c) {
        const std::size_t take = base + (c < extra ? 1 : 0);
        for (std::size_t i = 0; i < take; ++i) group[c].samples.push_back(source.samples[order[pos++]]);
        std::sort(group[c].samples.begin(), group[c].samples.end(),
                  [](const Sample& a, const Sample& b) { return a.geo_key < b.geo_key; });
      }
    }
    for (auto& shard : group) shards.push_back(std::move(shard));
  }

  if (scenario.kind == ScenarioKind::kGroupSkewMixed && spec.noise_sigma > 0.0 && scenario.jitter > 0.0) {
    std::mt19937_64 jitter_rng(derive_seed(seed, kStreamScenarioJitter));
    std::vector<double> group_sigma(spec.n_groups);
    for (double& s : group_sigma) s = spec.noise_sigma * scenario.jitter * uniform01(jitter_rng);
    for (Shard& shard : shards)
      for (Sample& s : shard.samples) {
        const double sigma = group_sigma[dataset.site_group.at(s.geo_key)];
        for (double& v : s.features) v += sigma * standard_normal(jitter_rng);
      }
  }

  for (std::size_t c = 0; c < shards.size(); ++c) {
    if (shards[c].samples.empty()) {
      throw ScenarioError("client " + std::to_string(c) + " received an empty shard");
    }
  }
  return shards;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_shard(const Shard& shard) {
  ByteWriter w;
  w.magic("MFSH");
  w.u16(kShardVersion);
  w.u16(shard.modality_id);
  w.u8(static_cast<std::uint8_t>(shard.task));
  w.u32(static_cast<std::uint32_t>(shard.samples.size()));
  w.u32(shard.feature_dim);
  w.u32(shard.num_labels);
  for (const Sample& s : shard.samples) {
    if (s.features.size() != shard.feature_dim || s.labels.size() != shard.num_labels) {
      throw DimensionError("encode_shard: sample " + std::to_string(s.geo_key) + " has wrong width");
    }
    w.u64(s.geo_key);
    w.f64s(s.features);
    w.f64s(s.labels);
  }
  return std::move(w.buffer());
}

Shard decode_shard(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("MFSH", "shard magic MFSH");
  const std::size_t version_at = r.offset();
  const std::uint16_t version = r.u16("version");
  if (version != kShardVersion) {
    throw FormatError("unsupported shard version " + std::to_string(version), version_at);
  }
  Shard shard;
  shard.modality_id = r.u16("modality id");
  const std::size_t task_at = r.offset();
  const std::uint8_t task = r.u8("task kind");
  if (task > 1) throw FormatError("unknown task kind " + std::to_string(task), task_at);
  shard.task = static_cast<TaskKind>(task);
  const std::uint32_t count = r.u32("sample count");
  shard.feature_dim = r.u32("feature dim");
  shard.num_labels = r.u32("label count");
  const std::size_t record = 8 + 8 * (static_cast<std::size_t>(shard.feature_dim) + shard.num_labels);
  if (count > r.remaining() / record || static_cast<std::size_t>(count) * record != r.remaining()) {
    const long double expected_end = static_cast<long double>(r.offset()) + static_cast<long double>(count) * record;
    throw FormatError("payload length disagrees with header (" + std::to_string(count) +
                          " samples expected)",
                      expected_end < bytes.size() ? static_cast<std::size_t>(expected_end) : bytes.size());
  }
  shard.samples.resize(count);
  for (Sample& s : shard.samples) {
    s.geo_key = r.u64("geo key");
    s.modality_id = shard.modality_id;
    s.features.resize(shard.feature_dim);
    s.labels.resize(shard.num_labels);
    r.f64s(s.features, "features");
    r.f64s(s.labels, "labels");
  }
  r.expect_end("shard");
  return shard;
}

void save_shard(const Shard& shard, const std::filesystem::path& path) {
  write_file_bytes(path, encode_shard(shard));
}

Shard load_shard(const std::filesystem::path& path) { return decode_shard(read_file_bytes(path)); }

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::mt19937_64& rng) {
  if (batch_size < 2) {
    throw ConfigError("batch_size must be at least 2, got " + std::to_string(batch_size));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  fisher_yates(std::span<std::size_t>(order), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    if (end - begin < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<std::vector<std::size_t>> batches(const Shard& shard, std::size_t batch_size,
                                              std::mt19937_64& rng) {
  return batches(shard.size(), batch_size, rng);
}

PairedSet make_paired(const Split& split) {
  const std::size_t p = split.by_modality.size();
  if (p == 0) throw ValidationError("make_paired: split has no modalities");
  std::vector<std::map<std::uint64_t, const Sample*>> index(p);
  for (std::size_t m = 0; m < p; ++m)
    for (const Sample& s : split.by_modality[m].samples) index[m][s.geo_key] = &s;

  PairedSet out;
  out.task = split.by_modality[0].task;
  for (const auto& [key, _] : index[0]) {
    bool everywhere = true;
    for (std::size_t m = 1; m < p; ++m) everywhere = everywhere && index[m].count(key) > 0;
    if (everywhere) out.geo_keys.push_back(key);
  }
  const std::size_t n = out.geo_keys.size();
  const std::size_t l = split.by_modality[0].num_labels;
  out.labels = Tensor({n, l});
  for (std::size_t m = 0; m < p; ++m) {
    Tensor x({n, split.by_modality[m].feature_dim});
    for (std::size_t i = 0; i < n; ++i) {
      const Sample& s = *index[m].at(out.geo_keys[i]);
      std::copy(s.features.begin(), s.features.end(), x.row(i).begin());
      if (m == 0) std::copy(s.labels.begin(), s.labels.end(), out.labels.row(i).begin());
    }
    out.features.push_back(std::move(x));
  }
  return out;
}

}  // namespace mmfl
