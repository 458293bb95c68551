#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "mmfl/data.hpp"
#include "mmfl/error.hpp"

using namespace mmfl;

namespace {

DatasetSpec small_spec(std::size_t sites = 400) {
  DatasetSpec s;
  s.n_sites = sites;
  s.seed = 21;
  return s;
}

std::vector<std::size_t> sizes(const std::vector<std::vector<std::size_t>>& bs) {
  std::vector<std::size_t> out;
  for (const auto& b : bs) out.push_back(b.size());
  return out;
}

}  // namespace

TEST_CASE("generation is deterministic") {
  const Dataset a = gen_synthetic(small_spec());
  const Dataset b = gen_synthetic(small_spec());
  for (std::size_t m = 0; m < 2; ++m) {
    CHECK(encode_shard(a.train.by_modality[m]) == encode_shard(b.train.by_modality[m]));
    CHECK(encode_shard(a.test.by_modality[m]) == encode_shard(b.test.by_modality[m]));
  }
  DatasetSpec other = small_spec();
  other.seed = 22;
  CHECK_FALSE(gen_synthetic(other).train.by_modality[0] == a.train.by_modality[0]);
}

TEST_CASE("sample counts and pairing") {
  const Dataset d = gen_synthetic(small_spec(100));
  std::size_t total = 0;
  std::map<std::uint64_t, std::vector<int>> seen;
  for (const Split* split : {&d.train, &d.test}) {
    for (std::size_t m = 0; m < 2; ++m) {
      const Shard& s = split->by_modality[m];
      CHECK(s.modality_id == m);
      total += s.size();
      for (const Sample& x : s.samples) {
        CHECK(x.modality_id == m);
        CHECK(x.features.size() == d.spec.input_dims[m]);
        CHECK(x.labels.size() == d.spec.num_labels);
        seen[x.geo_key].push_back(static_cast<int>(m));
      }
    }
  }
  CHECK(total == 200u);
  CHECK(seen.size() == 100u);
  for (const auto& [key, mods] : seen) CHECK(mods == std::vector<int>{0, 1});
  CHECK(d.train.by_modality[0].size() == 80u);
}

TEST_CASE("train and test never share a site") {
  const Dataset d = gen_synthetic(small_spec());
  std::set<std::uint64_t> train;
  for (const Sample& s : d.train.by_modality[0].samples) train.insert(s.geo_key);
  for (std::size_t m = 0; m < 2; ++m)
    for (const Sample& s : d.test.by_modality[m].samples) CHECK(train.count(s.geo_key) == 0u);
}

TEST_CASE("label prevalence is calibrated") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    DatasetSpec spec = small_spec(2000);
    spec.seed = seed;
    const Dataset d = gen_synthetic(spec);
    for (double p : label_prevalence(d.train.by_modality[0])) {
      CHECK(p >= 0.2);
      CHECK(p <= 0.5);
    }
  }
}

TEST_CASE("single-label datasets are one-hot") {
  DatasetSpec spec = small_spec();
  spec.task = TaskKind::kSingleLabel;
  spec.num_labels = 6;
  const Dataset d = gen_synthetic(spec);
  for (const Sample& s : d.train.by_modality[1].samples) {
    CHECK(std::accumulate(s.labels.begin(), s.labels.end(), 0.0) == 1.0);
  }
}

TEST_CASE("client counts per modality") {
  CHECK(clients_per_modality(14, 2) == std::vector<std::size_t>{7, 7});
  CHECK(clients_per_modality(7, 2) == std::vector<std::size_t>{4, 3});
  CHECK(client_modalities(5, 2) == std::vector<std::uint16_t>{0, 0, 0, 1, 1});
  ScenarioSpec s;
  s.clients = 1;
  CHECK_THROWS_AS(s.validate(2), ConfigError);
}

TEST_CASE("iid split is balanced") {
  const Dataset d = gen_synthetic(small_spec());
  ScenarioSpec sc;
  sc.clients = 4;
  const auto shards = build_scenario(d, sc, 5);
  REQUIRE(shards.size() == 4u);
  for (std::size_t m = 0; m < 2; ++m) {
    const auto a = shards[2 * m].size(), b = shards[2 * m + 1].size();
    CHECK(std::max(a, b) - std::min(a, b) <= 1u);
    CHECK(shards[2 * m].modality_id == m);
  }
}

TEST_CASE("group-skew shards are pure and skewed") {
  const Dataset d = gen_synthetic(DatasetSpec{});
  ScenarioSpec sc;
  sc.kind = ScenarioKind::kGroupSkew;
  sc.clients = 14;
  const auto shards = build_scenario(d, sc, 5);
  std::vector<std::vector<double>> marginals;
  for (const Shard& s : shards) {
    std::set<std::uint32_t> groups;
    for (const Sample& x : s.samples) groups.insert(d.site_group[x.geo_key]);
    CHECK(groups.size() == 1u);
    marginals.push_back(label_prevalence(s));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < marginals.size(); ++i)
    for (std::size_t j = i + 1; j < marginals.size(); ++j) {
      double tv = 0.0;
      double si = 0.0, sj = 0.0;
      for (std::size_t l = 0; l < marginals[i].size(); ++l) {
        si += marginals[i][l];
        sj += marginals[j][l];
      }
      for (std::size_t l = 0; l < marginals[i].size(); ++l)
        tv += std::abs(marginals[i][l] / si - marginals[j][l] / sj);
      worst = std::max(worst, 0.5 * tv);
    }
  CHECK(worst > 0.05);

  sc.clients = 28;
  CHECK_THROWS_AS(build_scenario(d, sc, 5), ScenarioError);
}

TEST_CASE("missing-modality removal") {
  const Dataset d = gen_synthetic(small_spec(125));
  REQUIRE(d.train.by_modality[1].size() == 100u);
  ScenarioSpec sc;
  sc.kind = ScenarioKind::kMissingB;
  sc.clients = 4;
  const Split pool = scenario_train_pool(d, sc, 9);
  CHECK(pool.by_modality[1].size() == 50u);
  CHECK(pool.by_modality[0] == d.train.by_modality[0]);
  sc.kind = ScenarioKind::kMissingA;
  CHECK(scenario_train_pool(d, sc, 9).by_modality[0].size() == 50u);
}

TEST_CASE("shards partition the scenario pool") {
  const Dataset d = gen_synthetic(small_spec());
  for (ScenarioKind kind : {ScenarioKind::kIid, ScenarioKind::kGroupSkew, ScenarioKind::kMissingA,
                            ScenarioKind::kMissingB}) {
    CAPTURE(scenario_kind_name(kind));
    ScenarioSpec sc;
    sc.kind = kind;
    sc.clients = 6;
    const auto shards = build_scenario(d, sc, 3);
    const Split pool = scenario_train_pool(d, sc, 3);
    for (std::size_t m = 0; m < 2; ++m) {
      std::vector<std::uint64_t> got, want;
      for (const Shard& s : shards)
        if (s.modality_id == m)
          for (const Sample& x : s.samples) got.push_back(x.geo_key);
      for (const Sample& x : pool.by_modality[m].samples) want.push_back(x.geo_key);
      std::sort(got.begin(), got.end());
      std::sort(want.begin(), want.end());
      CHECK(got == want);
    }
  }
}

TEST_CASE("shard files roundtrip exactly") {
  const Dataset d = gen_synthetic(small_spec());
  const Shard& s = d.train.by_modality[1];
  CHECK(decode_shard(encode_shard(s)) == s);
  const auto path = std::filesystem::temp_directory_path() / "mmfl_test_data.mfsh";
  save_shard(s, path);
  CHECK(load_shard(path) == s);

  Shard empty;
  empty.modality_id = 1;
  empty.feature_dim = 40;
  empty.num_labels = 8;
  save_shard(empty, path);
  CHECK(load_shard(path) == empty);
  std::filesystem::remove(path);
}

TEST_CASE("corrupted shard files raise format errors") {
  const Dataset d = gen_synthetic(small_spec(20));
  const std::vector<std::uint8_t> bytes = encode_shard(d.train.by_modality[0]);
  for (std::size_t cut = 0; cut < bytes.size(); cut += 1 + cut / 16) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_shard(part), FormatError);
  }
  std::vector<std::uint8_t> bad = bytes;
  bad[1] = 'Z';
  CHECK_THROWS_AS(decode_shard(bad), FormatError);
  bad = bytes;
  bad[4] = 7;
  CHECK_THROWS_AS(decode_shard(bad), FormatError);
  bad = bytes;
  bad[8] = 5;
  CHECK_THROWS_AS(decode_shard(bad), FormatError);
  bad = bytes;
  for (std::size_t i = 9; i < 21; ++i) bad[i] = 0xFF;
  CHECK_THROWS_AS(decode_shard(bad), FormatError);
  CHECK_THROWS_AS(load_shard("/nonexistent/dir/x.mfsh"), Error);
  CHECK_THROWS_AS(load_shard(std::filesystem::temp_directory_path()), Error);
}

TEST_CASE("batching") {
  std::mt19937_64 rng(1);
  CHECK(sizes(batches(10, 4, rng)) == std::vector<std::size_t>{4, 4, 2});
  CHECK(sizes(batches(9, 4, rng)) == std::vector<std::size_t>{4, 4});
  CHECK(batches(1, 4, rng).empty());
  CHECK_THROWS_AS(batches(10, 1, rng), ConfigError);

  std::mt19937_64 a(3), b(3);
  CHECK(batches(50, 8, a) == batches(50, 8, b));

  std::mt19937_64 c(4);
  std::vector<std::size_t> all;
  for (const auto& bt : batches(37, 5, c)) all.insert(all.end(), bt.begin(), bt.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> want(37);
  std::iota(want.begin(), want.end(), 0);
  CHECK(all == want);
}

TEST_CASE("paired test view") {
  const Dataset d = gen_synthetic(small_spec());
  const PairedSet p = make_paired(d.test);
  CHECK(p.size() == d.test.by_modality[0].size());
  CHECK(std::is_sorted(p.geo_keys.begin(), p.geo_keys.end()));
  CHECK(p.features[1].cols() == 40u);
  CHECK(p.labels.rows() == p.size());
}

TEST_CASE("dataset spec validation") {
  DatasetSpec s;
  s.n_groups = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_THROWS_AS(parse_scenario_kind("ds9"), ConfigError);
  CHECK(parse_scenario_kind("group-skew-mixed") == ScenarioKind::kGroupSkewMixed);
}
