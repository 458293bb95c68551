#include <doctest.h>

#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "mmfl/error.hpp"
#include "mmfl/models.hpp"
#include "oracles.hpp"

using namespace mmfl;

namespace {

Topology small_topology(bool whitening = true) {
  Topology t;
  t.input_dims = {3, 5};
  t.hidden_dim = 4;
  t.feature_dim = 3;
  t.num_labels = 2;
  t.whitening = whitening;
  t.whitening_group = 2;
  return t;
}

double dot(const Tensor& a, const Tensor& b) { return oracle::weighted_sum_loss(a, b); }

}  // namespace

TEST_CASE("identity body without whitening returns the adapter output") {
  std::mt19937_64 rng(1);
  Encoder e;
  e.adapter = DenseLayer::glorot(3, 4, rng);
  e.body.push_back(BodyLayer{DenseLayer(Tensor::identity(4), Tensor({4})), std::nullopt, Activation::kIdentity});
  const Tensor x = oracle::random_matrix(rng, 5, 3);
  CHECK(encode(e, x, Mode::kEval) == adapter_forward(e, x));
}

TEST_CASE("encode is repeatable and shaped B x d_f") {
  const GlobalModelSet a = GlobalModelSet::create(small_topology(), 0);
  const GlobalModelSet b = GlobalModelSet::create(small_topology(), 0);
  CHECK(a == b);
  std::mt19937_64 rng(2);
  for (std::size_t batch : {2u, 3u, 17u}) {
    const Tensor x = oracle::random_matrix(rng, batch, 3);
    const Tensor y = encode(a.encoders[0], x, Mode::kTrain);
    CHECK(y.rows() == batch);
    CHECK(y.cols() == 3u);
    CHECK(y == encode(b.encoders[0], x, Mode::kTrain));
    CHECK(encode(a.encoders[0], x, Mode::kEval).cols() == 3u);
  }
  try {
    encode(a.encoders[1], Tensor({2, 3}), Mode::kEval);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("modality 1") != std::string::npos);
  }
}

TEST_CASE("models share body topology across modalities") {
  const GlobalModelSet g = GlobalModelSet::create(small_topology(), 3);
  CHECK(g.encoders.size() == 2u);
  CHECK(g.encoders[0].hidden_dim() == g.encoders[1].hidden_dim());
  CHECK(g.encoders[0].feature_dim() == g.encoders[1].feature_dim());
  CHECK(g.head.layer.in_dim() == 6u);
  CHECK(param_count(g.encoders[0]) - g.encoders[0].adapter.weight.size() ==
        param_count(g.encoders[1]) - g.encoders[1].adapter.weight.size());
}

TEST_CASE("fuse examples") {
  const Tensor f = Tensor::matrix({{1, 2}});
  CHECK(fuse(f, 0, 2) == Tensor::matrix({{1, 2, 0, 0}}));
  CHECK(fuse(f, 1, 2) == Tensor::matrix({{0, 0, 1, 2}}));
  CHECK(fuse(f, 0, 1) == f);
  CHECK_THROWS_AS(fuse(f, 2, 2), DimensionError);
}

TEST_CASE("fuse_full examples") {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  std::vector<std::optional<Tensor>> both{a, b};
  CHECK(fuse_full(both, 2, 2) == Tensor::matrix({{1, 2, 5, 6}, {3, 4, 7, 8}}));
  std::vector<std::optional<Tensor>> only1{std::nullopt, b};
  CHECK(fuse_full(only1, 2, 2) == fuse(b, 1, 2));
  std::vector<std::optional<Tensor>> none{std::nullopt, std::nullopt};
  CHECK_THROWS_AS(fuse_full(none, 2, 2), ValidationError);
  std::vector<std::optional<Tensor>> ragged{a, Tensor::matrix({{1, 1}})};
  CHECK_THROWS_AS(fuse_full(ragged, 2, 2), DimensionError);
}

TEST_CASE("inference fusion matches training fusion for every modality") {
  const Topology topo = small_topology();
  const GlobalModelSet g = GlobalModelSet::create(topo, 4);
  std::mt19937_64 rng(4);
  for (std::size_t m = 0; m < 2; ++m) {
    const Tensor x = oracle::random_matrix(rng, 6, topo.input_dims[m]);
    const Tensor f = encode(g.encoders[m], x, Mode::kEval);
    std::vector<std::optional<Tensor>> slots(2);
    slots[m] = f;
    CHECK(fuse_full(slots, 2, topo.feature_dim) == fuse(f, m, 2));
  }
}

TEST_CASE("head examples") {
  Topology topo = small_topology();
  topo.num_labels = 4;
  TaskHead head;
  head.layer = DenseLayer::zeros(topo.fused_dim(), 4);
  std::mt19937_64 rng(5);
  const Tensor z = oracle::random_matrix(rng, 3, topo.fused_dim());
  const Prediction ml = head_forward(head, z);
  for (double v : ml.probabilities.values()) CHECK(v == 0.5);
  head.task = TaskKind::kSingleLabel;
  const Prediction sl = head_forward(head, z);
  for (double v : sl.probabilities.values()) CHECK(v == 0.25);

  const GlobalModelSet g = GlobalModelSet::create(topo, 5);
  const Prediction p = head_forward(g.head, oracle::random_matrix(rng, 20, topo.fused_dim(), 10.0));
  for (double v : p.probabilities.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(head_forward(g.head, Tensor({2, 5})), DimensionError);
}

TEST_CASE("cross encoding with an identical body equals local encoding") {
  const GlobalModelSet g = GlobalModelSet::create(small_topology(false), 6);
  Encoder other = g.encoders[1];
  other.body = g.encoders[0].body;
  std::mt19937_64 rng(6);
  const Tensor x = oracle::random_matrix(rng, 4, 3);
  CHECK(cross_encode(g.encoders[0], other, x, Mode::kEval) == encode(g.encoders[0], x, Mode::kEval));
}

TEST_CASE("zero adapter makes cross encoding input-independent") {
  const GlobalModelSet g = GlobalModelSet::create(small_topology(false), 7);
  Encoder local = g.encoders[0];
  local.adapter = DenseLayer::zeros(3, 4);
  std::mt19937_64 rng(7);
  const Tensor y = cross_encode(local, g.encoders[1], oracle::random_matrix(rng, 3, 3), Mode::kEval);
  for (std::size_t r = 1; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) CHECK(y.at(r, c) == y.at(0, c));
}

TEST_CASE("cross encoding gradient reaches only the local adapter") {
  const GlobalModelSet g = GlobalModelSet::create(small_topology(), 8);
  const Encoder& local = g.encoders[0];
  const Encoder& other = g.encoders[1];
  std::mt19937_64 rng(8);
  const Tensor x = oracle::random_matrix(rng, 6, 3);
  const Tensor r = oracle::random_matrix(rng, 6, 3);
  CrossTrace trace;
  cross_encode(local, other, x, Mode::kTrain, &trace);
  const FrozenStats frozen = trace_stats(trace.body);
  CrossTrace frozen_trace;
  cross_encode(local, other, x, Mode::kTrain, &frozen_trace, &frozen);

  Encoder grads = zeros_like(local);
  const Encoder other_before = other;
  cross_encode_backward(local, other, frozen_trace, r, grads);
  CHECK(other == other_before);
  for (const BodyLayer& layer : grads.body) {
    for (double v : layer.dense.weight.values()) CHECK(v == 0.0);
    if (layer.whitening) {
      for (double v : layer.whitening->gamma.values()) CHECK(v == 0.0);
    }
  }
  const Tensor& adapter_grad = grads.adapter.weight;
  bool nonzero = false;
  for (double v : adapter_grad.values()) nonzero = nonzero || v != 0.0;
  CHECK(nonzero);

  auto f = [&](const Tensor& w) {
    Encoder l = local;
    l.adapter.weight = w;
    return dot(cross_encode(l, other, x, Mode::kTrain, nullptr, &frozen), r);
  };
  CHECK(oracle::max_rel_err(adapter_grad, oracle::central_diff(f, local.adapter.weight)) < 1e-5);
}

TEST_CASE("encoder backward matches finite differences") {
  const GlobalModelSet g = GlobalModelSet::create(small_topology(), 9);
  const Encoder& enc = g.encoders[1];
  std::mt19937_64 rng(9);
  const Tensor theta = flatten_params(enc);

  SUBCASE("frozen statistics") {
    for (int point = 0; point < 10; ++point) {
      const Tensor x = oracle::random_matrix(rng, 6, 5);
      const Tensor r = oracle::random_matrix(rng, 6, 3);
      EncoderTrace probe;
      encode(enc, x, Mode::kTrain, &probe);
      const FrozenStats frozen = trace_stats(probe);
      EncoderTrace trace;
      encode(enc, x, Mode::kTrain, &trace, &frozen);
      Encoder grads = zeros_like(enc);
      encoder_backward(enc, trace, r, grads);
      auto f = [&](const Tensor& t) {
        return dot(encode(unflatten_params(t, enc), x, Mode::kTrain, nullptr, &frozen), r);
      };
      CHECK(oracle::max_rel_err(flatten_params(grads), oracle::central_diff(f, theta)) < 1e-5);
    }
  }
  SUBCASE("batch statistics") {
    for (int point = 0; point < 5; ++point) {
      const Tensor x = oracle::random_matrix(rng, 8, 5);
      const Tensor r = oracle::random_matrix(rng, 8, 3);
      EncoderTrace trace;
      encode(enc, x, Mode::kTrain, &trace);
      Encoder grads = zeros_like(enc);
      encoder_backward(enc, trace, r, grads);
      auto f = [&](const Tensor& t) { return dot(encode(unflatten_params(t, enc), x, Mode::kTrain), r); };
      // the bias feeding a batch-whitened layer has an exactly zero gradient,
      // so differences there are pure cancellation noise
      CHECK(oracle::max_rel_err(flatten_params(grads), oracle::central_diff(f, theta), 1e-3) < 1e-5);
      for (double v : grads.body[0].dense.bias.values()) CHECK(std::abs(v) < 1e-12);
    }
  }
}

TEST_CASE("flatten and unflatten roundtrip") {
  const GlobalModelSet g = GlobalModelSet::create(small_topology(), 10);
  for (const Encoder& e : g.encoders) {
    CHECK(unflatten_params(flatten_params(e), e) == e);
    CHECK(flatten_params(e).size() == param_count(e));
  }
  CHECK(unflatten_params(flatten_params(g.head), g.head) == g.head);

  Encoder e = g.encoders[0];
  TaskHead h = g.head;
  const Tensor both = flatten_params(e, h);
  CHECK(both.size() == param_count(e) + param_count(h));
  Encoder e2 = zeros_like(e);
  TaskHead h2 = zeros_like(h);
  unflatten_params(both, e2, h2);
  CHECK(flatten_params(e2) == flatten_params(e));
  CHECK(h2 == h);

  CHECK_THROWS_AS(unflatten_params(Tensor({3}), e), DimensionError);
}

TEST_CASE("canonical parameter order") {
  const GlobalModelSet g = GlobalModelSet::create(small_topology(), 11);
  const Encoder& e = g.encoders[0];
  const Tensor flat = flatten_params(e);
  std::size_t pos = 0;
  auto expect = [&](const Tensor& t) {
    for (double v : t.values()) CHECK(flat[pos++] == v);
  };
  expect(e.adapter.weight);
  expect(e.adapter.bias);
  for (const BodyLayer& l : e.body) {
    expect(l.dense.weight);
    expect(l.dense.bias);
    if (l.whitening) {
      expect(l.whitening->gamma);
      expect(l.whitening->beta);
    }
  }
  CHECK(pos == flat.size());

  const Encoder z = zeros_like(e);
  const Tensor zf = flatten_params(z);
  CHECK(zf.size() == param_count(e));
  for (double v : zf.values()) CHECK(v == 0.0);
  CHECK(flatten_params(g.encoders[1]).size() - g.encoders[1].adapter.weight.size() ==
        flat.size() - e.adapter.weight.size());
}

TEST_CASE("eval encoding is read-only") {
  GlobalModelSet g = GlobalModelSet::create(small_topology(), 12);
  std::mt19937_64 rng(12);
  Encoder& e = g.encoders[0];
  encode_train(e, oracle::random_matrix(rng, 6, 3));
  const Encoder before = e;
  encode(e, oracle::random_matrix(rng, 6, 3), Mode::kEval);
  encode(e, oracle::random_matrix(rng, 6, 3), Mode::kTrain);
  CHECK(e == before);
  encode_train(e, oracle::random_matrix(rng, 6, 3));
  CHECK_FALSE(e == before);
}

TEST_CASE("checkpoint roundtrip is bit exact") {
  GlobalModelSet g = GlobalModelSet::create(small_topology(), 13);
  std::mt19937_64 rng(13);
  encode_train(g.encoders[1], oracle::random_matrix(rng, 7, 5));
  g.round = 17;
  const std::vector<std::uint8_t> bytes = encode_checkpoint(g);
  CHECK(decode_checkpoint(bytes) == g);
  CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "mmfl_test_models.mfmm";
  save_checkpoint(g, path);
  CHECK(load_checkpoint(path) == g);
  std::filesystem::remove(path);
}

TEST_CASE("corrupted checkpoints raise format errors") {
  const GlobalModelSet g = GlobalModelSet::create(small_topology(), 14);
  const std::vector<std::uint8_t> bytes = encode_checkpoint(g);
  for (std::size_t cut = 0; cut < bytes.size(); cut += 1 + cut / 8) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_checkpoint(part), FormatError);
  }
  std::vector<std::uint8_t> bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[4] = 99;
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  // a huge hidden width must be rejected before anything is allocated
  bad = bytes;
  for (std::size_t i = 18; i < 22; ++i) bad[i] = 0xFF;
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  CHECK_THROWS_AS(load_checkpoint(std::filesystem::temp_directory_path()), Error);
}
