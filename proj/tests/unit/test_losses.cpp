#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mmfl/error.hpp"
#include "mmfl/losses.hpp"
#include "mmfl/random.hpp"
#include "oracles.hpp"

using namespace mmfl;

namespace {

Tensor random_targets(std::mt19937_64& rng, std::size_t b, std::size_t l) {
  Tensor y({b, l});
  for (double& v : y.values()) v = uniform01(rng) < 0.5 ? 1.0 : 0.0;
  return y;
}

Tensor one_hot(const std::vector<std::size_t>& cls, std::size_t l) {
  Tensor y({cls.size(), l});
  for (std::size_t r = 0; r < cls.size(); ++r) y.at(r, cls[r]) = 1.0;
  return y;
}

Topology small_topology() {
  Topology t;
  t.input_dims = {3, 4};
  t.hidden_dim = 4;
  t.feature_dim = 3;
  t.num_labels = 2;
  t.whitening = true;
  t.whitening_group = 2;
  return t;
}

// Random biases keep every feature row away from the zero vector, where
// cosine similarity is defined as 0 and not differentiable.
GlobalModelSet jittered(const Topology& topo, std::uint64_t seed, std::mt19937_64& rng) {
  GlobalModelSet g = GlobalModelSet::create(topo, seed);
  for (Encoder& e : g.encoders) {
    Tensor flat = flatten_params(e);
    add_inplace(flat, oracle::random_vector(rng, flat.size(), 0.1));
    copy_params(unflatten_params(flat, e), e);
  }
  return g;
}

}  // namespace

TEST_CASE("binary cross-entropy examples") {
  const LossResult half = bce_multilabel(Tensor::matrix({{0.5}}), Tensor::matrix({{1}}));
  CHECK(half.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const LossResult perfect = bce_multilabel(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{1, 0}, {0, 1}}));
  CHECK(perfect.loss < 1e-10);
  CHECK_THROWS_AS(bce_multilabel(Tensor({2, 2}), Tensor({2, 3})), DimensionError);
}

TEST_CASE("categorical cross-entropy examples") {
  const std::vector<std::size_t> cls{2};
  CHECK(ce_singlelabel(Tensor({1, 4}, 0.25), cls).loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(ce_singlelabel(Tensor::matrix({{0, 0, 1, 0}}), cls).loss == 0.0);
  const std::vector<std::size_t> bad{4};
  CHECK_THROWS_AS(ce_singlelabel(Tensor({1, 4}, 0.25), bad), DimensionError);
}

TEST_CASE("classification gradients match finite differences through the output activation") {
  std::mt19937_64 rng(3);
  for (int point = 0; point < 10; ++point) {
    const Tensor logits = oracle::random_matrix(rng, 4, 3);
    const Tensor y = random_targets(rng, 4, 3);
    const LossResult r = bce_multilabel(activation_forward(logits, Activation::kSigmoid), y);
    auto f = [&](const Tensor& z) { return bce_multilabel(activation_forward(z, Activation::kSigmoid), y).loss; };
    CHECK(oracle::max_rel_err(r.grad_logits, oracle::central_diff(f, logits)) < 1e-6);

    std::vector<std::size_t> cls(4);
    for (auto& c : cls) c = static_cast<std::size_t>(uniform_index(rng, 3));
    const LossResult c = ce_singlelabel(activation_forward(logits, Activation::kSoftmaxRows), cls);
    auto g = [&](const Tensor& z) { return ce_singlelabel(activation_forward(z, Activation::kSoftmaxRows), cls).loss; };
    CHECK(oracle::max_rel_err(c.grad_logits, oracle::central_diff(g, logits)) < 1e-6);

    const LossResult d = classification_loss(activation_forward(logits, Activation::kSoftmaxRows),
                                             one_hot(cls, 3), TaskKind::kSingleLabel);
    CHECK(d.loss == c.loss);
  }
}

TEST_CASE("cosine examples") {
  CHECK(cosine(Tensor::vector({1, 0}).values(), Tensor::vector({0, 1}).values()) == 0.0);
  const Tensor v = Tensor::vector({0.3, -2, 5});
  CHECK(cosine(v.values(), v.values()) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(Tensor::vector({1, 0}).values(), Tensor::vector({-2, 0}).values()) == -1.0);
  CHECK(cosine(Tensor::vector({0, 0}).values(), Tensor::vector({1, 0}).values()) == 0.0);
}

TEST_CASE("nt-xent examples") {
  LossConfig cfg;
  cfg.tau = 1.0;
  const Tensor same = Tensor::matrix({{0.6, 0.8}, {0.6, 0.8}});
  CHECK(std::abs(ntxent(same, same, cfg).loss) < 1e-15);

  const Tensor eye = Tensor::identity(2);
  CHECK(ntxent(eye, eye, cfg).loss == doctest::Approx(-2.0).epsilon(1e-14));
  cfg.variant = NtxentVariant::kStandard;
  CHECK(std::abs(ntxent(eye, eye, cfg).loss - 0.626524) < 1e-6);
  CHECK(std::abs(ntxent(eye, eye, cfg).loss - 2.0 * std::log1p(std::exp(-1.0))) < 1e-14);

  CHECK_THROWS_AS(ntxent(Tensor::matrix({{1, 0}}), Tensor::matrix({{1, 0}}), cfg), BatchSizeError);
  CHECK_THROWS_AS(parse_ntxent_variant("simclr"), ConfigError);
}

TEST_CASE("nt-xent ignores positive rescaling of rows") {
  std::mt19937_64 rng(5);
  for (NtxentVariant variant : {NtxentVariant::kPaperLiteral, NtxentVariant::kStandard}) {
    LossConfig cfg;
    cfg.variant = variant;
    const Tensor a = oracle::random_matrix(rng, 5, 4);
    const Tensor b = oracle::random_matrix(rng, 5, 4);
    const double base = ntxent(a, b, cfg).loss;
    for (double c : {0.5, 3.0}) {
      Tensor sa = a, sb = b;
      for (double& v : sa.row(1)) v *= c;
      for (double& v : sb.row(3)) v *= c;
      CHECK(std::abs(ntxent(sa, sb, cfg).loss - base) < 1e-9);
      scale_inplace(sa, c);
      CHECK(std::abs(ntxent(sa, b, cfg).loss - base) < 1e-9);
    }
  }
}

TEST_CASE("nt-xent decreases as a positive pair aligns") {
  // row 0's positive rotates toward f_local[0] in a plane orthogonal to every
  // other row, so all negatives stay fixed
  const Tensor local = Tensor::matrix({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}});
  for (NtxentVariant variant : {NtxentVariant::kPaperLiteral, NtxentVariant::kStandard}) {
    LossConfig cfg;
    cfg.variant = variant;
    double previous = 1e300;
    for (double angle : {2.5, 2.0, 1.5, 1.0, 0.5, 0.0}) {
      Tensor global = local;
      global.at(0, 0) = std::cos(angle);
      global.at(0, 3) = std::sin(angle);
      const double loss = ntxent(local, global, cfg).loss;
      CHECK(loss < previous);
      previous = loss;
    }
  }
}

TEST_CASE("nt-xent gradients match finite differences") {
  std::mt19937_64 rng(7);
  for (NtxentVariant variant : {NtxentVariant::kPaperLiteral, NtxentVariant::kStandard}) {
    LossConfig cfg;
    cfg.variant = variant;
    for (int point = 0; point < 10; ++point) {
      const Tensor a = oracle::random_matrix(rng, 4, 3);
      const Tensor b = oracle::random_matrix(rng, 4, 3);
      const LossResult r = ntxent(a, b, cfg);
      auto fa = [&](const Tensor& t) { return ntxent(t, b, cfg).loss; };
      CHECK(oracle::max_rel_err(r.grad_logits, oracle::central_diff(fa, a)) < 1e-5);

      const NtxentResult full = ntxent_with_global_grad(a, b, cfg);
      CHECK(full.loss == r.loss);
      CHECK(full.grad_local == r.grad_logits);
      auto fb = [&](const Tensor& t) { return ntxent(a, t, cfg).loss; };
      CHECK(oracle::max_rel_err(full.grad_global, oracle::central_diff(fb, b)) < 1e-5);
    }
  }
}

TEST_CASE("local objective without MIM is exactly the classification loss") {
  const GlobalModelSet g = GlobalModelSet::create(small_topology(), 1);
  std::mt19937_64 rng(11);
  const Tensor x = oracle::random_matrix(rng, 5, 3);
  const Tensor y = random_targets(rng, 5, 2);
  LossConfig cfg;
  cfg.lambda_mim = 0.0;
  const LocalObjectiveResult r = local_objective(x, y, g.encoders[0], 0, g.head, g, cfg);

  const Tensor f = encode(g.encoders[0], x, Mode::kTrain);
  const Prediction p = head_forward(g.head, fuse(f, 0, 2));
  const LossResult ce = classification_loss(p.probabilities, y, TaskKind::kMultiLabel);
  CHECK(r.loss == ce.loss);
  CHECK(r.ce == ce.loss);
  CHECK(r.ntx == 0.0);

  // head gradient wrt the zero-padded slot's inputs only sees the present slot
  const Tensor gw = r.grad_head.layer.weight;
  for (std::size_t i = 3; i < 6; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(gw.at(i, j) == 0.0);
}

TEST_CASE("local objective with one other modality uses a single nt-xent term") {
  const GlobalModelSet g = GlobalModelSet::create(small_topology(), 2);
  std::mt19937_64 rng(13);
  const Tensor x = oracle::random_matrix(rng, 6, 4);
  const Tensor y = random_targets(rng, 6, 2);
  LossConfig cfg;
  cfg.lambda_mim = 0.7;
  const LocalObjectiveResult r = local_objective(x, y, g.encoders[1], 1, g.head, g, cfg);
  const Tensor f_local = encode(g.encoders[1], x, Mode::kTrain);
  const Tensor f_global = cross_encode(g.encoders[1], g.encoders[0], x, Mode::kTrain);
  const double ntx = ntxent(f_local, f_global, cfg).loss / 6.0;
  CHECK(r.ntx == doctest::Approx(ntx).epsilon(1e-14));
  CHECK(r.loss == doctest::Approx(r.ce + 0.7 * ntx).epsilon(1e-14));
  CHECK_THROWS_AS(local_objective(slice_rows(x, 0, 1), slice_rows(y, 0, 1), g.encoders[1], 1, g.head, g, cfg),
                  BatchSizeError);
}

TEST_CASE("local objective gradient matches finite differences") {
  std::mt19937_64 rng(17);
  for (TaskKind task : {TaskKind::kMultiLabel, TaskKind::kSingleLabel}) {
    Topology topo = small_topology();
    topo.task = task;
    topo.num_labels = 3;
    const GlobalModelSet g = jittered(topo, 3, rng);
    for (NtxentVariant variant : {NtxentVariant::kPaperLiteral, NtxentVariant::kStandard}) {
      LossConfig cfg;
      cfg.variant = variant;
      for (int point = 0; point < 5; ++point) {
        const std::size_t slot = point % 2;
        const Encoder& enc = g.encoders[slot];
        const Tensor x = oracle::random_matrix(rng, 6, topo.input_dims[slot]);
        Tensor y = random_targets(rng, 6, 3);
        if (task == TaskKind::kSingleLabel) {
          std::vector<std::size_t> cls(6);
          for (auto& c : cls) c = static_cast<std::size_t>(uniform_index(rng, 3));
          y = one_hot(cls, 3);
        }
        const LocalObjectiveResult probe = local_objective(x, y, enc, slot, g.head, g, cfg);
        const ObjectiveStats stats = probe.stats;
        const LocalObjectiveResult r = local_objective(x, y, enc, slot, g.head, g, cfg, &stats);
        CHECK(r.loss == probe.loss);
        auto f = [&](const Tensor& t) {
          Encoder e = enc;
          TaskHead h = g.head;
          unflatten_params(t, e, h);
          return local_objective(x, y, e, slot, h, g, cfg, &stats).loss;
        };
        const Tensor theta = flatten_params(enc, g.head);
        const Tensor analytic = flatten_params(r.grad_encoder, r.grad_head);
        // small batches give eps-amplified whitening and sharp curvature, so a
        // smaller step keeps truncation error out of the comparison
        CHECK(oracle::max_rel_err(analytic, oracle::central_diff(f, theta, 1e-6)) < 1e-5);
      }
    }
  }
}

TEST_CASE("loss configuration validation") {
  LossConfig cfg;
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.tau = 0.5;
  cfg.lambda_mim = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
