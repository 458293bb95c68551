#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "mmfl/nn.hpp"
#include "mmfl/tensor.hpp"

namespace mmfl {

enum class TaskKind : std::uint8_t { kMultiLabel = 0, kSingleLabel = 1 };

const char* task_kind_name(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

// Shape of every encoder and the head in one experiment.
struct Topology {
  std::vector<std::size_t> input_dims;  // V_m per modality, in modality-id order
  std::size_t hidden_dim = 64;          // d_h
  std::size_t feature_dim = 32;         // d_f
  std::size_t num_labels = 8;           // L
  TaskKind task = TaskKind::kMultiLabel;
  bool whitening = false;
  double whitening_eps = 1e-5;
  double whitening_momentum = 0.1;
  std::size_t whitening_group = 4;  // features per whitening group; 0 = all

  std::size_t modalities() const { return input_dims.size(); }
  std::size_t fused_dim() const { return modalities() * feature_dim; }
  void validate() const;

  bool operator==(const Topology&) const = default;
};

struct BodyLayer {
  DenseLayer dense;
  std::optional<WhiteningState> whitening;
  Activation activation = Activation::kRelu;

  bool operator==(const BodyLayer&) const = default;
};

// input_adapter (V_m -> d_h, relu) followed by a body shared in shape by all
// modalities: d_h -> d_h [+ whitening] -> relu -> d_h -> d_f.
struct Encoder {
  std::size_t modality_id = 0;
  DenseLayer adapter;
  std::vector<BodyLayer> body;

  static Encoder create(const Topology& topology, std::size_t modality_id, std::mt19937_64& rng);

  std::size_t input_dim() const { return adapter.in_dim(); }
  std::size_t hidden_dim() const { return adapter.out_dim(); }
  std::size_t feature_dim() const { return body.empty() ? adapter.out_dim() : body.back().dense.out_dim(); }
  bool has_whitening() const;

  bool operator==(const Encoder&) const = default;
};

struct TaskHead {
  DenseLayer layer;
  TaskKind task = TaskKind::kMultiLabel;

  static TaskHead create(const Topology& topology, std::mt19937_64& rng);

  bool operator==(const TaskHead&) const = default;
};

struct GlobalModelSet {
  Topology topology;
  std::vector<Encoder> encoders;
  TaskHead head;
  std::uint32_t round = 0;

  static GlobalModelSet create(const Topology& topology, std::uint64_t seed);

  bool operator==(const GlobalModelSet&) const = default;
};

struct Prediction {
  Tensor probabilities;  // [B x L]
};

// ---------------------------------------------------------------------------
// Forward / backward through encoders.

struct BodyLayerTrace {
  Tensor input;
  Tensor pre_activation;
  std::optional<WhiteningCache> whitening;
  std::optional<BatchMoments> moments;  // train mode only
};

struct EncoderTrace {
  Tensor input;
  Tensor adapter_pre;
  Tensor adapter_out;
  std::vector<BodyLayerTrace> body;
};

// One entry per whitening layer, in body order. When supplied, train-mode
// whitening uses these statistics instead of the batch's own.
using FrozenStats = std::vector<WhiteningStats>;

Tensor adapter_forward(const Encoder& encoder, const Tensor& x, EncoderTrace* trace = nullptr);
Tensor body_forward(const Encoder& encoder, const Tensor& hidden, Mode mode,
                    std::vector<BodyLayerTrace>* trace = nullptr,
                    const FrozenStats* frozen = nullptr);

// Read-only forward pass; running statistics are never touched here.
Tensor encode(const Encoder& encoder, const Tensor& x, Mode mode, EncoderTrace* trace = nullptr,
              const FrozenStats* frozen = nullptr);
// Train-mode forward that also folds the batch moments into running statistics.
Tensor encode_train(Encoder& encoder, const Tensor& x, EncoderTrace* trace = nullptr);
void update_running_stats(Encoder& encoder, const EncoderTrace& trace);
// Whitening statistics actually used by a traced forward pass.
FrozenStats trace_stats(const EncoderTrace& trace);
FrozenStats trace_stats(const std::vector<BodyLayerTrace>& body);

// Backward through the body; accumulates parameter gradients into `grads`
// when non-null and returns the gradient wrt the body input.
Tensor body_backward(const Encoder& encoder, const std::vector<BodyLayerTrace>& trace,
                     const Tensor& grad_out, Encoder* grads);
void adapter_backward(const Encoder& encoder, const EncoderTrace& trace,
                      const Tensor& grad_adapter_out, Encoder* grads);
void encoder_backward(const Encoder& encoder, const EncoderTrace& trace, const Tensor& grad_out,
                      Encoder& grads);

// x -> local adapter -> other-modality body. The other encoder is read-only.
struct CrossTrace {
  EncoderTrace local;  // adapter part only
  std::vector<BodyLayerTrace> body;
};

Tensor cross_encode(const Encoder& local, const Encoder& global_other, const Tensor& x, Mode mode,
                    CrossTrace* trace = nullptr, const FrozenStats* frozen = nullptr);
// Gradient reaches only the local adapter; nothing is written for global_other.
void cross_encode_backward(const Encoder& local, const Encoder& global_other,
                           const CrossTrace& trace, const Tensor& grad_out, Encoder& local_grads);
// Same as above but returns the gradient at the adapter output instead of
// accumulating, for callers that sum several paths before the adapter.
Tensor cross_encode_backward_to_adapter(const Encoder& global_other, const CrossTrace& trace,
                                        const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Fusion and the task head.

Tensor fuse(const Tensor& features, std::size_t slot, std::size_t modalities);
Tensor fuse_full(std::span<const std::optional<Tensor>> features_by_modality,
                 std::size_t modalities, std::size_t feature_dim);

Tensor head_logits(const TaskHead& head, const Tensor& fused);
Prediction probabilities_from_logits(const Tensor& logits, TaskKind task);
Prediction head_forward(const TaskHead& head, const Tensor& fused);

// ---------------------------------------------------------------------------
// Parameter vectors. Canonical order: adapter (weight, bias), then each body
// layer (weight, bias, gamma, beta); the head follows its encoders.

void for_each_param(Encoder& encoder, const std::function<void(Tensor&)>& fn);
void for_each_param(const Encoder& encoder, const std::function<void(const Tensor&)>& fn);
void for_each_param(TaskHead& head, const std::function<void(Tensor&)>& fn);
void for_each_param(const TaskHead& head, const std::function<void(const Tensor&)>& fn);

std::size_t param_count(const Encoder& encoder);
std::size_t param_count(const TaskHead& head);

Tensor flatten_params(const Encoder& encoder);
Tensor flatten_params(const TaskHead& head);
Encoder unflatten_params(const Tensor& flat, const Encoder& templ);
TaskHead unflatten_params(const Tensor& flat, const TaskHead& templ);

// Concatenation of encoder then head, the unit a client optimizes.
Tensor flatten_params(const Encoder& encoder, const TaskHead& head);
void unflatten_params(const Tensor& flat, Encoder& encoder, TaskHead& head);

// Copies parameters (not running statistics) from src into dst.
void copy_params(const Encoder& src, Encoder& dst);

Encoder zeros_like(const Encoder& encoder);
TaskHead zeros_like(const TaskHead& head);

// ---------------------------------------------------------------------------
// Checkpoint file: "MFMM", u16 version, topology header, then parameters and
// running statistics as little-endian float64.

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const GlobalModelSet& model);
GlobalModelSet decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const GlobalModelSet& model, const std::filesystem::path& path);
GlobalModelSet load_checkpoint(const std::filesystem::path& path);

}  // namespace mmfl
