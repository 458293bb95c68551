#include "mmfl/models.hpp"

#include <algorithm>
#include <string>

#include "mmfl/binary_io.hpp"
#include "mmfl/error.hpp"

namespace mmfl {

const char* task_kind_name(TaskKind kind) {
  return kind == TaskKind::kMultiLabel ? "multi-label" : "single-label";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "multi-label") return TaskKind::kMultiLabel;
  if (name == "single-label") return TaskKind::kSingleLabel;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

void Topology::validate() const {
  if (input_dims.empty()) throw ConfigError("topology: at least one modality required");
  for (std::size_t v : input_dims)
    if (v == 0) throw ConfigError("topology: modality input dims must be positive");
  if (hidden_dim == 0 || feature_dim == 0 || num_labels == 0) {
    throw ConfigError("topology: hidden_dim, feature_dim and num_labels must be positive");
  }
  if (!(whitening_eps > 0.0)) throw ConfigError("topology: whitening_eps must be positive");
  if (!(whitening_momentum > 0.0 && whitening_momentum <= 1.0)) {
    throw ConfigError("topology: whitening_momentum must lie in (0, 1]");
  }
}

bool Encoder::has_whitening() const {
  return std::any_of(body.begin(), body.end(), [](const BodyLayer& l) { return l.whitening.has_value(); });
}

Encoder Encoder::create(const Topology& topology, std::size_t modality_id, std::mt19937_64& rng) {
  topology.validate();
  if (modality_id >= topology.modalities()) {
    throw ConfigError("encoder: modality id " + std::to_string(modality_id) + " out of range");
  }
  const std::size_t dh = topology.hidden_dim;
  Encoder enc;
  enc.modality_id = modality_id;
  enc.adapter = DenseLayer::glorot(topology.input_dims[modality_id], dh, rng);

  BodyLayer first;
  first.dense = DenseLayer::glorot(dh, dh, rng);
  if (topology.whitening) {
    first.whitening.emplace(dh, topology.whitening_eps, topology.whitening_momentum,
                            topology.whitening_group);
    first.whitening->reset_running_stats();
  }
  first.activation = Activation::kRelu;

  BodyLayer second;
  second.dense = DenseLayer::glorot(dh, topology.feature_dim, rng);
  second.activation = Activation::kIdentity;

  enc.body.push_back(std::move(first));
  enc.body.push_back(std::move(second));
  return enc;
}

TaskHead TaskHead::create(const Topology& topology, std::mt19937_64& rng) {
  topology.validate();
  return TaskHead{DenseLayer::glorot(topology.fused_dim(), topology.num_labels, rng), topology.task};
}

GlobalModelSet GlobalModelSet::create(const Topology& topology, std::uint64_t seed) {
  topology.validate();
  std::mt19937_64 rng(seed);
  GlobalModelSet model;
  model.topology = topology;
  for (std::size_t m = 0; m < topology.modalities(); ++m) {
    model.encoders.push_back(Encoder::create(topology, m, rng));
  }
  model.head = TaskHead::create(topology, rng);
  return model;
}

// ---------------------------------------------------------------------------

Tensor adapter_forward(const Encoder& encoder, const Tensor& x, EncoderTrace* trace) {
  if (x.rank() != 2 || x.cols() != encoder.input_dim()) {
    throw DimensionError("modality " + std::to_string(encoder.modality_id) + ": input " +
                         shape_string(x.shape()) + " but encoder expects " +
                         std::to_string(encoder.input_dim()) + " features");
  }
  Tensor pre = dense_forward(encoder.adapter, x);
  Tensor out = activation_forward(pre, Activation::kRelu);
  if (trace != nullptr) {
    trace->input = x;
    trace->adapter_pre = std::move(pre);
    trace->adapter_out = out;
  }
  return out;
}

Tensor body_forward(const Encoder& encoder, const Tensor& hidden, Mode mode,
                    std::vector<BodyLayerTrace>* trace, const FrozenStats* frozen) {
  if (hidden.rank() != 2 || hidden.cols() != encoder.hidden_dim()) {
    throw DimensionError("modality " + std::to_string(encoder.modality_id) + ": body input " +
                         shape_string(hidden.shape()) + " but body expects width " +
                         std::to_string(encoder.hidden_dim()));
  }
  if (trace != nullptr) trace->clear();
  std::size_t whitening_index = 0;
  Tensor h = hidden;
  for (const BodyLayer& layer : encoder.body) {
    BodyLayerTrace step;
    step.input = h;
    Tensor pre = dense_forward(layer.dense, h);
    if (layer.whitening) {
      const WhiteningState& ws = *layer.whitening;
      WhiteningCache cache;
      if (frozen != nullptr) {
        if (whitening_index >= frozen->size()) {
          throw StateError("frozen statistics: fewer entries than whitening layers");
        }
        cache.stats = (*frozen)[whitening_index];
      } else if (mode == Mode::kTrain) {
        if (pre.rows() < 2) {
          throw BatchSizeError("batch whitening in train mode needs at least 2 rows");
        }
        BatchMoments moments = batch_moments(pre);
        WhiteningSpectrum spectrum;
        cache.stats = stats_from_moments(moments, ws.eps, &spectrum, ws.group_size);
        cache.spectrum = std::move(spectrum);
        step.moments = std::move(moments);
      } else {
        cache.stats = running_whitening_stats(ws);
      }
      ++whitening_index;
      if (cache.spectrum) {
        cache.centered = pre;
        for (std::size_t r = 0; r < pre.rows(); ++r) {
          auto row = cache.centered.row(r);
          for (std::size_t c = 0; c < row.size(); ++c) row[c] -= cache.stats.mean[c];
        }
      }
      pre = apply_whitening(pre, cache.stats, ws.gamma, ws.beta, &cache.normalized);
      step.whitening = std::move(cache);
    }
    h = activation_forward(pre, layer.activation);
    step.pre_activation = std::move(pre);
    if (trace != nullptr) trace->push_back(std::move(step));
  }
  return h;
}

Tensor encode(const Encoder& encoder, const Tensor& x, Mode mode, EncoderTrace* trace,
              const FrozenStats* frozen) {
  EncoderTrace local;
  EncoderTrace* t = trace != nullptr ? trace : &local;
  Tensor hidden = adapter_forward(encoder, x, t);
  return body_forward(encoder, hidden, mode, &t->body, frozen);
}

Tensor encode_train(Encoder& encoder, const Tensor& x, EncoderTrace* trace) {
  EncoderTrace local;
  EncoderTrace* t = trace != nullptr ? trace : &local;
  Tensor out = encode(encoder, x, Mode::kTrain, t);
  update_running_stats(encoder, *t);
  return out;
}

void update_running_stats(Encoder& encoder, const EncoderTrace& trace) {
  for (std::size_t i = 0; i < encoder.body.size() && i < trace.body.size(); ++i) {
    if (encoder.body[i].whitening && trace.body[i].moments) {
      encoder.body[i].whitening->update_running_stats(*trace.body[i].moments);
    }
  }
}

FrozenStats trace_stats(const std::vector<BodyLayerTrace>& body) {
  FrozenStats stats;
  for (const BodyLayerTrace& step : body)
    if (step.whitening) stats.push_back(step.whitening->stats);
  return stats;
}

FrozenStats trace_stats(const EncoderTrace& trace) { return trace_stats(trace.body); }

Tensor body_backward(const Encoder& encoder, const std::vector<BodyLayerTrace>& trace,
                     const Tensor& grad_out, Encoder* grads) {
  if (trace.size() != encoder.body.size()) throw StateError("body_backward: trace does not match body");
  Tensor g = grad_out;
  for (std::size_t i = encoder.body.size(); i-- > 0;) {
    const BodyLayer& layer = encoder.body[i];
    const BodyLayerTrace& step = trace[i];
    g = activation_backward(step.pre_activation, g, layer.activation);
    if (layer.whitening) {
      if (!step.whitening) throw StateError("body_backward: missing whitening cache");
      WhiteningGrads wg = step.whitening->spectrum
                              ? whitening_backward_batch(*step.whitening, layer.whitening->gamma, g)
                              : whitening_backward(*step.whitening, layer.whitening->gamma, g);
      if (grads != nullptr) {
        add_inplace(grads->body[i].whitening->gamma, wg.grad_gamma);
        add_inplace(grads->body[i].whitening->beta, wg.grad_beta);
      }
      g = std::move(wg.grad_x);
    }
    DenseGrads dg = dense_backward(layer.dense, step.input, g);
    if (grads != nullptr) {
      add_inplace(grads->body[i].dense.weight, dg.grad_weight);
      add_inplace(grads->body[i].dense.bias, dg.grad_bias);
    }
    g = std::move(dg.grad_x);
  }
  return g;
}

void adapter_backward(const Encoder& encoder, const EncoderTrace& trace,
                      const Tensor& grad_adapter_out, Encoder* grads) {
  Tensor g = activation_backward(trace.adapter_pre, grad_adapter_out, Activation::kRelu);
  DenseGrads dg = dense_backward(encoder.adapter, trace.input, g);
  if (grads != nullptr) {
    add_inplace(grads->adapter.weight, dg.grad_weight);
    add_inplace(grads->adapter.bias, dg.grad_bias);
  }
}

void encoder_backward(const Encoder& encoder, const EncoderTrace& trace, const Tensor& grad_out,
                      Encoder& grads) {
  Tensor g = body_backward(encoder, trace.body, grad_out, &grads);
  adapter_backward(encoder, trace, g, &grads);
}

Tensor cross_encode(const Encoder& local, const Encoder& global_other, const Tensor& x, Mode mode,
                    CrossTrace* trace, const FrozenStats* frozen) {
  if (local.hidden_dim() != global_other.hidden_dim()) {
    throw DimensionError("cross_encode: local adapter width " + std::to_string(local.hidden_dim()) +
                         " does not match body of modality " +
                         std::to_string(global_other.modality_id) + " (width " +
                         std::to_string(global_other.hidden_dim()) + ")");
  }
  CrossTrace local_trace;
  CrossTrace* t = trace != nullptr ? trace : &local_trace;
  Tensor hidden = adapter_forward(local, x, &t->local);
  return body_forward(global_other, hidden, mode, &t->body, frozen);
}

Tensor cross_encode_backward_to_adapter(const Encoder& global_other, const CrossTrace& trace,
                                        const Tensor& grad_out) {
  return body_backward(global_other, trace.body, grad_out, nullptr);
}

void cross_encode_backward(const Encoder& local, const Encoder& global_other,
                           const CrossTrace& trace, const Tensor& grad_out, Encoder& local_grads) {
  Tensor g = cross_encode_backward_to_adapter(global_other, trace, grad_out);
  adapter_backward(local, trace.local, g, &local_grads);
}

// ---------------------------------------------------------------------------

Tensor fuse(const Tensor& features, std::size_t slot, std::size_t modalities) {
  if (slot >= modalities) {
    throw DimensionError("fuse: slot " + std::to_string(slot) + " out of range for " +
                         std::to_string(modalities) + " modalities");
  }
  if (features.rank() != 2) throw DimensionError("fuse: features must be rank 2");
  const std::size_t d = features.cols();
  Tensor out({features.rows(), modalities * d});
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto src = features.row(r);
    std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(slot * d));
  }
  return out;
}

Tensor fuse_full(std::span<const std::optional<Tensor>> features_by_modality,
                 std::size_t modalities, std::size_t feature_dim) {
  if (features_by_modality.size() != modalities) {
    throw DimensionError("fuse_full: expected " + std::to_string(modalities) + " modality slots");
  }
  std::optional<std::size_t> rows;
  for (const auto& f : features_by_modality) {
    if (!f) continue;
    if (f->rank() != 2 || f->cols() != feature_dim) {
      throw DimensionError("fuse_full: feature block " + shape_string(f->shape()) +
                           " vs feature dim " + std::to_string(feature_dim));
    }
    if (rows && *rows != f->rows()) throw DimensionError("fuse_full: modalities disagree on row count");
    rows = f->rows();
  }
  if (!rows) throw ValidationError("fuse_full: all modalities absent");
  Tensor out({*rows, modalities * feature_dim});
  for (std::size_t m = 0; m < modalities; ++m) {
    const auto& f = features_by_modality[m];
    if (!f) continue;
    for (std::size_t r = 0; r < *rows; ++r) {
      const auto src = f->row(r);
      std::copy(src.begin(), src.end(),
                out.row(r).begin() + static_cast<std::ptrdiff_t>(m * feature_dim));
    }
  }
  return out;
}

Tensor head_logits(const TaskHead& head, const Tensor& fused) {
  if (fused.rank() != 2 || fused.cols() != head.layer.in_dim()) {
    throw DimensionError("head: fused input " + shape_string(fused.shape()) + " but head expects " +
                         std::to_string(head.layer.in_dim()) + " columns");
  }
  return dense_forward(head.layer, fused);
}

Prediction probabilities_from_logits(const Tensor& logits, TaskKind task) {
  return Prediction{activation_forward(
      logits, task == TaskKind::kMultiLabel ? Activation::kSigmoid : Activation::kSoftmaxRows)};
}

Prediction head_forward(const TaskHead& head, const Tensor& fused) {
  return probabilities_from_logits(head_logits(head, fused), head.task);
}

// ---------------------------------------------------------------------------

namespace {

template <typename E, typename Fn>
void visit_encoder(E& encoder, Fn&& fn) {
  fn(encoder.adapter.weight);
  fn(encoder.adapter.bias);
  for (auto& layer : encoder.body) {
    fn(layer.dense.weight);
    fn(layer.dense.bias);
    if (layer.whitening) {
      fn(layer.whitening->gamma);
      fn(layer.whitening->beta);
    }
  }
}

template <typename T>
Tensor flatten_any(const T& part) {
  std::vector<double> flat;
  for_each_param(part, [&](const Tensor& t) { flat.insert(flat.end(), t.storage().begin(), t.storage().end()); });
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

template <typename T>
void unflatten_into(const Tensor& flat, T& part, std::size_t& offset) {
  for_each_param(part, [&](Tensor& t) {
    if (offset + t.size() > flat.size()) throw DimensionError("unflatten_params: flat vector too short");
    std::copy(flat.storage().begin() + static_cast<std::ptrdiff_t>(offset),
              flat.storage().begin() + static_cast<std::ptrdiff_t>(offset + t.size()),
              t.storage().begin());
    offset += t.size();
  });
}

}  // namespace

void for_each_param(Encoder& encoder, const std::function<void(Tensor&)>& fn) { visit_encoder(encoder, fn); }
void for_each_param(const Encoder& encoder, const std::function<void(const Tensor&)>& fn) {
  visit_encoder(encoder, fn);
}
void for_each_param(TaskHead& head, const std::function<void(Tensor&)>& fn) {
  fn(head.layer.weight);
  fn(head.layer.bias);
}
void for_each_param(const TaskHead& head, const std::function<void(const Tensor&)>& fn) {
  fn(head.layer.weight);
  fn(head.layer.bias);
}

std::size_t param_count(const Encoder& encoder) {
  std::size_t n = 0;
  for_each_param(encoder, [&](const Tensor& t) { n += t.size(); });
  return n;
}

std::size_t param_count(const TaskHead& head) { return head.layer.weight.size() + head.layer.bias.size(); }

Tensor flatten_params(const Encoder& encoder) { return flatten_any(encoder); }
Tensor flatten_params(const TaskHead& head) { return flatten_any(head); }

Encoder unflatten_params(const Tensor& flat, const Encoder& templ) {
  if (flat.size() != param_count(templ)) {
    throw DimensionError("unflatten_params: encoder expects " + std::to_string(param_count(templ)) +
                         " values, got " + std::to_string(flat.size()));
  }
  Encoder out = templ;
  std::size_t offset = 0;
  unflatten_into(flat, out, offset);
  return out;
}

TaskHead unflatten_params(const Tensor& flat, const TaskHead& templ) {
  if (flat.size() != param_count(templ)) {
    throw DimensionError("unflatten_params: head expects " + std::to_string(param_count(templ)) +
                         " values, got " + std::to_string(flat.size()));
  }
  TaskHead out = templ;
  std::size_t offset = 0;
  unflatten_into(flat, out, offset);
  return out;
}

Tensor flatten_params(const Encoder& encoder, const TaskHead& head) {
  Tensor e = flatten_params(encoder);
  const Tensor h = flatten_params(head);
  std::vector<double> flat = std::move(e.storage());
  flat.insert(flat.end(), h.storage().begin(), h.storage().end());
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

void unflatten_params(const Tensor& flat, Encoder& encoder, TaskHead& head) {
  if (flat.size() != param_count(encoder) + param_count(head)) {
    throw DimensionError("unflatten_params: length " + std::to_string(flat.size()) +
                         " does not match encoder + head");
  }
  std::size_t offset = 0;
  unflatten_into(flat, encoder, offset);
  unflatten_into(flat, head, offset);
}

void copy_params(const Encoder& src, Encoder& dst) {
  std::vector<const Tensor*> from;
  for_each_param(src, [&](const Tensor& t) { from.push_back(&t); });
  std::size_t i = 0;
  for_each_param(dst, [&](Tensor& t) {
    if (i >= from.size() || from[i]->shape() != t.shape()) {
      throw DimensionError("copy_params: encoder topologies differ");
    }
    t = *from[i++];
  });
  if (i != from.size()) throw DimensionError("copy_params: encoder topologies differ");
}

Encoder zeros_like(const Encoder& encoder) {
  Encoder z = encoder;
  for_each_param(z, [](Tensor& t) { std::fill(t.storage().begin(), t.storage().end(), 0.0); });
  for (auto& layer : z.body)
    if (layer.whitening) layer.whitening->cache.reset();
  return z;
}

TaskHead zeros_like(const TaskHead& head) {
  TaskHead z = head;
  for_each_param(z, [](Tensor& t) { std::fill(t.storage().begin(), t.storage().end(), 0.0); });
  return z;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const GlobalModelSet& model) {
  const Topology& topo = model.topology;
  ByteWriter w;
  w.magic("MFMM");
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(topo.modalities()));
  for (std::size_t v : topo.input_dims) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(topo.hidden_dim));
  w.u32(static_cast<std::uint32_t>(topo.feature_dim));
  w.u32(static_cast<std::uint32_t>(topo.num_labels));
  w.u8(static_cast<std::uint8_t>(topo.task));
  w.u8(topo.whitening ? 1 : 0);
  w.f64(topo.whitening_eps);
  w.f64(topo.whitening_momentum);
  w.u32(static_cast<std::uint32_t>(topo.whitening_group));
  w.u32(model.round);
  for (const Encoder& enc : model.encoders) w.f64s(flatten_params(enc).values());
  w.f64s(flatten_params(model.head).values());
  for (const Encoder& enc : model.encoders) {
    for (const BodyLayer& layer : enc.body) {
      if (!layer.whitening) continue;
      const WhiteningState& ws = *layer.whitening;
      w.u8(ws.has_running_stats() ? 1 : 0);
      w.f64s(ws.running_mean.values());
      w.f64s(ws.running_cov.values());
    }
  }
  return std::move(w.buffer());
}

GlobalModelSet decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("MFMM", "checkpoint magic MFMM");
  const std::size_t version_at = r.offset();
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  Topology topo;
  const std::size_t p_at = r.offset();
  const std::uint32_t p = r.u32("modality count");
  if (p == 0 || p > 1024) throw FormatError("implausible modality count", p_at);
  for (std::uint32_t m = 0; m < p; ++m) topo.input_dims.push_back(r.u32("input dim"));
  topo.hidden_dim = r.u32("hidden dim");
  topo.feature_dim = r.u32("feature dim");
  topo.num_labels = r.u32("label count");
  const std::size_t task_at = r.offset();
  const std::uint8_t task = r.u8("task kind");
  if (task > 1) throw FormatError("unknown task kind", task_at);
  topo.task = static_cast<TaskKind>(task);
  const std::size_t flag_at = r.offset();
  const std::uint8_t whitening = r.u8("whitening flag");
  if (whitening > 1) throw FormatError("bad whitening flag", flag_at);
  topo.whitening = whitening == 1;
  topo.whitening_eps = r.f64("whitening eps");
  topo.whitening_momentum = r.f64("whitening momentum");
  topo.whitening_group = r.u32("whitening group");
  const std::size_t round_at = r.offset();
  const std::uint32_t round = r.u32("round");
  try {
    topo.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid topology header: ") + e.what(), round_at);
  }
  // parameters alone must fit in what is left, before anything is allocated
  const long double h = topo.hidden_dim, f = topo.feature_dim, l = topo.num_labels;
  long double params = p * f * l + l;
  for (std::size_t v : topo.input_dims) params += v * h + h + h * h + h + h * f + f;
  if (params * sizeof(double) > r.remaining()) {
    throw FormatError("topology header needs more parameter bytes than the file holds", round_at);
  }

  GlobalModelSet model = GlobalModelSet::create(topo, 0);
  model.round = round;
  for (Encoder& enc : model.encoders) {
    Tensor flat({param_count(enc)});
    if (flat.size() * sizeof(double) > r.remaining()) {
      throw FormatError("truncated while reading encoder parameters", r.offset());
    }
    r.f64s(flat.values(), "encoder parameters");
    enc = unflatten_params(flat, enc);
  }
  Tensor head_flat({param_count(model.head)});
  r.f64s(head_flat.values(), "head parameters");
  model.head = unflatten_params(head_flat, model.head);
  for (Encoder& enc : model.encoders) {
    for (BodyLayer& layer : enc.body) {
      if (!layer.whitening) continue;
      WhiteningState& ws = *layer.whitening;
      const std::size_t flag_offset = r.offset();
      const std::uint8_t has = r.u8("running statistics flag");
      if (has > 1) throw FormatError("bad running statistics flag", flag_offset);
      Tensor mean({ws.dim()});
      Tensor cov({ws.dim(), ws.dim()});
      r.f64s(mean.values(), "running mean");
      r.f64s(cov.values(), "running covariance");
      if (has == 1) {
        ws.set_running_stats(std::move(mean), std::move(cov));
      } else {
        ws.clear_running_stats();
      }
    }
  }
  r.expect_end("checkpoint");
  return model;
}

void save_checkpoint(const GlobalModelSet& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(model));
}

GlobalModelSet load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace mmfl
