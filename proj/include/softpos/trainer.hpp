#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "softpos/dataset.hpp"
#include "softpos/encoder.hpp"
#include "softpos/error.hpp"
#include "softpos/io.hpp"
#include "softpos/loss.hpp"
#include "softpos/optim.hpp"
#include "softpos/sampling.hpp"

namespace softpos {

// Pretraining runs in single precision so that checkpoints (f32 blobs) hold
// the exact optimiser state and resumed runs stay bit-identical.
using TrainScalar = float;
using Encoder = MlpEncoder<TrainScalar>;

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double temperature = 0.07;
  SamplerConfig sampler;
  std::vector<std::size_t> hidden_a = {128, 64};
  std::vector<std::size_t> hidden_b = {128, 64};
  std::size_t embed_dim = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    try {
      sampler.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }

  std::vector<std::size_t> dims_a(std::size_t input) const { return layer_dims(input, hidden_a); }
  std::vector<std::size_t> dims_b(std::size_t input) const { return layer_dims(input, hidden_b); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["epochs"] = epochs;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["temperature"] = temperature;
    j["strategy"] = to_string(sampler.strategy);
    j["mix_probability"] = sampler.mix_probability;
    j["batch_size"] = sampler.batch_size;
    j["sampler_seed"] = sampler.seed;
    j["label_source"] = to_string(sampler.label_source);
    j["hidden_a"] = hidden_a;
    j["hidden_b"] = hidden_b;
    j["embed_dim"] = embed_dim;
    j["seed"] = seed;
    return j;
  }

  std::uint64_t hash() const { return io::fnv1a64(to_json().dump()); }

  // Desk-scale defaults; `paper()` gives the large-scale profile.
  static TrainConfig desk() { return {}; }

  static TrainConfig paper() {
    TrainConfig c;
    c.epochs = 100;
    c.lr = 1e-4;
    c.weight_decay = 1e-5;
    c.sampler.batch_size = 309;
    return c;
  }

 private:
  std::vector<std::size_t> layer_dims(std::size_t input, const std::vector<std::size_t>& hidden) const {
    std::vector<std::size_t> d{input};
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(embed_dim);
    return d;
  }
};

struct Checkpoint {
  Encoder encoder_a;
  Encoder encoder_b;
  AdamState<TrainScalar> adam_a;
  AdamState<TrainScalar> adam_b;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed optimiser steps
  std::uint64_t config_hash = 0;
  std::uint64_t sampler_seed = 0;  // the sampler stream is keyed by (seed, epoch, step)
  std::vector<double> loss_history;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    auto same = [](const ParamList<TrainScalar>& x, const ParamList<TrainScalar>& y) {
      if (x.size() != y.size()) return false;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] != y[i]) return false;
      return true;
    };
    return a.encoder_a == b.encoder_a && a.encoder_b == b.encoder_b && same(a.adam_a.m, b.adam_a.m) &&
           same(a.adam_a.v, b.adam_a.v) && same(a.adam_b.m, b.adam_b.m) &&
           same(a.adam_b.v, b.adam_b.v) && a.adam_a.t == b.adam_a.t && a.adam_b.t == b.adam_b.t &&
           a.epoch == b.epoch && a.step == b.step && a.config_hash == b.config_hash &&
           a.sampler_seed == b.sampler_seed && a.loss_history == b.loss_history;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint file layout (all integers little-endian):
//   0  char[8]  magic "SPCKPT\0\0"
//   8  u32      version (1)
//  12  u32      reserved (0)
//  16  u64      payload byte count
//  24  u64      metadata byte count
//  32  u64      FNV-1a 64 over payload then metadata
//  40  payload  f32 tensors, column-major, in the order listed by metadata
//      metadata UTF-8 JSON trailer

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'C', 'K', 'P', 'T', 0, 0};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointHeaderBytes = 40;

namespace detail {

inline void append_tensors(std::vector<std::uint8_t>& payload, nlohmann::ordered_json& shapes,
                           const ParamList<TrainScalar>& tensors) {
  for (const auto& t : tensors) {
    shapes.push_back({t.rows(), t.cols()});
    for (Eigen::Index i = 0; i < t.size(); ++i) io::append_pod(payload, t.data()[i]);
  }
}

inline ParamList<TrainScalar> read_tensors(std::span<const std::uint8_t> payload, std::size_t& offset,
                                           const nlohmann::json& shapes) {
  ParamList<TrainScalar> out;
  for (const auto& s : shapes) {
    const auto rows = s.at(0).get<Eigen::Index>();
    const auto cols = s.at(1).get<Eigen::Index>();
    if (rows < 0 || cols < 0) throw ChecksumMismatch("negative tensor shape");
    const auto bytes = static_cast<std::size_t>(rows * cols) * sizeof(TrainScalar);
    if (offset + bytes > payload.size()) throw ChecksumMismatch("tensor data truncated");
    Matrix<TrainScalar> t(rows, cols);
    std::memcpy(t.data(), payload.data() + offset, bytes);
    offset += bytes;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> payload;
  nlohmann::ordered_json meta;
  meta["format"] = "softpos-checkpoint";
  meta["config_hash"] = io::hex64(ck.config_hash);
  meta["epoch"] = ck.epoch;
  meta["step"] = ck.step;
  meta["rng"] = {{"seed", ck.sampler_seed}, {"epoch", ck.epoch}, {"step", ck.step}};
  meta["dims_a"] = ck.encoder_a.dims();
  meta["dims_b"] = ck.encoder_b.dims();
  meta["adam_t"] = {ck.adam_a.t, ck.adam_b.t};
  meta["loss_history"] = ck.loss_history;
  auto groups = nlohmann::ordered_json::array();
  for (const auto* list : {&ck.encoder_a.params(), &ck.encoder_b.params(), &ck.adam_a.m, &ck.adam_a.v,
                           &ck.adam_b.m, &ck.adam_b.v}) {
    auto shapes = nlohmann::ordered_json::array();
    detail::append_tensors(payload, shapes, *list);
    groups.push_back(std::move(shapes));
  }
  meta["tensors"] = std::move(groups);
  const std::string meta_text = meta.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  io::append_pod(out, kCheckpointVersion);
  io::append_pod(out, std::uint32_t{0});
  io::append_pod(out, static_cast<std::uint64_t>(payload.size()));
  io::append_pod(out, static_cast<std::uint64_t>(meta_text.size()));
  std::uint64_t sum = io::fnv1a64(payload);
  sum = io::fnv1a64(meta_text, sum);
  io::append_pod(out, sum);
  out.insert(out.end(), payload.begin(), payload.end());
  out.insert(out.end(), meta_text.begin(), meta_text.end());
  return out;
}

inline Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                                         std::optional<std::uint64_t> expected_hash = std::nullopt) {
  if (bytes.size() < kCheckpointHeaderBytes) throw ChecksumMismatch("checkpoint header truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw ChecksumMismatch("bad checkpoint magic");
  const auto version = io::read_pod<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion)
    throw ChecksumMismatch("unsupported checkpoint version " + std::to_string(version));
  const auto payload_n = io::read_pod<std::uint64_t>(bytes, 16);
  const auto meta_n = io::read_pod<std::uint64_t>(bytes, 24);
  const auto stored = io::read_pod<std::uint64_t>(bytes, 32);
  if (bytes.size() != kCheckpointHeaderBytes + payload_n + meta_n)
    throw ChecksumMismatch("checkpoint length does not match header");
  const auto payload = bytes.subspan(kCheckpointHeaderBytes, payload_n);
  const auto meta_bytes = bytes.subspan(kCheckpointHeaderBytes + payload_n, meta_n);
  if (io::fnv1a64(meta_bytes, io::fnv1a64(payload)) != stored) throw ChecksumMismatch("checkpoint checksum");

  Checkpoint ck;
  try {
    const auto meta = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
    ck.config_hash = std::stoull(meta.at("config_hash").get<std::string>(), nullptr, 16);
    if (expected_hash && *expected_hash != ck.config_hash)
      throw ConfigHashMismatch("checkpoint config hash " + io::hex64(ck.config_hash) + " != expected " +
                               io::hex64(*expected_hash));
    ck.epoch = meta.at("epoch").get<std::size_t>();
    ck.step = meta.at("step").get<std::size_t>();
    ck.sampler_seed = meta.at("rng").at("seed").get<std::uint64_t>();
    ck.loss_history = meta.at("loss_history").get<std::vector<double>>();
    const auto& groups = meta.at("tensors");
    if (groups.size() != 6) throw ChecksumMismatch("checkpoint tensor groups");
    std::size_t offset = 0;
    auto enc_a = detail::read_tensors(payload, offset, groups[0]);
    auto enc_b = detail::read_tensors(payload, offset, groups[1]);
    ck.adam_a.m = detail::read_tensors(payload, offset, groups[2]);
    ck.adam_a.v = detail::read_tensors(payload, offset, groups[3]);
    ck.adam_b.m = detail::read_tensors(payload, offset, groups[4]);
    ck.adam_b.v = detail::read_tensors(payload, offset, groups[5]);
    if (offset != payload.size()) throw ChecksumMismatch("trailing checkpoint payload");
    ck.adam_a.t = meta.at("adam_t").at(0).get<std::uint64_t>();
    ck.adam_b.t = meta.at("adam_t").at(1).get<std::uint64_t>();
    ck.encoder_a = Encoder(meta.at("dims_a").get<std::vector<std::size_t>>(), std::move(enc_a));
    ck.encoder_b = Encoder(meta.at("dims_b").get<std::vector<std::size_t>>(), std::move(enc_b));
  } catch (const nlohmann::json::exception& e) {
    throw ChecksumMismatch(std::string("checkpoint metadata: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_bytes(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<std::uint64_t> expected_hash = std::nullopt) {
  const auto bytes = io::read_bytes(path);
  return deserialize_checkpoint(bytes, expected_hash);
}

inline std::string loss_history_csv(const std::vector<double>& history) {
  std::ostringstream out;
  out << "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t e = 0; e < history.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e + 1, history[e]);
    out << buf;
  }
  return out.str();
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  const Checkpoint* resume = nullptr;
  std::optional<std::size_t> stop_after_epoch;  // leave the run partially trained
  std::function<void(const BatchPlan&)> on_plan;
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  const Encoder& encoder_a() const noexcept { return checkpoint.encoder_a; }
  const Encoder& encoder_b() const noexcept { return checkpoint.encoder_b; }
  const std::vector<double>& loss_history() const noexcept { return checkpoint.loss_history; }
};

inline Checkpoint initial_checkpoint(const Dataset& ds, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.encoder_a = Encoder::init(cfg.dims_a(ds.dim_a()), derive_seed(cfg.seed, {0xa}));
  ck.encoder_b = Encoder::init(cfg.dims_b(ds.dim_b()), derive_seed(cfg.seed, {0xb}));
  ck.adam_a = AdamState<TrainScalar>::for_params(ck.encoder_a.params());
  ck.adam_b = AdamState<TrainScalar>::for_params(ck.encoder_b.params());
  ck.config_hash = cfg.hash();
  ck.sampler_seed = cfg.sampler.seed;
  return ck;
}

// One optimiser step on a batch plan; returns the batch loss.
inline double train_step(const Dataset& ds, const BatchPlan& plan, const TrainConfig& cfg, Checkpoint& ck) {
  std::vector<std::size_t> a_ids, v_ids;
  a_ids.reserve(plan.size());
  v_ids.reserve(plan.size());
  for (const Pair& p : plan.pairs) {
    a_ids.push_back(p.a_id);
    v_ids.push_back(p.v_id);
  }
  const auto tape_a = ck.encoder_a.forward(gather<TrainScalar>(ds, a_ids, Modality::A));
  const auto tape_b = ck.encoder_b.forward(gather<TrainScalar>(ds, v_ids, Modality::B));
  const auto tau = static_cast<TrainScalar>(cfg.temperature);
  const auto loss = infonce_loss(tape_a.output, tape_b.output, tau);
  const auto g = infonce_grad(loss.similarity, tape_a.output, tape_b.output, tau);
  const auto grads_a = ck.encoder_a.backward(tape_a, g.a);
  const auto grads_b = ck.encoder_b.backward(tape_b, g.v);
  const AdamHyper hyper{.lr = cfg.lr, .weight_decay = cfg.weight_decay};
  adam_step(ck.encoder_a.params(), grads_a.params, ck.adam_a, hyper);
  adam_step(ck.encoder_b.params(), grads_b.params, ck.adam_b, hyper);
  ++ck.step;
  return static_cast<double>(loss.loss);
}

/// Contrastive pretraining of both modality encoders.
///
/// Deterministic in (dataset, config): batch plans are keyed by
/// (sampler seed, epoch, step) and all arithmetic is sequential.
inline TrainResult pretrain(const Dataset& ds, const TrainConfig& cfg, const TrainOptions& opts = {}) {
  cfg.validate();
  Checkpoint ck;
  if (opts.resume) {
    if (opts.resume->config_hash != cfg.hash())
      throw ConfigHashMismatch("resume checkpoint was produced by a different configuration");
    ck = *opts.resume;
  } else {
    ck = initial_checkpoint(ds, cfg);
  }
  const std::size_t last = std::min(cfg.epochs, opts.stop_after_epoch.value_or(cfg.epochs));
  for (std::size_t epoch = ck.epoch; epoch < last; ++epoch) {
    std::vector<BatchPlan> plans;
    try {
      plans = plan_epoch(ds, cfg.sampler, epoch);
    } catch (const Error& e) {
      e.rethrow_with_context("epoch " + std::to_string(epoch) + ": ");
    }
    double total = 0.0;
    for (const BatchPlan& plan : plans) {
      if (opts.on_plan) opts.on_plan(plan);
      try {
        total += train_step(ds, plan, cfg, ck);
      } catch (const Error& e) {
        e.rethrow_with_context("epoch " + std::to_string(epoch) + " step " + std::to_string(plan.step) + ": ");
      }
    }
    const double mean = plans.empty() ? 0.0 : total / static_cast<double>(plans.size());
    ck.loss_history.push_back(mean);
    ck.epoch = epoch + 1;
    if (opts.on_epoch) opts.on_epoch(epoch, mean);
  }
  return {std::move(ck)};
}

}  // namespace softpos
