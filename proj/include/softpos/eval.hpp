#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "softpos/dataset.hpp"
#include "softpos/encoder.hpp"
#include "softpos/error.hpp"
#include "softpos/io.hpp"
#include "softpos/optim.hpp"
#include "softpos/trainer.hpp"

namespace softpos {

enum class EvalMode { LinearEval, Finetune, Supervised };

inline std::string_view to_string(EvalMode m) noexcept {
  switch (m) {
    case EvalMode::LinearEval: return "linear";
    case EvalMode::Finetune: return "finetune";
    case EvalMode::Supervised: return "supervised";
  }
  return "?";
}

struct EvalConfig {
  EvalMode mode = EvalMode::LinearEval;
  std::size_t epochs = 100;
  double lr = 1e-2;
  // Encoder step size during fine-tuning; negative means "same as lr".
  double encoder_lr = -1.0;
  double weight_decay = 0.0;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double train_fraction = 1.0;

  double effective_encoder_lr() const noexcept { return encoder_lr < 0 ? lr : encoder_lr; }

  void validate() const {
    if (!(lr >= 0)) throw ConfigError("eval lr must be >= 0");
    if (!(weight_decay >= 0)) throw ConfigError("eval weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("eval batch_size must be >= 1");
    if (!(train_fraction > 0 && train_fraction <= 1)) throw ConfigError("train_fraction must lie in (0, 1]");
  }

  nlohmann::ordered_json to_json() const {
    return {{"mode", to_string(mode)},       {"epochs", epochs},
            {"lr", lr},                      {"encoder_lr", effective_encoder_lr()},
            {"weight_decay", weight_decay},  {"batch_size", batch_size},
            {"seed", seed},                  {"train_fraction", train_fraction}};
  }

  std::uint64_t hash() const { return io::fnv1a64(to_json().dump()); }
};

struct EvalReport {
  std::string strategy;
  EvalMode mode = EvalMode::LinearEval;
  double accuracy = 0.0;  // test accuracy after the final epoch
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> per_class_count;
  std::optional<double> final_val_accuracy;
  std::optional<double> best_val_accuracy;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["strategy"] = r.strategy;
  j["mode"] = to_string(r.mode);
  j["accuracy"] = r.accuracy;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["per_class_count"] = r.per_class_count;
  j["final_val_accuracy"] = r.final_val_accuracy ? nlohmann::ordered_json(*r.final_val_accuracy) : nlohmann::ordered_json();
  j["best_val_accuracy"] = r.best_val_accuracy ? nlohmann::ordered_json(*r.best_val_accuracy) : nlohmann::ordered_json();
  j["seed"] = r.seed;
  j["config_hash"] = io::hex64(r.config_hash);
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.strategy = j.at("strategy").get<std::string>();
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "linear") r.mode = EvalMode::LinearEval;
  else if (mode == "finetune") r.mode = EvalMode::Finetune;
  else if (mode == "supervised") r.mode = EvalMode::Supervised;
  else throw ManifestMalformed("unknown eval mode '" + mode + "'");
  r.accuracy = j.at("accuracy").get<double>();
  r.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
  r.per_class_count = j.at("per_class_count").get<std::vector<std::size_t>>();
  if (!j.at("final_val_accuracy").is_null()) r.final_val_accuracy = j["final_val_accuracy"].get<double>();
  if (!j.at("best_val_accuracy").is_null()) r.best_val_accuracy = j["best_val_accuracy"].get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
  return r;
}

/// Affine softmax classifier over embeddings: logits = E W^T + b.
struct LinearClassifier {
  ParamList<TrainScalar> params;  // [W (classes x dim), b (classes x 1)]

  static LinearClassifier init(std::size_t dim, std::size_t classes, std::uint64_t seed) {
    Rng rng(seed, {0x636c66ULL});
    const double limit = std::sqrt(6.0 / static_cast<double>(dim + classes));
    Matrix<TrainScalar> w(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<TrainScalar>(rng.uniform(-limit, limit));
    return {{std::move(w), Matrix<TrainScalar>::Zero(static_cast<Eigen::Index>(classes), 1)}};
  }

  Matrix<TrainScalar> logits(const Matrix<TrainScalar>& e) const {
    Matrix<TrainScalar> z = e * params[0].transpose();
    z.rowwise() += params[1].col(0).transpose();
    return z;
  }
};

struct Accuracy {
  double overall = 0.0;
  std::vector<double> per_class;
  std::vector<std::size_t> counts;
};

namespace detail {

inline std::vector<std::size_t> all_ids(const Dataset& ds) {
  std::vector<std::size_t> ids(ds.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

inline Accuracy measure_accuracy(const Encoder& enc, const LinearClassifier& clf, const Dataset& ds,
                                 Modality modality) {
  Accuracy acc;
  acc.per_class.assign(ds.num_classes(), 0.0);
  acc.counts.assign(ds.num_classes(), 0);
  if (ds.empty()) return acc;
  const auto ids = all_ids(ds);
  const auto logits = clf.logits(enc.embed(gather<TrainScalar>(ds, ids, modality)));
  std::size_t correct = 0;
  std::vector<std::size_t> hits(ds.num_classes(), 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Eigen::Index best = 0;
    logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    const Label truth = ds[i].label;
    ++acc.counts[truth];
    if (static_cast<Label>(best) == truth) {
      ++correct;
      ++hits[truth];
    }
  }
  acc.overall = static_cast<double>(correct) / static_cast<double>(ds.size());
  for (std::size_t c = 0; c < hits.size(); ++c)
    acc.per_class[c] = acc.counts[c] ? static_cast<double>(hits[c]) / static_cast<double>(acc.counts[c]) : 0.0;
  return acc;
}

}  // namespace detail

struct ProbeResult {
  Encoder encoder;
  LinearClassifier classifier;
  std::optional<double> final_val_accuracy;
  std::optional<double> best_val_accuracy;
};

/// Trains a softmax classifier on top of `encoder` with cross-entropy.
///
/// With `update_encoder` false the encoder is frozen (linear evaluation);
/// otherwise its parameters are updated with step size `encoder_lr`. Both
/// paths share the same minibatch order and arithmetic.
inline ProbeResult train_probe(Encoder encoder, const Dataset& train, const Dataset* val,
                               const EvalConfig& cfg, bool update_encoder, Modality modality) {
  cfg.validate();
  const std::size_t input = modality == Modality::A ? train.dim_a() : train.dim_b();
  if (encoder.input_dim() != input)
    throw DimensionMismatch("encoder input dim " + std::to_string(encoder.input_dim()) +
                            " != feature dim " + std::to_string(input));
  if (train.empty()) throw InvalidArgument("empty downstream training set");
  const Dataset data = cfg.train_fraction < 1.0
                           ? stratified_subsample(train, cfg.train_fraction, derive_seed(cfg.seed, {0x66726163}))
                           : train;

  const std::size_t embed_dim = encoder.output_dim();
  ProbeResult out{std::move(encoder),
                  LinearClassifier::init(embed_dim, data.num_classes(), derive_seed(cfg.seed, {0x636c66})),
                  std::nullopt, std::nullopt};
  auto clf_state = AdamState<TrainScalar>::for_params(out.classifier.params);
  auto enc_state = AdamState<TrainScalar>::for_params(out.encoder.params());
  const AdamHyper clf_hyper{.lr = cfg.lr, .weight_decay = cfg.weight_decay};
  const AdamHyper enc_hyper{.lr = cfg.effective_encoder_lr(), .weight_decay = cfg.weight_decay};

  std::vector<std::size_t> order = detail::all_ids(data);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.seed, {0x65706f6368, epoch});
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> ids(order.data() + start, n);
      const auto tape = out.encoder.forward(gather<TrainScalar>(data, ids, modality));
      Matrix<TrainScalar> probs = out.classifier.logits(tape.output);
      for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        auto row = probs.row(r).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
        probs(r, data[ids[static_cast<std::size_t>(r)]].label) -= TrainScalar(1);
      }
      probs /= static_cast<TrainScalar>(n);  // d(mean cross-entropy)/d(logits)
      ParamList<TrainScalar> clf_grads{probs.transpose() * tape.output, probs.colwise().sum().transpose()};
      if (update_encoder) {
        const Matrix<TrainScalar> grad_embed = probs * out.classifier.params[0];
        const auto enc_grads = out.encoder.backward(tape, grad_embed);
        adam_step(out.encoder.params(), enc_grads.params, enc_state, enc_hyper);
      }
      adam_step(out.classifier.params, clf_grads, clf_state, clf_hyper);
    }
    if (val && !val->empty()) {
      const double a = detail::measure_accuracy(out.encoder, out.classifier, *val, modality).overall;
      out.final_val_accuracy = a;
      if (!out.best_val_accuracy || a > *out.best_val_accuracy) out.best_val_accuracy = a;
    }
  }
  return out;
}

namespace detail {

inline EvalReport make_report(const ProbeResult& probe, const Dataset& test, const EvalConfig& cfg,
                              EvalMode mode, Modality modality) {
  const Accuracy acc = measure_accuracy(probe.encoder, probe.classifier, test, modality);
  EvalReport r;
  r.mode = mode;
  r.accuracy = acc.overall;
  r.per_class_accuracy = acc.per_class;
  r.per_class_count = acc.counts;
  r.final_val_accuracy = probe.final_val_accuracy;
  r.best_val_accuracy = probe.best_val_accuracy;
  r.seed = cfg.seed;
  r.config_hash = cfg.hash();
  return r;
}

}  // namespace detail

// Only the classifier is trained; `encoder` is taken by const reference and
// never modified.
inline EvalReport linear_eval(const Encoder& encoder, const Dataset& train, const Dataset& test,
                              const EvalConfig& cfg, const Dataset* val = nullptr) {
  const auto probe = train_probe(encoder, train, val, cfg, false, Modality::A);
  return detail::make_report(probe, test, cfg, EvalMode::LinearEval, Modality::A);
}

inline EvalReport finetune_eval(const Encoder& encoder, const Dataset& train, const Dataset& test,
                                const EvalConfig& cfg, const Dataset* val = nullptr) {
  const auto probe = train_probe(encoder, train, val, cfg, true, Modality::A);
  return detail::make_report(probe, test, cfg, EvalMode::Finetune, Modality::A);
}

// Same architecture as the pretrained modality-A encoder, trained from scratch.
inline EvalReport supervised_baseline(const Dataset& train, const Dataset& test, const EvalConfig& cfg,
                                      const std::vector<std::size_t>& hidden, std::size_t embed_dim,
                                      const Dataset* val = nullptr) {
  std::vector<std::size_t> dims{train.dim_a()};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(embed_dim);
  const auto encoder = Encoder::init(dims, derive_seed(cfg.seed, {0x737570}));
  const auto probe = train_probe(encoder, train, val, cfg, true, Modality::A);
  EvalReport r = detail::make_report(probe, test, cfg, EvalMode::Supervised, Modality::A);
  r.strategy = "Supervised";
  return r;
}

}  // namespace softpos
