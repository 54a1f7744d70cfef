#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "softpos/dataset.hpp"
#include "softpos/eval.hpp"
#include "softpos/rng.hpp"

namespace softpos {

/// Label-corruption oracle with a controllable accuracy.
///
/// Each sample keeps its true label as pseudo label with probability `rho`;
/// otherwise it receives a uniformly chosen different class. Original labels
/// are untouched.
inline Dataset corrupt_labels(const Dataset& ds, double rho, std::uint64_t seed) {
  if (!(rho > 0.0 && rho <= 1.0)) throw InvalidArgument("target accuracy must lie in (0, 1]");
  if (ds.num_classes() < 2) throw InvalidArgument("corruption needs at least two classes");
  Rng rng(seed, {0x636f7272ULL});
  std::vector<Label> pseudo(ds.size());
  const auto other_classes = static_cast<std::uint64_t>(ds.num_classes() - 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Label truth = ds[i].label;
    if (rng.bernoulli(rho)) {
      pseudo[i] = truth;
    } else {
      auto c = static_cast<Label>(rng.below(other_classes));
      if (c >= truth) ++c;
      pseudo[i] = c;
    }
  }
  return ds.with_pseudo_labels(pseudo);
}

// Fraction of samples whose pseudo label equals the ground truth.
inline double pseudo_label_agreement(const Dataset& ds) {
  ds.require_labels(LabelSource::Pseudo);
  if (ds.empty()) return 0.0;
  std::size_t hits = 0;
  for (const Sample& s : ds.samples()) hits += *s.pseudo_label == s.label;
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

struct ProxyLabelResult {
  Dataset labeled;
  double agreement = 0.0;  // against the target's ground-truth labels
};

struct ProxyConfig {
  std::vector<std::size_t> hidden = {64};
  std::size_t embed_dim = 32;
  EvalConfig train;
};

/// Stand-in for an off-the-shelf image classifier: an MLP on modality B
/// trained on `labeled_subset` and applied to every sample of `target`.
/// The proxy's label space is the subset's; it must fit in the target's.
inline ProxyLabelResult train_proxy_classifier(const Dataset& labeled_subset, const Dataset& target,
                                               const ProxyConfig& cfg = {}) {
  if (labeled_subset.empty()) throw InvalidArgument("proxy classifier needs labeled samples");
  if (labeled_subset.dim_b() != target.dim_b())
    throw DimensionMismatch("proxy training features have dim " + std::to_string(labeled_subset.dim_b()) +
                            ", target has " + std::to_string(target.dim_b()));
  if (labeled_subset.num_classes() > target.num_classes())
    throw InvalidArgument("proxy label space is larger than the target's");
  std::vector<std::size_t> dims{labeled_subset.dim_b()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.embed_dim);
  const auto encoder = Encoder::init(dims, derive_seed(cfg.train.seed, {0x70726f78}));
  const auto probe = train_probe(encoder, labeled_subset, nullptr, cfg.train, true, Modality::B);

  const auto ids = detail::all_ids(target);
  const auto logits = probe.classifier.logits(probe.encoder.embed(gather<TrainScalar>(target, ids, Modality::B)));
  std::vector<Label> pseudo(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    Eigen::Index best = 0;
    logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    pseudo[i] = static_cast<Label>(best);
  }
  ProxyLabelResult out{target.with_pseudo_labels(pseudo)};
  out.agreement = target.empty() ? 0.0 : pseudo_label_agreement(out.labeled);
  return out;
}

}  // namespace softpos
