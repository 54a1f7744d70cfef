#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "softpos/dataset.hpp"
#include "softpos/error.hpp"
#include "softpos/rng.hpp"

namespace softpos {

enum class Strategy { Random, EasyNegative, HardNegative, SoftPositive, SoftPositiveMix, PLSoftPositive };

inline constexpr std::array<Strategy, 6> kAllStrategies = {
    Strategy::Random,       Strategy::EasyNegative,    Strategy::HardNegative,
    Strategy::SoftPositive, Strategy::SoftPositiveMix, Strategy::PLSoftPositive};

inline std::string_view to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::Random: return "Random";
    case Strategy::EasyNegative: return "EasyNegative";
    case Strategy::HardNegative: return "HardNegative";
    case Strategy::SoftPositive: return "SoftPositive";
    case Strategy::SoftPositiveMix: return "SoftPositiveMix";
    case Strategy::PLSoftPositive: return "PLSoftPositive";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view name) noexcept {
  for (Strategy s : kAllStrategies)
    if (name == to_string(s)) return s;
  return std::nullopt;
}

inline std::string_view to_string(LabelSource s) noexcept {
  return s == LabelSource::GroundTruth ? "GroundTruth" : "Pseudo";
}

struct SamplerConfig {
  Strategy strategy = Strategy::Random;
  double mix_probability = 0.5;  // SoftPositiveMix only
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  LabelSource label_source = LabelSource::GroundTruth;

  // PLSoftPositive is SoftPositive over pseudo labels.
  LabelSource effective_label_source() const noexcept {
    return strategy == Strategy::PLSoftPositive ? LabelSource::Pseudo : label_source;
  }

  void validate() const {
    if (batch_size < 2) throw InvalidArgument("batch_size must be >= 2");
    if (!(mix_probability >= 0.0 && mix_probability <= 1.0))
      throw InvalidArgument("mix_probability must lie in [0, 1]");
  }

  // "SoftPositiveMix(0.5)" for the mix strategy, the bare name otherwise.
  std::string display_name() const {
    std::string name(to_string(strategy));
    if (strategy == Strategy::SoftPositiveMix) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "(%g)", mix_probability);
      name += buf;
    }
    return name;
  }
};

// Accepts "SoftPositiveMix(0.25)" as shorthand for the mix strategy with p.
inline std::optional<std::pair<Strategy, std::optional<double>>> parse_strategy_spec(
    std::string_view text) {
  if (auto s = parse_strategy(text)) return std::pair{*s, std::optional<double>{}};
  constexpr std::string_view prefix = "SoftPositiveMix(";
  if (text.starts_with(prefix) && text.ends_with(")")) {
    const auto inner = text.substr(prefix.size(), text.size() - prefix.size() - 1);
    try {
      std::size_t used = 0;
      const double p = std::stod(std::string(inner), &used);
      if (used == inner.size() && p >= 0.0 && p <= 1.0)
        return std::pair{Strategy::SoftPositiveMix, std::optional<double>{p}};
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

struct Pair {
  std::size_t a_id = 0;
  std::size_t v_id = 0;
  friend bool operator==(const Pair&, const Pair&) = default;
};

/// One training step's pairing. Row k's positive is column k; every other
/// (a, v) combination in the plan is a negative.
struct BatchPlan {
  std::vector<Pair> pairs;
  Strategy strategy = Strategy::Random;
  std::size_t epoch = 0;
  std::size_t step = 0;

  std::size_t size() const noexcept { return pairs.size(); }
  friend bool operator==(const BatchPlan&, const BatchPlan&) = default;
};

inline nlohmann::ordered_json to_json(const BatchPlan& plan) {
  nlohmann::ordered_json j;
  j["strategy"] = to_string(plan.strategy);
  j["epoch"] = plan.epoch;
  j["step"] = plan.step;
  auto pairs = nlohmann::json::array();
  for (const Pair& p : plan.pairs) pairs.push_back({p.a_id, p.v_id});
  j["pairs"] = std::move(pairs);
  return j;
}

namespace detail {

inline constexpr int kMaxPairingAttempts = 100;

inline void require_batch_fits(const Dataset& ds, std::size_t batch) {
  if (batch == 0) throw InvalidArgument("batch size must be positive");
  if (batch > ds.size())
    throw BatchTooLarge("batch size " + std::to_string(batch) + " exceeds dataset size " +
                        std::to_string(ds.size()));
}

// First `k` entries of a uniformly random permutation of [0, n).
inline std::vector<std::size_t> draw_distinct(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(n - i)]);
  pool.resize(k);
  return pool;
}

inline std::vector<Pair> exact_pairs(std::span<const std::size_t> ids) {
  std::vector<Pair> pairs;
  pairs.reserve(ids.size());
  for (std::size_t id : ids) pairs.push_back({id, id});
  return pairs;
}

/// Replaces v-ids of the rows flagged in `soft` by a same-class partner.
///
/// Exact rows keep v = a and reserve that id. Soft rows of class l draw v
/// uniformly from class l minus the reserved ids, minus the anchor, minus ids
/// already taken in this plan. A row whose only remaining candidate would be
/// its own anchor (singleton class) falls back to the exact pair. If the
/// sequential draw hits a dead end the class's rows are redrawn, up to 100
/// attempts, before PairingInfeasible is raised.
inline std::vector<Pair> assign_soft_positives(const Dataset& ds, std::span<const std::size_t> a_ids,
                                               const std::vector<bool>& soft, Rng& rng,
                                               LabelSource source) {
  std::vector<Pair> pairs = exact_pairs(a_ids);
  std::vector<char> taken(ds.size(), 0);
  for (std::size_t k = 0; k < a_ids.size(); ++k)
    if (!soft[k]) taken[a_ids[k]] = 1;

  // Group soft rows by class in order of first appearance.
  std::vector<Label> class_order;
  std::vector<std::vector<std::size_t>> rows_of(ds.num_classes());
  for (std::size_t k = 0; k < a_ids.size(); ++k) {
    if (!soft[k]) continue;
    const Label l = ds.label_of(a_ids[k], source);
    if (rows_of[l].empty()) class_order.push_back(l);
    rows_of[l].push_back(k);
  }

  std::vector<std::size_t> candidates;
  for (Label l : class_order) {
    const auto members = ds.members(l, source);
    std::vector<std::size_t> pool;
    for (std::size_t id : members)
      if (!taken[id]) pool.push_back(id);
    auto& rows = rows_of[l];
    if (pool.size() == 1) {
      // Only the anchor itself is left: singleton fallback.
      for (std::size_t k : rows) taken[pairs[k].v_id] = 1;
      continue;
    }
    bool done = false;
    for (int attempt = 0; attempt < kMaxPairingAttempts && !done; ++attempt) {
      done = true;
      std::vector<std::size_t> chosen;
      for (std::size_t k : rows) {
        candidates.clear();
        for (std::size_t id : pool)
          if (id != a_ids[k] && std::find(chosen.begin(), chosen.end(), id) == chosen.end())
            candidates.push_back(id);
        if (candidates.empty()) {
          done = false;
          break;
        }
        chosen.push_back(candidates[rng.below(candidates.size())]);
      }
      if (done)
        for (std::size_t i = 0; i < rows.size(); ++i) {
          pairs[rows[i]].v_id = chosen[i];
          taken[chosen[i]] = 1;
        }
    }
    if (!done)
      throw PairingInfeasible("no distinct same-class partners for class " + std::to_string(l) +
                              " after " + std::to_string(kMaxPairingAttempts) + " attempts");
  }
  return pairs;
}

}  // namespace detail

inline BatchPlan sample_random(const Dataset& ds, std::size_t batch, Rng& rng) {
  detail::require_batch_fits(ds, batch);
  const auto ids = detail::draw_distinct(rng, ds.size(), batch);
  return {detail::exact_pairs(ids), Strategy::Random};
}

inline BatchPlan sample_easy_negative(const Dataset& ds, std::size_t batch, Rng& rng,
                                      LabelSource source = LabelSource::GroundTruth) {
  ds.require_labels(source);
  std::vector<Label> classes;
  for (Label c = 0; c < ds.num_classes(); ++c)
    if (!ds.members(c, source).empty()) classes.push_back(c);
  if (batch == 0) throw InvalidArgument("batch size must be positive");
  if (batch > classes.size())
    throw MoreClassesRequestedThanExist("batch size " + std::to_string(batch) + " exceeds " +
                                        std::to_string(classes.size()) + " populated classes");
  const auto picks = detail::draw_distinct(rng, classes.size(), batch);
  std::vector<std::size_t> ids;
  ids.reserve(batch);
  for (std::size_t p : picks) {
    const auto members = ds.members(classes[p], source);
    ids.push_back(members[rng.below(members.size())]);
  }
  return {detail::exact_pairs(ids), Strategy::EasyNegative};
}

inline BatchPlan sample_hard_negative(const Dataset& ds, std::size_t batch, Rng& rng,
                                      LabelSource source = LabelSource::GroundTruth) {
  ds.require_labels(source);
  if (batch == 0) throw InvalidArgument("batch size must be positive");
  std::vector<Label> eligible;
  for (Label c = 0; c < ds.num_classes(); ++c)
    if (ds.members(c, source).size() >= batch) eligible.push_back(c);
  if (eligible.empty())
    throw NoClassLargeEnough("no class has " + std::to_string(batch) + " members");
  const auto members = ds.members(eligible[rng.below(eligible.size())], source);
  const auto picks = detail::draw_distinct(rng, members.size(), batch);
  std::vector<std::size_t> ids;
  ids.reserve(batch);
  for (std::size_t p : picks) ids.push_back(members[p]);
  return {detail::exact_pairs(ids), Strategy::HardNegative};
}

inline BatchPlan sample_soft_positive(const Dataset& ds, std::size_t batch, Rng& rng,
                                      LabelSource source = LabelSource::GroundTruth) {
  ds.require_labels(source);
  detail::require_batch_fits(ds, batch);
  const auto ids = detail::draw_distinct(rng, ds.size(), batch);
  const std::vector<bool> soft(batch, true);
  return {detail::assign_soft_positives(ds, ids, soft, rng, source), Strategy::SoftPositive};
}

inline BatchPlan sample_soft_positive_mix(const Dataset& ds, std::size_t batch, double p, Rng& rng,
                                          LabelSource source = LabelSource::GroundTruth) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("mix probability must lie in [0, 1]");
  ds.require_labels(source);
  detail::require_batch_fits(ds, batch);
  const auto ids = detail::draw_distinct(rng, ds.size(), batch);
  std::vector<bool> soft(batch);
  for (std::size_t k = 0; k < batch; ++k) soft[k] = rng.bernoulli(p);
  return {detail::assign_soft_positives(ds, ids, soft, rng, source), Strategy::SoftPositiveMix};
}

// ---------------------------------------------------------------------------
// Epoch planning. Every strategy runs floor(N / B) steps per epoch. Random and
// the soft-positive family walk a fresh seeded permutation of the ids (the
// remainder is dropped); easy- and hard-negative batches are drawn
// independently per step. Each plan is a pure function of
// (dataset, config, epoch, step).

namespace plan_stream {
inline constexpr std::uint64_t kPermutation = 0x7065726dULL;
inline constexpr std::uint64_t kStep = 0x73746570ULL;
}  // namespace plan_stream

inline std::size_t plans_per_epoch(const Dataset& ds, const SamplerConfig& cfg) {
  return cfg.batch_size == 0 ? 0 : ds.size() / cfg.batch_size;
}

namespace detail {

inline std::vector<std::size_t> epoch_permutation(const Dataset& ds, const SamplerConfig& cfg,
                                                  std::size_t epoch) {
  std::vector<std::size_t> perm(ds.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(cfg.seed, {plan_stream::kPermutation, epoch});
  rng.shuffle(std::span(perm));
  return perm;
}

inline BatchPlan plan_from_permutation(const Dataset& ds, const SamplerConfig& cfg,
                                       std::span<const std::size_t> perm, std::size_t epoch,
                                       std::size_t step) {
  const std::size_t b = cfg.batch_size;
  const auto ids = perm.subspan(step * b, b);
  const LabelSource source = cfg.effective_label_source();
  Rng rng(cfg.seed, {plan_stream::kStep, epoch, step});
  BatchPlan plan;
  switch (cfg.strategy) {
    case Strategy::Random:
      plan.pairs = exact_pairs(ids);
      break;
    case Strategy::SoftPositive:
    case Strategy::PLSoftPositive:
      plan.pairs = assign_soft_positives(ds, ids, std::vector<bool>(b, true), rng, source);
      break;
    case Strategy::SoftPositiveMix: {
      std::vector<bool> soft(b);
      for (std::size_t k = 0; k < b; ++k) soft[k] = rng.bernoulli(cfg.mix_probability);
      plan.pairs = assign_soft_positives(ds, ids, soft, rng, source);
      break;
    }
    default:
      throw InvalidArgument("strategy does not use the epoch permutation");
  }
  plan.strategy = cfg.strategy;
  plan.epoch = epoch;
  plan.step = step;
  return plan;
}

inline bool uses_permutation(Strategy s) noexcept {
  return s != Strategy::EasyNegative && s != Strategy::HardNegative;
}

inline void validate_for(const Dataset& ds, const SamplerConfig& cfg) {
  cfg.validate();
  ds.require_labels(cfg.effective_label_source());
  require_batch_fits(ds, cfg.batch_size);
}

}  // namespace detail

inline BatchPlan make_plan(const Dataset& ds, const SamplerConfig& cfg, std::size_t epoch,
                           std::size_t step) {
  detail::validate_for(ds, cfg);
  if (step >= plans_per_epoch(ds, cfg)) throw InvalidArgument("step beyond end of epoch");
  if (detail::uses_permutation(cfg.strategy)) {
    const auto perm = detail::epoch_permutation(ds, cfg, epoch);
    return detail::plan_from_permutation(ds, cfg, perm, epoch, step);
  }
  Rng rng(cfg.seed, {plan_stream::kStep, epoch, step});
  BatchPlan plan = cfg.strategy == Strategy::EasyNegative
                       ? sample_easy_negative(ds, cfg.batch_size, rng, cfg.effective_label_source())
                       : sample_hard_negative(ds, cfg.batch_size, rng, cfg.effective_label_source());
  plan.epoch = epoch;
  plan.step = step;
  return plan;
}

inline std::vector<BatchPlan> plan_epoch(const Dataset& ds, const SamplerConfig& cfg,
                                         std::size_t epoch) {
  detail::validate_for(ds, cfg);
  const std::size_t steps = plans_per_epoch(ds, cfg);
  std::vector<BatchPlan> plans;
  plans.reserve(steps);
  if (detail::uses_permutation(cfg.strategy)) {
    const auto perm = detail::epoch_permutation(ds, cfg, epoch);
    for (std::size_t step = 0; step < steps; ++step)
      plans.push_back(detail::plan_from_permutation(ds, cfg, perm, epoch, step));
  } else {
    for (std::size_t step = 0; step < steps; ++step) plans.push_back(make_plan(ds, cfg, epoch, step));
  }
  return plans;
}

}  // namespace softpos
