#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "softpos/dataset.hpp"
#include "softpos/eval.hpp"
#include "softpos/pseudolabel.hpp"
#include "softpos/sampling.hpp"
#include "softpos/stats.hpp"
#include "softpos/trainer.hpp"

namespace softpos {

// How PLSoftPositive obtains its pseudo labels.
struct PseudoLabelConfig {
  enum class Method { Oracle, Proxy };
  Method method = Method::Oracle;
  double accuracy = 0.5;           // oracle: probability of keeping the true label
  double labeled_fraction = 0.1;   // proxy: stratified labeled share used to train it
};

// A downstream classification task drawn from a synthetic world.
struct DownstreamTask {
  std::string name;
  SynthSpec train_spec;   // split 80/20 into train/validation
  SynthSpec test_spec;    // held-out test draw
  double train_fraction = 0.8;
};

struct StrategyChoice {
  Strategy strategy = Strategy::Random;
  double mix_probability = 0.5;

  std::string display_name() const {
    SamplerConfig c;
    c.strategy = strategy;
    c.mix_probability = mix_probability;
    return c.display_name();
  }
};

/// Full strategy x evaluation-mode grid over several seeds.
struct SweepConfig {
  SynthSpec data;                       // pretext dataset (world + draw)
  std::size_t test_per_class = 50;      // in-domain test draw size
  double downstream_train_fraction = 0.8;
  std::optional<SynthSpec> out_of_domain;  // different classes/prototypes, same modality maps
  std::size_t ood_test_per_class = 50;
  TrainConfig train;
  std::size_t hard_negative_batch = 0;  // 0: one whole class (samples_per_class)
  std::vector<StrategyChoice> strategies;
  std::size_t num_seeds = 5;
  std::uint64_t base_seed = 0;
  EvalConfig linear;
  EvalConfig finetune;
  PseudoLabelConfig pseudo;
  bool supervised = true;

  static SweepConfig desk();
};

struct CellResult {
  std::string strategy;
  std::string task;
  EvalMode mode = EvalMode::LinearEval;
  std::size_t seed_index = 0;
  EvalReport report;
};

inline std::uint64_t sweep_seed(const SweepConfig& cfg, std::size_t index) {
  return derive_seed(cfg.base_seed, {0x7377656570, index});
}

inline std::vector<DownstreamTask> downstream_tasks(const SweepConfig& cfg, std::uint64_t seed) {
  std::vector<DownstreamTask> tasks;
  DownstreamTask in{"in_domain", cfg.data, cfg.data, cfg.downstream_train_fraction};
  in.train_spec.seed = in.test_spec.seed = seed;
  in.test_spec.draw = cfg.data.draw + 1;
  in.test_spec.samples_per_class = cfg.test_per_class;
  tasks.push_back(std::move(in));
  if (cfg.out_of_domain) {
    DownstreamTask ood{"out_of_domain", *cfg.out_of_domain, *cfg.out_of_domain, cfg.downstream_train_fraction};
    ood.train_spec.seed = ood.test_spec.seed = seed;
    ood.test_spec.draw = ood.train_spec.draw + 1;
    ood.test_spec.samples_per_class = cfg.ood_test_per_class;
    tasks.push_back(std::move(ood));
  }
  return tasks;
}

inline Dataset pretext_dataset(const SweepConfig& cfg, std::uint64_t seed) {
  SynthSpec spec = cfg.data;
  spec.seed = seed;
  return generate_synthetic(spec);
}

inline Dataset attach_pseudo_labels(const Dataset& ds, const PseudoLabelConfig& pl, std::uint64_t seed) {
  if (pl.method == PseudoLabelConfig::Method::Oracle) return corrupt_labels(ds, pl.accuracy, seed);
  const Dataset labeled = stratified_subsample(ds, pl.labeled_fraction, derive_seed(seed, {0x6c6162}));
  ProxyConfig proxy;
  proxy.train.seed = derive_seed(seed, {0x707278});
  return train_proxy_classifier(labeled, ds, proxy).labeled;
}

inline TrainConfig cell_train_config(const SweepConfig& cfg, const StrategyChoice& choice, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.seed = seed;
  t.sampler.seed = derive_seed(seed, {0x73616d70});
  t.sampler.strategy = choice.strategy;
  t.sampler.mix_probability = choice.mix_probability;
  if (choice.strategy == Strategy::HardNegative)
    t.sampler.batch_size = cfg.hard_negative_batch ? cfg.hard_negative_batch : cfg.data.samples_per_class;
  return t;
}

// Pretrains one strategy for one seed and evaluates it on every task/mode.
inline std::vector<CellResult> run_strategy_cell(const SweepConfig& cfg, const StrategyChoice& choice,
                                                 std::size_t seed_index) {
  const std::uint64_t seed = sweep_seed(cfg, seed_index);
  Dataset pretext = pretext_dataset(cfg, seed);
  if (choice.strategy == Strategy::PLSoftPositive)
    pretext = attach_pseudo_labels(pretext, cfg.pseudo, derive_seed(seed, {0x706c}));
  const auto trained = pretrain(pretext, cell_train_config(cfg, choice, seed));

  std::vector<CellResult> out;
  for (const auto& task : downstream_tasks(cfg, seed)) {
    const auto [train, val] = split(generate_synthetic(task.train_spec), task.train_fraction,
                                    derive_seed(seed, {0x73706c}));
    const Dataset test = generate_synthetic(task.test_spec);
    for (EvalMode mode : {EvalMode::LinearEval, EvalMode::Finetune}) {
      EvalConfig ec = mode == EvalMode::LinearEval ? cfg.linear : cfg.finetune;
      ec.mode = mode;
      ec.seed = derive_seed(seed, {0x6576616c});
      EvalReport r = mode == EvalMode::LinearEval ? linear_eval(trained.encoder_a(), train, test, ec, &val)
                                                  : finetune_eval(trained.encoder_a(), train, test, ec, &val);
      r.strategy = choice.display_name();
      out.push_back({r.strategy, task.name, mode, seed_index, std::move(r)});
    }
  }
  return out;
}

inline std::vector<CellResult> run_supervised_cell(const SweepConfig& cfg, std::size_t seed_index) {
  const std::uint64_t seed = sweep_seed(cfg, seed_index);
  std::vector<CellResult> out;
  for (const auto& task : downstream_tasks(cfg, seed)) {
    const auto [train, val] = split(generate_synthetic(task.train_spec), task.train_fraction,
                                    derive_seed(seed, {0x73706c}));
    const Dataset test = generate_synthetic(task.test_spec);
    EvalConfig ec = cfg.finetune;
    ec.mode = EvalMode::Supervised;
    ec.encoder_lr = -1.0;
    ec.seed = derive_seed(seed, {0x6576616c});
    EvalReport r = supervised_baseline(train, test, ec, cfg.train.hidden_a, cfg.train.embed_dim, &val);
    out.push_back({r.strategy, task.name, EvalMode::Supervised, seed_index, std::move(r)});
  }
  return out;
}

inline std::vector<CellResult> run_sweep(const SweepConfig& cfg,
                                         const std::function<void(const CellResult&)>& on_cell = {}) {
  std::vector<CellResult> all;
  auto keep = [&](std::vector<CellResult> cells) {
    for (auto& c : cells) {
      if (on_cell) on_cell(c);
      all.push_back(std::move(c));
    }
  };
  for (const auto& choice : cfg.strategies)
    for (std::size_t s = 0; s < cfg.num_seeds; ++s) keep(run_strategy_cell(cfg, choice, s));
  if (cfg.supervised)
    for (std::size_t s = 0; s < cfg.num_seeds; ++s) keep(run_supervised_cell(cfg, s));
  return all;
}

// ---------------------------------------------------------------------------
// Aggregation into a strategy x (task, mode) table.

struct TableCell {
  std::vector<double> values;  // accuracy per seed
  double mean = 0.0;
  double std = 0.0;
  std::optional<double> p_vs_random;  // Welch two-sided
  bool significant = false;           // better than Random at alpha = 0.05
};

struct ResultTable {
  std::vector<std::string> rows;                             // strategies, Supervised last
  std::vector<std::pair<std::string, std::string>> columns;  // (task, mode)
  std::map<std::pair<std::string, std::string>, std::map<std::string, TableCell>> cells;  // [(task, mode)][row]

  const TableCell* find(const std::string& row, const std::string& task, const std::string& mode) const {
    auto c = cells.find({task, mode});
    if (c == cells.end()) return nullptr;
    auto r = c->second.find(row);
    return r == c->second.end() ? nullptr : &r->second;
  }
};

inline ResultTable aggregate(const std::vector<CellResult>& results, double alpha = 0.05) {
  ResultTable t;
  auto add_unique = [](auto& list, const auto& item) {
    if (std::find(list.begin(), list.end(), item) == list.end()) list.push_back(item);
  };
  for (const auto& r : results) {
    if (r.mode != EvalMode::Supervised) {
      add_unique(t.rows, r.strategy);
      add_unique(t.columns, std::pair{r.task, std::string(to_string(r.mode))});
    }
  }
  // tasks keep first-appearance order; linear precedes finetune within a task
  std::vector<std::string> tasks;
  for (const auto& [task, mode] : t.columns) add_unique(tasks, task);
  auto column_rank = [&](const std::pair<std::string, std::string>& c) {
    const auto task = std::find(tasks.begin(), tasks.end(), c.first) - tasks.begin();
    return std::pair{task, c.second == "linear" ? 0 : 1};
  };
  std::stable_sort(t.columns.begin(), t.columns.end(),
                   [&](const auto& a, const auto& b) { return column_rank(a) < column_rank(b); });
  bool has_supervised = false;
  for (const auto& r : results) {
    if (r.mode == EvalMode::Supervised) {
      has_supervised = true;
      // The supervised baseline spans both evaluation columns of its task.
      for (const char* mode : {"linear", "finetune"}) t.cells[{r.task, mode}][r.strategy].values.push_back(r.report.accuracy);
    } else {
      t.cells[{r.task, std::string(to_string(r.mode))}][r.strategy].values.push_back(r.report.accuracy);
    }
  }
  if (has_supervised) t.rows.push_back("Supervised");
  for (auto& [column, by_row] : t.cells) {
    for (auto& [row, cell] : by_row) {
      cell.mean = stats::mean(cell.values);
      cell.std = stats::stddev(cell.values);
    }
    const auto random = by_row.find("Random");
    for (auto& [row, cell] : by_row) {
      if (random != by_row.end() && row != "Random") {
        const auto w = stats::welch_t_test(cell.values, random->second.values);
        cell.p_vs_random = w.p_value;
        cell.significant = w.p_value < alpha && cell.mean > random->second.mean;
      }
    }
  }
  return t;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// One row per strategy; per (task, mode): mean, std (accuracy in percent) and
// Welch p-value against Random.
inline std::string table_csv(const ResultTable& t) {
  std::ostringstream out;
  out << "strategy";
  for (const auto& [task, mode] : t.columns)
    out << ',' << task << '_' << mode << "_mean," << task << '_' << mode << "_std," << task << '_' << mode
        << "_p_vs_random";
  out << '\n';
  for (const auto& row : t.rows) {
    out << row;
    for (const auto& [task, mode] : t.columns) {
      const TableCell* c = t.find(row, task, mode);
      if (!c) {
        out << ",,,";
        continue;
      }
      out << ',' << format_fixed(100.0 * c->mean, 4) << ',' << format_fixed(100.0 * c->std, 4) << ','
          << (c->p_vs_random ? format_fixed(*c->p_vs_random, 6) : std::string());
    }
    out << '\n';
  }
  return out.str();
}

// Aligned plain-text rendering; '*' marks significantly better than Random.
inline std::string table_text(const ResultTable& t) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"Sampling method"};
  for (const auto& [task, mode] : t.columns) header.push_back(task + " " + mode);
  grid.push_back(header);
  for (const auto& row : t.rows) {
    std::vector<std::string> line{row};
    for (const auto& [task, mode] : t.columns) {
      const TableCell* c = t.find(row, task, mode);
      line.push_back(c ? format_fixed(100.0 * c->mean, 1) + "% +- " + format_fixed(100.0 * c->std, 1) +
                             (c->significant ? "*" : "")
                       : "-");
    }
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      out << (i ? " | " : "") << grid[r][i] << std::string(width[i] - grid[r][i].size(), ' ');
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 3 * (width.size() - 1), '-') << '\n';
    }
  }
  return out.str();
}

inline SweepConfig SweepConfig::desk() {
  SweepConfig c;
  c.strategies = {{Strategy::Random},       {Strategy::EasyNegative},         {Strategy::HardNegative},
                  {Strategy::SoftPositive}, {Strategy::SoftPositiveMix, 0.5}, {Strategy::PLSoftPositive}};
  // one sample per class per batch
  c.train.sampler.batch_size = c.data.num_classes;
  SynthSpec ood = c.data;
  ood.num_classes = 5;
  ood.domain = 1;
  c.out_of_domain = ood;
  c.pseudo.accuracy = 0.7;
  c.linear.mode = EvalMode::LinearEval;
  c.finetune.mode = EvalMode::Finetune;
  c.finetune.encoder_lr = 1e-3;
  return c;
}

}  // namespace softpos
