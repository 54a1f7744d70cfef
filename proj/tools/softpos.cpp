#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "softpos/dataset.hpp"
#include "softpos/eval.hpp"
#include "softpos/experiment.hpp"
#include "softpos/io.hpp"
#include "softpos/pseudolabel.hpp"
#include "softpos/sampling.hpp"
#include "softpos/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

using namespace softpos;

enum ExitCode { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

void print_error(const std::string& kind, const std::string& message, int code) {
  ordered_json j{{"error", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump(-1, ' ', false, json::error_handler_t::replace) << std::endl;
}

// ---------------------------------------------------------------------------
// Strict config reader: every key must be known, every value well-typed.

class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  double number(const std::string& key, double def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where(key) + "expected a number");
    return v.get<double>();
  }

  std::uint64_t uint(const std::string& key, std::uint64_t def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where(key) + "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  std::size_t size(const std::string& key, std::size_t def) { return static_cast<std::size_t>(uint(key, def)); }

  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, std::string def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(where(key) + "expected a string");
    return v.get<std::string>();
  }

  std::string required_string(const std::string& key) {
    if (!has(key)) throw ConfigError(where(key) + "required");
    return string(key, "");
  }

  std::vector<std::size_t> sizes(const std::string& key, std::vector<std::size_t> def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(where(key) + "expected an array of integers");
    std::vector<std::size_t> out;
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) throw ConfigError(where(key) + "expected an array of integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key, std::vector<std::string> def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(where(key) + "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError(where(key) + "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::optional<Obj> object(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return Obj(j_.at(key), path_.empty() ? key : path_ + "." + key);
  }

  // Rejects keys that were never asked for.
  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(where(key) + "unknown key");
  }

 private:
  std::string where(const std::string& key = "") const {
    std::string p = path_;
    if (!key.empty()) p = p.empty() ? key : p + "." + key;
    return p.empty() ? "config: " : p + ": ";
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

struct Profile {
  SynthSpec data;
  TrainConfig train;
  EvalConfig linear;
  EvalConfig finetune;
  SweepConfig sweep;
};

Profile make_profile(const std::string& name) {
  Profile p;
  p.sweep = SweepConfig::desk();
  if (name == "paper") {
    // 309 classes x 123 clips per class, batch of one clip per class
    p.sweep.data.num_classes = 309;
    p.sweep.data.samples_per_class = 123;
    p.sweep.train = TrainConfig::paper();
    p.sweep.train.sampler.batch_size = 309;
    p.sweep.out_of_domain->num_classes = 101;
    p.sweep.out_of_domain->samples_per_class = 123;
    p.sweep.linear.epochs = p.sweep.finetune.epochs = 100;
  }
  p.data = p.sweep.data;
  p.train = p.sweep.train;
  p.linear = p.sweep.linear;
  p.finetune = p.sweep.finetune;
  return p;
}

SynthSpec read_synth(Obj o, SynthSpec s, std::optional<std::uint64_t> seed) {
  s.num_classes = o.size("num_classes", s.num_classes);
  s.samples_per_class = o.size("samples_per_class", s.samples_per_class);
  s.latent_dim = o.size("latent_dim", s.latent_dim);
  s.dim_a = o.size("dim_a", s.dim_a);
  s.dim_b = o.size("dim_b", s.dim_b);
  s.within_class_noise = o.number("within_class_noise", s.within_class_noise);
  s.instance_coupling = o.number("instance_coupling", s.instance_coupling);
  s.modality_noise = o.number("modality_noise", s.modality_noise);
  s.seed = o.uint("seed", s.seed);
  s.domain = o.uint("domain", s.domain);
  s.draw = o.uint("draw", s.draw);
  o.finish();
  if (seed) s.seed = *seed;
  s.validate();
  return s;
}

ordered_json synth_json(const SynthSpec& s) {
  return {{"num_classes", s.num_classes},
          {"samples_per_class", s.samples_per_class},
          {"latent_dim", s.latent_dim},
          {"dim_a", s.dim_a},
          {"dim_b", s.dim_b},
          {"within_class_noise", s.within_class_noise},
          {"instance_coupling", s.instance_coupling},
          {"modality_noise", s.modality_noise},
          {"seed", s.seed},
          {"domain", s.domain},
          {"draw", s.draw}};
}

StrategyChoice read_strategy(const std::string& text, const std::string& where) {
  const auto parsed = parse_strategy_spec(text);
  if (!parsed) throw ConfigError(where + ": unknown strategy '" + text + "'");
  StrategyChoice c{parsed->first};
  if (parsed->second) c.mix_probability = *parsed->second;
  return c;
}

TrainConfig read_train(Obj o, TrainConfig t, std::optional<std::uint64_t> seed) {
  t.epochs = o.size("epochs", t.epochs);
  t.lr = o.number("lr", t.lr);
  t.weight_decay = o.number("weight_decay", t.weight_decay);
  t.temperature = o.number("temperature", t.temperature);
  if (o.has("strategy")) {
    const auto c = read_strategy(o.string("strategy", ""), "train.strategy");
    t.sampler.strategy = c.strategy;
    t.sampler.mix_probability = c.mix_probability;
  }
  t.sampler.mix_probability = o.number("mix_probability", t.sampler.mix_probability);
  t.sampler.batch_size = o.size("batch_size", t.sampler.batch_size);
  t.hidden_a = o.sizes("hidden_a", t.hidden_a);
  t.hidden_b = o.sizes("hidden_b", t.hidden_b);
  t.embed_dim = o.size("embed_dim", t.embed_dim);
  t.seed = seed.value_or(o.uint("seed", t.seed));
  t.sampler.seed = o.uint("sampler_seed", t.seed);
  o.finish();
  t.validate();
  return t;
}

EvalConfig read_eval(std::optional<Obj> o, EvalConfig e, std::optional<std::uint64_t> seed) {
  if (o) {
    e.epochs = o->size("epochs", e.epochs);
    e.lr = o->number("lr", e.lr);
    e.encoder_lr = o->number("encoder_lr", e.encoder_lr);
    e.weight_decay = o->number("weight_decay", e.weight_decay);
    e.batch_size = o->size("batch_size", e.batch_size);
    e.seed = o->uint("seed", e.seed);
    e.train_fraction = o->number("train_fraction", e.train_fraction);
    o->finish();
  }
  if (seed) e.seed = *seed;
  e.validate();
  return e;
}

PseudoLabelConfig read_pseudo(Obj o, PseudoLabelConfig p) {
  const std::string method = o.string("method", p.method == PseudoLabelConfig::Method::Oracle ? "oracle" : "proxy");
  if (method == "oracle")
    p.method = PseudoLabelConfig::Method::Oracle;
  else if (method == "proxy")
    p.method = PseudoLabelConfig::Method::Proxy;
  else
    throw ConfigError("method: expected \"oracle\" or \"proxy\", got '" + method + "'");
  p.accuracy = o.number("accuracy", p.accuracy);
  p.labeled_fraction = o.number("labeled_fraction", p.labeled_fraction);
  o.finish();
  if (!(p.accuracy > 0 && p.accuracy <= 1)) throw ConfigError("accuracy must lie in (0, 1]");
  if (!(p.labeled_fraction > 0 && p.labeled_fraction <= 1)) throw ConfigError("labeled_fraction must lie in (0, 1]");
  return p;
}

// ---------------------------------------------------------------------------

struct Invocation {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string profile = "desk";
  bool dump_plans = false;
};

json load_config(const Invocation& inv) {
  if (inv.config_path.empty()) return json::object();
  std::string text;
  try {
    text = io::read_text(inv.config_path);
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(inv.config_path + ": " + e.what());
  }
}

fs::path manifest_of(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

void write_json(const fs::path& path, const ordered_json& j) { io::write_text(path, j.dump(2) + "\n"); }

ordered_json report_json(const EvalReport& r, const std::string& task) {
  ordered_json j = to_json(r);
  j["task"] = task;
  return j;
}

std::function<void()> generate_data(const Invocation& inv) {
  const auto prof = make_profile(inv.profile);
  const json cfg = load_config(inv);
  Obj root(cfg, "");
  SynthSpec spec = prof.data;
  if (auto d = root.object("data")) spec = read_synth(*d, spec, inv.seed);
  else if (inv.seed) spec.seed = *inv.seed;
  root.finish();
  return [=] {
    const fs::path out(inv.out);
    save_dataset(generate_synthetic(spec), out);
    write_json(out / "config.resolved.json", {{"command", "generate-data"}, {"data", synth_json(spec)}});
    std::cout << "wrote " << (out / "manifest.json").string() << "\n";
  };
}

std::function<void()> pretrain_cmd(const Invocation& inv) {
  const auto prof = make_profile(inv.profile);
  const json cfg = load_config(inv);
  Obj root(cfg, "");
  const std::string data = root.required_string("data");
  const std::string resume = root.string("resume", "");
  TrainConfig train = prof.train;
  if (auto t = root.object("train")) train = read_train(*t, train, inv.seed);
  else if (inv.seed) train.seed = train.sampler.seed = *inv.seed;
  root.finish();
  train.validate();
  return [=] {
    const fs::path out(inv.out);
    fs::create_directories(out);
    const Dataset ds = load_dataset(manifest_of(data));
    std::optional<Checkpoint> start;
    if (!resume.empty()) start = load_checkpoint(resume, train.hash());
    std::ofstream plans;
    if (inv.dump_plans) {
      plans.open(out / "plans.jsonl", std::ios::binary | std::ios::trunc);
      if (!plans) throw IoError("cannot write " + (out / "plans.jsonl").string());
    }
    TrainOptions opts;
    if (start) opts.resume = &*start;
    if (inv.dump_plans) opts.on_plan = [&](const BatchPlan& p) { plans << to_json(p).dump() << '\n'; };
    opts.on_epoch = [&](std::size_t epoch, double loss) {
      std::printf("epoch %zu/%zu loss %.6f\n", epoch + 1, train.epochs, loss);
    };
    const auto result = pretrain(ds, train, opts);
    save_checkpoint(result.checkpoint, out / "checkpoint.bin");
    io::write_text(out / "loss_history.csv", loss_history_csv(result.loss_history()));
    ordered_json resolved{{"command", "pretrain"}, {"data", data}, {"train", train.to_json()},
                          {"config_hash", io::hex64(train.hash())}};
    write_json(out / "config.resolved.json", resolved);
  };
}

std::function<void()> pseudo_label_cmd(const Invocation& inv) {
  const json cfg = load_config(inv);
  Obj root(cfg, "");
  const std::string data = root.required_string("data");
  const std::uint64_t seed = inv.seed.value_or(root.uint("seed", 0));
  PseudoLabelConfig pl;
  pl.accuracy = make_profile(inv.profile).sweep.pseudo.accuracy;
  const std::string method = root.string("method", "oracle");
  {
    json sub{{"method", method}};
    if (root.has("accuracy")) sub["accuracy"] = cfg.at("accuracy");
    if (root.has("labeled_fraction")) sub["labeled_fraction"] = cfg.at("labeled_fraction");
    pl = read_pseudo(Obj(sub, ""), pl);
  }
  ProxyConfig proxy;
  proxy.train.seed = derive_seed(seed, {0x707278});
  if (auto p = root.object("proxy")) {
    proxy.hidden = p->sizes("hidden", proxy.hidden);
    proxy.embed_dim = p->size("embed_dim", proxy.embed_dim);
    proxy.train = read_eval(p->object("eval"), proxy.train, std::nullopt);
    p->finish();
  }
  root.finish();
  return [=] {
    const fs::path out(inv.out);
    const Dataset ds = load_dataset(manifest_of(data));
    Dataset labeled;
    double agreement = 0.0;
    if (pl.method == PseudoLabelConfig::Method::Oracle) {
      labeled = corrupt_labels(ds, pl.accuracy, seed);
      agreement = pseudo_label_agreement(labeled);
    } else {
      const Dataset subset = stratified_subsample(ds, pl.labeled_fraction, derive_seed(seed, {0x6c6162}));
      auto r = train_proxy_classifier(subset, ds, proxy);
      labeled = std::move(r.labeled);
      agreement = r.agreement;
    }
    save_dataset(labeled, out);
    write_json(out / "pseudo_labels.json",
               {{"method", method}, {"seed", seed}, {"agreement", agreement}, {"num_samples", labeled.size()}});
    std::printf("pseudo-label agreement %.4f\n", agreement);
  };
}

std::function<void()> eval_cmd(const Invocation& inv, EvalMode mode) {
  const auto prof = make_profile(inv.profile);
  const json cfg = load_config(inv);
  Obj root(cfg, "");
  const std::string train_path = root.required_string("train_data");
  const std::string test_path = root.required_string("test_data");
  const std::string val_path = root.string("val_data", "");
  const std::string task = root.string("task", "in_domain");
  std::string strategy;
  std::string checkpoint;
  std::vector<std::size_t> hidden = prof.train.hidden_a;
  std::size_t embed_dim = prof.train.embed_dim;
  if (mode == EvalMode::Supervised) {
    hidden = root.sizes("hidden", hidden);
    embed_dim = root.size("embed_dim", embed_dim);
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  } else {
    checkpoint = root.required_string("checkpoint");
    strategy = root.string("strategy", "");
    if (!strategy.empty()) strategy = read_strategy(strategy, "strategy").display_name();
  }
  EvalConfig ec = read_eval(root.object("eval"), mode == EvalMode::LinearEval ? prof.linear : prof.finetune, inv.seed);
  ec.mode = mode;
  if (mode == EvalMode::Supervised) ec.encoder_lr = -1.0;
  root.finish();
  return [=] {
    const fs::path out(inv.out);
    fs::create_directories(out);
    const Dataset train = load_dataset(manifest_of(train_path));
    const Dataset test = load_dataset(manifest_of(test_path));
    std::optional<Dataset> val;
    if (!val_path.empty()) val = load_dataset(manifest_of(val_path));
    const Dataset* vp = val ? &*val : nullptr;
    EvalReport r;
    if (mode == EvalMode::Supervised) {
      r = supervised_baseline(train, test, ec, hidden, embed_dim, vp);
    } else {
      const Checkpoint ck = load_checkpoint(checkpoint);
      r = mode == EvalMode::LinearEval ? linear_eval(ck.encoder_a, train, test, ec, vp)
                                       : finetune_eval(ck.encoder_a, train, test, ec, vp);
      r.strategy = strategy;
    }
    write_json(out / "report.json", report_json(r, task));
    std::printf("%s %s accuracy %.4f\n", task.c_str(), std::string(to_string(mode)).c_str(), r.accuracy);
  };
}

std::string file_stem(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '.' ? c : '_';
  return out;
}

void write_table(const fs::path& out, const ResultTable& t) {
  io::write_text(out / "results.csv", table_csv(t));
  const std::string text = table_text(t);
  io::write_text(out / "results.txt", text);
  std::cout << text;
}

std::function<void()> sweep_cmd(const Invocation& inv) {
  const auto prof = make_profile(inv.profile);
  const json cfg = load_config(inv);
  Obj root(cfg, "");
  SweepConfig sw = prof.sweep;
  if (auto d = root.object("data")) sw.data = read_synth(*d, sw.data, std::nullopt);
  sw.test_per_class = root.size("test_per_class", sw.test_per_class);
  sw.downstream_train_fraction = root.number("downstream_train_fraction", sw.downstream_train_fraction);
  if (root.has("out_of_domain")) {
    if (auto o = root.object("out_of_domain")) sw.out_of_domain = read_synth(*o, *sw.out_of_domain, std::nullopt);
  } else if (cfg.contains("out_of_domain")) {
    sw.out_of_domain.reset();  // explicit null disables the task
  }
  sw.ood_test_per_class = root.size("ood_test_per_class", sw.ood_test_per_class);
  if (auto t = root.object("train")) sw.train = read_train(*t, sw.train, std::nullopt);
  sw.hard_negative_batch = root.size("hard_negative_batch", sw.hard_negative_batch);
  if (root.has("strategies")) {
    sw.strategies.clear();
    for (const auto& s : root.strings("strategies", {})) sw.strategies.push_back(read_strategy(s, "strategies"));
  }
  sw.num_seeds = root.size("num_seeds", sw.num_seeds);
  sw.base_seed = inv.seed.value_or(root.uint("base_seed", sw.base_seed));
  sw.linear = read_eval(root.object("linear"), sw.linear, std::nullopt);
  sw.finetune = read_eval(root.object("finetune"), sw.finetune, std::nullopt);
  if (auto p = root.object("pseudo")) sw.pseudo = read_pseudo(*p, sw.pseudo);
  sw.supervised = root.boolean("supervised", sw.supervised);
  root.finish();
  if (sw.num_seeds < 5) throw ConfigError("num_seeds must be >= 5");
  if (sw.strategies.empty()) throw ConfigError("strategies must not be empty");
  if (!(sw.downstream_train_fraction > 0 && sw.downstream_train_fraction < 1))
    throw ConfigError("downstream_train_fraction must lie in (0, 1)");
  if (sw.test_per_class < 1 || sw.ood_test_per_class < 1) throw ConfigError("test sizes must be >= 1");

  return [=] {
    const fs::path out(inv.out);
    fs::create_directories(out / "cells");
    ordered_json strategies = ordered_json::array();
    for (const auto& s : sw.strategies) strategies.push_back(s.display_name());
    write_json(out / "config.resolved.json",
               {{"command", "sweep"},
                {"data", synth_json(sw.data)},
                {"out_of_domain", sw.out_of_domain ? synth_json(*sw.out_of_domain) : ordered_json()},
                {"train", sw.train.to_json()},
                {"strategies", strategies},
                {"num_seeds", sw.num_seeds},
                {"base_seed", sw.base_seed},
                {"linear", sw.linear.to_json()},
                {"finetune", sw.finetune.to_json()}});
    const auto results = run_sweep(sw, [&](const CellResult& c) {
      ordered_json j = report_json(c.report, c.task);
      j["seed_index"] = c.seed_index;
      const std::string name = file_stem(c.strategy) + "." + c.task + "." + std::string(to_string(c.mode)) +
                               ".seed" + std::to_string(c.seed_index) + ".json";
      write_json(out / "cells" / name, j);
      std::printf("%-22s %-14s %-10s seed %zu  %.4f\n", c.strategy.c_str(), c.task.c_str(),
                  std::string(to_string(c.mode)).c_str(), c.seed_index, c.report.accuracy);
      std::fflush(stdout);
    });
    write_table(out, aggregate(results));
  };
}

std::vector<fs::path> collect_reports(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".json") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw IoError("no such report file or directory: " + in);
    }
  }
  return files;
}

std::function<void()> report_cmd(const Invocation& inv) {
  const json cfg = load_config(inv);
  Obj root(cfg, "");
  const auto inputs = root.strings("inputs", {});
  const double alpha = root.number("alpha", 0.05);
  root.finish();
  if (inputs.empty()) throw ConfigError("inputs: at least one report file or directory is required");
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha must lie in (0, 1)");
  return [=] {
    std::vector<CellResult> results;
    for (const auto& file : collect_reports(inputs)) {
      json j;
      try {
        j = json::parse(io::read_text(file));
        CellResult c;
        c.report = eval_report_from_json(j);
        c.strategy = c.report.strategy;
        c.mode = c.report.mode;
        c.task = j.value("task", std::string("in_domain"));
        c.seed_index = j.value("seed_index", std::size_t{0});
        results.push_back(std::move(c));
      } catch (const json::exception& e) {
        throw InvalidArgument(file.string() + ": not an evaluation report (" + e.what() + ")");
      }
    }
    if (results.empty()) throw InvalidArgument("no reports found");
    const fs::path out(inv.out);
    fs::create_directories(out);
    write_table(out, aggregate(results, alpha));
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-aware sampling for cross-modal contrastive learning"};
  app.require_subcommand(1);
  Invocation inv;
  std::uint64_t seed = 0;

  struct Entry {
    const char* name;
    const char* help;
    std::function<std::function<void()>(const Invocation&)> prepare;
  };
  const std::vector<Entry> entries{
      {"generate-data", "Generate a synthetic paired-modality dataset", generate_data},
      {"pretrain", "Contrastive pretraining of both encoders", pretrain_cmd},
      {"pseudo-label", "Attach pseudo labels to a dataset", pseudo_label_cmd},
      {"linear-eval", "Linear evaluation of a pretrained encoder",
       [](const Invocation& i) { return eval_cmd(i, EvalMode::LinearEval); }},
      {"finetune-eval", "Fine-tune evaluation of a pretrained encoder",
       [](const Invocation& i) { return eval_cmd(i, EvalMode::Finetune); }},
      {"supervised", "Supervised baseline trained from scratch",
       [](const Invocation& i) { return eval_cmd(i, EvalMode::Supervised); }},
      {"sweep", "Full strategy x evaluation grid over several seeds", sweep_cmd},
      {"report", "Aggregate JSON reports into a CSV and text table", report_cmd},
  };
  std::vector<std::pair<CLI::App*, const Entry*>> subs;
  for (const auto& e : entries) {
    auto* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("--config", inv.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", inv.out, "Output directory")->required();
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--profile", inv.profile, "Default settings")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->capture_default_str();
    if (std::string(e.name) == "pretrain")
      sub->add_flag("--dump-plans", inv.dump_plans, "Write every batch plan to plans.jsonl");
    subs.emplace_back(sub, &e);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("UsageError", e.what(), kConfigError);
    return kConfigError;
  }

  const Entry* chosen = nullptr;
  for (const auto& [sub, entry] : subs)
    if (sub->parsed()) {
      chosen = entry;
      if (sub->count("--seed")) inv.seed = seed;
    }

  std::function<void()> run;
  try {
    run = chosen->prepare(inv);
  } catch (const std::exception& e) {
    // config stage: anything wrong here is the config's fault
    print_error("ConfigError", e.what(), kConfigError);
    return kConfigError;
  }

  try {
    run();
  } catch (const Error& e) {
    print_error(e.kind(), e.what(), kRuntimeError);
    return kRuntimeError;
  } catch (const std::exception& e) {
    print_error("RuntimeError", e.what(), kRuntimeError);
    return kRuntimeError;
  }
  return kOk;
}
