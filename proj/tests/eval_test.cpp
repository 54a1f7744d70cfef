#include <cmath>

#include <gtest/gtest.h>

#include "softpos/eval.hpp"
#include "test_util.hpp"

namespace softpos {
namespace {

// Class c sits at e_c plus small isotropic noise, in both modalities.
Dataset one_hot_world(std::size_t classes, std::size_t per_class, std::uint64_t seed, double noise = 0.1) {
  Rng rng(seed);
  std::vector<Sample> samples;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t m = 0; m < per_class; ++m) {
      Sample s;
      s.id = samples.size();
      s.label = static_cast<Label>(c);
      for (std::size_t k = 0; k < classes; ++k) {
        s.feat_a.push_back(static_cast<float>((k == c ? 1.0 : 0.0) + noise * rng.normal()));
        s.feat_b.push_back(static_cast<float>((k == c ? 1.0 : 0.0) + noise * rng.normal()));
      }
      samples.push_back(std::move(s));
    }
  return {std::move(samples), classes, classes, classes};
}

Encoder identity_encoder(std::size_t dim) {
  return Encoder({dim, dim}, {Matrix<float>::Identity(dim, dim), Matrix<float>::Zero(dim, 1)});
}

EvalConfig quick(EvalMode mode = EvalMode::LinearEval) {
  EvalConfig cfg;
  cfg.mode = mode;
  cfg.epochs = 30;
  cfg.lr = 1e-2;
  cfg.batch_size = 16;
  cfg.seed = 9;
  return cfg;
}

TEST(LinearEval, SeparableEmbeddingsAreClassified) {
  const auto train = one_hot_world(5, 40, 1);
  const auto test = one_hot_world(5, 40, 2);
  const auto r = linear_eval(identity_encoder(5), train, test, quick());
  EXPECT_GE(r.accuracy, 0.95);
  EXPECT_EQ(r.mode, EvalMode::LinearEval);
  EXPECT_EQ(r.per_class_count, std::vector<std::size_t>(5, 40));
}

TEST(LinearEval, UntrainedClassifierIsNearChance) {
  // Average over many seeds: with zero epochs accuracy is that of a random
  // linear map, 1/C in expectation.
  const std::size_t classes = 4, per_class = 50, seeds = 40;
  const auto train = one_hot_world(classes, per_class, 1);
  const auto test = one_hot_world(classes, per_class, 2);
  auto cfg = quick();
  cfg.epochs = 0;
  double sum = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    cfg.seed = s;
    sum += linear_eval(identity_encoder(classes), train, test, cfg).accuracy;
  }
  const double mean = sum / seeds;
  // Accuracies of a random map are coarse (whole classes flip together);
  // per-seed variance is at most p(1-p) with p = 1/C.
  const double p = 1.0 / classes;
  EXPECT_NEAR(mean, p, 3 * std::sqrt(p * (1 - p) / seeds));
}

TEST(LinearEval, EncoderIsUntouched) {
  const auto train = one_hot_world(3, 20, 1);
  const auto enc = Encoder::init({3, 8, 4}, 5);
  const auto copy = enc;
  auto probe = train_probe(enc, train, nullptr, quick(), false, Modality::A);
  EXPECT_TRUE(probe.encoder == copy);
  EXPECT_TRUE(enc == copy);
  auto tuned = train_probe(enc, train, nullptr, quick(EvalMode::Finetune), true, Modality::A);
  EXPECT_FALSE(tuned.encoder == copy);
}

TEST(Finetune, ZeroEncoderStepMatchesLinearEval) {
  const auto train = one_hot_world(4, 25, 1, 0.5);
  const auto test = one_hot_world(4, 25, 2, 0.5);
  const auto enc = Encoder::init({4, 8, 6}, 2);
  auto lin_cfg = quick();
  auto ft_cfg = quick(EvalMode::Finetune);
  ft_cfg.encoder_lr = 0.0;
  const auto lin = linear_eval(enc, train, test, lin_cfg);
  const auto ft = finetune_eval(enc, train, test, ft_cfg);
  EXPECT_EQ(lin.accuracy, ft.accuracy);
  EXPECT_EQ(lin.per_class_accuracy, ft.per_class_accuracy);
}

TEST(LinearEval, TrainFractionSubsamplesPerClass) {
  const auto train = one_hot_world(4, 100, 1);
  const auto test = one_hot_world(4, 20, 2);
  auto cfg = quick();
  cfg.train_fraction = 0.05;
  const auto r = linear_eval(identity_encoder(4), train, test, cfg);
  EXPECT_GE(r.accuracy, 0.0);
  cfg.train_fraction = 0.0;
  EXPECT_THROW(linear_eval(identity_encoder(4), train, test, cfg), ConfigError);
  cfg.train_fraction = 1.5;
  EXPECT_THROW(linear_eval(identity_encoder(4), train, test, cfg), ConfigError);
}

TEST(LinearEval, RejectsWrongInputDim) {
  const auto train = one_hot_world(4, 10, 1);
  EXPECT_THROW(linear_eval(identity_encoder(3), train, train, quick()), DimensionMismatch);
}

TEST(Supervised, LearnsWellAboveChance) {
  const std::size_t classes = 5;
  const auto train = one_hot_world(classes, 30, 1, 0.3);
  const auto test = one_hot_world(classes, 30, 2, 0.3);
  auto cfg = quick(EvalMode::Supervised);
  const auto r = supervised_baseline(train, test, cfg, {16}, 8);
  EXPECT_GE(r.accuracy, 3.0 / classes);
  EXPECT_EQ(r.strategy, "Supervised");
  EXPECT_EQ(r.mode, EvalMode::Supervised);
}

TEST(Eval, DeterministicAndReportsValidation) {
  const auto train = one_hot_world(3, 20, 1, 0.8);
  const auto val = one_hot_world(3, 10, 3, 0.8);
  const auto test = one_hot_world(3, 20, 2, 0.8);
  const auto enc = Encoder::init({3, 32, 4}, 1);
  const auto a = finetune_eval(enc, train, test, quick(EvalMode::Finetune), &val);
  const auto b = finetune_eval(enc, train, test, quick(EvalMode::Finetune), &val);
  EXPECT_EQ(a, b);
  ASSERT_TRUE(a.final_val_accuracy && a.best_val_accuracy);
  EXPECT_GE(*a.best_val_accuracy, *a.final_val_accuracy);
  EXPECT_FALSE(linear_eval(enc, train, test, quick()).final_val_accuracy);
}

TEST(Eval, OverallIsCountWeightedMeanOfPerClass) {
  const auto train = test::sized_dataset({7, 20, 13}, 1, 4);
  const auto test = test::sized_dataset({3, 11, 29}, 2, 4);
  const auto r = linear_eval(Encoder::init({4, 5}, 3), train, test, quick());
  double weighted = 0.0;
  std::size_t total = 0;
  for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
    weighted += r.per_class_accuracy[c] * static_cast<double>(r.per_class_count[c]);
    total += r.per_class_count[c];
  }
  EXPECT_NEAR(r.accuracy, weighted / static_cast<double>(total), 1e-12);
}

TEST(EvalReportJson, RoundTrips) {
  EvalReport r;
  r.strategy = "SoftPositiveMix(0.5)";
  r.mode = EvalMode::Finetune;
  r.accuracy = 0.8125;
  r.per_class_accuracy = {0.75, 0.875};
  r.per_class_count = {8, 8};
  r.best_val_accuracy = 0.9;
  r.final_val_accuracy = 0.85;
  r.seed = 12;
  r.config_hash = 0xfeedbeefcafef00dULL;
  const auto back = eval_report_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(back, r);
  r.best_val_accuracy.reset();
  r.final_val_accuracy.reset();
  EXPECT_EQ(eval_report_from_json(nlohmann::json::parse(to_json(r).dump())), r);
}

}  // namespace
}  // namespace softpos
