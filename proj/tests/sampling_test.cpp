#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "softpos/sampling.hpp"
#include "test_util.hpp"

namespace softpos {
namespace {

bool distinct_ids(const BatchPlan& plan) {
  std::set<std::size_t> a, v;
  for (const auto& p : plan.pairs) {
    a.insert(p.a_id);
    v.insert(p.v_id);
  }
  return a.size() == plan.size() && v.size() == plan.size();
}

double binomial(double n, double k) { return std::exp(std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1)); }

TEST(SampleRandom, ExhaustiveThreeOfThree) {
  const Dataset ds = test::sized_dataset({1, 1, 1});
  Rng rng(5);
  const BatchPlan plan = sample_random(ds, 3, rng);
  std::vector<std::size_t> ids;
  for (const auto& p : plan.pairs) {
    EXPECT_EQ(p.a_id, p.v_id);
    ids.push_back(p.a_id);
  }
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(ids, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SampleRandom, BatchTooLarge) {
  const Dataset ds = test::sized_dataset({2, 2});
  Rng rng(0);
  EXPECT_THROW(sample_random(ds, 5, rng), BatchTooLarge);
}

TEST(SampleRandom, SameClassCollisionsFollowHypergeometric) {
  // P(no two batch members share a class) = C(C,B) M^B / C(N,B).
  struct Case {
    std::size_t classes, per_class, batch;
  };
  for (const Case c : {Case{2, 5, 4}, Case{5, 4, 3}}) {
    const Dataset ds = test::sized_dataset(std::vector<std::size_t>(c.classes, c.per_class));
    const double n = static_cast<double>(c.classes * c.per_class);
    const double all_distinct = c.batch > c.classes ? 0.0
                                                    : binomial(static_cast<double>(c.classes), static_cast<double>(c.batch)) *
                                                          std::pow(static_cast<double>(c.per_class), static_cast<double>(c.batch)) /
                                                          binomial(n, static_cast<double>(c.batch));
    const double expected = 1.0 - all_distinct;
    const int draws = 10000;
    int collisions = 0;
    for (int i = 0; i < draws; ++i) {
      Rng rng(123, {static_cast<std::uint64_t>(i)});
      const auto plan = sample_random(ds, c.batch, rng);
      std::set<Label> labels;
      for (const auto& p : plan.pairs) labels.insert(ds[p.a_id].label);
      collisions += labels.size() < c.batch;
    }
    const double sigma = std::sqrt(expected * (1 - expected) / draws);
    EXPECT_NEAR(collisions / static_cast<double>(draws), expected, 3 * sigma + 1e-12)
        << "C=" << c.classes << " M=" << c.per_class << " B=" << c.batch;
  }
}

TEST(SampleEasyNegative, BatchEqualToClassCountCoversEveryClass) {
  const Dataset ds = test::sized_dataset({3, 4, 2, 5, 1});
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(s);
    const auto plan = sample_easy_negative(ds, 5, rng);
    std::set<Label> labels;
    for (const auto& p : plan.pairs) {
      EXPECT_EQ(p.a_id, p.v_id);
      labels.insert(ds[p.a_id].label);
    }
    EXPECT_EQ(labels.size(), 5u);
  }
}

TEST(SampleEasyNegative, DegenerateAndErrorCases) {
  const Dataset ds = test::sized_dataset({3, 3});
  Rng rng(1);
  EXPECT_EQ(sample_easy_negative(ds, 1, rng).size(), 1u);
  EXPECT_THROW(sample_easy_negative(ds, 3, rng), MoreClassesRequestedThanExist);
}

TEST(SampleHardNegative, WholeClassWhenBatchEqualsClassSize) {
  const Dataset ds = test::sized_dataset({123, 123, 123}, 0, 1);
  Rng rng(2);
  const auto plan = sample_hard_negative(ds, 123, rng);
  const Label l = ds[plan.pairs[0].a_id].label;
  std::set<std::size_t> ids;
  for (const auto& p : plan.pairs) {
    EXPECT_EQ(ds[p.a_id].label, l);
    ids.insert(p.a_id);
  }
  const auto& members = ds.class_index()[l];
  EXPECT_EQ(ids, std::set<std::size_t>(members.begin(), members.end()));
}

TEST(SampleHardNegative, SingleClassAndTooSmall) {
  std::vector<Sample> samples(4);
  for (std::size_t i = 0; i < 4; ++i) samples[i] = {i, 0, std::nullopt, {1.0f}, {1.0f}};
  const Dataset one(samples, 1, 1, 1);
  Rng rng(3);
  for (const auto& p : sample_hard_negative(one, 3, rng).pairs) EXPECT_EQ(one[p.a_id].label, 0u);
  const Dataset ds = test::sized_dataset({5, 4});
  EXPECT_THROW(sample_hard_negative(ds, 6, rng), NoClassLargeEnough);
}

TEST(SampleSoftPositive, PairsWithDifferentInstanceOfSameClass) {
  // dog = {0, 1}, cat = {2, 3}; one audio of each class.
  const Dataset ds = test::sized_dataset({2, 2});
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    const auto plan = sample_soft_positive(ds, 2, rng);
    EXPECT_TRUE(distinct_ids(plan));
    for (const auto& p : plan.pairs) {
      EXPECT_EQ(ds[p.a_id].label, ds[p.v_id].label);
      EXPECT_NE(p.a_id, p.v_id);
      EXPECT_EQ(p.v_id, p.a_id ^ 1u);  // the only other member of its class
    }
  }
}

TEST(SampleSoftPositive, SingletonClassFallsBackToExactPair) {
  const Dataset ds = test::sized_dataset({1, 3});
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    const auto plan = sample_soft_positive(ds, 4, rng);
    EXPECT_TRUE(distinct_ids(plan));
    for (const auto& p : plan.pairs) {
      if (p.a_id == 0) EXPECT_EQ(p.v_id, 0u);
      else EXPECT_NE(p.a_id, p.v_id);
    }
  }
}

TEST(SampleSoftPositive, TenThousandDrawsAlwaysSoftAndLabelConsistent) {
  const Dataset ds = test::sized_dataset({3, 3});
  std::size_t pairs = 0, different = 0, agree = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    Rng rng(77, {s});
    const auto plan = sample_soft_positive(ds, 2, rng);
    ASSERT_TRUE(distinct_ids(plan));
    for (const auto& p : plan.pairs) {
      ++pairs;
      different += p.a_id != p.v_id;
      agree += ds[p.a_id].label == ds[p.v_id].label;
    }
  }
  EXPECT_EQ(different, pairs);
  EXPECT_EQ(agree, pairs);
}

TEST(SampleSoftPositive, FullClassInsideBatchNeedsDerangement) {
  // Every member of every class is an anchor, so v must be a derangement per class.
  const Dataset ds = test::sized_dataset({3, 2, 3});
  for (std::uint64_t s = 0; s < 500; ++s) {
    Rng rng(s);
    const auto plan = sample_soft_positive(ds, 8, rng);
    EXPECT_TRUE(distinct_ids(plan));
    for (const auto& p : plan.pairs) {
      EXPECT_NE(p.a_id, p.v_id);
      EXPECT_EQ(ds[p.a_id].label, ds[p.v_id].label);
    }
  }
}

TEST(SampleSoftPositiveMix, BoundaryProbabilities) {
  const Dataset ds = test::sized_dataset({10, 10, 10});
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng r0(s), r1(s);
    for (const auto& p : sample_soft_positive_mix(ds, 12, 0.0, r0).pairs) EXPECT_EQ(p.a_id, p.v_id);
    const auto soft = sample_soft_positive_mix(ds, 12, 1.0, r1);
    EXPECT_TRUE(distinct_ids(soft));
    for (const auto& p : soft.pairs) {
      EXPECT_NE(p.a_id, p.v_id);
      EXPECT_EQ(ds[p.a_id].label, ds[p.v_id].label);
    }
  }
}

TEST(SampleSoftPositiveMix, HalfOfPairsAreSoft) {
  // 500 batches of 20 = 10^4 pairs; binomial 4-sigma band is about +-0.02.
  const Dataset ds = test::sized_dataset({50, 50, 50, 50});
  std::size_t soft = 0, total = 0;
  for (std::uint64_t s = 0; s < 500; ++s) {
    Rng rng(9, {s});
    const auto plan = sample_soft_positive_mix(ds, 20, 0.5, rng);
    EXPECT_TRUE(distinct_ids(plan));
    for (const auto& p : plan.pairs) {
      soft += p.a_id != p.v_id;
      ++total;
    }
  }
  const double frac = static_cast<double>(soft) / static_cast<double>(total);
  EXPECT_GE(frac, 0.48);
  EXPECT_LE(frac, 0.52);
  Rng rng(0);
  EXPECT_THROW(sample_soft_positive_mix(ds, 4, 1.5, rng), InvalidArgument);
}

TEST(PlanEpoch, PermutationCoversAllIds) {
  const Dataset ds = test::sized_dataset({4, 4, 4});
  SamplerConfig cfg;
  cfg.batch_size = 3;
  cfg.seed = 8;
  const auto plans = plan_epoch(ds, cfg, 0);
  ASSERT_EQ(plans.size(), 4u);
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < plans.size(); ++k) {
    EXPECT_EQ(plans[k].step, k);
    for (const auto& p : plans[k].pairs) ids.push_back(p.a_id);
  }
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], i);
}

TEST(PlanEpoch, FloorRuleDropsRemainder) {
  const Dataset ds = test::sized_dataset({5, 5});
  SamplerConfig cfg;
  cfg.batch_size = 3;
  const auto plans = plan_epoch(ds, cfg, 2);
  ASSERT_EQ(plans.size(), 3u);
  std::set<std::size_t> ids;
  for (const auto& plan : plans)
    for (const auto& p : plan.pairs) ids.insert(p.a_id);
  EXPECT_EQ(ids.size(), 9u);
}

TEST(PlanEpoch, DeterministicAndStepAddressable) {
  const Dataset ds = test::sized_dataset({6, 6, 6, 6});
  for (Strategy s : kAllStrategies) {
    if (s == Strategy::PLSoftPositive) continue;
    SamplerConfig cfg;
    cfg.strategy = s;
    cfg.batch_size = s == Strategy::EasyNegative ? 4 : 6;
    cfg.seed = 31;
    const auto a = plan_epoch(ds, cfg, 3);
    const auto b = plan_epoch(ds, cfg, 3);
    EXPECT_EQ(a, b) << to_string(s);
    EXPECT_NE(a, plan_epoch(ds, cfg, 4)) << to_string(s);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(make_plan(ds, cfg, 3, k), a[k]);
  }
}

TEST(PlanEpoch, PseudoLabelSoftPositiveMatchesSoftPositiveWhenLabelsAgree) {
  const Dataset base = test::sized_dataset({5, 7, 3, 9});
  std::vector<Label> pseudo;
  for (const auto& s : base.samples()) pseudo.push_back(s.label);
  const Dataset ds = base.with_pseudo_labels(pseudo);
  SamplerConfig soft;
  soft.strategy = Strategy::SoftPositive;
  soft.batch_size = 8;
  soft.seed = 4;
  SamplerConfig pl = soft;
  pl.strategy = Strategy::PLSoftPositive;
  for (std::size_t epoch = 0; epoch < 5; ++epoch) {
    const auto a = plan_epoch(ds, soft, epoch);
    const auto b = plan_epoch(ds, pl, epoch);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].pairs, b[k].pairs);
  }
  EXPECT_THROW(plan_epoch(base, pl, 0), MissingPseudoLabel);
}

TEST(PlanEpoch, JsonLineShape) {
  const Dataset ds = test::sized_dataset({2, 2});
  SamplerConfig cfg;
  cfg.strategy = Strategy::SoftPositive;
  cfg.batch_size = 2;
  const auto plan = make_plan(ds, cfg, 1, 1);
  const auto j = to_json(plan);
  EXPECT_EQ(j["strategy"], "SoftPositive");
  EXPECT_EQ(j["epoch"], 1);
  EXPECT_EQ(j["step"], 1);
  ASSERT_EQ(j["pairs"].size(), 2u);
  EXPECT_EQ(j["pairs"][0][0].get<std::size_t>(), plan.pairs[0].a_id);
  EXPECT_EQ(j.dump().find('\n'), std::string::npos);
}

TEST(StrategyNames, ParseRoundTripAndMixShorthand) {
  for (Strategy s : kAllStrategies) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_FALSE(parse_strategy("Bogus"));
  const auto mix = parse_strategy_spec("SoftPositiveMix(0.25)");
  ASSERT_TRUE(mix);
  EXPECT_EQ(mix->first, Strategy::SoftPositiveMix);
  EXPECT_DOUBLE_EQ(*mix->second, 0.25);
  EXPECT_FALSE(parse_strategy_spec("SoftPositiveMix(2)"));
}

}  // namespace
}  // namespace softpos
