#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "lcp/builder.h"
#include "lcp/desknet.h"
#include "lcp/errors.h"
#include "lcp/pruners.h"
#include "support/test_support.h"

namespace lcp {
namespace {

NetworkGraph layer_of_ten() {
  GraphBuilder b;
  b.input("in", 2, 4, 4).conv("c", "in", 10, 3, 1, 1).relu("r", "c").global_avg_pool("gap", "r")
      .dense("head", "gap", 2).softmax_ce("loss", "head");
  return b.build({1});
}

MetricVector with_scores(const NetworkGraph& g, std::vector<double> per_filter) {
  MetricVector m = compute_metrics(g, MetricKind::kL1);
  m.per_filter = std::move(per_filter);
  for (std::size_t gi = 0; gi < m.groups.size(); ++gi) {
    m.per_group[gi] = 0.0;
    for (std::size_t j : m.groups.groups[gi]) m.per_group[gi] += m.per_filter[j];
  }
  return m;
}

std::set<std::size_t> pruned_groups(const FilterGroupPartition& p, const PruneMask& z) {
  std::set<std::size_t> out;
  for (std::size_t gi = 0; gi < p.size(); ++gi) {
    if (!z.kept(p.groups[gi].front())) out.insert(gi);
  }
  return out;
}

void expect_valid(const NetworkGraph& g, const PruneMask& z, const FloorPolicy& floor) {
  EXPECT_NO_THROW(check_mask(g, build_filter_groups(g), z));
  const auto floors = floor.resolve(g);
  const auto alive = alive_per_layer(g, z);
  for (std::size_t l = 0; l < alive.size(); ++l) EXPECT_GE(alive[l], floors[l]) << "layer " << l;
}

TEST(Floor, ResolvesToCeilingWithMinimumOne) {
  const NetworkGraph g = desknet::make_network(0);
  EXPECT_EQ(FloorPolicy{}.resolve(g), (std::vector<std::size_t>{2, 2, 2, 3, 3, 4, 4}));
  EXPECT_EQ(FloorPolicy{0.0}.resolve(g), std::vector<std::size_t>(7, 1));
  EXPECT_THROW(FloorPolicy{1.0}.resolve(g), std::invalid_argument);
}

TEST(UniformPrune, KeepAllIsIdentity) {
  const NetworkGraph g = desknet::make_network(0);
  const MetricVector m = compute_metrics(g, MetricKind::kL2Sq);
  EXPECT_EQ(uniform_prune(g, m, 1.0), PruneMask::all_ones(g.num_filters()));
}

TEST(UniformPrune, HalfOfTenKeepsTopFive) {
  const NetworkGraph g = layer_of_ten();
  const MetricVector m = with_scores(g, {5, 1, 9, 3, 7, 2, 8, 0.5, 6, 4});
  const PruneMask z = uniform_prune(g, m, 0.5);
  EXPECT_EQ(z.keep, (std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0, 1, 0, 1, 0}));
}

TEST(UniformPrune, TiesKeepLowerIndex) {
  const NetworkGraph g = layer_of_ten();
  const MetricVector m = with_scores(g, std::vector<double>(10, 1.0));
  EXPECT_EQ(uniform_prune(g, m, 0.3).keep, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(UniformPrune, RejectsFractionBelowFloor) {
  const NetworkGraph g = layer_of_ten();
  const MetricVector m = compute_metrics(g, MetricKind::kL1);
  EXPECT_THROW(uniform_prune(g, m, 0.05), std::invalid_argument);
  EXPECT_THROW(uniform_prune(g, m, 0.0), std::invalid_argument);
  EXPECT_THROW(uniform_prune(g, m, 1.2), std::invalid_argument);
}

TEST(UniformPrune, ResidualGroupsResolveByMajorityVote) {
  // c0 and c1 (3 filters each) feed one add, so three groups of two. Each
  // layer keeps its top one.
  GraphBuilder b;
  b.input("in", 2, 4, 4).conv("c0", "in", 3, 3, 1, 1).conv("c1", "c0", 3, 3, 1, 1)
      .add("sum", "c0", "c1").global_avg_pool("gap", "sum").dense("head", "gap", 2)
      .softmax_ce("loss", "head");
  const NetworkGraph g = b.build();
  // Group scores: g0 = 1 + 1, g1 = 5 + 0, g2 = 0 + 3. Ranking by group score
  // picks g1 in both layers: both members selected, the others pruned.
  const MetricVector m = with_scores(g, {1, 5, 0, 1, 0, 3});
  const PruneMask z = uniform_prune(g, m, 0.33);
  EXPECT_EQ(z.keep, (std::vector<std::uint8_t>{0, 1, 0, 0, 1, 0}));
  expect_valid(g, z, {});
}

TEST(UniformPruneTo, LargestFractionMeetingBudget) {
  const NetworkGraph g = desknet::make_network(0);
  const MetricVector m = compute_metrics(g, MetricKind::kL2Sq);
  const ConstraintSpec spec = resolve(g, {Resource::kMacs, 0.5, true});
  const PruneMask z = uniform_prune_to(g, m, spec);
  EXPECT_TRUE(satisfies(g, z, spec));
  expect_valid(g, z, {});
  EXPECT_THROW(uniform_prune_to(g, m, resolve(g, {Resource::kMacs, 0.001, true})), InfeasibleError);
}

TEST(NaivePrune, FullBudgetPrunesNothing) {
  const NetworkGraph g = desknet::make_network(0);
  const MetricVector m = compute_metrics(g, MetricKind::kL2Sq);
  std::vector<std::size_t> order{99};
  const PruneMask z = naive_prune(g, m.groups, m.per_group, resolve(g, {Resource::kMacs, 1.0, true}), {}, &order);
  EXPECT_EQ(z, PruneMask::all_ones(g.num_filters()));
  EXPECT_TRUE(order.empty());
}

TEST(NaivePrune, TwoGroupsPrunesOnlyTheLowerScore) {
  GraphBuilder b;
  b.input("in", 2, 4, 4).conv("c", "in", 2, 3, 1, 1).global_avg_pool("gap", "c")
      .dense("head", "gap", 2).softmax_ce("loss", "head");
  const NetworkGraph g = b.build();
  const FilterGroupPartition p = build_filter_groups(g);
  // Removing one filter halves conv MACs and drops 2 head MACs.
  const double one_removed = static_cast<double>(macs(g, PruneMask{{1, 0}}).total);
  const ConstraintSpec spec = resolve(g, {Resource::kMacs, one_removed, false});
  const std::vector<double> s12{1.0, 2.0}, s21{2.0, 1.0};
  EXPECT_EQ(naive_prune(g, p, s12, spec, FloorPolicy{0.0}).keep, (std::vector<std::uint8_t>{0, 1}));
  EXPECT_EQ(naive_prune(g, p, s21, spec, FloorPolicy{0.0}).keep, (std::vector<std::uint8_t>{1, 0}));
}

TEST(NaivePrune, EqualScoresBreakTiesByLayerThenFilter) {
  GraphBuilder b;
  b.input("in", 2, 4, 4).conv("a", "in", 4, 3, 1, 1).conv("b", "a", 4, 3, 1, 1)
      .global_avg_pool("gap", "b").dense("head", "gap", 2).softmax_ce("loss", "head");
  const NetworkGraph g = b.build();
  const FilterGroupPartition p = build_filter_groups(g);
  const std::vector<double> scores(8, 1.0);
  std::vector<std::size_t> order;
  const auto spec = resolve(g, {Resource::kMacs, 0.6, true});
  naive_prune(g, p, scores, spec, FloorPolicy{0.0}, &order);
  ASSERT_FALSE(order.empty());
  EXPECT_TRUE(std::is_sorted(order.begin(), order.end()));
  EXPECT_EQ(order.front(), 0u);
}

TEST(NaivePrune, FloorBlockedGroupsAreSkipped) {
  const NetworkGraph g = layer_of_ten();
  const FilterGroupPartition p = build_filter_groups(g);
  // Ask for far less than the floor allows: the scan prunes down to the
  // floor of 1 (fraction 0.1 of 10) and then reports infeasibility.
  const auto spec = resolve(g, {Resource::kMacs, 0.01, true});
  std::vector<double> scores(10);
  std::iota(scores.begin(), scores.end(), 0.0);
  try {
    naive_prune(g, p, scores, spec);
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    PruneMask floor_only = PruneMask::all_ones(10);
    std::fill(floor_only.keep.begin(), floor_only.keep.begin() + 9, 0);
    EXPECT_EQ(e.minimum_cost(), static_cast<double>(macs(g, floor_only).total));
  }
}

TEST(NaivePrune, PropertiesOnRandomGraphs) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    const NetworkGraph g = testing::random_graph(rng);
    const MetricVector m = compute_metrics(g, MetricKind::kL2Sq);
    const FloorPolicy floor;
    std::set<std::size_t> previous;
    bool have_previous = false;
    for (double target : {0.9, 0.75, 0.6, 0.45}) {
      for (Resource r : {Resource::kMacs, Resource::kParams}) {
        const ConstraintSpec spec = resolve(g, {r, target, true});
        PruneMask z;
        try {
          z = naive_prune(g, m.groups, m.per_group, spec, floor);
        } catch (const InfeasibleError& e) {
          EXPECT_GT(e.minimum_cost(), spec.zeta);
          continue;
        }
        EXPECT_TRUE(satisfies(g, z, spec));
        expect_valid(g, z, floor);
        // beta = 0 reproduces the uncompensated mask.
        const std::vector<double> zero(g.num_prunable_layers(), 0.0);
        EXPECT_EQ(naive_prune(g, m.groups, compensated_scores(g, m, zero), spec, floor), z);
        if (r == Resource::kMacs) {
          const auto pruned = pruned_groups(m.groups, z);
          if (have_previous) {
            EXPECT_TRUE(std::includes(pruned.begin(), pruned.end(), previous.begin(), previous.end()));
          }
          previous = pruned;
          have_previous = true;
        }
      }
    }
  }
}

// Fixed toy with 12 singleton groups across three layers.
NetworkGraph twelve_group_net() {
  GraphBuilder b;
  b.input("in", 2, 5, 5).conv("a", "in", 4, 3, 1, 1).relu("ra", "a").conv("b", "ra", 4, 3, 1, 1)
      .relu("rb", "b").conv("c", "rb", 4, 3, 1, 1).global_avg_pool("gap", "c")
      .dense("head", "gap", 3).softmax_ce("loss", "head");
  return b.build({21, true, true});
}

TEST(NaivePrune, GreedyIsAFeasibleMinimalPrefixVersusExhaustiveSearch) {
  const NetworkGraph g = twelve_group_net();
  const FilterGroupPartition p = build_filter_groups(g);
  ASSERT_EQ(p.size(), 12u);
  const MetricVector m = compute_metrics(g, MetricKind::kL1);
  const Batch batch = testing::random_batch(g, 16, 21);
  const FloorPolicy floor{0.25};
  const auto floors = floor.resolve(g);
  const ConstraintSpec spec = resolve(g, {Resource::kMacs, 0.55, true});

  std::vector<std::size_t> order;
  const PruneMask greedy = naive_prune(g, p, m.per_group, spec, floor, &order);
  EXPECT_TRUE(satisfies(g, greedy, spec));

  // The removal order is the ascending score order with floor-blocked
  // groups skipped, and stopping one removal earlier misses the budget.
  std::vector<std::size_t> ranked(12);
  std::iota(ranked.begin(), ranked.end(), 0);
  std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) { return m.per_group[a] < m.per_group[b]; });
  std::vector<std::size_t> expected;
  std::vector<std::size_t> alive(3, 4);
  PruneMask z = PruneMask::all_ones(12);
  for (std::size_t gi : ranked) {
    if (satisfies(g, z, spec)) break;
    const std::size_t l = g.filter_layer(gi);
    if (alive[l] <= floors[l]) continue;
    --alive[l];
    z.keep[gi] = 0;
    expected.push_back(gi);
  }
  EXPECT_EQ(order, expected);
  EXPECT_EQ(z, greedy);
  PruneMask one_less = greedy;
  one_less.keep[order.back()] = 1;
  EXPECT_FALSE(satisfies(g, one_less, spec));

  double best = std::numeric_limits<double>::infinity();
  std::size_t feasible = 0;
  for (std::uint32_t bits = 0; bits < (1u << 12); ++bits) {
    PruneMask cand = PruneMask::all_ones(12);
    for (std::size_t j = 0; j < 12; ++j) cand.keep[j] = (bits >> j) & 1u;
    const auto a = alive_per_layer(g, cand);
    bool ok = true;
    for (std::size_t l = 0; l < 3; ++l) ok &= a[l] >= floors[l];
    if (!ok || !satisfies(g, cand, spec)) continue;
    ++feasible;
    best = std::min(best, loss_delta(g, batch, cand));
  }
  const double greedy_delta = loss_delta(g, batch, greedy);
  EXPECT_GT(feasible, 0u);
  EXPECT_LE(best, greedy_delta);
  RecordProperty("exhaustive_optimum", std::to_string(best));
  RecordProperty("greedy_delta", std::to_string(greedy_delta));
}

TEST(NaivePrune, RequiresResolvedSpecAndMatchingScores) {
  const NetworkGraph g = layer_of_ten();
  const FilterGroupPartition p = build_filter_groups(g);
  const std::vector<double> scores(10, 0.0);
  EXPECT_THROW(naive_prune(g, p, scores, ConstraintSpec{}), std::invalid_argument);
  EXPECT_THROW(naive_prune(g, p, std::vector<double>(3), resolve(g, {Resource::kMacs, 0.5, true})),
               std::invalid_argument);
}

TEST(LayerSchedule, FullWidthIsAllOnesAndFloorIsMinimal) {
  const NetworkGraph g = desknet::make_network(0);
  const MetricVector m = compute_metrics(g, MetricKind::kL1);
  std::vector<std::size_t> widths;
  for (const auto& pl : g.prunable_layers()) widths.push_back(pl.width);
  EXPECT_EQ(layer_scheduled_prune(g, m, {widths}), PruneMask::all_ones(g.num_filters()));

  const auto floors = FloorPolicy{}.resolve(g);
  const PruneMask minimal = layer_scheduled_prune(g, m, {floors});
  expect_valid(g, minimal, {});
  std::mt19937_64 rng(10);
  for (int k = 0; k < 20; ++k) {
    const PruneMask other = testing::random_group_mask(g, rng, 0.3);
    const auto a = alive_per_layer(g, other);
    bool respects = true;
    for (std::size_t l = 0; l < a.size(); ++l) respects &= a[l] >= floors[l];
    if (respects) { EXPECT_LE(macs(g, minimal).total, macs(g, other).total); }
  }
  EXPECT_THROW(layer_scheduled_prune(g, m, {std::vector<std::size_t>(7, 1)}), std::invalid_argument);
}

TEST(LayerSchedule, NaiveScheduleFedBackIsSelfConsistent) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 15; ++trial) {
    const NetworkGraph g = testing::random_graph(rng, {0, false, true});
    const MetricVector m = compute_metrics(g, MetricKind::kL2Sq);
    for (double target : {0.8, 0.6, 0.4}) {
      PruneMask z;
      try {
        z = naive_prune(g, m.groups, m.per_group, resolve(g, {Resource::kMacs, target, true}));
      } catch (const InfeasibleError&) {
        continue;
      }
      EXPECT_EQ(layer_scheduled_prune(g, m, schedule_of(g, z)), z) << "trial " << trial;
    }
  }
}

TEST(LayerSchedule, DeskNetNaiveScheduleFedBackIsSelfConsistent) {
  const NetworkGraph g = desknet::make_network(4);
  for (MetricKind kind : {MetricKind::kL1, MetricKind::kL2Sq}) {
    const MetricVector m = compute_metrics(g, kind);
    for (double target : {0.8, 0.5, 0.3}) {
      const PruneMask z = naive_prune(g, m.groups, m.per_group, resolve(g, {Resource::kMacs, target, true}));
      EXPECT_EQ(layer_scheduled_prune(g, m, schedule_of(g, z)), z) << metric_name(kind) << " " << target;
    }
  }
}

TEST(SingleFilterGreedy, OneRemovalMatchesNaive) {
  const NetworkGraph g = layer_of_ten();
  const Dataset data = testing::random_batch(g, 8, 1);
  const MetricVector m = compute_metrics(g, MetricKind::kL2Sq);
  PruneMask one = PruneMask::all_ones(10);
  one.keep[0] = 0;
  const auto spec = resolve(g, {Resource::kMacs, static_cast<double>(macs(g, one).total), false});
  const GreedyResult r = single_filter_greedy(g, data, spec, {});
  EXPECT_EQ(r.pruned_order.size(), 1u);
  EXPECT_EQ(r.mask, naive_prune(g, m.groups, m.per_group, spec));
  EXPECT_EQ(r.pruned_order.front(),
            static_cast<std::size_t>(std::min_element(m.per_group.begin(), m.per_group.end()) - m.per_group.begin()));
}

TEST(SingleFilterGreedy, WithoutTuningEqualsNaiveForAnyBudget) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const NetworkGraph g = testing::random_graph(rng);
    const Dataset data = testing::random_batch(g, 4, trial);
    for (MetricKind kind : {MetricKind::kL1, MetricKind::kL2Sq}) {
      const MetricVector m = compute_metrics(g, kind);
      SingleFilterConfig cfg;
      cfg.metric = kind;
      for (double target : {0.85, 0.5}) {
        const auto spec = resolve(g, {Resource::kMacs, target, true});
        std::vector<std::size_t> order;
        PruneMask expected;
        try {
          expected = naive_prune(g, m.groups, m.per_group, spec, {}, &order);
        } catch (const InfeasibleError&) {
          EXPECT_THROW(single_filter_greedy(g, data, spec, cfg), InfeasibleError);
          continue;
        }
        const GreedyResult r = single_filter_greedy(g, data, spec, cfg);
        EXPECT_EQ(r.mask, expected);
        EXPECT_EQ(r.pruned_order, order);
        EXPECT_EQ(r.graph, g);
      }
    }
  }
}

TEST(SingleFilterGreedy, PeriodicTuningKeepsMaskValid) {
  const NetworkGraph g = testing::covering_graph(3);
  const Dataset data = testing::random_batch(g, 16, 3);
  SingleFilterConfig cfg;
  cfg.metric = MetricKind::kTaylor1;
  cfg.tune_interval = 2;
  cfg.tune.epochs = 1;
  cfg.tune.batch_size = 8;
  cfg.gradient_batch = 8;
  const auto spec = resolve(g, {Resource::kMacs, 0.7, true});
  const GreedyResult r = single_filter_greedy(g, data, spec, cfg);
  EXPECT_TRUE(satisfies(g, r.mask, spec));
  expect_valid(g, r.mask, {});
  EXPECT_EQ(std::set<std::size_t>(r.pruned_order.begin(), r.pruned_order.end()).size(), r.pruned_order.size());
}

}  // namespace
}  // namespace lcp
