#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lcp/builder.h"
#include "lcp/desknet.h"
#include "lcp/metrics.h"
#include "support/test_support.h"

namespace lcp {
namespace {

// One prunable dense layer with 1x3 filters, so a filter is exactly three
// numbers.
NetworkGraph three_input_net() {
  GraphBuilder b;
  b.input("in", 3, 1, 1).global_avg_pool("gap", "in").dense("h", "gap", 4, true).relu("r", "h")
      .dense("out", "r", 2).softmax_ce("loss", "out");
  return b.build({3});
}

void set_filter(NetworkGraph& g, const std::string& layer, std::size_t c, std::vector<double> w) {
  auto values = g.tensor_values(tensor_key(layer, "weight"));
  std::copy(w.begin(), w.end(), values.begin() + static_cast<std::ptrdiff_t>(c * w.size()));
}

TEST(Metrics, FlattenedFilterArithmetic) {
  NetworkGraph g = three_input_net();
  set_filter(g, "h", 1, {1, -2, 2});
  EXPECT_EQ(compute_metrics(g, MetricKind::kL1).per_filter[1], 5.0);
  EXPECT_EQ(compute_metrics(g, MetricKind::kL2Sq).per_filter[1], 9.0);
}

TEST(Metrics, ZeroFilterScoresZeroForEveryKind) {
  NetworkGraph g = three_input_net();
  set_filter(g, "h", 2, {0, 0, 0});
  const Batch batch = testing::random_batch(g, 8, 1);
  const GradientSet grads = backward(g, batch).gradients;
  for (MetricKind k : {MetricKind::kL1, MetricKind::kL2Sq, MetricKind::kTaylor1}) {
    EXPECT_EQ(compute_metrics(g, k, &grads).per_filter[2], 0.0) << metric_name(k);
  }
}

TEST(Metrics, TaylorIsZeroWhenGradientIsZero) {
  const NetworkGraph g = three_input_net();
  GradientSet grads = backward(g, testing::random_batch(g, 4, 2)).gradients;
  std::fill(grads.at("h.weight").values().begin() + 3, grads.at("h.weight").values().begin() + 6, 0.0);
  const MetricVector m = compute_metrics(g, MetricKind::kTaylor1, &grads);
  EXPECT_EQ(m.per_filter[1], 0.0);
  const auto w = g.tensor("h", "weight").row(0);
  const auto gr = grads.at("h.weight").row(0);
  EXPECT_DOUBLE_EQ(m.per_filter[0], std::abs((w[0] * gr[0] + w[1] * gr[1] + w[2] * gr[2]) / 3.0));
}

TEST(Metrics, TaylorWithoutGradientsIsAnError) {
  EXPECT_THROW(compute_metrics(three_input_net(), MetricKind::kTaylor1), std::invalid_argument);
  GradientSet empty;
  EXPECT_THROW(compute_metrics(three_input_net(), MetricKind::kTaylor1, &empty), std::invalid_argument);
}

TEST(Metrics, InvariantsOnRandomGraphs) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const NetworkGraph g = testing::random_graph(rng);
    const GradientSet grads = backward(g, testing::random_batch(g, 3, trial)).gradients;
    for (MetricKind k : {MetricKind::kL1, MetricKind::kL2Sq, MetricKind::kTaylor1}) {
      const MetricVector m = compute_metrics(g, k, &grads);
      ASSERT_EQ(m.per_filter.size(), g.num_filters());
      ASSERT_EQ(m.sigma.size(), g.num_prunable_layers());
      for (double v : m.per_filter) EXPECT_GE(v, 0.0);
      for (double s : m.sigma) EXPECT_GE(s, 0.0);
      for (std::size_t gi = 0; gi < m.groups.size(); ++gi) {
        double sum = 0.0;
        for (std::size_t j : m.groups.groups[gi]) sum += m.per_filter[j];
        EXPECT_EQ(m.per_group[gi], sum);
      }
    }
  }
}

TEST(Metrics, SigmaIsPopulationStandardDeviation) {
  NetworkGraph g = three_input_net();
  set_filter(g, "h", 0, {1, 0, 0});
  set_filter(g, "h", 1, {2, 0, 0});
  set_filter(g, "h", 2, {3, 0, 0});
  set_filter(g, "h", 3, {4, 0, 0});
  const MetricVector m = compute_metrics(g, MetricKind::kL1);
  EXPECT_DOUBLE_EQ(m.sigma[0], std::sqrt(1.25));
}

TEST(Metrics, ScalingAFilterRaisesItsScore) {
  const NetworkGraph base = desknet::make_network(2);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t j = rng() % base.num_filters();
    const double t = 1.0 + std::uniform_real_distribution<double>(0.01, 3.0)(rng);
    NetworkGraph g = base;
    const std::string& id = g.layer(g.prunable_layers()[g.filter_layer(j)].node).id;
    auto w = g.tensor_values(tensor_key(id, "weight"));
    const std::size_t row = g.tensor(id, "weight").row_size();
    for (std::size_t k = 0; k < row; ++k) w[g.filter_channel(j) * row + k] *= t;
    for (MetricKind kind : {MetricKind::kL1, MetricKind::kL2Sq}) {
      EXPECT_GT(compute_metrics(g, kind).per_filter[j], compute_metrics(base, kind).per_filter[j]);
    }
  }
}

TEST(Metrics, SquaredAndPlainL2RankIdentically) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const NetworkGraph g = testing::random_graph(rng);
    const MetricVector m = compute_metrics(g, MetricKind::kL2Sq);
    std::vector<double> l2(m.per_filter.size());
    std::transform(m.per_filter.begin(), m.per_filter.end(), l2.begin(), [](double v) { return std::sqrt(v); });
    auto order_by = [](const std::vector<double>& v) {
      std::vector<std::size_t> idx(v.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
      return idx;
    };
    EXPECT_EQ(order_by(m.per_filter), order_by(l2));
  }
}

TEST(CompensatedScores, ZeroOffsetsReproduceGroupScores) {
  std::mt19937_64 rng(7);
  const NetworkGraph g = testing::random_graph(rng, {2, true, true});
  const MetricVector m = compute_metrics(g, MetricKind::kL1);
  const std::vector<double> zero(g.num_prunable_layers(), 0.0);
  EXPECT_EQ(compensated_scores(g, m, zero), m.per_group);
}

TEST(CompensatedScores, OffsetShiftsSingletonGroupsOfItsLayer) {
  NetworkGraph g = three_input_net();
  const MetricVector m = compute_metrics(g, MetricKind::kL2Sq);
  const std::vector<double> beta{0.75};
  const auto s = compensated_scores(g, m, beta);
  for (std::size_t gi = 0; gi < s.size(); ++gi) EXPECT_DOUBLE_EQ(s[gi], m.per_group[gi] + 0.75);
}

TEST(CompensatedScores, CrossLayerGroupAddsEveryMembersOffset) {
  GraphBuilder b;
  b.input("in", 2, 4, 4)
      .conv("c0", "in", 3, 3, 1, 1)
      .conv("c1", "c0", 3, 3, 1, 1)
      .add("sum", "c0", "c1")
      .conv("c2", "sum", 2, 1)
      .global_avg_pool("gap", "c2")
      .dense("head", "gap", 2)
      .softmax_ce("loss", "head");
  const NetworkGraph g = b.build({8});
  const MetricVector m = compute_metrics(g, MetricKind::kL1);
  const std::vector<double> beta{0.5, -2.0, 10.0};
  const auto s = compensated_scores(g, m, beta);
  // Group 1 couples c0 filter 1 (global 1) and c1 filter 1 (global 4).
  ASSERT_EQ(m.groups.groups[1], (std::vector<std::size_t>{1, 4}));
  EXPECT_DOUBLE_EQ(s[1], m.per_filter[1] + m.per_filter[4] + 0.5 - 2.0);
  // c2 filters are singletons: global 6 and 7.
  EXPECT_DOUBLE_EQ(s[m.groups.group_of[7]], m.per_filter[7] + 10.0);
  EXPECT_THROW(compensated_scores(g, m, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Metrics, NameRoundTrip) {
  for (MetricKind k : {MetricKind::kL1, MetricKind::kL2Sq, MetricKind::kTaylor1}) {
    EXPECT_EQ(parse_metric(metric_name(k)), k);
  }
  EXPECT_FALSE(parse_metric("fisher").has_value());
}

}  // namespace
}  // namespace lcp
