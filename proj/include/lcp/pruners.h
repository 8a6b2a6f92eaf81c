#pragma once
// Mask-producing policies.
//
// Shared rules:
//  * A residual group is pruned or kept as a unit; locked groups are kept.
//  * Every prunable layer keeps at least max(1, ceil(floor * n_l)) filters.
//  * Global ordering is ascending group score, ties broken by the layer
//    index and then the filter index of the group's first member.
//  * Per-layer top-k keeps the highest group scores, ties going to the
//    lower filter index.

#include <cstddef>
#include <vector>

#include "lcp/cost.h"
#include "lcp/dataset.h"
#include "lcp/engine.h"
#include "lcp/metrics.h"

namespace lcp {

struct FloorPolicy {
  double fraction = 0.10;

  // Minimum keep count per prunable layer.
  std::vector<std::size_t> resolve(const NetworkGraph& graph) const;
};

// Filters to keep per prunable layer.
struct LayerSchedule {
  std::vector<std::size_t> keep;
};

LayerSchedule schedule_of(const NetworkGraph& graph, const PruneMask& z);

// Keeps ceil(keep_fraction * n_l) filters per layer. Throws
// std::invalid_argument if keep_fraction is outside (0, 1] or below the floor.
PruneMask uniform_prune(const NetworkGraph& graph, const MetricVector& metrics,
                        double keep_fraction, const FloorPolicy& floor = {});

// The largest uniform keep fraction whose mask satisfies spec.
PruneMask uniform_prune_to(const NetworkGraph& graph, const MetricVector& metrics,
                           const ConstraintSpec& spec, const FloorPolicy& floor = {});

PruneMask layer_scheduled_prune(const NetworkGraph& graph, const MetricVector& metrics,
                                const LayerSchedule& schedule, const FloorPolicy& floor = {});

// Global greedy: walks groups in ascending score, skipping any group whose
// removal would cross a layer floor, and stops at the first mask with
// C(z) <= zeta. group_scores has one entry per partition group. Throws
// InfeasibleError when the scan ends above zeta. If pruned_order is given
// it receives the removed group indices in removal order.
PruneMask naive_prune(const NetworkGraph& graph, const FilterGroupPartition& groups,
                      std::span<const double> group_scores, const ConstraintSpec& spec,
                      const FloorPolicy& floor = {},
                      std::vector<std::size_t>* pruned_order = nullptr);

struct GreedyResult {
  PruneMask mask;
  std::vector<std::size_t> pruned_order;  // group indices, removal order
  NetworkGraph graph;                     // weights after the short tunes
};

struct SingleFilterConfig {
  MetricKind metric = MetricKind::kL2Sq;
  TuneConfig tune;              // used for every short finetune
  std::size_t tune_interval = 0;  // prunes between short tunes; 0 = never
  std::size_t gradient_batch = 256;  // samples for taylor1 gradients
  std::uint64_t seed = 0;
};

// One group per step: recompute metrics, remove the lowest-scoring feasible
// group, and run a short masked finetune every tune_interval removals.
GreedyResult single_filter_greedy(const NetworkGraph& graph, const Dataset& data,
                                  const ConstraintSpec& spec, const SingleFilterConfig& cfg,
                                  const FloorPolicy& floor = {});

}  // namespace lcp
