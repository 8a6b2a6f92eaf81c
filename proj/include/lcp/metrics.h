#pragma once
// Per-filter heuristic importance scores and their residual-group sums.

#include <optional>
#include <string_view>
#include <vector>

#include "lcp/engine.h"
#include "lcp/graph.h"

namespace lcp {

enum class MetricKind {
  kL1,      // sum |w| over the filter
  kL2Sq,    // sum w^2 over the filter
  kTaylor1  // |mean(grad * w)| over the filter
};

std::string_view metric_name(MetricKind kind);
std::optional<MetricKind> parse_metric(std::string_view name);

struct MetricVector {
  MetricKind kind = MetricKind::kL2Sq;
  std::vector<double> per_filter;  // K entries
  std::vector<double> per_group;   // one per partition group
  std::vector<double> sigma;       // L entries: population std per layer
  FilterGroupPartition groups;
};

// Gradients are required for kTaylor1 and ignored otherwise.
MetricVector compute_metrics(const NetworkGraph& graph, MetricKind kind,
                             const GradientSet* gradients = nullptr);

// Group score under per-layer offsets: sum over members of M_j + beta[l(j)].
// beta must have L entries.
std::vector<double> compensated_scores(const NetworkGraph& graph, const MetricVector& m,
                                       std::span<const double> beta);

}  // namespace lcp
