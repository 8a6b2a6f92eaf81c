#include "lcp/metrics.h"

#include <cmath>
#include <stdexcept>

namespace lcp {

std::string_view metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::kL1:
      return "l1";
    case MetricKind::kL2Sq:
      return "l2sq";
    case MetricKind::kTaylor1:
      return "taylor1";
  }
  return "unknown";
}

std::optional<MetricKind> parse_metric(std::string_view name) {
  if (name == "l1") return MetricKind::kL1;
  if (name == "l2sq" || name == "l2") return MetricKind::kL2Sq;
  if (name == "taylor1" || name == "taylor") return MetricKind::kTaylor1;
  return std::nullopt;
}

MetricVector compute_metrics(const NetworkGraph& graph, MetricKind kind,
                             const GradientSet* gradients) {
  if (kind == MetricKind::kTaylor1 && gradients == nullptr) {
    throw std::invalid_argument("taylor1 metric needs gradients");
  }
  MetricVector m;
  m.kind = kind;
  m.per_filter.assign(graph.num_filters(), 0.0);
  m.sigma.assign(graph.num_prunable_layers(), 0.0);

  for (std::size_t l = 0; l < graph.num_prunable_layers(); ++l) {
    const PrunableLayer& pl = graph.prunable_layers()[l];
    const std::string& id = graph.layer(pl.node).id;
    if (pl.width == 0) throw std::invalid_argument("layer '" + id + "' has no filters");
    const Tensor& w = graph.tensor(id, "weight");
    const Tensor* g = nullptr;
    if (kind == MetricKind::kTaylor1) {
      auto it = gradients->find(tensor_key(id, "weight"));
      if (it == gradients->end() || it->second.shape() != w.shape()) {
        throw std::invalid_argument("missing or misshapen gradient for layer '" + id + "'");
      }
      g = &it->second;
    }
    for (std::size_t c = 0; c < pl.width; ++c) {
      const auto wr = w.row(c);
      double score = 0.0;
      switch (kind) {
        case MetricKind::kL1:
          for (double v : wr) score += std::abs(v);
          break;
        case MetricKind::kL2Sq:
          for (double v : wr) score += v * v;
          break;
        case MetricKind::kTaylor1: {
          const auto gr = g->row(c);
          for (std::size_t k = 0; k < wr.size(); ++k) score += gr[k] * wr[k];
          score = std::abs(score / static_cast<double>(wr.size()));
          break;
        }
      }
      m.per_filter[pl.offset + c] = score;
    }
    double mean = 0.0;
    for (std::size_t c = 0; c < pl.width; ++c) mean += m.per_filter[pl.offset + c];
    mean /= static_cast<double>(pl.width);
    double var = 0.0;
    for (std::size_t c = 0; c < pl.width; ++c) {
      const double d = m.per_filter[pl.offset + c] - mean;
      var += d * d;
    }
    m.sigma[l] = std::sqrt(var / static_cast<double>(pl.width));
  }

  m.groups = build_filter_groups(graph);
  m.per_group.assign(m.groups.size(), 0.0);
  for (std::size_t gi = 0; gi < m.groups.size(); ++gi) {
    for (std::size_t j : m.groups.groups[gi]) m.per_group[gi] += m.per_filter[j];
  }
  return m;
}

std::vector<double> compensated_scores(const NetworkGraph& graph, const MetricVector& m,
                                       std::span<const double> beta) {
  if (beta.size() != graph.num_prunable_layers()) {
    throw std::invalid_argument("beta has " + std::to_string(beta.size()) + " entries, L = " +
                                std::to_string(graph.num_prunable_layers()));
  }
  std::vector<double> scores(m.groups.size(), 0.0);
  for (std::size_t gi = 0; gi < m.groups.size(); ++gi) {
    for (std::size_t j : m.groups.groups[gi]) {
      scores[gi] += m.per_filter[j] + beta[graph.filter_layer(j)];
    }
  }
  return scores;
}

}  // namespace lcp
