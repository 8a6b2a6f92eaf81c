#include "lcp/pruners.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>

#include "lcp/errors.h"

namespace lcp {
namespace {

std::size_t keep_count(double fraction, std::size_t width) {
  // The epsilon absorbs products such as 0.3 * 10 = 3.0000000000000004.
  const double k = std::ceil(fraction * static_cast<double>(width) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(k, 1.0)), 1, width);
}

// Strict weak order over groups: score, then layer and filter of the first
// member.
struct GroupOrder {
  const NetworkGraph& graph;
  const FilterGroupPartition& groups;
  std::span<const double> scores;

  bool operator()(std::size_t a, std::size_t b) const {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    const std::size_t fa = groups.groups[a].front(), fb = groups.groups[b].front();
    const std::size_t la = graph.filter_layer(fa), lb = graph.filter_layer(fb);
    if (la != lb) return la < lb;
    return fa < fb;
  }
};

void require_resolved(const ConstraintSpec& spec) {
  if (!spec.resolved()) throw std::invalid_argument("constraint must be resolved first");
}

// Per-layer top-k by group score, then per-group majority vote (tie keeps),
// then floor repair.
PruneMask top_k_per_layer(const NetworkGraph& graph, const MetricVector& m,
                          const std::vector<std::size_t>& keep,
                          const std::vector<std::size_t>& floors) {
  const FilterGroupPartition& groups = m.groups;
  std::vector<bool> selected(graph.num_filters(), false);
  for (std::size_t l = 0; l < graph.num_prunable_layers(); ++l) {
    const PrunableLayer& pl = graph.prunable_layers()[l];
    std::vector<std::size_t> idx(pl.width);
    std::iota(idx.begin(), idx.end(), pl.offset);
    auto rank = [&](std::size_t j) {
      const std::size_t g = groups.group_of[j];
      return groups.locked[g] ? std::numeric_limits<double>::infinity() : m.per_group[g];
    };
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const double ra = rank(a), rb = rank(b);
      if (ra != rb) return ra > rb;
      return a < b;
    });
    for (std::size_t k = 0; k < keep[l]; ++k) selected[idx[k]] = true;
  }

  PruneMask z = PruneMask::all_ones(graph.num_filters());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& members = groups.groups[g];
    const auto votes = static_cast<std::size_t>(
        std::count_if(members.begin(), members.end(), [&](std::size_t j) { return selected[j]; }));
    const bool keep_group = groups.locked[g] || 2 * votes >= members.size();
    if (!keep_group) {
      for (std::size_t j : members) z.keep[j] = 0;
    }
  }

  auto alive = alive_per_layer(graph, z);
  for (std::size_t l = 0; l < alive.size(); ++l) {
    if (alive[l] >= floors[l]) continue;
    // Restore the best pruned groups touching layer l.
    const PrunableLayer& pl = graph.prunable_layers()[l];
    std::vector<std::size_t> candidates;
    for (std::size_t j = pl.offset; j < pl.offset + pl.width; ++j) {
      if (!z.kept(j)) candidates.push_back(groups.group_of[j]);
    }
    std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
      if (m.per_group[a] != m.per_group[b]) return m.per_group[a] > m.per_group[b];
      return groups.groups[a].front() < groups.groups[b].front();
    });
    for (std::size_t g : candidates) {
      if (alive[l] >= floors[l]) break;
      for (std::size_t j : groups.groups[g]) {
        z.keep[j] = 1;
        ++alive[graph.filter_layer(j)];
      }
    }
  }
  return z;
}

}  // namespace

std::vector<std::size_t> FloorPolicy::resolve(const NetworkGraph& graph) const {
  if (fraction < 0.0 || fraction >= 1.0) throw std::invalid_argument("floor fraction must be in [0, 1)");
  std::vector<std::size_t> out;
  for (const PrunableLayer& pl : graph.prunable_layers()) out.push_back(keep_count(fraction, pl.width));
  return out;
}

LayerSchedule schedule_of(const NetworkGraph& graph, const PruneMask& z) {
  return LayerSchedule{alive_per_layer(graph, z)};
}

PruneMask uniform_prune(const NetworkGraph& graph, const MetricVector& metrics,
                        double keep_fraction, const FloorPolicy& floor) {
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0) {
    throw std::invalid_argument("keep_fraction must be in (0, 1]");
  }
  if (keep_fraction < floor.fraction) {
    throw std::invalid_argument("keep_fraction " + std::to_string(keep_fraction) +
                                " is below the floor " + std::to_string(floor.fraction));
  }
  std::vector<std::size_t> keep;
  for (const PrunableLayer& pl : graph.prunable_layers()) keep.push_back(keep_count(keep_fraction, pl.width));
  return top_k_per_layer(graph, metrics, keep, floor.resolve(graph));
}

PruneMask uniform_prune_to(const NetworkGraph& graph, const MetricVector& metrics,
                           const ConstraintSpec& spec, const FloorPolicy& floor) {
  require_resolved(spec);
  std::set<double, std::greater<>> fractions{1.0, floor.fraction > 0.0 ? floor.fraction : 1e-12};
  for (const PrunableLayer& pl : graph.prunable_layers()) {
    for (std::size_t k = 1; k <= pl.width; ++k) {
      const double f = static_cast<double>(k) / static_cast<double>(pl.width);
      if (f >= floor.fraction) fractions.insert(f);
    }
  }
  const CostModel model(graph);
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  for (double f : fractions) {
    PruneMask z = uniform_prune(graph, metrics, f, floor);
    const std::int64_t c = model.total(z, spec.resource);
    if (static_cast<double>(c) <= spec.zeta) return z;
    best = std::min(best, c);
  }
  throw InfeasibleError("uniform pruning cannot reach " + std::to_string(spec.zeta) +
                            "; minimum achievable " + std::to_string(best),
                        static_cast<double>(best));
}

PruneMask layer_scheduled_prune(const NetworkGraph& graph, const MetricVector& metrics,
                                const LayerSchedule& schedule, const FloorPolicy& floor) {
  const auto floors = floor.resolve(graph);
  if (schedule.keep.size() != graph.num_prunable_layers()) {
    throw std::invalid_argument("layer schedule needs one entry per prunable layer");
  }
  for (std::size_t l = 0; l < floors.size(); ++l) {
    const std::size_t width = graph.prunable_layers()[l].width;
    if (schedule.keep[l] < floors[l] || schedule.keep[l] > width) {
      throw std::invalid_argument("layer schedule entry " + std::to_string(schedule.keep[l]) +
                                  " for layer '" + graph.layer(graph.prunable_layers()[l].node).id +
                                  "' outside [" + std::to_string(floors[l]) + ", " +
                                  std::to_string(width) + "]");
    }
  }
  return top_k_per_layer(graph, metrics, schedule.keep, floors);
}

PruneMask naive_prune(const NetworkGraph& graph, const FilterGroupPartition& groups,
                      std::span<const double> group_scores, const ConstraintSpec& spec,
                      const FloorPolicy& floor, std::vector<std::size_t>* pruned_order) {
  require_resolved(spec);
  if (group_scores.size() != groups.size()) {
    throw std::invalid_argument("naive_prune: one score per group expected");
  }
  const CostModel model(graph);
  PruneMask z = PruneMask::all_ones(graph.num_filters());
  if (pruned_order) pruned_order->clear();
  std::int64_t current = model.total(z, spec.resource);
  if (static_cast<double>(current) <= spec.zeta) return z;

  std::vector<std::size_t> order;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!groups.locked[g]) order.push_back(g);
  }
  std::sort(order.begin(), order.end(), GroupOrder{graph, groups, group_scores});

  const auto floors = floor.resolve(graph);
  auto alive = alive_per_layer(graph, z);
  for (std::size_t g : order) {
    const auto& members = groups.groups[g];
    const bool blocked = std::any_of(members.begin(), members.end(), [&](std::size_t j) {
      return alive[graph.filter_layer(j)] <= floors[graph.filter_layer(j)];
    });
    if (blocked) continue;
    for (std::size_t j : members) {
      z.keep[j] = 0;
      --alive[graph.filter_layer(j)];
    }
    if (pruned_order) pruned_order->push_back(g);
    current = model.total(z, spec.resource);
    if (static_cast<double>(current) <= spec.zeta) return z;
  }
  throw InfeasibleError("constraint " + std::to_string(spec.zeta) +
                            " is infeasible under the layer floors; minimum achievable " +
                            std::to_string(current),
                        static_cast<double>(current));
}

GreedyResult single_filter_greedy(const NetworkGraph& graph, const Dataset& data,
                                  const ConstraintSpec& spec, const SingleFilterConfig& cfg,
                                  const FloorPolicy& floor) {
  require_resolved(spec);
  GreedyResult r{PruneMask::all_ones(graph.num_filters()), {}, graph};
  const CostModel model(graph);
  if (static_cast<double>(model.total(r.mask, spec.resource)) <= spec.zeta) return r;

  const auto floors = floor.resolve(graph);
  auto alive = alive_per_layer(graph, r.mask);
  const Batch grad_batch = cfg.metric == MetricKind::kTaylor1
                               ? sample_batch(data, cfg.gradient_batch, cfg.seed)
                               : Batch{};
  std::int64_t current = model.total(r.mask, spec.resource);
  for (;;) {
    GradientSet grads;
    if (cfg.metric == MetricKind::kTaylor1) {
      grads = backward(r.graph, grad_batch, &r.mask).gradients;
    }
    const MetricVector m = compute_metrics(r.graph, cfg.metric, &grads);
    const GroupOrder less{r.graph, m.groups, m.per_group};
    std::optional<std::size_t> pick;
    for (std::size_t g = 0; g < m.groups.size(); ++g) {
      const auto& members = m.groups.groups[g];
      if (m.groups.locked[g] || !r.mask.kept(members.front())) continue;
      const bool blocked = std::any_of(members.begin(), members.end(), [&](std::size_t j) {
        return alive[graph.filter_layer(j)] <= floors[graph.filter_layer(j)];
      });
      if (blocked) continue;
      if (!pick || less(g, *pick)) pick = g;
    }
    if (!pick) {
      throw InfeasibleError("constraint " + std::to_string(spec.zeta) +
                                " is infeasible under the layer floors; minimum achievable " +
                                std::to_string(current),
                            static_cast<double>(current));
    }
    for (std::size_t j : m.groups.groups[*pick]) {
      r.mask.keep[j] = 0;
      --alive[graph.filter_layer(j)];
    }
    r.pruned_order.push_back(*pick);
    current = model.total(r.mask, spec.resource);
    if (static_cast<double>(current) <= spec.zeta) return r;
    if (cfg.tune_interval > 0 && r.pruned_order.size() % cfg.tune_interval == 0) {
      r.graph = finetune(r.graph, data, cfg.tune, &r.mask);
    }
  }
}

}  // namespace lcp
