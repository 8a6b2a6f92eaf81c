#include "lcp/cost.h"

#include <cmath>
#include <stdexcept>

#include "lcp/errors.h"

namespace lcp {

std::string_view resource_name(Resource r) {
  return r == Resource::kMacs ? "macs" : "params";
}

std::optional<Resource> parse_resource(std::string_view name) {
  if (name == "macs") return Resource::kMacs;
  if (name == "params") return Resource::kParams;
  return std::nullopt;
}

CostModel::CostModel(const NetworkGraph& graph) : graph_(&graph) {
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const LayerDesc& d = graph.layer(i);
    switch (d.kind) {
      case LayerKind::kConv2d: {
        const auto& out = graph.out_shape(i);
        const auto taps = static_cast<std::int64_t>(d.kernel_h * d.kernel_w);
        terms_.push_back({d.id, d.kind, graph.predecessors(i)[0], i,
                          static_cast<std::int64_t>(out[1] * out[2]) * taps, taps,
                          d.bias ? 1 : 0});
        break;
      }
      case LayerKind::kDense:
        terms_.push_back({d.id, d.kind, graph.predecessors(i)[0], i, 1, 1, d.bias ? 1 : 0});
        break;
      case LayerKind::kBatchNorm:
        terms_.push_back({d.id, d.kind, i, i, 0, 0, 4});
        break;
      default:
        break;
    }
  }
}

std::size_t CostModel::alive(std::size_t node, const PruneMask& z) const {
  std::size_t n = 0;
  for (std::int64_t id : graph_->channel_ids(node)) {
    if (id < 0 || z.kept(static_cast<std::size_t>(id))) ++n;
  }
  return n;
}

std::int64_t CostModel::term_cost(const Term& t, const PruneMask& z, Resource r) const {
  const auto out = static_cast<std::int64_t>(alive(t.out_node, z));
  if (t.kind == LayerKind::kBatchNorm) return r == Resource::kParams ? t.params_per_out * out : 0;
  const auto in = static_cast<std::int64_t>(alive(t.in_node, z));
  if (r == Resource::kMacs) return t.macs_per_pair * in * out;
  return t.params_per_pair * in * out + t.params_per_out * out;
}

std::int64_t CostModel::total(const PruneMask& z, Resource r) const {
  if (z.size() != graph_->num_filters()) {
    throw MaskError("mask length " + std::to_string(z.size()) + " != K = " +
                    std::to_string(graph_->num_filters()));
  }
  std::int64_t sum = 0;
  for (const Term& t : terms_) sum += term_cost(t, z, r);
  return sum;
}

CostReport CostModel::report(const PruneMask& z, Resource r) const {
  CostReport rep;
  rep.total = total(z, r);
  for (const Term& t : terms_) rep.per_layer[t.layer] = term_cost(t, z, r);
  return rep;
}

CostReport macs(const NetworkGraph& graph, const PruneMask& z) {
  return CostModel(graph).report(z, Resource::kMacs);
}

CostReport params(const NetworkGraph& graph, const PruneMask& z) {
  return CostModel(graph).report(z, Resource::kParams);
}

CostReport cost(const NetworkGraph& graph, const PruneMask& z, Resource r) {
  return CostModel(graph).report(z, r);
}

std::int64_t full_cost(const NetworkGraph& graph, Resource r) {
  return CostModel(graph).total(PruneMask::all_ones(graph.num_filters()), r);
}

ConstraintSpec resolve(const NetworkGraph& graph, ConstraintSpec spec) {
  const double full = static_cast<double>(full_cost(graph, spec.resource));
  spec.zeta = spec.fractional ? spec.target * full : spec.target;
  if (!(spec.zeta > 0.0) || spec.zeta > full || !std::isfinite(spec.zeta)) {
    throw std::invalid_argument("constraint resolves to " + std::to_string(spec.zeta) +
                                ", outside (0, " + std::to_string(full) + "]");
  }
  return spec;
}

bool satisfies(const NetworkGraph& graph, const PruneMask& z, const ConstraintSpec& spec) {
  if (!spec.resolved()) throw std::invalid_argument("satisfies: constraint is not resolved");
  return static_cast<double>(CostModel(graph).total(z, spec.resource)) <= spec.zeta;
}

}  // namespace lcp
