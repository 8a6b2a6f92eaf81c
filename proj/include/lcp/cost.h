#pragma once
// Exact MAC and parameter accounting under a prune mask.
//
// Only conv2d and dense layers carry MACs: a conv contributes
// H_out * W_out * k_h * k_w * alive_in * alive_out and a dense layer
// alive_in * alive_out. Bias adds, batchnorm, relu, add and pooling count
// zero MACs. Parameters count every stored tensor element of surviving
// channels: kernels, biases and all four batchnorm vectors.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "lcp/graph.h"

namespace lcp {

enum class Resource { kMacs, kParams };

std::string_view resource_name(Resource r);
std::optional<Resource> parse_resource(std::string_view name);

struct ConstraintSpec {
  Resource resource = Resource::kMacs;
  double target = 1.0;
  bool fractional = true;  // target is a fraction of the unpruned cost
  double zeta = 0.0;       // resolved absolute budget; 0 until resolved

  bool resolved() const { return zeta > 0.0; }
};

struct CostReport {
  std::int64_t total = 0;
  std::map<std::string, std::int64_t> per_layer;
};

CostReport macs(const NetworkGraph& graph, const PruneMask& z);
CostReport params(const NetworkGraph& graph, const PruneMask& z);
CostReport cost(const NetworkGraph& graph, const PruneMask& z, Resource r);

// Unpruned cost C(1).
std::int64_t full_cost(const NetworkGraph& graph, Resource r);

// Fills zeta from target against the graph's unpruned cost. Throws
// std::invalid_argument unless 0 < zeta <= C(1).
ConstraintSpec resolve(const NetworkGraph& graph, ConstraintSpec spec);

// True iff the chosen resource total is <= zeta. spec must be resolved.
bool satisfies(const NetworkGraph& graph, const PruneMask& z, const ConstraintSpec& spec);

// Precomputed cost evaluator used inside pruning loops; totals agree with
// cost() exactly.
class CostModel {
 public:
  explicit CostModel(const NetworkGraph& graph);

  std::int64_t total(const PruneMask& z, Resource r) const;
  CostReport report(const PruneMask& z, Resource r) const;

 private:
  struct Term {
    std::string layer;
    LayerKind kind;
    std::size_t in_node;   // channel space feeding the layer
    std::size_t out_node;  // channel space the layer emits
    std::int64_t macs_per_pair;    // multiplied by alive_in * alive_out
    std::int64_t params_per_pair;  // multiplied by alive_in * alive_out
    std::int64_t params_per_out;   // multiplied by alive_out
  };

  std::size_t alive(std::size_t node, const PruneMask& z) const;
  std::int64_t term_cost(const Term& t, const PruneMask& z, Resource r) const;

  const NetworkGraph* graph_;
  std::vector<Term> terms_;
};

}  // namespace lcp
