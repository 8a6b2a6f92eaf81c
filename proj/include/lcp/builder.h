#pragma once
// Incremental construction of a NetworkGraph with initialized weights.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lcp/graph.h"

namespace lcp {

struct InitOptions {
  std::uint64_t seed = 0;
  // Draw gamma, beta and running statistics at random instead of the
  // identity transform; useful for exercising inference-mode batchnorm.
  bool random_batchnorm = false;
  // Draw biases from N(0, 0.1) instead of zero.
  bool random_bias = false;
};

class GraphBuilder {
 public:
  GraphBuilder& input(const std::string& id, std::size_t c, std::size_t h, std::size_t w);
  GraphBuilder& conv(const std::string& id, const std::string& in, std::size_t out_channels,
                     std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0,
                     bool prunable = true, bool bias = false);
  GraphBuilder& dense(const std::string& id, const std::string& in, std::size_t out_features,
                      bool prunable = false, bool bias = true);
  GraphBuilder& batchnorm(const std::string& id, const std::string& in);
  GraphBuilder& relu(const std::string& id, const std::string& in);
  GraphBuilder& global_avg_pool(const std::string& id, const std::string& in);
  GraphBuilder& add(const std::string& id, const std::string& a, const std::string& b);
  GraphBuilder& softmax_ce(const std::string& id, const std::string& in);

  // Channel (or feature) count emitted by a layer added so far.
  std::size_t channels(const std::string& id) const;

  // He-normal conv and dense weights.
  NetworkGraph build(const InitOptions& opts = {}) const;

 private:
  GraphBuilder& push(LayerDesc d, std::size_t out_channels);

  std::vector<LayerDesc> layers_;
  std::map<std::string, std::size_t> channels_;
};

}  // namespace lcp
