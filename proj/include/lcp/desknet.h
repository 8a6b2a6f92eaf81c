#pragma once
// Reference desk-scale workload: an 8-conv residual net on a seeded
// synthetic 4-class image set (oriented sinusoidal gratings, 3x16x16).

#include <cstdint>
#include <filesystem>

#include "lcp/dataset.h"
#include "lcp/engine.h"
#include "lcp/graph.h"

namespace lcp::desknet {

inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kSide = 16;

// Declared architecture counts.
inline constexpr std::size_t kNumFilters = 16 + 16 + 16 + 24 + 24 + 32 + 32;
inline constexpr std::size_t kNumPrunableLayers = 7;

struct DataConfig {
  std::size_t train_size = 4000;
  std::size_t test_size = 1000;
  double noise = 2.0;
  std::uint64_t seed = 0;
};

struct Data {
  Dataset train;
  Dataset test;
};

Data make_data(const DataConfig& cfg = {});

// Untrained network with He-normal weights.
NetworkGraph make_network(std::uint64_t seed = 0);

// Training recipe used for the reference bundle.
TuneConfig training_config(std::uint64_t seed = 0);

struct Reference {
  NetworkGraph graph;
  Data data;
  EvalResult train_eval;
  EvalResult test_eval;
};

Reference train_reference(std::uint64_t seed = 0);

// Writes model/, train/ and test/ bundles under dir.
void save_reference(const Reference& ref, const std::filesystem::path& dir);

}  // namespace lcp::desknet
