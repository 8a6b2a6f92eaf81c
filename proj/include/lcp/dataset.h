#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lcp/tensor.h"

namespace lcp {

// Labelled samples: inputs [N, C, H, W] and integer labels [N].
struct Batch {
  Tensor inputs;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return labels.size(); }
  // Per-sample shape [C, H, W].
  std::vector<std::size_t> sample_shape() const;
};

using Dataset = Batch;

// Throws ShapeError/FormatError on inconsistent sizes or labels outside
// [0, num_classes).
void validate_batch(const Batch& batch, std::size_t num_classes);

Batch take(const Batch& data, std::span<const std::size_t> indices);
Batch slice(const Batch& data, std::size_t begin, std::size_t end);

// min(count, N) distinct samples chosen with the given seed, in ascending
// index order.
Batch sample_batch(const Batch& data, std::size_t count, std::uint64_t seed);

}  // namespace lcp
