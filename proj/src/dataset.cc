#include "lcp/dataset.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "lcp/errors.h"

namespace lcp {

std::vector<std::size_t> Batch::sample_shape() const {
  if (inputs.rank() != 4) return {};
  return {inputs.dim(1), inputs.dim(2), inputs.dim(3)};
}

void validate_batch(const Batch& batch, std::size_t num_classes) {
  if (batch.inputs.rank() != 4) throw ShapeError("batch inputs must be [N, C, H, W]");
  if (batch.inputs.dim(0) != batch.labels.size()) {
    throw ShapeError("batch has " + std::to_string(batch.inputs.dim(0)) + " inputs but " +
                     std::to_string(batch.labels.size()) + " labels");
  }
  if (batch.labels.empty()) throw ShapeError("batch is empty");
  for (std::int32_t y : batch.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw FormatError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
  if (!batch.inputs.all_finite()) throw FormatError("batch inputs contain non-finite values");
}

Batch take(const Batch& data, std::span<const std::size_t> indices) {
  Tensor::Shape shape = data.inputs.shape();
  shape[0] = indices.size();
  const std::size_t per = data.inputs.row_size();
  std::vector<double> values;
  values.reserve(indices.size() * per);
  std::vector<std::int32_t> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto row = data.inputs.row(i);
    values.insert(values.end(), row.begin(), row.end());
    labels.push_back(data.labels.at(i));
  }
  return Batch{Tensor(shape, std::move(values)), std::move(labels)};
}

Batch slice(const Batch& data, std::size_t begin, std::size_t end) {
  end = std::min(end, data.size());
  std::vector<std::size_t> idx(end > begin ? end - begin : 0);
  std::iota(idx.begin(), idx.end(), begin);
  return take(data, idx);
}

Batch sample_batch(const Batch& data, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  count = std::min(count, idx.size());
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return take(data, idx);
}

}  // namespace lcp
