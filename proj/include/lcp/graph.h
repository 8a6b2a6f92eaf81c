#pragma once
// Network intermediate representation: a validated DAG of layers with
// weights, the residual filter-group partition, and prune masks.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lcp/tensor.h"

namespace lcp {

enum class LayerKind {
  kInput,
  kConv2d,
  kDense,
  kBatchNorm,
  kRelu,
  kGlobalAvgPool,
  kAdd,
  kSoftmaxCe,
};

std::string_view kind_name(LayerKind kind);
std::optional<LayerKind> parse_kind(std::string_view name);

struct LayerDesc {
  std::string id;
  LayerKind kind = LayerKind::kInput;
  std::vector<std::string> inputs;

  // input: per-sample shape [channels, height, width].
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  // conv2d and dense. For dense, in/out_channels are feature counts.
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool bias = false;
  bool prunable = false;

  // batchnorm
  double epsilon = 1e-5;
  double momentum = 0.1;

  friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

// Tensor roles per layer kind:
//   conv2d  weight [out, in, kh, kw], bias [out] (optional)
//   dense   weight [out, in], bias [out] (optional)
//   batchnorm gamma, beta, running_mean, running_var, each [channels]
std::string tensor_key(std::string_view layer_id, std::string_view role);
bool is_trainable_role(std::string_view role);

// Position of one prunable layer inside the global filter index space.
struct PrunableLayer {
  std::size_t node = 0;    // index into NetworkGraph::layers()
  std::size_t offset = 0;  // first global filter index
  std::size_t width = 0;   // filter count n_l
};

class NetworkGraph {
 public:
  using TensorMap = std::map<std::string, Tensor>;

  // Validates and topologically orders the layers. Throws FormatError or
  // ShapeError naming the offending layer.
  static NetworkGraph create(std::vector<LayerDesc> layers, TensorMap tensors);

  const std::vector<LayerDesc>& layers() const { return layers_; }
  const LayerDesc& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t size() const { return layers_.size(); }
  std::size_t index_of(std::string_view id) const;
  const std::vector<std::size_t>& predecessors(std::size_t node) const {
    return preds_.at(node);
  }
  const std::vector<std::size_t>& consumers(std::size_t node) const {
    return consumers_.at(node);
  }

  const TensorMap& tensors() const { return tensors_; }
  const Tensor& tensor(std::string_view layer_id, std::string_view role) const;
  bool has_tensor(std::string_view layer_id, std::string_view role) const;
  // Values may change; shapes may not.
  std::span<double> tensor_values(const std::string& key);

  // Per-sample output shape of a node: [C, H, W] or [F]; empty for the loss.
  const std::vector<std::size_t>& out_shape(std::size_t node) const {
    return out_shapes_.at(node);
  }
  // For every output channel of a node, the global filter index it carries,
  // or -1 for channels that no prunable layer owns.
  const std::vector<std::int64_t>& channel_ids(std::size_t node) const {
    return channel_ids_.at(node);
  }

  std::size_t input_node() const { return input_node_; }
  std::size_t loss_node() const { return loss_node_; }
  std::size_t num_classes() const;

  // K: total prunable filters. L: prunable layer count.
  std::size_t num_filters() const { return num_filters_; }
  std::size_t num_prunable_layers() const { return prunable_.size(); }
  const std::vector<PrunableLayer>& prunable_layers() const { return prunable_; }
  // Prunable-layer index l(j) of global filter j.
  std::size_t filter_layer(std::size_t j) const { return filter_layer_.at(j); }
  // Channel position of filter j within its layer.
  std::size_t filter_channel(std::size_t j) const {
    return j - prunable_[filter_layer_.at(j)].offset;
  }
  // Prunable-layer index of a node, if it is prunable.
  std::optional<std::size_t> prunable_index(std::size_t node) const;

  std::size_t parameter_count() const;

  friend bool operator==(const NetworkGraph& a, const NetworkGraph& b) {
    return a.layers_ == b.layers_ && a.tensors_ == b.tensors_;
  }

 private:
  NetworkGraph() = default;
  void validate_and_index();

  std::vector<LayerDesc> layers_;
  TensorMap tensors_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::vector<std::size_t>> preds_;
  std::vector<std::vector<std::size_t>> consumers_;
  std::vector<std::vector<std::size_t>> out_shapes_;
  std::vector<std::vector<std::int64_t>> channel_ids_;
  std::vector<PrunableLayer> prunable_;
  std::vector<std::size_t> filter_layer_;
  std::vector<std::int64_t> node_prunable_;
  std::size_t input_node_ = 0;
  std::size_t loss_node_ = 0;
  std::size_t num_filters_ = 0;
};

// Residual coupling classes over the global filter index space.
struct FilterGroupPartition {
  // Members sorted ascending; groups ordered by their first member.
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> group_of;  // filter -> group
  // A locked group shares channels with something that cannot be pruned
  // (the input or a non-prunable layer) and must always be kept.
  std::vector<bool> locked;

  std::size_t size() const { return groups.size(); }
  std::size_t num_prunable_groups() const;
};

FilterGroupPartition build_filter_groups(const NetworkGraph& graph);

// 64-bit FNV-1a over the group member lists; identifies a partition in
// serialized masks.
std::string partition_hash(const FilterGroupPartition& partition);

struct PruneMask {
  std::vector<std::uint8_t> keep;  // 1 = keep, 0 = pruned; length K

  static PruneMask all_ones(std::size_t k) {
    return PruneMask{std::vector<std::uint8_t>(k, 1)};
  }
  std::size_t size() const { return keep.size(); }
  bool kept(std::size_t j) const { return keep[j] != 0; }
  std::size_t num_pruned() const;

  friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

// Alive filter count per prunable layer.
std::vector<std::size_t> alive_per_layer(const NetworkGraph& graph,
                                         const PruneMask& z);

// Throws MaskError if z has the wrong length, splits a group, prunes a
// locked group, or empties a prunable layer.
void check_mask(const NetworkGraph& graph, const FilterGroupPartition& groups,
                const PruneMask& z);

// Physically removes pruned filters, their batchnorm rows, and the matching
// input channels of every consumer.
NetworkGraph apply_mask(const NetworkGraph& graph, const PruneMask& z);

}  // namespace lcp
