#include "lcp/graph.h"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <functional>
#include <queue>
#include <set>

#include "lcp/errors.h"

namespace lcp {
namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::kInput, "input"},
    {LayerKind::kConv2d, "conv2d"},
    {LayerKind::kDense, "dense"},
    {LayerKind::kBatchNorm, "batchnorm"},
    {LayerKind::kRelu, "relu"},
    {LayerKind::kGlobalAvgPool, "global_avg_pool"},
    {LayerKind::kAdd, "add"},
    {LayerKind::kSoftmaxCe, "softmax_ce"},
};

[[noreturn]] void fail(const std::string& layer, const std::string& msg) {
  throw FormatError("layer '" + layer + "': " + msg);
}

[[noreturn]] void fail_shape(const std::string& layer, const std::string& msg) {
  throw ShapeError("layer '" + layer + "': " + msg);
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t expected_arity(LayerKind kind) {
  switch (kind) {
    case LayerKind::kInput:
      return 0;
    case LayerKind::kAdd:
      return 2;
    default:
      return 1;
  }
}

// Expected tensors (role -> shape) for a layer given its input shape.
std::vector<std::pair<std::string, Tensor::Shape>> expected_tensors(
    const LayerDesc& d, const std::vector<std::size_t>& in_shape) {
  switch (d.kind) {
    case LayerKind::kConv2d: {
      std::vector<std::pair<std::string, Tensor::Shape>> out{
          {"weight", {d.out_channels, d.in_channels, d.kernel_h, d.kernel_w}}};
      if (d.bias) out.push_back({"bias", {d.out_channels}});
      return out;
    }
    case LayerKind::kDense: {
      std::vector<std::pair<std::string, Tensor::Shape>> out{
          {"weight", {d.out_channels, d.in_channels}}};
      if (d.bias) out.push_back({"bias", {d.out_channels}});
      return out;
    }
    case LayerKind::kBatchNorm: {
      const std::size_t c = in_shape.at(0);
      return {{"gamma", {c}}, {"beta", {c}}, {"running_mean", {c}}, {"running_var", {c}}};
    }
    default:
      return {};
  }
}

}  // namespace

std::string_view kind_name(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<LayerKind> parse_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

std::string tensor_key(std::string_view layer_id, std::string_view role) {
  std::string key(layer_id);
  key += '.';
  key += role;
  return key;
}

bool is_trainable_role(std::string_view role) {
  return role == "weight" || role == "bias" || role == "gamma" || role == "beta";
}

NetworkGraph NetworkGraph::create(std::vector<LayerDesc> layers, TensorMap tensors) {
  NetworkGraph g;
  g.layers_ = std::move(layers);
  g.tensors_ = std::move(tensors);
  g.validate_and_index();
  return g;
}

void NetworkGraph::validate_and_index() {
  const std::size_t n = layers_.size();
  if (n == 0) throw FormatError("graph has no layers");

  std::map<std::string, std::size_t, std::less<>> declared;
  for (std::size_t i = 0; i < n; ++i) {
    const LayerDesc& d = layers_[i];
    if (d.id.empty()) throw FormatError("layer #" + std::to_string(i) + " has an empty id");
    if (d.id.find('.') != std::string::npos) fail(d.id, "ids may not contain '.'");
    if (!declared.emplace(d.id, i).second) fail(d.id, "duplicate layer id");
  }

  // Predecessor resolution and arity.
  std::vector<std::vector<std::size_t>> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    const LayerDesc& d = layers_[i];
    if (d.inputs.size() != expected_arity(d.kind)) {
      fail(d.id, std::string(kind_name(d.kind)) + " expects " +
                     std::to_string(expected_arity(d.kind)) + " predecessor(s), got " +
                     std::to_string(d.inputs.size()));
    }
    for (const std::string& in : d.inputs) {
      auto it = declared.find(in);
      if (it == declared.end()) fail(d.id, "dangling predecessor id '" + in + "'");
      if (it->second == i) fail(d.id, "layer lists itself as predecessor");
      preds[i].push_back(it->second);
    }
    if (d.kind == LayerKind::kAdd && preds[i][0] == preds[i][1]) {
      fail(d.id, "add needs two distinct predecessors");
    }
  }

  // Kahn's algorithm; ties resolved by declaration order.
  std::vector<std::size_t> indegree(n, 0);
  std::vector<std::vector<std::size_t>> succ(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p : preds[i]) {
      succ[p].push_back(i);
      ++indegree[i];
    }
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    order.push_back(i);
    for (std::size_t s : succ[i]) {
      if (--indegree[s] == 0) ready.push(s);
    }
  }
  if (order.size() != n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (indegree[i] > 0) fail(layers_[i].id, "cyclic graph");
    }
  }

  std::vector<std::size_t> new_pos(n);
  for (std::size_t k = 0; k < n; ++k) new_pos[order[k]] = k;
  std::vector<LayerDesc> sorted;
  sorted.reserve(n);
  preds_.assign(n, {});
  for (std::size_t k = 0; k < n; ++k) {
    sorted.push_back(std::move(layers_[order[k]]));
    for (std::size_t p : preds[order[k]]) preds_[k].push_back(new_pos[p]);
  }
  layers_ = std::move(sorted);
  index_.clear();
  consumers_.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    index_.emplace(layers_[i].id, i);
    for (std::size_t p : preds_[i]) consumers_[p].push_back(i);
  }

  // Exactly one input and one loss node.
  std::optional<std::size_t> input, loss;
  for (std::size_t i = 0; i < n; ++i) {
    const LayerDesc& d = layers_[i];
    if (d.kind == LayerKind::kInput) {
      if (input) fail(d.id, "second input layer");
      input = i;
    }
    if (d.kind == LayerKind::kSoftmaxCe) {
      if (loss) fail(d.id, "second loss layer");
      loss = i;
      if (!consumers_[i].empty()) fail(d.id, "loss layer cannot have consumers");
    }
    if (d.prunable && d.kind != LayerKind::kConv2d && d.kind != LayerKind::kDense) {
      fail(d.id, "only conv2d and dense layers can be prunable");
    }
  }
  if (!input) throw FormatError("graph has no input layer");
  if (!loss) throw FormatError("graph has no softmax_ce loss layer");
  input_node_ = *input;
  loss_node_ = *loss;

  // Shape inference, tensor checks and channel ownership.
  out_shapes_.assign(n, {});
  channel_ids_.assign(n, {});
  prunable_.clear();
  node_prunable_.assign(n, -1);
  std::set<std::string> expected_keys;
  std::int64_t next_filter = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const LayerDesc& d = layers_[i];
    const std::vector<std::size_t> in_shape =
        preds_[i].empty() ? std::vector<std::size_t>{} : out_shapes_[preds_[i][0]];
    const std::vector<std::int64_t> in_ids =
        preds_[i].empty() ? std::vector<std::int64_t>{} : channel_ids_[preds_[i][0]];
    std::vector<std::size_t>& out = out_shapes_[i];
    std::vector<std::int64_t>& ids = channel_ids_[i];

    switch (d.kind) {
      case LayerKind::kInput:
        if (d.channels == 0 || d.height == 0 || d.width == 0) {
          fail_shape(d.id, "input shape must be positive");
        }
        out = {d.channels, d.height, d.width};
        ids.assign(d.channels, -1);
        break;
      case LayerKind::kConv2d: {
        if (in_shape.size() != 3) fail_shape(d.id, "conv2d needs a [C, H, W] input, got " + shape_str(in_shape));
        if (d.in_channels != in_shape[0]) {
          fail_shape(d.id, "in_channels " + std::to_string(d.in_channels) +
                               " does not match predecessor channels " +
                               std::to_string(in_shape[0]));
        }
        if (d.out_channels == 0 || d.kernel_h == 0 || d.kernel_w == 0 || d.stride == 0) {
          fail_shape(d.id, "conv2d parameters must be positive");
        }
        const std::size_t ph = in_shape[1] + 2 * d.padding;
        const std::size_t pw = in_shape[2] + 2 * d.padding;
        if (ph < d.kernel_h || pw < d.kernel_w) fail_shape(d.id, "kernel larger than padded input");
        out = {d.out_channels, (ph - d.kernel_h) / d.stride + 1, (pw - d.kernel_w) / d.stride + 1};
        break;
      }
      case LayerKind::kDense:
        if (in_shape.size() != 1) fail_shape(d.id, "dense needs a flat [F] input, got " + shape_str(in_shape));
        if (d.in_channels != in_shape[0]) {
          fail_shape(d.id, "in_channels " + std::to_string(d.in_channels) +
                               " does not match predecessor features " +
                               std::to_string(in_shape[0]));
        }
        if (d.out_channels == 0) fail_shape(d.id, "dense out_channels must be positive");
        out = {d.out_channels};
        break;
      case LayerKind::kBatchNorm:
        if (in_shape.size() != 1 && in_shape.size() != 3) fail_shape(d.id, "batchnorm input must be [C] or [C, H, W]");
        if (!(d.epsilon > 0.0)) fail(d.id, "batchnorm epsilon must be positive");
        out = in_shape;
        ids = in_ids;
        break;
      case LayerKind::kRelu:
        out = in_shape;
        ids = in_ids;
        break;
      case LayerKind::kGlobalAvgPool:
        if (in_shape.size() != 3) fail_shape(d.id, "global_avg_pool needs a [C, H, W] input");
        out = {in_shape[0]};
        ids = in_ids;
        break;
      case LayerKind::kAdd: {
        const auto& a = out_shapes_[preds_[i][0]];
        const auto& b = out_shapes_[preds_[i][1]];
        if (a != b) fail_shape(d.id, "add operand shapes differ: " + shape_str(a) + " vs " + shape_str(b));
        out = a;
        const auto& ia = channel_ids_[preds_[i][0]];
        const auto& ib = channel_ids_[preds_[i][1]];
        ids.resize(ia.size());
        for (std::size_t c = 0; c < ia.size(); ++c) ids[c] = ia[c] >= 0 ? ia[c] : ib[c];
        break;
      }
      case LayerKind::kSoftmaxCe:
        if (in_shape.size() != 1) fail_shape(d.id, "softmax_ce needs flat logits");
        if (in_shape[0] < 2) fail_shape(d.id, "softmax_ce needs at least two classes");
        break;
    }

    if (d.kind == LayerKind::kConv2d || d.kind == LayerKind::kDense) {
      if (d.prunable) {
        node_prunable_[i] = static_cast<std::int64_t>(prunable_.size());
        prunable_.push_back({i, static_cast<std::size_t>(next_filter), d.out_channels});
        ids.resize(d.out_channels);
        std::iota(ids.begin(), ids.end(), next_filter);
        next_filter += static_cast<std::int64_t>(d.out_channels);
      } else {
        ids.assign(d.out_channels, -1);
      }
    }

    for (const auto& [role, shape] : expected_tensors(d, in_shape)) {
      const std::string key = tensor_key(d.id, role);
      expected_keys.insert(key);
      auto it = tensors_.find(key);
      if (it == tensors_.end()) fail(d.id, "missing tensor '" + role + "'");
      if (it->second.shape() != shape) {
        fail_shape(d.id, "tensor '" + role + "' has shape " + shape_str(it->second.shape()) +
                             ", expected " + shape_str(shape));
      }
      if (!it->second.all_finite()) fail(d.id, "tensor '" + role + "' has non-finite entries");
      if (role == "running_var") {
        for (double v : it->second.values()) {
          if (v < 0.0) fail(d.id, "running_var has negative entries");
        }
      }
    }
  }
  for (const auto& [key, t] : tensors_) {
    if (!expected_keys.count(key)) throw FormatError("unexpected tensor '" + key + "'");
  }

  num_filters_ = static_cast<std::size_t>(next_filter);
  filter_layer_.assign(num_filters_, 0);
  for (std::size_t l = 0; l < prunable_.size(); ++l) {
    for (std::size_t c = 0; c < prunable_[l].width; ++c) filter_layer_[prunable_[l].offset + c] = l;
  }
}

std::size_t NetworkGraph::index_of(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::invalid_argument("no layer with id '" + std::string(id) + "'");
  return it->second;
}

const Tensor& NetworkGraph::tensor(std::string_view layer_id, std::string_view role) const {
  auto it = tensors_.find(tensor_key(layer_id, role));
  if (it == tensors_.end()) {
    throw std::invalid_argument("no tensor " + tensor_key(layer_id, role));
  }
  return it->second;
}

bool NetworkGraph::has_tensor(std::string_view layer_id, std::string_view role) const {
  return tensors_.count(tensor_key(layer_id, role)) != 0;
}

std::span<double> NetworkGraph::tensor_values(const std::string& key) {
  auto it = tensors_.find(key);
  if (it == tensors_.end()) throw std::invalid_argument("no tensor " + key);
  return it->second.values();
}

std::size_t NetworkGraph::num_classes() const {
  return out_shapes_[preds_[loss_node_][0]][0];
}

std::optional<std::size_t> NetworkGraph::prunable_index(std::size_t node) const {
  const std::int64_t l = node_prunable_.at(node);
  if (l < 0) return std::nullopt;
  return static_cast<std::size_t>(l);
}

std::size_t NetworkGraph::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [key, t] : tensors_) total += t.size();
  return total;
}

std::size_t FilterGroupPartition::num_prunable_groups() const {
  return static_cast<std::size_t>(std::count(locked.begin(), locked.end(), false));
}

FilterGroupPartition build_filter_groups(const NetworkGraph& graph) {
  const std::size_t k = graph.num_filters();
  std::vector<std::size_t> parent(k);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  std::vector<bool> locked_root(k, false);

  for (std::size_t i = 0; i < graph.size(); ++i) {
    if (graph.layer(i).kind != LayerKind::kAdd) continue;
    const auto& a = graph.channel_ids(graph.predecessors(i)[0]);
    const auto& b = graph.channel_ids(graph.predecessors(i)[1]);
    for (std::size_t c = 0; c < a.size(); ++c) {
      if (a[c] >= 0 && b[c] >= 0) {
        const std::size_t ra = find(static_cast<std::size_t>(a[c]));
        const std::size_t rb = find(static_cast<std::size_t>(b[c]));
        if (ra != rb) {
          const std::size_t lo = std::min(ra, rb), hi = std::max(ra, rb);
          parent[hi] = lo;
          locked_root[lo] = locked_root[lo] || locked_root[hi];
        }
      } else if (a[c] >= 0 || b[c] >= 0) {
        locked_root[find(static_cast<std::size_t>(std::max(a[c], b[c])))] = true;
      }
    }
  }

  FilterGroupPartition p;
  p.group_of.assign(k, 0);
  std::vector<std::int64_t> root_group(k, -1);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t r = find(j);
    if (root_group[r] < 0) {
      root_group[r] = static_cast<std::int64_t>(p.groups.size());
      p.groups.emplace_back();
      p.locked.push_back(false);
    }
    const auto g = static_cast<std::size_t>(root_group[r]);
    p.groups[g].push_back(j);
    p.group_of[j] = g;
    if (locked_root[r]) p.locked[g] = true;
  }
  return p;
}

std::string partition_hash(const FilterGroupPartition& partition) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t g = 0; g < partition.groups.size(); ++g) {
    for (std::size_t j : partition.groups[g]) mix(j);
    mix(partition.locked[g] ? ~std::uint64_t{1} : ~std::uint64_t{0});
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::size_t PruneMask::num_pruned() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 0));
}

std::vector<std::size_t> alive_per_layer(const NetworkGraph& graph, const PruneMask& z) {
  std::vector<std::size_t> alive(graph.num_prunable_layers(), 0);
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (z.kept(j)) ++alive[graph.filter_layer(j)];
  }
  return alive;
}

void check_mask(const NetworkGraph& graph, const FilterGroupPartition& groups,
                const PruneMask& z) {
  if (z.size() != graph.num_filters()) {
    throw MaskError("mask length " + std::to_string(z.size()) + " != K = " +
                    std::to_string(graph.num_filters()));
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& members = groups.groups[g];
    const bool first = z.kept(members.front());
    for (std::size_t j : members) {
      if (z.kept(j) != first) {
        throw MaskError("mask is not group-consistent at filter " + std::to_string(j));
      }
    }
    if (groups.locked[g] && !first) {
      throw MaskError("mask prunes locked group containing filter " +
                      std::to_string(members.front()));
    }
  }
  const auto alive = alive_per_layer(graph, z);
  for (std::size_t l = 0; l < alive.size(); ++l) {
    if (alive[l] == 0) {
      throw MaskError("mask leaves layer '" +
                      graph.layer(graph.prunable_layers()[l].node).id +
                      "' with zero filters");
    }
  }
}

namespace {

std::vector<bool> channel_keep(const NetworkGraph& g, std::size_t node, const PruneMask& z) {
  const auto& ids = g.channel_ids(node);
  std::vector<bool> keep(ids.size());
  for (std::size_t c = 0; c < ids.size(); ++c) {
    keep[c] = ids[c] < 0 || z.kept(static_cast<std::size_t>(ids[c]));
  }
  return keep;
}

std::size_t count_true(const std::vector<bool>& v) {
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), true));
}

// Keeps the selected rows (dim 0) and selected columns (dim 1) of a tensor
// of rank >= 2; trailing dims are copied whole.
Tensor select_rows_cols(const Tensor& t, const std::vector<bool>& rows,
                        const std::vector<bool>& cols) {
  Tensor::Shape shape = t.shape();
  std::size_t inner = 1;
  for (std::size_t d = 2; d < shape.size(); ++d) inner *= shape[d];
  shape[0] = count_true(rows);
  shape[1] = count_true(cols);
  std::vector<double> out;
  out.reserve(shape_product(shape));
  const std::size_t ncols = t.dim(1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r]) continue;
    for (std::size_t c = 0; c < ncols; ++c) {
      if (!cols[c]) continue;
      const double* src = t.data() + (r * ncols + c) * inner;
      out.insert(out.end(), src, src + inner);
    }
  }
  return Tensor(shape, std::move(out));
}

Tensor select_rows(const Tensor& t, const std::vector<bool>& rows) {
  std::vector<double> out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r]) out.push_back(t[r]);
  }
  const std::size_t n = out.size();
  return Tensor({n}, std::move(out));
}

}  // namespace

NetworkGraph apply_mask(const NetworkGraph& graph, const PruneMask& z) {
  check_mask(graph, build_filter_groups(graph), z);

  std::vector<LayerDesc> layers = graph.layers();
  NetworkGraph::TensorMap tensors;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    LayerDesc& d = layers[i];
    const auto out_keep = channel_keep(graph, i, z);
    switch (d.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kDense: {
        const auto in_keep = channel_keep(graph, graph.predecessors(i)[0], z);
        d.in_channels = count_true(in_keep);
        d.out_channels = count_true(out_keep);
        tensors.emplace(tensor_key(d.id, "weight"),
                        select_rows_cols(graph.tensor(d.id, "weight"), out_keep, in_keep));
        if (d.bias) {
          tensors.emplace(tensor_key(d.id, "bias"), select_rows(graph.tensor(d.id, "bias"), out_keep));
        }
        break;
      }
      case LayerKind::kBatchNorm:
        for (const char* role : {"gamma", "beta", "running_mean", "running_var"}) {
          tensors.emplace(tensor_key(d.id, role), select_rows(graph.tensor(d.id, role), out_keep));
        }
        break;
      default:
        break;
    }
  }
  return NetworkGraph::create(std::move(layers), std::move(tensors));
}

}  // namespace lcp
