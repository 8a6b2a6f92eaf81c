#include "lcp/builder.h"

#include <cmath>
#include <stdexcept>

namespace lcp {

GraphBuilder& GraphBuilder::push(LayerDesc d, std::size_t out_channels) {
  channels_[d.id] = out_channels;
  layers_.push_back(std::move(d));
  return *this;
}

std::size_t GraphBuilder::channels(const std::string& id) const {
  const auto it = channels_.find(id);
  if (it == channels_.end()) throw std::invalid_argument("builder: unknown layer '" + id + "'");
  return it->second;
}

GraphBuilder& GraphBuilder::input(const std::string& id, std::size_t c, std::size_t h,
                                  std::size_t w) {
  LayerDesc d;
  d.id = id;
  d.kind = LayerKind::kInput;
  d.channels = c;
  d.height = h;
  d.width = w;
  return push(std::move(d), c);
}

GraphBuilder& GraphBuilder::conv(const std::string& id, const std::string& in,
                                 std::size_t out_channels, std::size_t kernel, std::size_t stride,
                                 std::size_t padding, bool prunable, bool bias) {
  LayerDesc d;
  d.id = id;
  d.kind = LayerKind::kConv2d;
  d.inputs = {in};
  d.kernel_h = d.kernel_w = kernel;
  d.stride = stride;
  d.padding = padding;
  d.in_channels = channels(in);
  d.out_channels = out_channels;
  d.prunable = prunable;
  d.bias = bias;
  return push(std::move(d), out_channels);
}

GraphBuilder& GraphBuilder::dense(const std::string& id, const std::string& in,
                                  std::size_t out_features, bool prunable, bool bias) {
  LayerDesc d;
  d.id = id;
  d.kind = LayerKind::kDense;
  d.inputs = {in};
  d.in_channels = channels(in);
  d.out_channels = out_features;
  d.prunable = prunable;
  d.bias = bias;
  return push(std::move(d), out_features);
}

GraphBuilder& GraphBuilder::batchnorm(const std::string& id, const std::string& in) {
  LayerDesc d;
  d.id = id;
  d.kind = LayerKind::kBatchNorm;
  d.inputs = {in};
  return push(std::move(d), channels(in));
}

GraphBuilder& GraphBuilder::relu(const std::string& id, const std::string& in) {
  LayerDesc d;
  d.id = id;
  d.kind = LayerKind::kRelu;
  d.inputs = {in};
  return push(std::move(d), channels(in));
}

GraphBuilder& GraphBuilder::global_avg_pool(const std::string& id, const std::string& in) {
  LayerDesc d;
  d.id = id;
  d.kind = LayerKind::kGlobalAvgPool;
  d.inputs = {in};
  return push(std::move(d), channels(in));
}

GraphBuilder& GraphBuilder::add(const std::string& id, const std::string& a,
                                const std::string& b) {
  LayerDesc d;
  d.id = id;
  d.kind = LayerKind::kAdd;
  d.inputs = {a, b};
  return push(std::move(d), channels(a));
}

GraphBuilder& GraphBuilder::softmax_ce(const std::string& id, const std::string& in) {
  LayerDesc d;
  d.id = id;
  d.kind = LayerKind::kSoftmaxCe;
  d.inputs = {in};
  return push(std::move(d), channels(in));
}

NetworkGraph GraphBuilder::build(const InitOptions& opts) const {
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  NetworkGraph::TensorMap tensors;

  auto normal = [&](std::vector<std::size_t> shape, double scale) {
    Tensor t(std::move(shape), 0.0);
    for (double& v : t.values()) v = scale * n01(rng);
    return t;
  };
  auto bias = [&](std::size_t n) {
    return opts.random_bias ? normal({n}, 0.1) : Tensor({n}, 0.0);
  };

  for (const LayerDesc& d : layers_) {
    switch (d.kind) {
      case LayerKind::kConv2d: {
        const double fan_in = static_cast<double>(d.in_channels * d.kernel_h * d.kernel_w);
        tensors.emplace(tensor_key(d.id, "weight"),
                        normal({d.out_channels, d.in_channels, d.kernel_h, d.kernel_w},
                               std::sqrt(2.0 / fan_in)));
        if (d.bias) tensors.emplace(tensor_key(d.id, "bias"), bias(d.out_channels));
        break;
      }
      case LayerKind::kDense: {
        const double fan_in = static_cast<double>(d.in_channels);
        tensors.emplace(tensor_key(d.id, "weight"),
                        normal({d.out_channels, d.in_channels}, std::sqrt(2.0 / fan_in)));
        if (d.bias) tensors.emplace(tensor_key(d.id, "bias"), bias(d.out_channels));
        break;
      }
      case LayerKind::kBatchNorm: {
        const std::size_t c = channels_.at(d.id);
        Tensor gamma({c}, 1.0), beta({c}, 0.0), mean({c}, 0.0), var({c}, 1.0);
        if (opts.random_batchnorm) {
          for (std::size_t i = 0; i < c; ++i) {
            gamma[i] = 0.5 + unit(rng);
            beta[i] = 0.2 * n01(rng);
            mean[i] = 0.2 * n01(rng);
            var[i] = 0.5 + unit(rng);
          }
        }
        tensors.emplace(tensor_key(d.id, "gamma"), std::move(gamma));
        tensors.emplace(tensor_key(d.id, "beta"), std::move(beta));
        tensors.emplace(tensor_key(d.id, "running_mean"), std::move(mean));
        tensors.emplace(tensor_key(d.id, "running_var"), std::move(var));
        break;
      }
      default:
        break;
    }
  }
  return NetworkGraph::create(layers_, std::move(tensors));
}

}  // namespace lcp
