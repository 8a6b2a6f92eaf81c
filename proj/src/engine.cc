#include "lcp/engine.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lcp/errors.h"
#include "lcp/kernels.h"

namespace lcp {
namespace {

// Samples per inference-mode chunk; bounds activation memory.
constexpr std::size_t kChunk = 128;

struct BnState {
  std::vector<double> mean;     // batch mean (training mode)
  std::vector<double> var;      // biased batch variance (training mode)
  std::vector<double> inv_std;  // per channel
  std::size_t count = 0;        // elements per channel in the batch
};

void im2col(const double* x, std::size_t c, std::size_t h, std::size_t w, const LayerDesc& d,
            std::size_t ho, std::size_t wo, double* col) {
  const std::size_t hw_out = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < d.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < d.kernel_w; ++kj) {
        double* row = col + ((ci * d.kernel_h + ki) * d.kernel_w + kj) * hw_out;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * d.stride + ki) -
                          static_cast<std::ptrdiff_t>(d.padding);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * d.stride + kj) -
                            static_cast<std::ptrdiff_t>(d.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix < static_cast<std::ptrdiff_t>(w);
            row[oy * wo + ox] = inside ? x[(ci * h + static_cast<std::size_t>(iy)) * w +
                                           static_cast<std::size_t>(ix)]
                                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t c, std::size_t h, std::size_t w,
                const LayerDesc& d, std::size_t ho, std::size_t wo, double* dx) {
  const std::size_t hw_out = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < d.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < d.kernel_w; ++kj) {
        const double* row = col + ((ci * d.kernel_h + ki) * d.kernel_w + kj) * hw_out;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * d.stride + ki) -
                          static_cast<std::ptrdiff_t>(d.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * d.stride + kj) -
                            static_cast<std::ptrdiff_t>(d.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dx[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                row[oy * wo + ox];
          }
        }
      }
    }
  }
}

class Executor {
 public:
  Executor(const NetworkGraph& g, const PruneMask* mask, BnMode mode) : g_(g), mode_(mode) {
    const std::size_t n = g.size();
    node_mask_.assign(n, {});
    per_sample_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& shape = g.out_shape(i);
      per_sample_[i] = shape.empty() ? 0 : shape_product(shape);
      if (mask == nullptr) continue;
      const auto& ids = g.channel_ids(i);
      std::vector<std::uint8_t> keep(ids.size(), 1);
      bool any = false;
      for (std::size_t c = 0; c < ids.size(); ++c) {
        if (ids[c] >= 0 && !mask->kept(static_cast<std::size_t>(ids[c]))) {
          keep[c] = 0;
          any = true;
        }
      }
      if (any) node_mask_[i] = std::move(keep);
    }
    acts_.assign(n, {});
    bn_.assign(n, {});
  }

  // Returns the summed per-sample loss.
  double forward(const double* inputs, const std::int32_t* labels, std::size_t count) {
    n_ = count;
    labels_ = labels;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < g_.size(); ++i) {
      const LayerDesc& d = g_.layer(i);
      std::vector<double>& y = acts_[i];
      y.assign(n_ * per_sample_[i], 0.0);
      switch (d.kind) {
        case LayerKind::kInput:
          std::copy(inputs, inputs + y.size(), y.begin());
          break;
        case LayerKind::kConv2d:
          conv_forward(i, y);
          break;
        case LayerKind::kDense:
          dense_forward(i, y);
          break;
        case LayerKind::kBatchNorm:
          bn_forward(i, y);
          break;
        case LayerKind::kRelu: {
          const auto& x = acts_[pred(i, 0)];
          for (std::size_t k = 0; k < y.size(); ++k) y[k] = x[k] > 0.0 ? x[k] : 0.0;
          break;
        }
        case LayerKind::kGlobalAvgPool: {
          const auto& in_shape = g_.out_shape(pred(i, 0));
          const std::size_t c = in_shape[0], s = in_shape[1] * in_shape[2];
          const auto& x = acts_[pred(i, 0)];
          for (std::size_t k = 0; k < n_ * c; ++k) {
            double sum = 0.0;
            for (std::size_t p = 0; p < s; ++p) sum += x[k * s + p];
            y[k] = sum / static_cast<double>(s);
          }
          break;
        }
        case LayerKind::kAdd: {
          const auto& a = acts_[pred(i, 0)];
          const auto& b = acts_[pred(i, 1)];
          for (std::size_t k = 0; k < y.size(); ++k) y[k] = a[k] + b[k];
          break;
        }
        case LayerKind::kSoftmaxCe:
          loss_sum = softmax_forward(i);
          break;
      }
      apply_node_mask(i, y);
      if (!std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); })) {
        throw DivergenceError("non-finite activation at layer '" + d.id + "'");
      }
    }
    if (!std::isfinite(loss_sum)) {
      throw DivergenceError("non-finite loss at layer '" + g_.layer(g_.loss_node()).id + "'");
    }
    return loss_sum;
  }

  std::size_t correct() const { return correct_; }

  // Accumulates gradients of scale * (summed loss) into grads.
  void backward(double scale, GradientSet& grads) {
    const std::size_t n = g_.size();
    grads_.assign(n, {});
    {
      const std::size_t loss = g_.loss_node();
      const std::size_t k = g_.num_classes();
      auto& gl = grad_buf(pred(loss, 0));
      for (std::size_t s = 0; s < n_; ++s) {
        for (std::size_t c = 0; c < k; ++c) {
          const double target = static_cast<std::size_t>(labels_[s]) == c ? 1.0 : 0.0;
          gl[s * k + c] += (probs_[s * k + c] - target) * scale;
        }
      }
    }
    for (std::size_t i = n; i-- > 0;) {
      const LayerDesc& d = g_.layer(i);
      if (d.kind == LayerKind::kSoftmaxCe || d.kind == LayerKind::kInput) continue;
      if (grads_[i].empty()) continue;  // not on a path to the loss
      std::vector<double>& gy = grads_[i];
      apply_node_mask(i, gy);
      switch (d.kind) {
        case LayerKind::kConv2d:
          conv_backward(i, gy, grads);
          break;
        case LayerKind::kDense:
          dense_backward(i, gy, grads);
          break;
        case LayerKind::kBatchNorm:
          bn_backward(i, gy, grads);
          break;
        case LayerKind::kRelu: {
          const std::size_t p = pred(i, 0);
          if (!wants_grad(p)) break;
          const auto& x = acts_[p];
          auto& gx = grad_buf(p);
          for (std::size_t k = 0; k < gy.size(); ++k) {
            if (x[k] > 0.0) gx[k] += gy[k];
          }
          break;
        }
        case LayerKind::kGlobalAvgPool: {
          const std::size_t p = pred(i, 0);
          if (!wants_grad(p)) break;
          const auto& in_shape = g_.out_shape(p);
          const std::size_t s = in_shape[1] * in_shape[2];
          const double inv = 1.0 / static_cast<double>(s);
          auto& gx = grad_buf(p);
          for (std::size_t k = 0; k < gy.size(); ++k) {
            const double v = gy[k] * inv;
            for (std::size_t q = 0; q < s; ++q) gx[k * s + q] += v;
          }
          break;
        }
        case LayerKind::kAdd:
          for (int side = 0; side < 2; ++side) {
            const std::size_t p = pred(i, side);
            if (!wants_grad(p)) continue;
            auto& gx = grad_buf(p);
            for (std::size_t k = 0; k < gy.size(); ++k) gx[k] += gy[k];
          }
          break;
        default:
          break;
      }
      std::vector<double>().swap(gy);
    }
  }

  const BnState& bn_state(std::size_t node) const { return bn_[node]; }

 private:
  std::size_t pred(std::size_t node, std::size_t k) const { return g_.predecessors(node)[k]; }

  bool wants_grad(std::size_t node) const {
    return g_.layer(node).kind != LayerKind::kInput;
  }

  std::vector<double>& grad_buf(std::size_t node) {
    auto& b = grads_[node];
    if (b.empty()) b.assign(n_ * per_sample_[node], 0.0);
    return b;
  }

  void apply_node_mask(std::size_t i, std::vector<double>& v) const {
    const auto& keep = node_mask_[i];
    if (keep.empty() || v.empty()) return;
    const std::size_t c = keep.size();
    const std::size_t s = per_sample_[i] / c;
    for (std::size_t smp = 0; smp < n_; ++smp) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (keep[ch]) continue;
        double* p = v.data() + (smp * c + ch) * s;
        std::fill(p, p + s, 0.0);
      }
    }
  }

  void conv_forward(std::size_t i, std::vector<double>& y) {
    const LayerDesc& d = g_.layer(i);
    const auto& in = g_.out_shape(pred(i, 0));
    const auto& out = g_.out_shape(i);
    const std::size_t ckk = d.in_channels * d.kernel_h * d.kernel_w;
    const std::size_t hw = out[1] * out[2];
    const Tensor& w = g_.tensor(d.id, "weight");
    const Tensor* b = d.bias ? &g_.tensor(d.id, "bias") : nullptr;
    const auto& x = acts_[pred(i, 0)];
    col_.resize(ckk * hw);
    const std::size_t in_size = per_sample_[pred(i, 0)];
    for (std::size_t s = 0; s < n_; ++s) {
      im2col(x.data() + s * in_size, in[0], in[1], in[2], d, out[1], out[2], col_.data());
      for (std::size_t o = 0; o < d.out_channels; ++o) {
        std::span<double> yo(y.data() + (s * d.out_channels + o) * hw, hw);
        if (b) std::fill(yo.begin(), yo.end(), (*b)[o]);
        kernels::accumulate_rows(w.row(o), col_, hw, yo);
      }
    }
  }

  void conv_backward(std::size_t i, const std::vector<double>& gy, GradientSet& grads) {
    const LayerDesc& d = g_.layer(i);
    const std::size_t p = pred(i, 0);
    const auto& in = g_.out_shape(p);
    const auto& out = g_.out_shape(i);
    const std::size_t ckk = d.in_channels * d.kernel_h * d.kernel_w;
    const std::size_t hw = out[1] * out[2];
    const std::size_t oc = d.out_channels;
    const Tensor& w = g_.tensor(d.id, "weight");
    Tensor& gw = grads.at(tensor_key(d.id, "weight"));
    Tensor* gb = d.bias ? &grads.at(tensor_key(d.id, "bias")) : nullptr;
    const bool need_dx = wants_grad(p);

    std::vector<double> wt;
    if (need_dx) {
      wt.resize(ckk * oc);
      for (std::size_t o = 0; o < oc; ++o) {
        for (std::size_t k = 0; k < ckk; ++k) wt[k * oc + o] = w[o * ckk + k];
      }
    }
    const auto& x = acts_[p];
    const std::size_t in_size = per_sample_[p];
    col_.resize(ckk * hw);
    std::vector<double> dcol(need_dx ? ckk * hw : 0);
    for (std::size_t s = 0; s < n_; ++s) {
      const double* gs = gy.data() + s * oc * hw;
      im2col(x.data() + s * in_size, in[0], in[1], in[2], d, out[1], out[2], col_.data());
      for (std::size_t o = 0; o < oc; ++o) {
        std::span<const double> go(gs + o * hw, hw);
        double* gwo = gw.data() + o * ckk;
        for (std::size_t k = 0; k < ckk; ++k) {
          gwo[k] += kernels::dot(go, std::span<const double>(col_.data() + k * hw, hw));
        }
        if (gb) (*gb)[o] += std::accumulate(go.begin(), go.end(), 0.0);
      }
      if (need_dx) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        std::span<const double> gspan(gs, oc * hw);
        for (std::size_t k = 0; k < ckk; ++k) {
          kernels::accumulate_rows(std::span<const double>(wt.data() + k * oc, oc), gspan, hw,
                                   std::span<double>(dcol.data() + k * hw, hw));
        }
        col2im_add(dcol.data(), in[0], in[1], in[2], d, out[1], out[2],
                   grad_buf(p).data() + s * in_size);
      }
    }
  }

  void dense_forward(std::size_t i, std::vector<double>& y) {
    const LayerDesc& d = g_.layer(i);
    const Tensor& w = g_.tensor(d.id, "weight");
    const Tensor* b = d.bias ? &g_.tensor(d.id, "bias") : nullptr;
    const auto& x = acts_[pred(i, 0)];
    for (std::size_t s = 0; s < n_; ++s) {
      std::span<const double> xs(x.data() + s * d.in_channels, d.in_channels);
      for (std::size_t o = 0; o < d.out_channels; ++o) {
        y[s * d.out_channels + o] = (b ? (*b)[o] : 0.0) + kernels::dot(w.row(o), xs);
      }
    }
  }

  void dense_backward(std::size_t i, const std::vector<double>& gy, GradientSet& grads) {
    const LayerDesc& d = g_.layer(i);
    const std::size_t p = pred(i, 0);
    const Tensor& w = g_.tensor(d.id, "weight");
    Tensor& gw = grads.at(tensor_key(d.id, "weight"));
    Tensor* gb = d.bias ? &grads.at(tensor_key(d.id, "bias")) : nullptr;
    const auto& x = acts_[p];
    const bool need_dx = wants_grad(p);
    for (std::size_t s = 0; s < n_; ++s) {
      std::span<const double> xs(x.data() + s * d.in_channels, d.in_channels);
      std::span<const double> gs(gy.data() + s * d.out_channels, d.out_channels);
      for (std::size_t o = 0; o < d.out_channels; ++o) {
        kernels::axpy(gs[o], xs, gw.row(o));
        if (gb) (*gb)[o] += gs[o];
      }
      if (need_dx) {
        kernels::accumulate_rows(gs, w.values(), d.in_channels,
                                 std::span<double>(grad_buf(p).data() + s * d.in_channels,
                                                   d.in_channels));
      }
    }
  }

  void bn_forward(std::size_t i, std::vector<double>& y) {
    const LayerDesc& d = g_.layer(i);
    const auto& shape = g_.out_shape(i);
    const std::size_t c = shape[0];
    const std::size_t s = per_sample_[i] / c;
    const auto& x = acts_[pred(i, 0)];
    const Tensor& gamma = g_.tensor(d.id, "gamma");
    const Tensor& beta = g_.tensor(d.id, "beta");
    BnState& st = bn_[i];
    st.inv_std.assign(c, 0.0);
    st.count = n_ * s;
    if (mode_ == BnMode::kTraining) {
      st.mean.assign(c, 0.0);
      st.var.assign(c, 0.0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (std::size_t smp = 0; smp < n_; ++smp) {
          const double* xp = x.data() + (smp * c + ch) * s;
          for (std::size_t q = 0; q < s; ++q) sum += xp[q];
        }
        const double mean = sum / static_cast<double>(st.count);
        double sq = 0.0;
        for (std::size_t smp = 0; smp < n_; ++smp) {
          const double* xp = x.data() + (smp * c + ch) * s;
          for (std::size_t q = 0; q < s; ++q) sq += (xp[q] - mean) * (xp[q] - mean);
        }
        st.mean[ch] = mean;
        st.var[ch] = sq / static_cast<double>(st.count);
        st.inv_std[ch] = 1.0 / std::sqrt(st.var[ch] + d.epsilon);
      }
    } else {
      const Tensor& rm = g_.tensor(d.id, "running_mean");
      const Tensor& rv = g_.tensor(d.id, "running_var");
      st.mean.assign(rm.values().begin(), rm.values().end());
      for (std::size_t ch = 0; ch < c; ++ch) st.inv_std[ch] = 1.0 / std::sqrt(rv[ch] + d.epsilon);
    }
    for (std::size_t smp = 0; smp < n_; ++smp) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + (smp * c + ch) * s;
        double* yp = y.data() + (smp * c + ch) * s;
        for (std::size_t q = 0; q < s; ++q) {
          yp[q] = gamma[ch] * ((xp[q] - st.mean[ch]) * st.inv_std[ch]) + beta[ch];
        }
      }
    }
  }

  void bn_backward(std::size_t i, const std::vector<double>& gy, GradientSet& grads) {
    const LayerDesc& d = g_.layer(i);
    const std::size_t p = pred(i, 0);
    const std::size_t c = g_.out_shape(i)[0];
    const std::size_t s = per_sample_[i] / c;
    const auto& x = acts_[p];
    const Tensor& gamma = g_.tensor(d.id, "gamma");
    Tensor& ggamma = grads.at(tensor_key(d.id, "gamma"));
    Tensor& gbeta = grads.at(tensor_key(d.id, "beta"));
    const BnState& st = bn_[i];
    const bool need_dx = wants_grad(p);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t smp = 0; smp < n_; ++smp) {
        const double* xp = x.data() + (smp * c + ch) * s;
        const double* gp = gy.data() + (smp * c + ch) * s;
        for (std::size_t q = 0; q < s; ++q) {
          sum_g += gp[q];
          sum_gx += gp[q] * ((xp[q] - st.mean[ch]) * st.inv_std[ch]);
        }
      }
      ggamma[ch] += sum_gx;
      gbeta[ch] += sum_g;
      if (!need_dx) continue;
      auto& gx = grad_buf(p);
      const double k = gamma[ch] * st.inv_std[ch];
      if (mode_ == BnMode::kInference) {
        for (std::size_t smp = 0; smp < n_; ++smp) {
          const double* gp = gy.data() + (smp * c + ch) * s;
          double* dp = gx.data() + (smp * c + ch) * s;
          for (std::size_t q = 0; q < s; ++q) dp[q] += k * gp[q];
        }
      } else {
        const double m = static_cast<double>(st.count);
        const double mean_g = sum_g / m;
        const double mean_gx = sum_gx / m;
        for (std::size_t smp = 0; smp < n_; ++smp) {
          const double* xp = x.data() + (smp * c + ch) * s;
          const double* gp = gy.data() + (smp * c + ch) * s;
          double* dp = gx.data() + (smp * c + ch) * s;
          for (std::size_t q = 0; q < s; ++q) {
            const double xhat = (xp[q] - st.mean[ch]) * st.inv_std[ch];
            dp[q] += k * (gp[q] - mean_g - xhat * mean_gx);
          }
        }
      }
    }
  }

  double softmax_forward(std::size_t i) {
    const std::size_t k = g_.num_classes();
    const auto& z = acts_[pred(i, 0)];
    probs_.assign(n_ * k, 0.0);
    correct_ = 0;
    double loss = 0.0;
    for (std::size_t s = 0; s < n_; ++s) {
      const double* zs = z.data() + s * k;
      const std::size_t arg = static_cast<std::size_t>(std::max_element(zs, zs + k) - zs);
      const double mx = zs[arg];
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) sum += std::exp(zs[c] - mx);
      const double lse = mx + std::log(sum);
      for (std::size_t c = 0; c < k; ++c) probs_[s * k + c] = std::exp(zs[c] - lse);
      const auto y = static_cast<std::size_t>(labels_[s]);
      loss += lse - zs[y];
      if (arg == y) ++correct_;
    }
    return loss;
  }

  const NetworkGraph& g_;
  BnMode mode_;
  std::vector<std::vector<std::uint8_t>> node_mask_;
  std::vector<std::size_t> per_sample_;
  std::vector<std::vector<double>> acts_;
  std::vector<std::vector<double>> grads_;
  std::vector<BnState> bn_;
  std::vector<double> probs_;
  std::vector<double> col_;
  const std::int32_t* labels_ = nullptr;
  std::size_t n_ = 0;
  std::size_t correct_ = 0;
};

void check_inputs(const NetworkGraph& g, const Batch& batch, const PruneMask* mask) {
  validate_batch(batch, g.num_classes());
  if (batch.sample_shape() != g.out_shape(g.input_node())) {
    throw ShapeError("batch sample shape does not match input layer '" +
                     g.layer(g.input_node()).id + "'");
  }
  if (mask && mask->size() != g.num_filters()) {
    throw MaskError("mask length " + std::to_string(mask->size()) + " != K = " +
                    std::to_string(g.num_filters()));
  }
}

GradientSet zero_gradients(const NetworkGraph& g) {
  GradientSet grads;
  for (const auto& [key, t] : g.tensors()) {
    if (is_trainable_role(key.substr(key.find('.') + 1))) grads.emplace(key, Tensor(t.shape()));
  }
  return grads;
}

}  // namespace

EvalResult evaluate(const NetworkGraph& graph, const Batch& batch, const PruneMask* mask) {
  check_inputs(graph, batch, mask);
  Executor ex(graph, mask, BnMode::kInference);
  const std::size_t n = batch.size();
  const std::size_t per = batch.inputs.row_size();
  EvalResult r;
  double sum = 0.0;
  for (std::size_t b = 0; b < n; b += kChunk) {
    const std::size_t m = std::min(kChunk, n - b);
    sum += ex.forward(batch.inputs.data() + b * per, batch.labels.data() + b, m);
    r.correct += ex.correct();
  }
  r.count = n;
  r.loss = sum / static_cast<double>(n);
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(n);
  return r;
}

double forward_loss(const NetworkGraph& graph, const Batch& batch, const PruneMask* mask) {
  return evaluate(graph, batch, mask).loss;
}

BackwardResult backward(const NetworkGraph& graph, const Batch& batch, const PruneMask* mask,
                        BnMode mode) {
  check_inputs(graph, batch, mask);
  BackwardResult r;
  r.gradients = zero_gradients(graph);
  Executor ex(graph, mask, mode);
  const std::size_t n = batch.size();
  const std::size_t per = batch.inputs.row_size();
  const double scale = 1.0 / static_cast<double>(n);
  // Batch statistics couple samples, so training mode runs in one piece.
  const std::size_t chunk = mode == BnMode::kTraining ? n : kChunk;
  double sum = 0.0;
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t m = std::min(chunk, n - b);
    sum += ex.forward(batch.inputs.data() + b * per, batch.labels.data() + b, m);
    ex.backward(scale, r.gradients);
  }
  r.loss = sum * scale;
  return r;
}

double loss_delta(const NetworkGraph& graph, const Batch& batch, const PruneMask& mask) {
  return std::abs(forward_loss(graph, batch) - forward_loss(graph, batch, &mask));
}

std::vector<double> single_filter_deltas(const NetworkGraph& graph, const Batch& batch) {
  const double base = forward_loss(graph, batch);
  const FilterGroupPartition groups = build_filter_groups(graph);
  std::vector<double> out;
  PruneMask z = PruneMask::all_ones(graph.num_filters());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups.locked[g]) continue;
    for (std::size_t j : groups.groups[g]) z.keep[j] = 0;
    out.push_back(std::abs(base - forward_loss(graph, batch, &z)));
    for (std::size_t j : groups.groups[g]) z.keep[j] = 1;
  }
  return out;
}

void validate(const TuneConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(cfg.drop_factor > 0.0)) throw std::invalid_argument("drop_factor must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw std::invalid_argument("momentum must be in [0, 1)");
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
}

NetworkGraph finetune(const NetworkGraph& graph, const Dataset& data, const TuneConfig& cfg,
                      const PruneMask* mask, TuneStats* stats) {
  validate(cfg);
  NetworkGraph tuned = graph;
  if (cfg.epochs == 0) return tuned;
  check_inputs(graph, data, mask);

  std::map<std::string, std::vector<double>> velocity;
  for (const auto& [key, t] : graph.tensors()) {
    if (is_trainable_role(key.substr(key.find('.') + 1))) velocity[key].assign(t.size(), 0.0);
  }
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per = data.inputs.row_size();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.learning_rate;
    for (int e : cfg.drop_epochs) {
      if (epoch >= e) lr *= cfg.drop_factor;
    }
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t m = std::min(cfg.batch_size, order.size() - b);
      std::vector<double> inputs(m * per);
      std::vector<std::int32_t> labels(m);
      for (std::size_t k = 0; k < m; ++k) {
        const auto row = data.inputs.row(order[b + k]);
        std::copy(row.begin(), row.end(), inputs.begin() + static_cast<std::ptrdiff_t>(k * per));
        labels[k] = data.labels[order[b + k]];
      }
      GradientSet grads = zero_gradients(tuned);
      Executor ex(tuned, mask, BnMode::kTraining);
      double loss;
      try {
        loss = ex.forward(inputs.data(), labels.data(), m) / static_cast<double>(m);
      } catch (const DivergenceError& e) {
        throw DivergenceError("finetune diverged in epoch " + std::to_string(epoch) + ": " +
                              e.what());
      }
      ex.backward(1.0 / static_cast<double>(m), grads);
      epoch_loss += loss;
      ++batches;

      for (std::size_t i = 0; i < tuned.size(); ++i) {
        const LayerDesc& d = tuned.layer(i);
        if (d.kind != LayerKind::kBatchNorm) continue;
        const BnState& st = ex.bn_state(i);
        auto rm = tuned.tensor_values(tensor_key(d.id, "running_mean"));
        auto rv = tuned.tensor_values(tensor_key(d.id, "running_var"));
        const double unbias = st.count > 1 ? static_cast<double>(st.count) /
                                                 static_cast<double>(st.count - 1)
                                           : 1.0;
        for (std::size_t c = 0; c < rm.size(); ++c) {
          rm[c] = (1.0 - d.momentum) * rm[c] + d.momentum * st.mean[c];
          rv[c] = (1.0 - d.momentum) * rv[c] + d.momentum * st.var[c] * unbias;
        }
      }
      for (auto& [key, g] : grads) {
        auto w = tuned.tensor_values(key);
        auto& v = velocity[key];
        for (std::size_t k = 0; k < w.size(); ++k) {
          v[k] = cfg.momentum * v[k] + g[k];
          const double step = cfg.nesterov ? g[k] + cfg.momentum * v[k] : v[k];
          w[k] -= lr * step;
        }
      }
    }
    if (stats) stats->epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }
  for (const auto& [key, t] : tuned.tensors()) {
    if (!t.all_finite()) throw DivergenceError("finetune produced non-finite weights in " + key);
  }
  return tuned;
}

}  // namespace lcp
