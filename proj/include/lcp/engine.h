#pragma once
// Forward and backward passes over a NetworkGraph.
//
// A prune mask zeroes a filter's output channel wherever that channel
// flows: after the producing layer, after its batchnorm and after its
// activation. That makes a masked pass equal to the pass over the
// physically pruned graph up to summation order.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lcp/dataset.h"
#include "lcp/graph.h"

namespace lcp {

enum class BnMode {
  kInference,  // running statistics
  kTraining,   // batch statistics
};

// Gradient per trainable tensor, keyed like NetworkGraph::tensors().
using GradientSet = std::map<std::string, Tensor>;

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

struct BackwardResult {
  double loss = 0.0;
  GradientSet gradients;
};

// Mean cross-entropy over the batch, batchnorm in inference mode.
double forward_loss(const NetworkGraph& graph, const Batch& batch,
                    const PruneMask* mask = nullptr);

EvalResult evaluate(const NetworkGraph& graph, const Batch& batch,
                    const PruneMask* mask = nullptr);

// Exact gradients of the mean batch loss with respect to every trainable
// tensor (weights, biases, batchnorm scale and shift).
BackwardResult backward(const NetworkGraph& graph, const Batch& batch,
                        const PruneMask* mask = nullptr,
                        BnMode mode = BnMode::kInference);

// |forward_loss(graph) - forward_loss(graph, mask)|.
double loss_delta(const NetworkGraph& graph, const Batch& batch, const PruneMask& mask);

// Measured loss delta of removing each unlocked filter group alone, in
// partition order (locked groups are skipped).
std::vector<double> single_filter_deltas(const NetworkGraph& graph, const Batch& batch);

struct TuneConfig {
  double learning_rate = 0.01;
  double drop_factor = 0.1;
  std::vector<int> drop_epochs;  // lr *= drop_factor at the start of each
  double momentum = 0.9;
  bool nesterov = true;
  int epochs = 0;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

void validate(const TuneConfig& cfg);

struct TuneStats {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

// SGD over the dataset; batchnorm runs in training mode and its running
// statistics are updated. Under a mask, pruned filters receive zero
// gradient and stay untouched. Throws DivergenceError on a non-finite loss.
NetworkGraph finetune(const NetworkGraph& graph, const Dataset& data, const TuneConfig& cfg,
                      const PruneMask* mask = nullptr, TuneStats* stats = nullptr);

}  // namespace lcp
