#include "lcp/desknet.h"

#include <cmath>
#include <numbers>
#include <random>

#include "lcp/builder.h"
#include "lcp/bundle.h"

namespace lcp::desknet {
namespace {

Dataset make_split(std::size_t n, double noise, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_int_distribution<int> label_of(0, kNumClasses - 1);
  constexpr double pi = std::numbers::pi;

  Dataset d{Tensor({n, kChannels, kSide, kSide}, 0.0), std::vector<std::int32_t>(n)};
  auto x = d.inputs.values();
  for (std::size_t s = 0; s < n; ++s) {
    const int label = label_of(rng);
    d.labels[s] = label;
    // Orientation k * 45 degrees, jittered by up to 10 degrees.
    const double theta = label * pi / 4.0 + (unit(rng) - 0.5) * (pi / 9.0);
    const double freq = 1.5 + 1.5 * unit(rng);  // cycles per image
    const double phase = 2.0 * pi * unit(rng);
    const double cx = std::cos(theta), sy = std::sin(theta);
    for (std::size_t c = 0; c < kChannels; ++c) {
      const double amp = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + 0.5 * unit(rng));
      for (std::size_t i = 0; i < kSide; ++i) {
        for (std::size_t j = 0; j < kSide; ++j) {
          const double u = (static_cast<double>(j) * cx + static_cast<double>(i) * sy) /
                           static_cast<double>(kSide);
          x[((s * kChannels + c) * kSide + i) * kSide + j] =
              amp * std::sin(2.0 * pi * freq * u + phase) + noise * n01(rng);
        }
      }
    }
  }
  return d;
}

}  // namespace

Data make_data(const DataConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  Data out;
  out.train = make_split(cfg.train_size, cfg.noise, rng);
  out.test = make_split(cfg.test_size, cfg.noise, rng);
  return out;
}

NetworkGraph make_network(std::uint64_t seed) {
  GraphBuilder b;
  b.input("input", kChannels, kSide, kSide)
      .conv("conv1", "input", 16, 3, 1, 1)
      .batchnorm("bn1", "conv1")
      .relu("relu1", "bn1")
      .conv("conv2", "relu1", 16, 3, 1, 1)
      .batchnorm("bn2", "conv2")
      .relu("relu2", "bn2")
      .conv("conv3", "relu2", 16, 3, 1, 1)
      .batchnorm("bn3", "conv3")
      .add("res1", "relu1", "bn3")
      .relu("relu3", "res1")
      .conv("conv4", "relu3", 24, 3, 2, 1)
      .batchnorm("bn4", "conv4")
      .relu("relu4", "bn4")
      .conv("conv5", "relu4", 24, 3, 1, 1)
      .batchnorm("bn5", "conv5")
      .relu("relu5", "bn5")
      .conv("conv6", "relu5", 32, 3, 2, 1)
      .batchnorm("bn6", "conv6")
      .relu("relu6", "bn6")
      .global_avg_pool("pool", "relu6")
      .dense("fc1", "pool", 32, /*prunable=*/true)
      .relu("relu7", "fc1")
      .dense("classifier", "relu7", kNumClasses)
      .softmax_ce("loss", "classifier");
  return b.build({seed, false, false});
}

TuneConfig training_config(std::uint64_t seed) {
  TuneConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 8;
  cfg.drop_epochs = {6};
  cfg.batch_size = 64;
  cfg.seed = seed;
  return cfg;
}

Reference train_reference(std::uint64_t seed) {
  DataConfig dc;
  dc.seed = seed;
  Data data = make_data(dc);
  NetworkGraph g = finetune(make_network(seed), data.train, training_config(seed));
  const EvalResult tr = evaluate(g, data.train);
  const EvalResult te = evaluate(g, data.test);
  return {std::move(g), std::move(data), tr, te};
}

void save_reference(const Reference& ref, const std::filesystem::path& dir) {
  save_model(ref.graph, dir / "model");
  save_dataset(ref.data.train, kNumClasses, dir / "train");
  save_dataset(ref.data.test, kNumClasses, dir / "test");
}

}  // namespace lcp::desknet
