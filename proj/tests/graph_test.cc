#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include <json.hpp>

#include "lcp/builder.h"
#include "lcp/bundle.h"
#include "lcp/desknet.h"
#include "lcp/errors.h"
#include "lcp/graph.h"
#include "support/test_support.h"

namespace lcp {
namespace {

namespace fs = std::filesystem;

NetworkGraph two_conv_toy() {
  GraphBuilder b;
  b.input("in", 2, 6, 6)
      .conv("c1", "in", 3, 3, 1, 1)
      .relu("r1", "c1")
      .conv("c2", "r1", 5, 3, 1, 1)
      .global_avg_pool("gap", "c2")
      .dense("head", "gap", 2)
      .softmax_ce("loss", "head");
  return b.build({7, true, true});
}

// in -> c0 -> (c1 -> bn) + c0 -> add; each conv has `width` filters.
NetworkGraph residual_block(std::size_t width) {
  GraphBuilder b;
  b.input("in", 2, 4, 4)
      .conv("c0", "in", width, 3, 1, 1)
      .conv("c1", "c0", width, 3, 1, 1)
      .batchnorm("bn", "c1")
      .add("sum", "c0", "bn")
      .global_avg_pool("gap", "sum")
      .dense("head", "gap", 2)
      .softmax_ce("loss", "head");
  return b.build();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

LayerDesc layer(const std::string& id, LayerKind kind, std::vector<std::string> inputs) {
  LayerDesc d;
  d.id = id;
  d.kind = kind;
  d.inputs = std::move(inputs);
  return d;
}

template <typename Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

TEST(Tensor, LengthMustMatchShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.row(1)[0], 4.0);
  EXPECT_EQ(t.row_size(), 3u);
}

TEST(Graph, FilterCountIsSumOfPrunableOutChannels) {
  const NetworkGraph g = two_conv_toy();
  EXPECT_EQ(g.num_filters(), 3u + 5u);
  EXPECT_EQ(g.num_prunable_layers(), 2u);
  EXPECT_EQ(g.prunable_layers()[1].offset, 3u);
  EXPECT_EQ(g.filter_layer(4), 1u);
  EXPECT_EQ(g.filter_channel(4), 1u);
}

TEST(Graph, DeskNetMatchesDeclaredCounts) {
  const NetworkGraph g = desknet::make_network(0);
  // conv1..conv6 have 16, 16, 16, 24, 24, 32 filters; fc1 has 32 units.
  EXPECT_EQ(g.num_filters(), 160u);
  EXPECT_EQ(g.num_filters(), desknet::kNumFilters);
  EXPECT_EQ(g.num_prunable_layers(), desknet::kNumPrunableLayers);
  EXPECT_EQ(g.num_classes(), 4u);
}

TEST(Graph, RejectsCycleNamingLayer) {
  std::vector<LayerDesc> layers{layer("in", LayerKind::kInput, {}),
                                layer("a", LayerKind::kRelu, {"b"}),
                                layer("b", LayerKind::kRelu, {"a"}),
                                layer("loss", LayerKind::kSoftmaxCe, {"in"})};
  layers[0].channels = 2, layers[0].height = layers[0].width = 1;
  const std::string msg = error_of([&] { NetworkGraph::create(layers, {}); });
  EXPECT_NE(msg.find("cyclic"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'a'"), std::string::npos) << msg;
}

TEST(Graph, RejectsDanglingPredecessor) {
  std::vector<LayerDesc> layers{layer("in", LayerKind::kInput, {}),
                                layer("r", LayerKind::kRelu, {"nowhere"}),
                                layer("loss", LayerKind::kSoftmaxCe, {"r"})};
  const std::string msg = error_of([&] { NetworkGraph::create(layers, {}); });
  EXPECT_NE(msg.find("'r'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("nowhere"), std::string::npos) << msg;
}

TEST(Graph, RejectsDuplicateIdsAndMissingLoss) {
  std::vector<LayerDesc> dup{layer("in", LayerKind::kInput, {}), layer("in", LayerKind::kRelu, {"in"})};
  EXPECT_THROW(NetworkGraph::create(dup, {}), FormatError);
  std::vector<LayerDesc> no_loss{layer("in", LayerKind::kInput, {})};
  no_loss[0].channels = no_loss[0].height = no_loss[0].width = 1;
  EXPECT_THROW(NetworkGraph::create(no_loss, {}), FormatError);
}

TEST(Graph, RejectsAddWithMismatchedShapes) {
  GraphBuilder b;
  b.input("in", 2, 4, 4).conv("a", "in", 3, 1).conv("b", "in", 4, 1);
  b.add("sum", "a", "b").global_avg_pool("gap", "sum").dense("head", "gap", 2).softmax_ce("loss", "head");
  const std::string msg = error_of([&] { b.build(); });
  EXPECT_NE(msg.find("'sum'"), std::string::npos) << msg;
}

TEST(Graph, RejectsWrongWeightShape) {
  const NetworkGraph g = two_conv_toy();
  auto tensors = g.tensors();
  tensors[tensor_key("c2", "weight")] = Tensor({5, 3, 3, 2}, 0.0);
  const std::string msg = error_of([&] { NetworkGraph::create(g.layers(), tensors); });
  EXPECT_NE(msg.find("'c2'"), std::string::npos) << msg;
}

TEST(FilterGroups, LinearChainGivesSingletons) {
  const FilterGroupPartition p = build_filter_groups(two_conv_toy());
  ASSERT_EQ(p.size(), 8u);
  for (std::size_t g = 0; g < p.size(); ++g) {
    EXPECT_EQ(p.groups[g], std::vector<std::size_t>{g});
    EXPECT_FALSE(p.locked[g]);
  }
}

TEST(FilterGroups, ResidualBlockPairsMatchingChannels) {
  const FilterGroupPartition p = build_filter_groups(residual_block(4));
  ASSERT_EQ(p.size(), 4u);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(p.groups[c], (std::vector<std::size_t>{c, 4 + c}));
  }
}

TEST(FilterGroups, ChainedResidualGivesTriples) {
  GraphBuilder b;
  b.input("in", 2, 4, 4)
      .conv("c0", "in", 3, 3, 1, 1)
      .conv("c1", "c0", 3, 3, 1, 1)
      .add("s1", "c0", "c1")
      .conv("c2", "s1", 3, 3, 1, 1)
      .add("s2", "s1", "c2")
      .global_avg_pool("gap", "s2")
      .dense("head", "gap", 2)
      .softmax_ce("loss", "head");
  const FilterGroupPartition p = build_filter_groups(b.build());
  ASSERT_EQ(p.size(), 3u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(p.groups[c], (std::vector<std::size_t>{c, 3 + c, 6 + c}));
  }
}

TEST(FilterGroups, CouplingToUnprunableChannelsLocksTheGroup) {
  GraphBuilder b;
  b.input("in", 2, 4, 4)
      .conv("c0", "in", 3, 3, 1, 1, /*prunable=*/false)
      .conv("c1", "c0", 3, 3, 1, 1)
      .add("sum", "c0", "c1")
      .conv("c2", "sum", 2, 1)
      .global_avg_pool("gap", "c2")
      .dense("head", "gap", 2)
      .softmax_ce("loss", "head");
  const NetworkGraph g = b.build();
  const FilterGroupPartition p = build_filter_groups(g);
  ASSERT_EQ(p.size(), 5u);
  EXPECT_EQ(p.num_prunable_groups(), 2u);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_TRUE(p.locked[p.group_of[j]]);
  PruneMask z = PruneMask::all_ones(5);
  z.keep[0] = 0;
  EXPECT_THROW(check_mask(g, p, z), MaskError);
}

TEST(FilterGroups, PartitionPropertyOnRandomDags) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    testing::RandomGraphOptions opts;
    opts.num_adds = trial % 4;
    const NetworkGraph g = testing::random_graph(rng, opts);
    const FilterGroupPartition p = build_filter_groups(g);
    std::vector<int> seen(g.num_filters(), 0);
    for (std::size_t gi = 0; gi < p.size(); ++gi) {
      ASSERT_FALSE(p.groups[gi].empty());
      std::set<std::size_t> layers;
      for (std::size_t j : p.groups[gi]) {
        ++seen.at(j);
        EXPECT_EQ(p.group_of[j], gi);
        EXPECT_TRUE(layers.insert(g.filter_layer(j)).second) << "two filters of one layer in a group";
      }
      if (gi > 0) { EXPECT_LT(p.groups[gi - 1].front(), p.groups[gi].front()); }
    }
    for (int s : seen) EXPECT_EQ(s, 1);
    // Add operands at the same channel position share a group, or lock it.
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g.layer(i).kind != LayerKind::kAdd) continue;
      const auto& a = g.channel_ids(g.predecessors(i)[0]);
      const auto& b = g.channel_ids(g.predecessors(i)[1]);
      for (std::size_t c = 0; c < a.size(); ++c) {
        if (a[c] >= 0 && b[c] >= 0) {
          EXPECT_EQ(p.group_of[a[c]], p.group_of[b[c]]);
        } else if (a[c] >= 0 || b[c] >= 0) {
          EXPECT_TRUE(p.locked[p.group_of[std::max(a[c], b[c])]]);
        }
      }
    }
  }
}

TEST(PartitionHash, StableAndDiscriminating) {
  const auto a = build_filter_groups(residual_block(4));
  EXPECT_EQ(partition_hash(a), partition_hash(build_filter_groups(residual_block(4))));
  EXPECT_NE(partition_hash(a), partition_hash(build_filter_groups(residual_block(3))));
  EXPECT_EQ(partition_hash(a).size(), 16u);
}

TEST(ApplyMask, AllOnesIsIdentity) {
  const NetworkGraph g = two_conv_toy();
  EXPECT_EQ(apply_mask(g, PruneMask::all_ones(g.num_filters())), g);
}

TEST(ApplyMask, ConsumerLosesInputSlice) {
  const NetworkGraph g = two_conv_toy();
  PruneMask z = PruneMask::all_ones(g.num_filters());
  z.keep[1] = 0;  // c1 filter 1
  const NetworkGraph p = apply_mask(g, z);
  const Tensor& w1 = p.tensor("c1", "weight");
  EXPECT_EQ(w1.shape(), (Tensor::Shape{2, 2, 3, 3}));
  const Tensor& w2 = p.tensor("c2", "weight");
  const Tensor& w2_full = g.tensor("c2", "weight");
  ASSERT_EQ(w2.shape(), (Tensor::Shape{5, 2, 3, 3}));
  for (std::size_t o = 0; o < 5; ++o) {
    for (std::size_t k = 0; k < 9; ++k) {
      EXPECT_EQ(w2[(o * 2 + 0) * 9 + k], w2_full[(o * 3 + 0) * 9 + k]);
      EXPECT_EQ(w2[(o * 2 + 1) * 9 + k], w2_full[(o * 3 + 2) * 9 + k]);
    }
  }
  EXPECT_EQ(p.num_filters(), 7u);
}

TEST(ApplyMask, BatchnormRowsFollowTheirChannels) {
  const NetworkGraph g = residual_block(4);
  PruneMask z = PruneMask::all_ones(8);
  z.keep[2] = z.keep[6] = 0;
  const NetworkGraph p = apply_mask(g, z);
  const Tensor& gamma = p.tensor("bn", "gamma");
  ASSERT_EQ(gamma.size(), 3u);
  EXPECT_EQ(gamma[2], g.tensor("bn", "gamma")[3]);
  EXPECT_EQ(p.tensor("head", "weight").shape(), (Tensor::Shape{2, 3}));
}

TEST(ApplyMask, RejectsEmptyLayerAndSplitGroups) {
  const NetworkGraph g = residual_block(2);
  PruneMask split = PruneMask::all_ones(4);
  split.keep[0] = 0;
  EXPECT_THROW(apply_mask(g, split), MaskError);
  PruneMask empty = PruneMask::all_ones(4);
  empty.keep = {0, 0, 0, 0};
  EXPECT_THROW(apply_mask(g, empty), MaskError);
  EXPECT_THROW(apply_mask(g, PruneMask::all_ones(3)), MaskError);
}

TEST(Bundle, RoundTripIsByteIdentical) {
  std::mt19937_64 rng(5);
  const NetworkGraph g = testing::random_graph(rng, {2, true, true});
  const fs::path a = testing::temp_dir("bundle_a"), b = testing::temp_dir("bundle_b");
  save_model(g, a);
  const NetworkGraph loaded = load_model(a);
  save_model(loaded, b);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(read_file(entry.path()), read_file(b / entry.path().filename())) << entry.path();
  }
  EXPECT_GT(files, 1u);
  EXPECT_EQ(load_model(b / "model.json"), loaded);
  EXPECT_EQ(loaded.num_filters(), g.num_filters());
}

TEST(Bundle, ShortBlobIsShapeErrorNamingLayer) {
  const NetworkGraph g = two_conv_toy();
  const fs::path dir = testing::temp_dir("short_blob");
  save_model(g, dir);
  const fs::path blob = dir / "c2.weight.bin";
  const std::string bytes = read_file(blob);
  std::ofstream(blob, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() - 4);
  try {
    load_model(dir);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("c2"), std::string::npos) << e.what();
  }
}

TEST(Bundle, CyclicManifestIsRejected) {
  const NetworkGraph g = two_conv_toy();
  const fs::path dir = testing::temp_dir("cyclic");
  save_model(g, dir);
  nlohmann::json j = nlohmann::json::parse(read_file(dir / "model.json"));
  for (auto& l : j["layers"]) {
    if (l["id"] == "c1") l["inputs"] = {"c2"};
  }
  std::ofstream(dir / "model.json", std::ios::trunc) << j.dump(2);
  const std::string msg = error_of([&] { load_model(dir); });
  EXPECT_NE(msg.find("cyclic"), std::string::npos) << msg;
}

TEST(Bundle, MalformedManifestIsFormatError) {
  const fs::path dir = testing::temp_dir("malformed");
  std::ofstream(dir / "model.json") << "{\"format\": \"lcp-model\", \"version\": 1, \"layers\": 3}";
  EXPECT_THROW(load_model(dir), FormatError);
  EXPECT_THROW(load_model(testing::temp_dir("missing")), FormatError);
}

TEST(Bundle, NonFiniteWeightsRejected) {
  const NetworkGraph g = two_conv_toy();
  const fs::path dir = testing::temp_dir("nan");
  save_model(g, dir);
  std::string bytes = read_file(dir / "c1.weight.bin");
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data(), &nan, 4);
  std::ofstream(dir / "c1.weight.bin", std::ios::binary | std::ios::trunc) << bytes;
  EXPECT_THROW(load_model(dir), FormatError);
}

TEST(Bundle, DatasetRoundTrip) {
  const NetworkGraph g = two_conv_toy();
  const Batch data = testing::random_batch(g, 9, 3);
  const fs::path dir = testing::temp_dir("data");
  save_dataset(data, 2, dir);
  const Dataset back = load_dataset(dir / "data.json");
  ASSERT_EQ(back.labels, data.labels);
  ASSERT_EQ(back.inputs.shape(), data.inputs.shape());
  for (std::size_t i = 0; i < data.inputs.size(); ++i) {
    EXPECT_EQ(back.inputs[i], static_cast<double>(static_cast<float>(data.inputs[i])));
  }
}

TEST(Dataset, LabelsOutOfRangeRejected) {
  const NetworkGraph g = two_conv_toy();
  Batch data = testing::random_batch(g, 4, 3);
  data.labels[2] = 5;
  EXPECT_THROW(validate_batch(data, 2), FormatError);
}

TEST(Dataset, SampleBatchIsSeededAndSorted) {
  const NetworkGraph g = two_conv_toy();
  const Batch data = testing::random_batch(g, 50, 3);
  const Batch a = sample_batch(data, 10, 42), b = sample_batch(data, 10, 42);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(sample_batch(data, 500, 1).size(), 50u);
}

}  // namespace
}  // namespace lcp
