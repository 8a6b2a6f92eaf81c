#pragma once
// On-disk interchange format.
//
// A model bundle is a directory holding model.json plus one raw blob per
// tensor: little-endian IEEE-754 float32, row-major. A dataset bundle is a
// directory holding data.json plus inputs.bin (float32 [N, C, H, W]) and
// labels.bin (int32 [N]). docs/FORMAT.md describes every field.
//
// Weights are float64 in memory; loading upcasts exactly and saving rounds
// to nearest float32. Saving is canonical (sorted keys, fixed indentation),
// so save(load(p)) of a canonical bundle is byte-identical.

#include <filesystem>

#include "lcp/dataset.h"
#include "lcp/graph.h"

namespace lcp {

inline constexpr int kBundleVersion = 1;

// Accepts the bundle directory or the path of its model.json.
NetworkGraph load_model(const std::filesystem::path& path);
void save_model(const NetworkGraph& graph, const std::filesystem::path& dir);

// Accepts the bundle directory or the path of its data.json.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& data, std::size_t num_classes,
                  const std::filesystem::path& dir);

}  // namespace lcp
