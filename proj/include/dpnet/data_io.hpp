#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dpnet/features.hpp"
#include "dpnet/model.hpp"

namespace dpnet {

struct Dataset {
  Tensor images;            // N x C x H x W, pixel values as stored (0..255)
  std::vector<int> labels;  // N entries
  std::string split;        // tag such as "train" or "test"
};

// Parses a big-endian IDX file of unsigned bytes: 3-dimensional files
// (images) load as N x rows x cols, 1-dimensional files (labels) as N.
// Malformed files raise std::runtime_error naming the offending byte offset.
Tensor load_idx(const std::string& path);

// Writes the tensor back out as an unsigned-byte IDX file (values must be
// integers in [0, 255]; rank 1 or 3).
void save_idx(const std::string& path, const Tensor& t);

// Loads an images/labels pair, checks the counts match, and reshapes images
// to N x 1 x rows x cols. limit > 0 keeps only the first `limit` entries.
Dataset load_mnist(const std::string& images_path, const std::string& labels_path,
                   int limit = 0);

// Deterministic random subset: shuffles indices with the seed and keeps the
// first n. seed 0 keeps the first n in file order.
Dataset subset_dataset(const Dataset& d, int n, std::uint64_t seed);

// Model checkpoint: JSON header (dimensions, layer specs, mode, seed)
// followed by raw little-endian f64 filter blobs and connectivity masks.
// Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ModelState& m);
ModelState load_checkpoint(const std::string& path);

// Sparse text features, one image per line: "label idx:val idx:val ..."
// with 1-based indices and %.9g values.
void export_features(const std::string& path, const std::vector<SparseVec>& rows,
                     const std::vector<int>& labels);
std::pair<std::vector<SparseVec>, std::vector<int>> import_features(
    const std::string& path);

}  // namespace dpnet
