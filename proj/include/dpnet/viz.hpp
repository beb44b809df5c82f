#pragma once

#include <cstdint>
#include <vector>

#include "dpnet/image_io.hpp"
#include "dpnet/inference.hpp"
#include "dpnet/model.hpp"

namespace dpnet {

// Grid of per-map tiles of layer `k`'s filters, each tile min-max normalized
// to the full gray range (constant tiles render mid-gray). Multi-channel
// filters lay their channels out left to right inside the tile. Tiles are
// packed into a near-square grid with 1px black separators.
Image8 render_filters(const ModelState& m, int k);

// RGB composition of one inferred image: every top-layer map gets a fixed
// golden-angle hue and adds |its isolated reconstruction| into the canvas, so
// overlapping features blend additively. Verifies that the per-map
// reconstructions sum to the joint one before rendering and throws
// std::runtime_error if they do not.
Image8 render_decomposition(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                            const ModelState& m);

struct InvarianceGrid {
  Image8 image;
  std::vector<int> inactive_maps;  // 1-based maps with no activation anywhere
};

// One row per top-layer map, n_samples tiles per row. Each tile projects a
// single activation -- drawn from the dataset's activations of that map with
// probability proportional to magnitude -- down through the drawn image's own
// pooling variables. Maps that never fire get blank rows and are flagged.
InvarianceGrid render_invariance_samples(const std::vector<const IstaState*>& states,
                                         const ModelState& m, int n_samples,
                                         std::uint64_t seed);

}  // namespace dpnet
