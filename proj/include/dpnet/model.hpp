#pragma once

#include <cstdint>
#include <vector>

#include "dpnet/conv_ops.hpp"
#include "dpnet/pooling.hpp"
#include "dpnet/tensor.hpp"

namespace dpnet {

enum class PoolMode { gaussian, max };

struct LayerSpec {
  int maps = 0;         // feature maps B_k
  int filter_size = 5;  // square filter extent
  int pool_size = 2;    // pooling neighborhood extent s
  int fan_in = 0;       // connected input channels per map (0 = all)
  double lambda = 1.0;  // reconstruction weight of this layer's objective
  double alpha = 1.0;   // sparsity exponent of this layer's objective
};

// Extents derived from the layer chain. Layer k reconstructs an input of
// in_h x in_w (the image for k=1, the pooled maps below otherwise); its
// unpooled maps add filter_size-1, and pooling divides by pool_size.
struct LayerDims {
  int in_maps = 0, in_h = 0, in_w = 0;
  int un_h = 0, un_w = 0;
  int out_h = 0, out_w = 0;
};

struct ModelState {
  int input_channels = 1, input_h = 0, input_w = 0;
  std::vector<LayerSpec> layers;
  std::vector<FilterBank> filters;
  std::vector<LayerDims> dims;
  PoolMode pool_mode = PoolMode::gaussian;
  bool nonneg = true;       // non-negativity projections on features/filters
  std::uint64_t seed = 0;

  int num_layers() const { return static_cast<int>(layers.size()); }
  // Dims of layer k's pooled feature maps (k is 1-based).
  std::vector<int> feature_dims(int k) const {
    const LayerDims& d = dims.at(static_cast<std::size_t>(k) - 1);
    return {layers[static_cast<std::size_t>(k) - 1].maps, d.out_h, d.out_w};
  }
};

// Validates the chain (every unpooled extent divisible by its pool size) and
// initializes filter banks from per-layer substreams of `seed`.
ModelState make_model(int input_channels, int input_h, int input_w,
                      std::vector<LayerSpec> layers, std::uint64_t seed,
                      PoolMode mode = PoolMode::gaussian, bool nonneg = true,
                      double init_sigma = 0.01);

// Copy of m truncated to layers 1..top (shares filter values).
ModelState slice_model(const ModelState& m, int top);

// Copies src's filter banks (and masks) into dst's leading layers. Each
// adopted layer must match in maps, filter size, and fan-in shape; src may
// have fewer layers than dst, which warm-starts a deeper model.
void adopt_filters(ModelState& dst, const ModelState& src);

struct CostBreakdown {
  double recon = 0.0;     // lambda/2 ||R p - v||^2
  double sparsity = 0.0;  // sum |p_i|^alpha
  double total = 0.0;
  std::size_t l0 = 0;     // nonzero count of p
};

struct ReconTrace {
  std::vector<Tensor> zhat;  // unpooled maps per layer, zhat[k-1]
  std::vector<Tensor> phat;  // top-down pooled maps for layers 1..l-1
  Tensor vhat;
};

struct PropTrace {
  std::vector<Tensor> err_z;  // taps at each layer's unpooled maps, err_z[k-1]
  Tensor grad_p;              // R^T e at the top layer
};

// Top-down reconstruction v-hat = F1 U1 ... Fl Ul p. One PoolWeights entry
// per layer, bottom first.
Tensor reconstruct(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                   const ModelState& m);
ReconTrace reconstruct_trace(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                             const ModelState& m);

// Top-down pooled maps p-hat_k of layer k (k = top returns p_top itself).
Tensor reconstruct_to_layer(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                            const ModelState& m, int k);

// Adjoint R^T applied to a pixel-space tensor.
Tensor forward_prop(const Tensor& e, const std::vector<PoolWeights>& ws,
                    const ModelState& m);
PropTrace forward_prop_trace(const Tensor& e, const std::vector<PoolWeights>& ws,
                             const ModelState& m);

CostBreakdown cost(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                   const ModelState& m, const Tensor& v, double lambda, double alpha);
// Uses the top layer's spec lambda/alpha.
CostBreakdown cost(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                   const ModelState& m, const Tensor& v);

// Sparsity penalty sum_i |p_i|^alpha (alpha in {1, 0.5}).
double sparsity_cost(const Tensor& p, double alpha);

}  // namespace dpnet
