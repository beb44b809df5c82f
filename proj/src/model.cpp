#include "dpnet/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dpnet {

namespace {

void check_stack(const std::vector<PoolWeights>& ws, const ModelState& m,
                 const char* where) {
  if (ws.size() != m.layers.size())
    throw std::invalid_argument(std::string(where) + ": " + std::to_string(ws.size()) +
                                " pooling entries for " +
                                std::to_string(m.layers.size()) + " layers");
}

}  // namespace

ModelState make_model(int input_channels, int input_h, int input_w,
                      std::vector<LayerSpec> layers, std::uint64_t seed,
                      PoolMode mode, bool nonneg, double init_sigma) {
  if (input_channels <= 0 || input_h <= 0 || input_w <= 0)
    throw std::invalid_argument("make_model: bad input dimensions");
  if (layers.empty()) throw std::invalid_argument("make_model: at least one layer required");

  ModelState m;
  m.input_channels = input_channels;
  m.input_h = input_h;
  m.input_w = input_w;
  m.pool_mode = mode;
  m.nonneg = nonneg;
  m.seed = seed;

  int in_maps = input_channels, in_h = input_h, in_w = input_w;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerSpec& ls = layers[i];
    if (ls.maps <= 0 || ls.filter_size <= 0 || ls.pool_size <= 0)
      throw std::invalid_argument("make_model: layer " + std::to_string(i + 1) +
                                  " has non-positive dimensions");
    if (ls.fan_in <= 0 || ls.fan_in > in_maps) ls.fan_in = in_maps;

    LayerDims d;
    d.in_maps = in_maps;
    d.in_h = in_h;
    d.in_w = in_w;
    d.un_h = in_h + ls.filter_size - 1;
    d.un_w = in_w + ls.filter_size - 1;
    if (d.un_h % ls.pool_size != 0 || d.un_w % ls.pool_size != 0)
      throw std::invalid_argument(
          "make_model: layer " + std::to_string(i + 1) + " unpooled extent " +
          std::to_string(d.un_h) + "x" + std::to_string(d.un_w) +
          " is not divisible by pool size " + std::to_string(ls.pool_size));
    d.out_h = d.un_h / ls.pool_size;
    d.out_w = d.un_w / ls.pool_size;
    m.dims.push_back(d);

    Rng rng(Rng::derive(seed, i + 1));
    m.filters.push_back(
        init_filter_bank(ls.maps, in_maps, ls.filter_size, ls.fan_in, init_sigma, rng));
    // Fresh banks satisfy the same constraints updates maintain.
    if (nonneg)
      while (true) {
        std::vector<double> norms = project_filters(m.filters.back());
        bool dead = false;
        for (int b = 0; b < ls.maps; ++b)
          if (norms[b] == 0.0) {
            rerandomize_map(m.filters.back(), b, init_sigma, rng);
            dead = true;
          }
        if (!dead) break;
      }

    in_maps = ls.maps;
    in_h = d.out_h;
    in_w = d.out_w;
  }
  m.layers = std::move(layers);
  return m;
}

ModelState slice_model(const ModelState& m, int top) {
  if (top < 1 || top > m.num_layers())
    throw std::invalid_argument("slice_model: layer " + std::to_string(top) +
                                " out of range");
  ModelState s = m;
  s.layers.resize(static_cast<std::size_t>(top));
  s.filters.resize(static_cast<std::size_t>(top));
  s.dims.resize(static_cast<std::size_t>(top));
  return s;
}

void adopt_filters(ModelState& dst, const ModelState& src) {
  if (src.num_layers() > dst.num_layers())
    throw std::invalid_argument("adopt_filters: source has more layers than destination");
  for (int k = 0; k < src.num_layers(); ++k) {
    const FilterBank& from = src.filters[static_cast<std::size_t>(k)];
    FilterBank& to = dst.filters[static_cast<std::size_t>(k)];
    std::string where = "adopt_filters layer " + std::to_string(k + 1);
    check_same_dims(from.filters, to.filters, where.c_str());
    to = from;
  }
}

ReconTrace reconstruct_trace(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                             const ModelState& m) {
  check_stack(ws, m, "reconstruct");
  const int l = m.num_layers();
  ReconTrace t;
  t.zhat.resize(static_cast<std::size_t>(l));
  t.phat.resize(static_cast<std::size_t>(l > 0 ? l - 1 : 0));

  const Tensor* p = &p_top;
  for (int k = l; k >= 1; --k) {
    t.zhat[k - 1] = unpool(*p, ws[k - 1]);
    Tensor below = conv_sum(t.zhat[k - 1], m.filters[k - 1]);
    if (k == 1) {
      t.vhat = std::move(below);
    } else {
      t.phat[k - 2] = std::move(below);
      p = &t.phat[k - 2];
    }
  }
  return t;
}

Tensor reconstruct(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                   const ModelState& m) {
  check_stack(ws, m, "reconstruct");
  const int l = m.num_layers();
  Tensor cur = unpool(p_top, ws[l - 1]);
  Tensor below = conv_sum(cur, m.filters[l - 1]);
  for (int k = l - 1; k >= 1; --k) {
    cur = unpool(below, ws[k - 1]);
    below = conv_sum(cur, m.filters[k - 1]);
  }
  return below;
}

Tensor reconstruct_to_layer(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                            const ModelState& m, int k) {
  check_stack(ws, m, "reconstruct_to_layer");
  const int l = m.num_layers();
  if (k < 1 || k > l)
    throw std::invalid_argument("reconstruct_to_layer: layer " + std::to_string(k) +
                                " out of range");
  Tensor cur = p_top;
  for (int j = l; j > k; --j)
    cur = conv_sum(unpool(cur, ws[j - 1]), m.filters[j - 1]);
  return cur;
}

PropTrace forward_prop_trace(const Tensor& e, const std::vector<PoolWeights>& ws,
                             const ModelState& m) {
  check_stack(ws, m, "forward_prop");
  const int l = m.num_layers();
  PropTrace t;
  t.err_z.resize(static_cast<std::size_t>(l));

  Tensor cur = conv_adjoint(e, m.filters[0]);
  for (int k = 1; k <= l; ++k) {
    if (k > 1) cur = conv_adjoint(t.grad_p, m.filters[k - 1]);
    t.err_z[k - 1] = std::move(cur);
    t.grad_p = pool(t.err_z[k - 1], ws[k - 1]);
  }
  return t;
}

Tensor forward_prop(const Tensor& e, const std::vector<PoolWeights>& ws,
                    const ModelState& m) {
  check_stack(ws, m, "forward_prop");
  Tensor cur = pool(conv_adjoint(e, m.filters[0]), ws[0]);
  for (int k = 2; k <= m.num_layers(); ++k)
    cur = pool(conv_adjoint(cur, m.filters[k - 1]), ws[k - 1]);
  return cur;
}

double sparsity_cost(const Tensor& p, double alpha) {
  const double* d = p.data();
  double s = 0.0;
  if (alpha == 1.0) {
    for (std::size_t i = 0; i < p.numel(); ++i) s += std::fabs(d[i]);
  } else if (alpha == 0.5) {
    for (std::size_t i = 0; i < p.numel(); ++i) s += std::sqrt(std::fabs(d[i]));
  } else {
    for (std::size_t i = 0; i < p.numel(); ++i) s += std::pow(std::fabs(d[i]), alpha);
  }
  return s;
}

CostBreakdown cost(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                   const ModelState& m, const Tensor& v, double lambda, double alpha) {
  Tensor vhat = reconstruct(p_top, ws, m);
  check_same_dims(vhat, v, "cost");
  double sq = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) {
    const double d = vhat[i] - v[i];
    sq += d * d;
  }
  CostBreakdown c;
  c.recon = 0.5 * lambda * sq;
  c.sparsity = sparsity_cost(p_top, alpha);
  c.total = c.recon + c.sparsity;
  c.l0 = count_nonzero(p_top);
  return c;
}

CostBreakdown cost(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                   const ModelState& m, const Tensor& v) {
  const LayerSpec& top = m.layers.back();
  return cost(p_top, ws, m, v, top.lambda, top.alpha);
}

}  // namespace dpnet
