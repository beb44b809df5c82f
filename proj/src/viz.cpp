#include "dpnet/viz.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "dpnet/rng.hpp"

namespace dpnet {

namespace {

struct GridShape {
  int rows = 0, cols = 0;
};

GridShape near_square(int n) {
  GridShape g;
  g.cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  g.rows = (n + g.cols - 1) / g.cols;
  return g;
}

// Copies a th x tw block of doubles into the image at (y0, x0), min-max
// scaled to 0..255; a constant block renders mid-gray.
void blit_minmax(Image8& img, int y0, int x0, const std::vector<double>& vals,
                 int th, int tw) {
  double mn = vals[0], mx = vals[0];
  for (double v : vals) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  for (int y = 0; y < th; ++y)
    for (int x = 0; x < tw; ++x) {
      double v = vals[static_cast<std::size_t>(y) * tw + x];
      double u = mx > mn ? (v - mn) / (mx - mn) : 0.5;
      img.at(y0 + y, x0 + x) = static_cast<std::uint8_t>(std::lround(u * 255.0));
    }
}

// Fully saturated hue from the golden-angle sequence, as unit RGB.
void golden_hue(int index, double rgb[3]) {
  double h = std::fmod(0.6180339887498949 * index, 1.0) * 6.0;
  int i = static_cast<int>(h) % 6;
  double f = h - std::floor(h);
  switch (i) {
    case 0: rgb[0] = 1; rgb[1] = f; rgb[2] = 0; break;
    case 1: rgb[0] = 1 - f; rgb[1] = 1; rgb[2] = 0; break;
    case 2: rgb[0] = 0; rgb[1] = 1; rgb[2] = f; break;
    case 3: rgb[0] = 0; rgb[1] = 1 - f; rgb[2] = 1; break;
    case 4: rgb[0] = f; rgb[1] = 0; rgb[2] = 1; break;
    default: rgb[0] = 1; rgb[1] = 0; rgb[2] = 1 - f; break;
  }
}

// Channel-mean |values| of a C x H x W tensor, flattened H x W.
std::vector<double> luminance(const Tensor& v) {
  int c = v.dim(0), h = v.dim(1), w = v.dim(2);
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[static_cast<std::size_t>(y) * w + x] += std::abs(v.at3(ci, y, x)) / c;
  return out;
}

}  // namespace

Image8 render_filters(const ModelState& m, int k) {
  if (k < 1 || k > m.num_layers())
    throw std::invalid_argument("render_filters: layer " + std::to_string(k) +
                                " out of range");
  const FilterBank& bank = m.filters[static_cast<std::size_t>(k) - 1];
  int maps = bank.filters.dim(0), ch = bank.filters.dim(1);
  int fs = bank.filters.dim(2);
  int th = fs, tw = ch == 1 ? fs : ch * fs + (ch - 1);
  GridShape g = near_square(maps);
  Image8 img = make_image(g.cols * tw + (g.cols - 1), g.rows * th + (g.rows - 1), 1);
  for (int b = 0; b < maps; ++b) {
    // One tile per map; multi-channel filters sit side by side inside it and
    // share the tile's normalization so relative channel weights survive.
    std::vector<double> tile(static_cast<std::size_t>(th) * tw, 0.0);
    double mn = bank.filters.at4(b, 0, 0, 0), mx = mn;
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < fs; ++y)
        for (int x = 0; x < fs; ++x) {
          double v = bank.filters.at4(b, c, y, x);
          mn = std::min(mn, v);
          mx = std::max(mx, v);
        }
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < fs; ++y)
        for (int x = 0; x < fs; ++x) {
          double v = bank.filters.at4(b, c, y, x);
          double u = mx > mn ? (v - mn) / (mx - mn) : 0.5;
          tile[static_cast<std::size_t>(y) * tw + c * (fs + 1) + x] = u;
        }
    int gy = b / g.cols, gx = b % g.cols;
    int y0 = gy * (th + 1), x0 = gx * (tw + 1);
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        img.at(y0 + y, x0 + x) =
            static_cast<std::uint8_t>(std::lround(tile[static_cast<std::size_t>(y) * tw + x] * 255.0));
  }
  return img;
}

Image8 render_decomposition(const Tensor& p_top, const std::vector<PoolWeights>& ws,
                            const ModelState& m) {
  int top = m.num_layers();
  std::vector<int> fd = m.feature_dims(top);
  if (p_top.dims() != fd)
    throw std::invalid_argument("render_decomposition: feature shape " +
                                p_top.shape_str() + " does not match the model");
  Tensor vfull = reconstruct(p_top, ws, m);
  int h = m.input_h, w = m.input_w;
  std::vector<double> accum(static_cast<std::size_t>(h) * w * 3, 0.0);
  Tensor vsum = Tensor::zeros_like(vfull);
  int maps = fd[0];
  for (int b = 0; b < maps; ++b) {
    Tensor piso = Tensor::zeros_like(p_top);
    bool any = false;
    for (int y = 0; y < fd[1]; ++y)
      for (int x = 0; x < fd[2]; ++x) {
        double v = p_top.at3(b, y, x);
        piso.at3(b, y, x) = v;
        any = any || v != 0.0;
      }
    if (!any) continue;  // contributes exactly zero
    Tensor vb = reconstruct(piso, ws, m);
    axpy(1.0, vb, vsum);
    double rgb[3];
    golden_hue(b, rgb);
    std::vector<double> lum = luminance(vb);
    for (std::size_t i = 0; i < lum.size(); ++i)
      for (int c = 0; c < 3; ++c) accum[i * 3 + c] += rgb[c] * lum[i];
  }
  // The per-map pieces must add back up to the joint reconstruction; a
  // violation means the renderer is no longer looking at a linear operator.
  double ref = 1.0, diff = 0.0;
  for (std::size_t i = 0; i < vfull.numel(); ++i) {
    ref = std::max(ref, std::abs(vfull[i]));
    diff = std::max(diff, std::abs(vfull[i] - vsum[i]));
  }
  if (diff > 1e-10 * ref)
    throw std::runtime_error(
        "render_decomposition: per-map reconstructions do not sum to the joint one "
        "(max deviation " + std::to_string(diff) + ")");
  double peak = 0.0;
  for (double v : accum) peak = std::max(peak, v);
  double s = peak > 0.0 ? 255.0 / peak : 0.0;
  Image8 img = make_image(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<std::uint8_t>(
            std::lround(accum[(static_cast<std::size_t>(y) * w + x) * 3 + c] * s));
  return img;
}

InvarianceGrid render_invariance_samples(const std::vector<const IstaState*>& states,
                                         const ModelState& m, int n_samples,
                                         std::uint64_t seed) {
  if (states.empty()) throw std::invalid_argument("render_invariance_samples: no states");
  if (n_samples < 1) throw std::invalid_argument("render_invariance_samples: n_samples < 1");
  int top = m.num_layers();
  std::vector<int> fd = m.feature_dims(top);
  int maps = fd[0], fh = fd[1], fw = fd[2];
  struct Hit {
    int image, jy, jx;
    double val;
  };
  std::vector<std::vector<Hit>> hits(static_cast<std::size_t>(maps));
  for (std::size_t i = 0; i < states.size(); ++i) {
    const Tensor& p = states[i]->p;
    if (p.dims() != fd)
      throw std::invalid_argument("render_invariance_samples: state " +
                                  std::to_string(i) + " shape " + p.shape_str() +
                                  " does not match the model");
    for (int b = 0; b < maps; ++b)
      for (int y = 0; y < fh; ++y)
        for (int x = 0; x < fw; ++x) {
          double v = p.at3(b, y, x);
          if (v != 0.0) hits[static_cast<std::size_t>(b)].push_back(
              {static_cast<int>(i), y, x, v});
        }
  }
  int th = m.input_h, tw = m.input_w;
  InvarianceGrid out;
  out.image = make_image(n_samples * tw + (n_samples - 1), maps * th + (maps - 1), 1);
  Rng rng(Rng::derive(seed, 0x5a3u));
  // Pooling weights are fixed per image during sampling; derive them lazily.
  std::vector<std::unique_ptr<std::vector<PoolWeights>>> ws_cache(states.size());
  for (int b = 0; b < maps; ++b) {
    const std::vector<Hit>& hs = hits[static_cast<std::size_t>(b)];
    if (hs.empty()) {
      out.inactive_maps.push_back(b + 1);
      continue;
    }
    std::vector<double> cum(hs.size());
    double total = 0.0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      total += std::abs(hs[i].val);
      cum[i] = total;
    }
    for (int s = 0; s < n_samples; ++s) {
      double u = rng.uniform() * total;
      std::size_t pick = static_cast<std::size_t>(
          std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
      if (pick >= hs.size()) pick = hs.size() - 1;
      const Hit& hit = hs[pick];
      auto& ws = ws_cache[static_cast<std::size_t>(hit.image)];
      if (!ws)
        ws = std::make_unique<std::vector<PoolWeights>>(
            state_weights(*states[static_cast<std::size_t>(hit.image)], m));
      Tensor piso(fd);
      piso.at3(b, hit.jy, hit.jx) = hit.val;
      Tensor v = reconstruct(piso, *ws, m);
      std::vector<double> lum = luminance(v);
      blit_minmax(out.image, b * (th + 1), s * (tw + 1), lum, th, tw);
    }
  }
  return out;
}

}  // namespace dpnet
