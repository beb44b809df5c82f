#include "dpnet/conv_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dpnet {

namespace {

void check_filters(const Tensor& filters) {
  if (filters.rank() != 4)
    throw std::invalid_argument("FilterBank: filters must be B x C x k x k, got " +
                                filters.shape_str());
  if (filters.dim(2) != filters.dim(3))
    throw std::invalid_argument("FilterBank: filters must be square, got " +
                                filters.shape_str());
}

}  // namespace

FilterBank make_filter_bank(Tensor filters) {
  check_filters(filters);
  FilterBank f;
  std::size_t n = static_cast<std::size_t>(filters.dim(0)) * filters.dim(1);
  f.filters = std::move(filters);
  f.mask.assign(n, 1);
  return f;
}

FilterBank init_filter_bank(int maps, int channels, int ksize, int fan_in,
                            double sigma, Rng& rng) {
  if (maps <= 0 || channels <= 0 || ksize <= 0)
    throw std::invalid_argument("init_filter_bank: bad dimensions");
  fan_in = std::min(fan_in, channels);
  if (fan_in <= 0) throw std::invalid_argument("init_filter_bank: fan_in must be positive");

  FilterBank f;
  f.filters = Tensor({maps, channels, ksize, ksize});
  f.mask.assign(static_cast<std::size_t>(maps) * channels, 0);

  std::vector<int> chans(channels);
  for (int b = 0; b < maps; ++b) {
    for (int c = 0; c < channels; ++c) chans[c] = c;
    rng.shuffle(chans);
    for (int j = 0; j < fan_in; ++j)
      f.mask[static_cast<std::size_t>(b) * channels + chans[j]] = 1;
    rerandomize_map(f, b, sigma, rng);
  }
  return f;
}

void rerandomize_map(FilterBank& f, int b, double sigma, Rng& rng) {
  const int C = f.channels(), k = f.ksize();
  double sq = 0.0;
  for (int c = 0; c < C; ++c) {
    if (!f.connected(b, c)) continue;
    for (int a = 0; a < k; ++a)
      for (int d = 0; d < k; ++d) {
        double v = sigma * rng.normal();
        f.filters.at4(b, c, a, d) = v;
        sq += v * v;
      }
  }
  if (sq > 0.0) {
    double inv = 1.0 / std::sqrt(sq);
    for (int c = 0; c < C; ++c)
      if (f.connected(b, c))
        for (int a = 0; a < k; ++a)
          for (int d = 0; d < k; ++d) f.filters.at4(b, c, a, d) *= inv;
  }
}

namespace {

std::vector<double> project_impl(FilterBank& f, bool clip) {
  const int B = f.maps(), C = f.channels(), k = f.ksize();
  std::vector<double> norms(B, 0.0);
  for (int b = 0; b < B; ++b) {
    double sq = 0.0;
    for (int c = 0; c < C; ++c) {
      if (!f.connected(b, c)) continue;
      for (int a = 0; a < k; ++a)
        for (int d = 0; d < k; ++d) {
          double& v = f.filters.at4(b, c, a, d);
          if (clip && v < 0.0) v = 0.0;
          sq += v * v;
        }
    }
    norms[b] = std::sqrt(sq);
    if (sq > 0.0) {
      double inv = 1.0 / norms[b];
      for (int c = 0; c < C; ++c)
        if (f.connected(b, c))
          for (int a = 0; a < k; ++a)
            for (int d = 0; d < k; ++d) f.filters.at4(b, c, a, d) *= inv;
    }
  }
  return norms;
}

}  // namespace

std::vector<double> project_filters(FilterBank& f) { return project_impl(f, true); }

std::vector<double> normalize_filters(FilterBank& f) { return project_impl(f, false); }

namespace {

// Scatter form of conv_sum for sparse inputs: each nonzero z element stamps a
// (flipped) k x k window into every connected output channel. Same operator
// as the dense loop, summation order differs.
Tensor conv_sum_scatter(const Tensor& z, const FilterBank& f, const Tensor& taps,
                        int C, int k, int mh, int mw) {
  const int B = z.dim(0), uh = z.dim(1), uw = z.dim(2);
  (void)uh;
  Tensor out({C, mh, mw});
  for (int b = 0; b < B; ++b) {
    for (int Y = 0; Y < z.dim(1); ++Y) {
      const double* zr = z.row3(b, Y);
      for (int X = 0; X < uw; ++X) {
        const double v = zr[X];
        if (v == 0.0) continue;
        const int y0 = std::max(0, Y - k + 1), y1 = std::min(mh, Y + 1);
        const int x0 = std::max(0, X - k + 1), x1 = std::min(mw, X + 1);
        for (int c = 0; c < C; ++c) {
          if (!f.connected(b, c)) continue;
          for (int y = y0; y < y1; ++y) {
            double* orow = out.row3(c, y);
            for (int x = x0; x < x1; ++x)
              orow[x] += v * taps.at4(b, c, y + k - 1 - Y, x + k - 1 - X);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor conv_sum_with(const Tensor& z, const FilterBank& f, const Tensor& taps) {
  check_filters(taps);
  const int B = taps.dim(0), C = taps.dim(1), k = taps.dim(2);
  if (z.rank() != 3)
    throw std::invalid_argument("conv_sum: input must be B x h x w, got " + z.shape_str());
  if (z.dim(0) != B)
    throw std::invalid_argument("conv_sum: input has " + std::to_string(z.dim(0)) +
                                " maps, filter bank expects " + std::to_string(B));
  const int uh = z.dim(1), uw = z.dim(2);
  const int mh = uh - k + 1, mw = uw - k + 1;
  if (mh <= 0 || mw <= 0)
    throw std::invalid_argument("conv_sum: input " + z.shape_str() +
                                " smaller than filter size " + std::to_string(k));

  std::size_t nnz = 0;
  for (std::size_t i = 0; i < z.numel(); ++i) nnz += (z[i] != 0.0);
  if (nnz * 4 < z.numel()) return conv_sum_scatter(z, f, taps, C, k, mh, mw);

  Tensor out({C, mh, mw});
  // out[c][y][x] = sum_{b,a,d} f[b][c][a][d] * z[b][y+k-1-a][x+k-1-d]
  // (valid 2D convolution; a centered impulse reproduces the filter).
  for (int c = 0; c < C; ++c) {
    for (int b = 0; b < B; ++b) {
      if (!f.connected(b, c)) continue;
      for (int a = 0; a < k; ++a) {
        for (int d = 0; d < k; ++d) {
          const double w = taps.at4(b, c, a, d);
          if (w == 0.0) continue;
          for (int y = 0; y < mh; ++y) {
            const double* zr = z.row3(b, y + k - 1 - a) + (k - 1 - d);
            double* orow = out.row3(c, y);
            for (int x = 0; x < mw; ++x) orow[x] += w * zr[x];
          }
        }
      }
    }
  }
  return out;
}

Tensor conv_sum(const Tensor& z, const FilterBank& f) {
  return conv_sum_with(z, f, f.filters);
}

Tensor conv_adjoint(const Tensor& e, const FilterBank& f) {
  const int B = f.maps(), C = f.channels(), k = f.ksize();
  if (e.rank() != 3)
    throw std::invalid_argument("conv_adjoint: input must be C x h x w, got " + e.shape_str());
  if (e.dim(0) != C)
    throw std::invalid_argument("conv_adjoint: input has " + std::to_string(e.dim(0)) +
                                " channels, filter bank expects " + std::to_string(C));
  const int mh = e.dim(1), mw = e.dim(2);
  const int uh = mh + k - 1, uw = mw + k - 1;

  Tensor out({B, uh, uw});
  // out[b][Y][X] = sum_{c,a,d} f[b][c][a][d] * e[c][Y-k+1+a][X-k+1+d]
  // over in-range e indices (full-mode correlation).
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      if (!f.connected(b, c)) continue;
      for (int a = 0; a < k; ++a) {
        for (int d = 0; d < k; ++d) {
          const double w = f.filters.at4(b, c, a, d);
          if (w == 0.0) continue;
          // Y ranges where 0 <= Y-k+1+a < mh.
          const int y0 = std::max(0, k - 1 - a);
          const int y1 = std::min(uh, mh + k - 1 - a);
          const int x0 = std::max(0, k - 1 - d);
          const int x1 = std::min(uw, mw + k - 1 - d);
          for (int Y = y0; Y < y1; ++Y) {
            const double* er = e.row3(c, Y - k + 1 + a) + (x0 - k + 1 + d);
            double* orow = out.row3(b, Y) + x0;
            for (int X = 0; X < x1 - x0; ++X) orow[X] += w * er[X];
          }
        }
      }
    }
  }
  return out;
}

Tensor conv_filter_grad(const Tensor& z, const Tensor& e, const FilterBank& f) {
  const int B = f.maps(), C = f.channels(), k = f.ksize();
  if (z.rank() != 3 || z.dim(0) != B)
    throw std::invalid_argument("conv_filter_grad: bad map tensor " + z.shape_str());
  const int uh = z.dim(1), uw = z.dim(2);
  const int mh = uh - k + 1, mw = uw - k + 1;
  if (e.rank() != 3 || e.dim(0) != C || e.dim(1) != mh || e.dim(2) != mw)
    throw std::invalid_argument("conv_filter_grad: error tensor " + e.shape_str() +
                                " does not match maps " + z.shape_str());

  Tensor g({B, C, k, k});
  // d<e, conv_sum(z,f)>/df[b][c][a][d] = sum_{y,x} e[c][y][x] * z[b][y+k-1-a][x+k-1-d]
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      if (!f.connected(b, c)) continue;
      for (int a = 0; a < k; ++a) {
        for (int d = 0; d < k; ++d) {
          double s = 0.0;
          for (int y = 0; y < mh; ++y) {
            const double* er = e.row3(c, y);
            const double* zr = z.row3(b, y + k - 1 - a) + (k - 1 - d);
            for (int x = 0; x < mw; ++x) s += er[x] * zr[x];
          }
          g.at4(b, c, a, d) = s;
        }
      }
    }
  }
  return g;
}

}  // namespace dpnet
