#pragma once

#include <cstdint>
#include <vector>

#include "dpnet/rng.hpp"
#include "dpnet/tensor.hpp"

namespace dpnet {

// Bank of 2D filters connecting B feature maps to C channels below, with a
// 0/1 connectivity mask (filters for unconnected pairs are held at zero).
struct FilterBank {
  Tensor filters;                     // B x C x k x k
  std::vector<std::uint8_t> mask;     // B x C, row-major

  int maps() const { return filters.dim(0); }
  int channels() const { return filters.dim(1); }
  int ksize() const { return filters.dim(2); }
  bool connected(int b, int c) const {
    return mask[static_cast<std::size_t>(b) * channels() + c] != 0;
  }
};

// All-connected bank with given filter values.
FilterBank make_filter_bank(Tensor filters);

// Random bank: filter taps ~ N(0, sigma^2) on connected pairs, then each map's
// filter group scaled to unit l2 norm. Connectivity: each map connects to
// fan_in distinct channels drawn without replacement (fan_in >= channels means
// fully connected). Map 0..B-1 consume the rng in order.
FilterBank init_filter_bank(int maps, int channels, int ksize, int fan_in,
                            double sigma, Rng& rng);

// Re-randomizes the filters of one map in place (same connectivity).
void rerandomize_map(FilterBank& f, int b, double sigma, Rng& rng);

// Clamp negatives to zero, then scale each map's filter group to unit l2 norm
// over its connected planes. Returns per-map norms measured before
// normalization (zero means the map was dead and left untouched by the scale).
std::vector<double> project_filters(FilterBank& f);

// Unit-normalize each map's filter group without the non-negativity clamp.
std::vector<double> normalize_filters(FilterBank& f);

// Sum of valid-mode 2D convolutions: out[c] = sum_b z[b] * f[b][c].
//   z: B x uh x uw  ->  out: C x (uh-k+1) x (uw-k+1)
Tensor conv_sum(const Tensor& z, const FilterBank& f);

// Adjoint of conv_sum: full-mode correlation of each channel with its filters.
//   e: C x mh x mw  ->  out: B x (mh+k-1) x (mw+k-1)
Tensor conv_adjoint(const Tensor& e, const FilterBank& f);

// Gradient of <e, conv_sum(z, .)> with respect to the filter taps; same dims
// as f.filters, zero on masked-out pairs.
//   z: B x uh x uw, e: C x (uh-k+1) x (uw-k+1)
Tensor conv_filter_grad(const Tensor& z, const Tensor& e, const FilterBank& f);

// Applies a filter bank whose taps are taken from `taps` (dims must equal
// f.filters) but with f's mask; used by the filter solver to apply the same
// linear operator to search directions.
Tensor conv_sum_with(const Tensor& z, const FilterBank& f, const Tensor& taps);

}  // namespace dpnet
