#pragma once

#include <vector>

#include "dpnet/tensor.hpp"

namespace dpnet {

inline constexpr double kGammaMin = 1e-4;
inline constexpr double kGammaMax = 50.0;
inline constexpr double kGammaDefault = 1.0;

// Per-neighborhood Gaussian pooling parameters for one layer: a grid of
// ny x nx neighborhoods of size s x s on each of `maps` feature maps.
// Neighborhood j on map b lives at flat index (b*ny + jy)*nx + jx.
struct PoolParams {
  int maps = 0, ny = 0, nx = 0, s = 0;
  std::vector<double> mu_x, mu_y, gamma_x, gamma_y;

  std::size_t grid_size() const {
    return static_cast<std::size_t>(maps) * ny * nx;
  }
  std::size_t index(int b, int jy, int jx) const {
    return (static_cast<std::size_t>(b) * ny + jy) * nx + jx;
  }
};

// Gradient of a scalar cost with respect to each pooling parameter, on the
// same grid layout as PoolParams.
struct ThetaGrad {
  std::vector<double> mu_x, mu_y, gamma_x, gamma_y;
};

// Explicit unit-norm pooling weights, s*s doubles per neighborhood (cell
// (ix,iy) at offset iy*s+ix). Gaussian pooling derives these from PoolParams;
// max pooling uses one-hot grids directly.
struct PoolWeights {
  int maps = 0, ny = 0, nx = 0, s = 0;
  std::vector<double> w;

  const double* cell(int b, int jy, int jx) const {
    return w.data() + ((static_cast<std::size_t>(b) * ny + jy) * nx + jx) * s * s;
  }
  double* cell(int b, int jy, int jx) {
    return w.data() + ((static_cast<std::size_t>(b) * ny + jy) * nx + jx) * s * s;
  }
};

// Fills w[0..s*s) with the normalized Gaussian weights of Eq. w = sqrt(a/S):
// a(ix,iy) = exp(-gx/2 (ix-mux)^2 - gy/2 (iy-muy)^2), S = sum a. The exponent
// is shifted by its maximum before exponentiation so S never underflows.
// Resulting weights satisfy sum w^2 = 1 to rounding error.
void gaussian_weights(double mux, double muy, double gx, double gy, int s, double* w);

PoolWeights weights_from_theta(const PoolParams& theta);

// Centered parameters: mu at the neighborhood centroid, gamma at the default.
PoolParams make_default_theta(int maps, int ny, int nx, int s);

// z[b][jy*s+iy][jx*s+ix] = w(i) * p[b][jy][jx]
Tensor unpool(const Tensor& p, const PoolWeights& w);
// p[b][jy][jx] = sum_i w(i) * z[b][jy*s+iy][jx*s+ix]   (exact adjoint of unpool)
Tensor pool(const Tensor& z, const PoolWeights& w);

Tensor unpool(const Tensor& p, const PoolParams& theta);
Tensor pool(const Tensor& z, const PoolParams& theta);

// Gradient of the reconstruction cost with respect to {mu_x, mu_y, gamma_x,
// gamma_y}. err_z is dC/dz at this layer's unpooled maps (lambda already
// applied by the caller), topdown_p the pooled values p-hat feeding the
// unpool. For each neighborhood, with c(i) = err_z(i) * p-hat(j) and h_d the
// derivative of the log-Gaussian exponent with respect to parameter d:
//   dC/dtheta_d = 1/2 [ sum_i c h_d w  -  (sum_i c w)(sum_i h_d w^2) ].
ThetaGrad pool_param_grad(const Tensor& err_z, const Tensor& topdown_p,
                          const PoolParams& theta);

// theta_d <- clamp(theta_d - lambda * beta_u * grad_d); mu into
// [-0.5, s-0.5], gamma into [kGammaMin, kGammaMax].
PoolParams update_theta(const PoolParams& theta, const ThetaGrad& grad,
                        double beta_u, double lambda);

// Moment-matching initialization from an unpooled signal: per neighborhood,
// masses m(i) = z(i)^2 give mu = weighted centroid and gamma = 1/variance
// (clamped). An all-zero neighborhood gets the centered defaults.
PoolParams fit_moments(const Tensor& z, int s);

// One-hot switches at the largest-|z| cell of each neighborhood (ties go to
// the lowest cell index).
PoolWeights max_pool_weights(const Tensor& z, int s);

}  // namespace dpnet
