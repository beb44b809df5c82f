#include "dpnet/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dpnet {

namespace {

double clamp_mu(double v, int s) {
  return std::clamp(v, -0.5, static_cast<double>(s) - 0.5);
}

double clamp_gamma(double v) { return std::clamp(v, kGammaMin, kGammaMax); }

void check_theta(const PoolParams& t) {
  if (t.maps <= 0 || t.ny <= 0 || t.nx <= 0 || t.s <= 0)
    throw std::invalid_argument("PoolParams: empty grid");
  const std::size_t n = t.grid_size();
  if (t.mu_x.size() != n || t.mu_y.size() != n || t.gamma_x.size() != n ||
      t.gamma_y.size() != n)
    throw std::invalid_argument("PoolParams: parameter vectors do not match grid");
}

void check_unpooled(const Tensor& z, int maps, int ny, int nx, int s, const char* where) {
  if (z.rank() != 3 || z.dim(0) != maps || z.dim(1) != ny * s || z.dim(2) != nx * s)
    throw std::invalid_argument(std::string(where) + ": unpooled maps " + z.shape_str() +
                                " do not match grid " + std::to_string(maps) + "x" +
                                std::to_string(ny * s) + "x" + std::to_string(nx * s));
}

void check_pooled(const Tensor& p, int maps, int ny, int nx, const char* where) {
  if (p.rank() != 3 || p.dim(0) != maps || p.dim(1) != ny || p.dim(2) != nx)
    throw std::invalid_argument(std::string(where) + ": pooled maps " + p.shape_str() +
                                " do not match grid " + std::to_string(maps) + "x" +
                                std::to_string(ny) + "x" + std::to_string(nx));
}

}  // namespace

void gaussian_weights(double mux, double muy, double gx, double gy, int s, double* w) {
  // h(i) = -gx/2 (ix-mux)^2 - gy/2 (iy-muy)^2; w = sqrt(exp(h) / sum exp(h)).
  double hmax = -std::numeric_limits<double>::infinity();
  for (int iy = 0; iy < s; ++iy) {
    const double dy = iy - muy;
    for (int ix = 0; ix < s; ++ix) {
      const double dx = ix - mux;
      const double h = -0.5 * (gx * dx * dx + gy * dy * dy);
      w[iy * s + ix] = h;
      hmax = std::max(hmax, h);
    }
  }
  double sum = 0.0;
  for (int i = 0; i < s * s; ++i) {
    w[i] = std::exp(w[i] - hmax);
    sum += w[i];
  }
  const double inv = 1.0 / sum;
  for (int i = 0; i < s * s; ++i) w[i] = std::sqrt(w[i] * inv);
}

PoolWeights weights_from_theta(const PoolParams& t) {
  check_theta(t);
  PoolWeights pw;
  pw.maps = t.maps;
  pw.ny = t.ny;
  pw.nx = t.nx;
  pw.s = t.s;
  pw.w.resize(t.grid_size() * t.s * t.s);
  for (int b = 0; b < t.maps; ++b)
    for (int jy = 0; jy < t.ny; ++jy)
      for (int jx = 0; jx < t.nx; ++jx) {
        const std::size_t j = t.index(b, jy, jx);
        gaussian_weights(t.mu_x[j], t.mu_y[j], t.gamma_x[j], t.gamma_y[j], t.s,
                         pw.cell(b, jy, jx));
      }
  return pw;
}

PoolParams make_default_theta(int maps, int ny, int nx, int s) {
  PoolParams t;
  t.maps = maps;
  t.ny = ny;
  t.nx = nx;
  t.s = s;
  const std::size_t n = t.grid_size();
  const double c = 0.5 * (s - 1);
  t.mu_x.assign(n, c);
  t.mu_y.assign(n, c);
  t.gamma_x.assign(n, kGammaDefault);
  t.gamma_y.assign(n, kGammaDefault);
  return t;
}

Tensor unpool(const Tensor& p, const PoolWeights& pw) {
  check_pooled(p, pw.maps, pw.ny, pw.nx, "unpool");
  const int s = pw.s;
  Tensor z({pw.maps, pw.ny * s, pw.nx * s});
  for (int b = 0; b < pw.maps; ++b)
    for (int jy = 0; jy < pw.ny; ++jy)
      for (int jx = 0; jx < pw.nx; ++jx) {
        const double v = p.at3(b, jy, jx);
        if (v == 0.0) continue;
        const double* w = pw.cell(b, jy, jx);
        for (int iy = 0; iy < s; ++iy) {
          double* zr = z.row3(b, jy * s + iy) + jx * s;
          for (int ix = 0; ix < s; ++ix) zr[ix] = w[iy * s + ix] * v;
        }
      }
  return z;
}

Tensor pool(const Tensor& z, const PoolWeights& pw) {
  check_unpooled(z, pw.maps, pw.ny, pw.nx, pw.s, "pool");
  const int s = pw.s;
  Tensor p({pw.maps, pw.ny, pw.nx});
  for (int b = 0; b < pw.maps; ++b)
    for (int jy = 0; jy < pw.ny; ++jy)
      for (int jx = 0; jx < pw.nx; ++jx) {
        const double* w = pw.cell(b, jy, jx);
        double s_acc = 0.0;
        for (int iy = 0; iy < s; ++iy) {
          const double* zr = z.row3(b, jy * s + iy) + jx * s;
          for (int ix = 0; ix < s; ++ix) s_acc += w[iy * s + ix] * zr[ix];
        }
        p.at3(b, jy, jx) = s_acc;
      }
  return p;
}

Tensor unpool(const Tensor& p, const PoolParams& theta) {
  return unpool(p, weights_from_theta(theta));
}

Tensor pool(const Tensor& z, const PoolParams& theta) {
  return pool(z, weights_from_theta(theta));
}

ThetaGrad pool_param_grad(const Tensor& err_z, const Tensor& topdown_p,
                          const PoolParams& t) {
  check_theta(t);
  check_unpooled(err_z, t.maps, t.ny, t.nx, t.s, "pool_param_grad");
  check_pooled(topdown_p, t.maps, t.ny, t.nx, "pool_param_grad");

  const int s = t.s;
  const std::size_t n = t.grid_size();
  ThetaGrad g;
  g.mu_x.assign(n, 0.0);
  g.mu_y.assign(n, 0.0);
  g.gamma_x.assign(n, 0.0);
  g.gamma_y.assign(n, 0.0);

  std::vector<double> w(static_cast<std::size_t>(s) * s);
  for (int b = 0; b < t.maps; ++b)
    for (int jy = 0; jy < t.ny; ++jy)
      for (int jx = 0; jx < t.nx; ++jx) {
        const std::size_t j = t.index(b, jy, jx);
        const double phat = topdown_p.at3(b, jy, jx);
        if (phat == 0.0) continue;  // c(i) == 0 for the whole neighborhood
        gaussian_weights(t.mu_x[j], t.mu_y[j], t.gamma_x[j], t.gamma_y[j], s, w.data());

        const double gx = t.gamma_x[j], gy = t.gamma_y[j];
        const double mux = t.mu_x[j], muy = t.mu_y[j];
        // Accumulate sum c w, sum c h w and sum h w^2 for the four h factors.
        double cw = 0.0;
        double chw[4] = {0, 0, 0, 0}, hw2[4] = {0, 0, 0, 0};
        for (int iy = 0; iy < s; ++iy) {
          const double dy = iy - muy;
          const double* zr = err_z.row3(b, jy * s + iy) + jx * s;
          for (int ix = 0; ix < s; ++ix) {
            const double dx = ix - mux;
            const double h[4] = {gx * dx, gy * dy, -0.5 * dx * dx, -0.5 * dy * dy};
            const double wi = w[iy * s + ix];
            const double ci = zr[ix] * phat;
            cw += ci * wi;
            for (int d = 0; d < 4; ++d) {
              chw[d] += ci * h[d] * wi;
              hw2[d] += h[d] * wi * wi;
            }
          }
        }
        g.mu_x[j] = 0.5 * (chw[0] - cw * hw2[0]);
        g.mu_y[j] = 0.5 * (chw[1] - cw * hw2[1]);
        g.gamma_x[j] = 0.5 * (chw[2] - cw * hw2[2]);
        g.gamma_y[j] = 0.5 * (chw[3] - cw * hw2[3]);
      }
  return g;
}

PoolParams update_theta(const PoolParams& theta, const ThetaGrad& grad,
                        double beta_u, double lambda) {
  check_theta(theta);
  const std::size_t n = theta.grid_size();
  if (grad.mu_x.size() != n || grad.mu_y.size() != n || grad.gamma_x.size() != n ||
      grad.gamma_y.size() != n)
    throw std::invalid_argument("update_theta: gradient does not match grid");

  PoolParams out = theta;
  const double step = lambda * beta_u;
  for (std::size_t j = 0; j < n; ++j) {
    out.mu_x[j] = clamp_mu(theta.mu_x[j] - step * grad.mu_x[j], theta.s);
    out.mu_y[j] = clamp_mu(theta.mu_y[j] - step * grad.mu_y[j], theta.s);
    out.gamma_x[j] = clamp_gamma(theta.gamma_x[j] - step * grad.gamma_x[j]);
    out.gamma_y[j] = clamp_gamma(theta.gamma_y[j] - step * grad.gamma_y[j]);
  }
  return out;
}

PoolParams fit_moments(const Tensor& z, int s) {
  if (z.rank() != 3)
    throw std::invalid_argument("fit_moments: maps must be B x h x w, got " + z.shape_str());
  if (s <= 0 || z.dim(1) % s != 0 || z.dim(2) % s != 0)
    throw std::invalid_argument("fit_moments: map extent " + z.shape_str() +
                                " not divisible by pool size " + std::to_string(s));
  PoolParams t;
  t.maps = z.dim(0);
  t.ny = z.dim(1) / s;
  t.nx = z.dim(2) / s;
  t.s = s;
  const std::size_t n = t.grid_size();
  t.mu_x.resize(n);
  t.mu_y.resize(n);
  t.gamma_x.resize(n);
  t.gamma_y.resize(n);

  const double center = 0.5 * (s - 1);
  for (int b = 0; b < t.maps; ++b)
    for (int jy = 0; jy < t.ny; ++jy)
      for (int jx = 0; jx < t.nx; ++jx) {
        const std::size_t j = t.index(b, jy, jx);
        double mass = 0.0, sx = 0.0, sy = 0.0;
        for (int iy = 0; iy < s; ++iy) {
          const double* zr = z.row3(b, jy * s + iy) + jx * s;
          for (int ix = 0; ix < s; ++ix) {
            const double m = zr[ix] * zr[ix];
            mass += m;
            sx += m * ix;
            sy += m * iy;
          }
        }
        if (mass == 0.0) {
          t.mu_x[j] = center;
          t.mu_y[j] = center;
          t.gamma_x[j] = kGammaDefault;
          t.gamma_y[j] = kGammaDefault;
          continue;
        }
        const double mux = sx / mass, muy = sy / mass;
        double vx = 0.0, vy = 0.0;
        for (int iy = 0; iy < s; ++iy) {
          const double* zr = z.row3(b, jy * s + iy) + jx * s;
          for (int ix = 0; ix < s; ++ix) {
            const double m = zr[ix] * zr[ix];
            vx += m * (ix - mux) * (ix - mux);
            vy += m * (iy - muy) * (iy - muy);
          }
        }
        vx /= mass;
        vy /= mass;
        t.mu_x[j] = clamp_mu(mux, s);
        t.mu_y[j] = clamp_mu(muy, s);
        t.gamma_x[j] = (vx == 0.0) ? kGammaMax : clamp_gamma(1.0 / vx);
        t.gamma_y[j] = (vy == 0.0) ? kGammaMax : clamp_gamma(1.0 / vy);
      }
  return t;
}

PoolWeights max_pool_weights(const Tensor& z, int s) {
  if (z.rank() != 3)
    throw std::invalid_argument("max_pool_weights: maps must be B x h x w, got " +
                                z.shape_str());
  if (s <= 0 || z.dim(1) % s != 0 || z.dim(2) % s != 0)
    throw std::invalid_argument("max_pool_weights: map extent " + z.shape_str() +
                                " not divisible by pool size " + std::to_string(s));
  PoolWeights pw;
  pw.maps = z.dim(0);
  pw.ny = z.dim(1) / s;
  pw.nx = z.dim(2) / s;
  pw.s = s;
  pw.w.assign(static_cast<std::size_t>(pw.maps) * pw.ny * pw.nx * s * s, 0.0);

  for (int b = 0; b < pw.maps; ++b)
    for (int jy = 0; jy < pw.ny; ++jy)
      for (int jx = 0; jx < pw.nx; ++jx) {
        int best = 0;
        double best_abs = -1.0;
        for (int iy = 0; iy < s; ++iy) {
          const double* zr = z.row3(b, jy * s + iy) + jx * s;
          for (int ix = 0; ix < s; ++ix) {
            const double a = std::fabs(zr[ix]);
            if (a > best_abs) {
              best_abs = a;
              best = iy * s + ix;
            }
          }
        }
        pw.cell(b, jy, jx)[best] = 1.0;
      }
  return pw;
}

}  // namespace dpnet
