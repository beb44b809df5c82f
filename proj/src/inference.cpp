#include "dpnet/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dpnet {

namespace {

constexpr double kShrinkEps = 1e-8;

std::vector<std::uint8_t> resolve_mask(const std::vector<std::uint8_t>& mask, int l,
                                       const char* where) {
  if (mask.empty()) return std::vector<std::uint8_t>(static_cast<std::size_t>(l), 1);
  if (static_cast<int>(mask.size()) != l)
    throw std::invalid_argument(std::string(where) + ": update_theta mask has " +
                                std::to_string(mask.size()) + " entries for " +
                                std::to_string(l) + " layers");
  return mask;
}

std::vector<double> resolve_beta_u(const std::vector<double>& bu, int l, const char* where) {
  if (bu.empty()) return std::vector<double>(static_cast<std::size_t>(l), 1e-3);
  if (bu.size() == 1) return std::vector<double>(static_cast<std::size_t>(l), bu[0]);
  if (static_cast<int>(bu.size()) != l)
    throw std::invalid_argument(std::string(where) + ": beta_u has " +
                                std::to_string(bu.size()) + " entries for " +
                                std::to_string(l) + " layers");
  return bu;
}

// Deterministic stratified sample of n items out of N (indices floor(j*N/n)).
std::vector<std::size_t> stratified_sample(std::size_t N, double fraction) {
  std::size_t n = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(N)));
  n = std::clamp<std::size_t>(n, 1, N);
  std::vector<std::size_t> idx(n);
  for (std::size_t j = 0; j < n; ++j) idx[j] = j * N / n;
  return idx;
}

void scale_theta_grad(ThetaGrad& g, double c) {
  for (double& v : g.mu_x) v *= c;
  for (double& v : g.mu_y) v *= c;
  for (double& v : g.gamma_x) v *= c;
  for (double& v : g.gamma_y) v *= c;
}

CostBreakdown cost_from_residual(const Tensor& e, const Tensor& p, double lambda,
                                 double alpha) {
  CostBreakdown c;
  c.recon = 0.5 * lambda * sqnorm(e);
  c.sparsity = sparsity_cost(p, alpha);
  c.total = c.recon + c.sparsity;
  c.l0 = count_nonzero(p);
  return c;
}

}  // namespace

Tensor feature_gradient(const Tensor& p, const std::vector<PoolWeights>& ws,
                        const ModelState& m, const Tensor& v) {
  Tensor e = reconstruct(p, ws, m);
  check_same_dims(e, v, "feature_gradient");
  axpy(-1.0, v, e);
  return forward_prop(e, ws, m);
}

StepInfo auto_step_size(const std::vector<const Tensor*>& grads,
                        const std::vector<const std::vector<PoolWeights>*>& stacks,
                        const ModelState& m, double beta_fallback) {
  if (grads.empty() || grads.size() != stacks.size())
    throw std::invalid_argument("auto_step_size: empty or mismatched sample");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    num += sqnorm(*grads[i]);
    den += sqnorm(reconstruct(*grads[i], *stacks[i], m));
  }
  StepInfo s;
  // Guard vanishing or non-finite denominators (gradient in the null space
  // of R); 1e-15 keeps the step below ~1e15x the gradient scale.
  if (!std::isfinite(num) || !std::isfinite(den) || den <= num * 1e-15) {
    s.beta = beta_fallback;
    s.used_fallback = true;
  } else {
    s.beta = num / den;
  }
  return s;
}

Tensor shrink(const Tensor& p, double beta, double alpha) {
  if (beta <= 0.0) throw std::invalid_argument("shrink: beta must be positive");
  Tensor out = p;
  double* d = out.data();
  if (alpha == 1.0) {
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const double a = std::fabs(d[i]) - beta;
      d[i] = a > 0.0 ? (d[i] > 0.0 ? a : -a) : 0.0;
    }
  } else if (alpha == 0.5) {
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const double a = std::fabs(d[i]);
      if (a <= kShrinkEps) {
        d[i] = 0.0;
        continue;
      }
      const double step = beta * 0.5 / std::sqrt(a);
      // A step past zero means the subgradient direction overshot: clamp.
      d[i] = (a <= step) ? 0.0 : (d[i] > 0.0 ? d[i] - step : d[i] + step);
    }
  } else {
    throw std::invalid_argument("shrink: alpha must be 1 or 0.5, got " +
                                std::to_string(alpha));
  }
  return out;
}

Tensor project_nonneg(const Tensor& p) {
  Tensor out = p;
  double* d = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i)
    if (d[i] < 0.0) d[i] = 0.0;
  return out;
}

std::vector<PoolWeights> state_weights(const IstaState& st, const ModelState& m) {
  const int l = m.num_layers();
  std::vector<PoolWeights> ws(static_cast<std::size_t>(l));
  for (int k = 0; k < l; ++k) {
    if (m.pool_mode == PoolMode::gaussian)
      ws[k] = weights_from_theta(st.thetas.at(k));
    else
      ws[k] = st.switches.at(k);
  }
  return ws;
}

void init_state(IstaState& st, const ModelState& m, const Tensor& v, int from_layer) {
  const int l = m.num_layers();
  if (from_layer < 1 || from_layer > l)
    throw std::invalid_argument("init_state: from_layer out of range");
  if (v.rank() != 3 || v.dim(0) != m.input_channels || v.dim(1) != m.input_h ||
      v.dim(2) != m.input_w)
    throw std::invalid_argument("init_state: image " + v.shape_str() +
                                " does not match model input");

  if (m.pool_mode == PoolMode::gaussian)
    st.thetas.resize(static_cast<std::size_t>(l));
  else
    st.switches.resize(static_cast<std::size_t>(l));

  Tensor q = v;
  for (int k = 1; k <= l; ++k) {
    Tensor t = conv_adjoint(q, m.filters[k - 1]);
    const int s = m.layers[k - 1].pool_size;
    if (m.pool_mode == PoolMode::gaussian) {
      if (k >= from_layer) st.thetas[k - 1] = fit_moments(t, s);
      q = pool(t, weights_from_theta(st.thetas[k - 1]));
    } else {
      if (k >= from_layer) st.switches[k - 1] = max_pool_weights(t, s);
      q = pool(t, st.switches[k - 1]);
    }
  }
  st.p = Tensor(m.feature_dims(l));
}

IstaReport ista_run(const std::vector<const Tensor*>& images,
                    const std::vector<IstaState*>& states, const ModelState& m,
                    const IstaOptions& o) {
  const std::size_t n = images.size();
  if (n == 0 || states.size() != n)
    throw std::invalid_argument("ista_run: empty or mismatched batch");
  if (o.steps < 0) throw std::invalid_argument("ista_run: negative step count");
  if (o.denom_fraction <= 0.0 || o.denom_fraction > 1.0)
    throw std::invalid_argument("ista_run: denom_fraction must be in (0,1]");

  const int l = m.num_layers();
  const bool gauss = m.pool_mode == PoolMode::gaussian;
  const std::vector<std::uint8_t> mask = resolve_mask(o.update_theta, l, "ista_run");
  const std::vector<double> beta_u = resolve_beta_u(o.beta_u, l, "ista_run");
  bool any_theta = false;
  if (gauss)
    for (std::uint8_t u : mask) any_theta |= (u != 0);

  IstaReport rep;
  if (o.record_trace)
    rep.traces.assign(n, std::vector<CostBreakdown>());

  std::vector<std::vector<PoolWeights>> ws(n);
  for (std::size_t i = 0; i < n; ++i) ws[i] = state_weights(*states[i], m);

  const std::vector<std::size_t> sample = stratified_sample(n, o.denom_fraction);
  std::vector<Tensor> grad(n), resid(n);

  for (int t = 0; t < o.steps; ++t) {
    // Residuals and feature gradients at the current (p, theta).
    for (std::size_t i = 0; i < n; ++i) {
      resid[i] = reconstruct(states[i]->p, ws[i], m);
      axpy(-1.0, *images[i], resid[i]);
      if (o.record_trace)
        rep.traces[i].push_back(
            cost_from_residual(resid[i], states[i]->p, o.lambda, o.alpha));
      grad[i] = forward_prop(resid[i], ws[i], m);
    }

    // Shared step size from the sampled subset.
    double num = 0.0, den = 0.0;
    for (std::size_t j : sample) {
      num += sqnorm(grad[j]);
      den += sqnorm(reconstruct(grad[j], ws[j], m));
    }
    double beta;
    if (!std::isfinite(num) || !std::isfinite(den) || den <= num * 1e-15) {
      beta = o.beta_fallback;
      rep.used_fallback = true;
    } else {
      beta = num / den;
    }

    // Per-image feature and pooling updates.
    for (std::size_t i = 0; i < n; ++i) {
      IstaState& st = *states[i];
      axpy(-o.lambda * beta, grad[i], st.p);
      st.p = shrink(st.p, beta, o.alpha);
      if (m.nonneg) st.p = project_nonneg(st.p);

      if (!any_theta) continue;
      // Gradient step on each unfrozen layer's pooling parameters at the
      // updated features.
      ReconTrace rt = reconstruct_trace(st.p, ws[i], m);
      Tensor e2 = std::move(rt.vhat);
      axpy(-1.0, *images[i], e2);
      PropTrace pt = forward_prop_trace(e2, ws[i], m);
      for (int k = 1; k <= l; ++k) {
        if (!mask[k - 1]) continue;
        const Tensor& phat = (k == l) ? st.p : rt.phat[k - 1];
        ThetaGrad g = pool_param_grad(pt.err_z[k - 1], phat, st.thetas[k - 1]);
        scale_theta_grad(g, o.lambda);
        st.thetas[k - 1] = update_theta(st.thetas[k - 1], g, beta_u[k - 1], o.lambda);
        ws[i][k - 1] = weights_from_theta(st.thetas[k - 1]);
      }
    }
  }

  if (o.record_trace || o.record_final) {
    rep.final_cost.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor e = reconstruct(states[i]->p, ws[i], m);
      axpy(-1.0, *images[i], e);
      rep.final_cost[i] = cost_from_residual(e, states[i]->p, o.lambda, o.alpha);
      if (o.record_trace) rep.traces[i].push_back(rep.final_cost[i]);
    }
  }
  return rep;
}

StepInfo ista_iteration(IstaState& st, const ModelState& m, const Tensor& v,
                        const IstaOptions& o) {
  IstaOptions one = o;
  one.steps = 1;
  one.record_trace = false;
  one.record_final = false;
  // Rerun the shared-step estimate bookkeeping on the batch of one.
  std::vector<PoolWeights> ws = state_weights(st, m);
  Tensor g = feature_gradient(st.p, ws, m, v);
  StepInfo info = auto_step_size({&g}, {&ws}, m, o.beta_fallback);
  ista_run({&v}, {&st}, m, one);
  return info;
}

std::vector<double> resolve_lambda(const ModelState& m, const InferenceOptions& opts) {
  const int l = m.num_layers();
  std::vector<double> lam(static_cast<std::size_t>(l));
  for (int k = 0; k < l; ++k) lam[k] = m.layers[k].lambda;
  if (!opts.lambda.empty()) {
    if (static_cast<int>(opts.lambda.size()) != l)
      throw std::invalid_argument("infer: lambda override has " +
                                  std::to_string(opts.lambda.size()) +
                                  " entries for " + std::to_string(l) + " layers");
    lam = opts.lambda;
  }
  return lam;
}

std::vector<InferResult> infer_batch(const std::vector<const Tensor*>& vs,
                                     const ModelState& m, const InferenceOptions& opts) {
  const int l = m.num_layers();
  const std::size_t n = vs.size();
  if (n == 0) throw std::invalid_argument("infer: empty batch");
  if (opts.phases != 1 && opts.phases != 2)
    throw std::invalid_argument("infer: phases must be 1 or 2");
  if (opts.phases == 2 && l < 2)
    throw std::invalid_argument("infer: two-phase inference needs at least 2 layers");

  const std::vector<double> lam = resolve_lambda(m, opts);
  const std::vector<std::uint8_t> mask = resolve_mask(opts.update_theta, l, "infer");

  std::vector<IstaState> st(n);
  std::vector<IstaState*> st_ptrs(n);
  for (std::size_t i = 0; i < n; ++i) st_ptrs[i] = &st[i];

  IstaOptions o;
  o.steps = opts.ista_steps;
  o.beta_u = opts.beta_u;
  o.denom_fraction = opts.denom_fraction;
  o.beta_fallback = opts.beta_fallback;
  o.record_trace = opts.record_trace;
  o.record_final = true;

  if (opts.phases == 2) {
    // Phase A: run the model below the top to completion, then freeze those
    // layers' pooling variables for the full-stack phase.
    ModelState ma = slice_model(m, l - 1);
    std::vector<IstaState> sa(n);
    std::vector<IstaState*> sa_ptrs(n);
    for (std::size_t i = 0; i < n; ++i) {
      init_state(sa[i], ma, *vs[i], 1);
      sa_ptrs[i] = &sa[i];
    }
    IstaOptions oa = o;
    oa.lambda = lam[l - 2];
    oa.alpha = opts.alpha < 0 ? m.layers[l - 2].alpha : opts.alpha;
    oa.update_theta.assign(mask.begin(), mask.end() - 1);
    if (static_cast<int>(oa.beta_u.size()) > l - 1) oa.beta_u.resize(l - 1);
    oa.record_trace = false;
    oa.record_final = false;
    ista_run(vs, sa_ptrs, ma, oa);

    for (std::size_t i = 0; i < n; ++i) {
      st[i].thetas = std::move(sa[i].thetas);
      st[i].switches = std::move(sa[i].switches);
      init_state(st[i], m, *vs[i], l);
    }
    o.update_theta.assign(static_cast<std::size_t>(l), 0);
    o.update_theta[l - 1] = mask[l - 1];
  } else {
    for (std::size_t i = 0; i < n; ++i) init_state(st[i], m, *vs[i], 1);
    o.update_theta = mask;
  }

  o.lambda = lam[l - 1];
  o.alpha = opts.alpha < 0 ? m.layers[l - 1].alpha : opts.alpha;
  IstaReport rep = ista_run(vs, st_ptrs, m, o);

  std::vector<InferResult> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].weights = state_weights(st[i], m);
    out[i].p = std::move(st[i].p);
    out[i].thetas = std::move(st[i].thetas);
    if (opts.record_trace) out[i].trace = std::move(rep.traces[i]);
    out[i].used_fallback = rep.used_fallback;
  }
  return out;
}

InferResult infer(const Tensor& v, const ModelState& m, const InferenceOptions& opts) {
  std::vector<InferResult> r = infer_batch({&v}, m, opts);
  return std::move(r[0]);
}

}  // namespace dpnet
