#pragma once

#include <cstdint>
#include <vector>

#include "dpnet/model.hpp"

namespace dpnet {

// Per-image inference state: top-layer features plus the pooling variables of
// every layer. In gaussian mode `thetas` is authoritative (weights are derived
// on demand); in max mode `switches` holds the fixed one-hot grids.
struct IstaState {
  Tensor p;
  std::vector<PoolParams> thetas;
  std::vector<PoolWeights> switches;
};

struct IstaOptions {
  int steps = 50;
  double lambda = 1.0;                      // weight of the top reconstruction term
  double alpha = 1.0;                       // sparsity exponent (1 or 0.5)
  std::vector<std::uint8_t> update_theta;   // per layer; empty = update all
  std::vector<double> beta_u;               // per-layer theta step scale; empty = 1e-3
  double denom_fraction = 1.0;              // batch fraction sampled for the step
                                            // size denominator
  double beta_fallback = 1e-3;              // step size when ||R grad||^2 vanishes
  bool record_trace = false;                // per-iteration cost traces
  bool record_final = false;                // cost after the last iteration
};

struct StepInfo {
  double beta = 0.0;
  bool used_fallback = false;
};

struct IstaReport {
  // traces[i][t] = cost of image i after t iterations (steps+1 entries),
  // only filled when record_trace is set.
  std::vector<std::vector<CostBreakdown>> traces;
  std::vector<CostBreakdown> final_cost;  // only when record_final or record_trace
  bool used_fallback = false;
};

// R^T (R p - v): gradient of the reconstruction term without the lambda
// factor (the update p <- p - lambda*beta*grad reintroduces it).
Tensor feature_gradient(const Tensor& p, const std::vector<PoolWeights>& ws,
                        const ModelState& m, const Tensor& v);

// Exact line-search step along the reconstruction gradient, pooled over a
// sample of per-image gradients: beta = sum ||g_i||^2 / sum ||R g_i||^2.
// Falls back to beta_fallback when the denominator vanishes.
StepInfo auto_step_size(const std::vector<const Tensor*>& grads,
                        const std::vector<const std::vector<PoolWeights>*>& stacks,
                        const ModelState& m, double beta_fallback);

// Proximal/sub-gradient shrinkage on each element with step beta:
//   alpha = 1:   soft threshold at beta;
//   alpha = 0.5: p - beta * 0.5 |p|^(-1/2) sign(p), elements with
//                |p| <= 1e-8 or whose update crosses zero are set to 0.
Tensor shrink(const Tensor& p, double beta, double alpha);

Tensor project_nonneg(const Tensor& p);

// One synchronized ISTA pass over a batch of images sharing the step size
// estimate each iteration: reconstruct, propagate the residual, step p with
// the pooled beta, shrink, project, then take a gradient step on each
// unfrozen layer's pooling parameters (gaussian mode only). States are
// updated in place.
IstaReport ista_run(const std::vector<const Tensor*>& images,
                    const std::vector<IstaState*>& states, const ModelState& m,
                    const IstaOptions& o);

// Single iteration on a single image.
StepInfo ista_iteration(IstaState& st, const ModelState& m, const Tensor& v,
                        const IstaOptions& o);

// Bottom-up pooling initialization: q_0 = v, t_k = F_k^T q_{k-1}; layers at or
// above from_layer get moment-fit thetas (gaussian) or fresh argmax switches
// (max); layers below keep st's existing variables. q_k pools t_k through
// whichever variables layer k now has. p is zeroed to the top layer's dims.
void init_state(IstaState& st, const ModelState& m, const Tensor& v, int from_layer = 1);

// Derived unit-norm weights for every layer (gaussian: from thetas; max:
// copies the switches).
std::vector<PoolWeights> state_weights(const IstaState& st, const ModelState& m);

struct InferenceOptions {
  int ista_steps = 50;
  std::vector<double> lambda;              // per-layer overrides; empty = spec values
  double alpha = -1.0;                     // top exponent override; negative = spec
  int phases = 1;                          // 2 = infer lower layers first, then the
                                           // top with lower thetas frozen
  std::vector<std::uint8_t> update_theta;  // per layer; empty = all
  std::vector<double> beta_u;
  double denom_fraction = 1.0;
  double beta_fallback = 1e-3;
  bool record_trace = true;
};

struct InferResult {
  Tensor p;
  std::vector<PoolParams> thetas;
  std::vector<PoolWeights> weights;
  std::vector<CostBreakdown> trace;  // cost after 0..T iterations (final phase)
  bool used_fallback = false;
};

// Cold-start inference of one image: bottom-up initialization followed by T
// ISTA iterations (per phase).
InferResult infer(const Tensor& v, const ModelState& m, const InferenceOptions& opts);

// Cold-start inference of a batch; the images share each iteration's step
// size estimate (sampled per opts.denom_fraction) but are otherwise
// independent.
std::vector<InferResult> infer_batch(const std::vector<const Tensor*>& vs,
                                     const ModelState& m, const InferenceOptions& opts);

// Resolved per-layer lambda (overrides applied over the layer specs).
std::vector<double> resolve_lambda(const ModelState& m, const InferenceOptions& opts);

}  // namespace dpnet
