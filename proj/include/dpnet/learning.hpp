#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dpnet/inference.hpp"
#include "dpnet/model.hpp"

namespace dpnet {

// One alternating-optimization phase: grow the model to top_layer, run
// `epochs` sweeps of per-image ISTA inference, and refresh the listed filter
// banks by conjugate gradient after every mini-batch.
struct PhasePlan {
  int top_layer = 1;
  int epochs = 50;
  int ista_steps = 100;
  std::vector<std::uint8_t> update_theta;  // per active layer; empty = all
  std::vector<int> update_filters;         // banks solved per batch; empty = {top_layer}
  std::vector<int> reset_epochs;           // zero stored features after these epochs
};

struct TrainOptions {
  std::vector<PhasePlan> phases;  // empty = one default plan per model layer
  int batch_size = 50;
  int cg_steps = 2;
  std::vector<double> beta_u;     // per-layer theta step scale; empty = 1e-3
  double denom_fraction = 0.1;
  double beta_fallback = 1e-3;
};

struct EpochLog {
  int phase = 0, epoch = 0;
  double recon = 0, sparsity = 0, total = 0;
  double l0 = 0;  // mean nonzero count per image
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
};

using TrainingState = std::vector<IstaState>;

// Zeroes every stored feature map; pooling variables and filters are kept.
void reset_features(TrainingState& states);

// Gradient of C_l with respect to layer k's filter taps at fixed features and
// pooling: lambda * correlation of the error propagated to layer k-1 with the
// top-down unpooled maps of layer k. Masked-out taps stay zero.
Tensor filter_gradient(const ModelState& m, const Tensor& p,
                       const std::vector<PoolWeights>& ws, const Tensor& v, int k,
                       double lambda);

// Solves the batch least-squares for layer k's filter bank with cg_steps
// conjugate gradient iterations (features and pooling fixed), then projects:
// clamp negatives (when m.nonneg), renormalize each map's filter group to
// unit l2 norm, and re-randomize any map that projected to zero.
void cg_update_filters(ModelState& m, int k, const std::vector<const Tensor*>& images,
                       const std::vector<IstaState*>& states, double lambda,
                       int cg_steps, Rng& dead_rng);

// Alternating optimization over the dataset (images: N x C x H x W). Phases
// run in order, each growing or revisiting the stack per its plan; filters in
// m are updated in place. Per-epoch means are returned and, when csv_path is
// non-empty, streamed as CSV rows (header included) as training progresses.
// progress, when set, is called after every epoch.
TrainResult train(ModelState& m, const Tensor& images, const TrainOptions& opts,
                  const std::string& csv_path = "",
                  const std::function<void(const EpochLog&)>& progress = {});

}  // namespace dpnet
