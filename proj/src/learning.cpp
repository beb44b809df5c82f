#include "dpnet/learning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace dpnet {

namespace {

constexpr double kInitSigma = 0.01;

// Pushes a layer-(k-1)-space tensor down through layers k-1..1 to pixels.
Tensor down_chain(Tensor y, const ModelState& m, const std::vector<PoolWeights>& ws,
                  int k) {
  for (int j = k - 1; j >= 1; --j)
    y = conv_sum(unpool(y, ws[j - 1]), m.filters[j - 1]);
  return y;
}

// Adjoint of down_chain: pixels back up to layer-(k-1) space.
Tensor up_chain(Tensor e, const ModelState& m, const std::vector<PoolWeights>& ws,
                int k) {
  for (int j = 1; j <= k - 1; ++j)
    e = pool(conv_adjoint(e, m.filters[j - 1]), ws[j - 1]);
  return e;
}

std::vector<Tensor> split_images(const Tensor& images, const ModelState& m) {
  if (images.rank() != 4)
    throw std::invalid_argument("train: images must be N x C x H x W, got " +
                                images.shape_str());
  if (images.dim(1) != m.input_channels || images.dim(2) != m.input_h ||
      images.dim(3) != m.input_w)
    throw std::invalid_argument("train: image dims " + images.shape_str() +
                                " do not match model input");
  const int N = images.dim(0);
  const std::size_t stride =
      static_cast<std::size_t>(images.dim(1)) * images.dim(2) * images.dim(3);
  std::vector<Tensor> out(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    Tensor t({images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.data() + i * stride, stride, t.data());
    out[i] = std::move(t);
  }
  return out;
}

}  // namespace

void reset_features(TrainingState& states) {
  for (IstaState& st : states) st.p.fill(0.0);
}

Tensor filter_gradient(const ModelState& m, const Tensor& p,
                       const std::vector<PoolWeights>& ws, const Tensor& v, int k,
                       double lambda) {
  if (k < 1 || k > m.num_layers())
    throw std::invalid_argument("filter_gradient: layer " + std::to_string(k) +
                                " out of range");
  ReconTrace trace = reconstruct_trace(p, ws, m);
  Tensor e = std::move(trace.vhat);
  check_same_dims(e, v, "filter_gradient");
  axpy(-1.0, v, e);
  Tensor E = up_chain(std::move(e), m, ws, k);
  Tensor g = conv_filter_grad(trace.zhat[k - 1], E, m.filters[k - 1]);
  scale(g, lambda);
  return g;
}

void cg_update_filters(ModelState& m, int k, const std::vector<const Tensor*>& images,
                       const std::vector<IstaState*>& states, double lambda,
                       int cg_steps, Rng& dead_rng) {
  const std::size_t n = images.size();
  if (n == 0 || states.size() != n)
    throw std::invalid_argument("cg_update_filters: empty or mismatched batch");
  if (k < 1 || k > m.num_layers())
    throw std::invalid_argument("cg_update_filters: layer " + std::to_string(k) +
                                " out of range");
  FilterBank& bank = m.filters[k - 1];

  // Residual r = -grad of the batch least-squares at the current taps, plus
  // the per-image caches the operator applications need.
  std::vector<std::vector<PoolWeights>> ws(n);
  std::vector<Tensor> zhat(n);
  Tensor r = Tensor::zeros_like(bank.filters);
  for (std::size_t i = 0; i < n; ++i) {
    ws[i] = state_weights(*states[i], m);
    ReconTrace trace = reconstruct_trace(states[i]->p, ws[i], m);
    zhat[i] = std::move(trace.zhat[k - 1]);
    Tensor e = std::move(trace.vhat);
    check_same_dims(e, *images[i], "cg_update_filters");
    axpy(-1.0, *images[i], e);
    Tensor E = up_chain(std::move(e), m, ws[i], k);
    axpy(-lambda, conv_filter_grad(zhat[i], E, bank), r);
  }

  double rs = dot(r, r);
  if (rs > 0.0) {
    Tensor d = r;
    for (int it = 0; it < cg_steps; ++it) {
      Tensor hd = Tensor::zeros_like(bank.filters);
      for (std::size_t i = 0; i < n; ++i) {
        Tensor y = conv_sum_with(zhat[i], bank, d);
        Tensor e = down_chain(std::move(y), m, ws[i], k);
        Tensor E = up_chain(std::move(e), m, ws[i], k);
        axpy(lambda, conv_filter_grad(zhat[i], E, bank), hd);
      }
      const double dhd = dot(d, hd);
      if (!std::isfinite(dhd) || dhd <= 0.0) break;  // curvature breakdown
      const double alpha = rs / dhd;
      axpy(alpha, d, bank.filters);
      axpy(-alpha, hd, r);
      const double rs_new = dot(r, r);
      if (rs_new <= 0.0 || !std::isfinite(rs_new)) break;
      scale(d, rs_new / rs);
      axpy(1.0, r, d);
      rs = rs_new;
    }
  }

  // Project (clamp when non-negative, always renormalize) and revive any map
  // that projected to zero.
  for (int attempt = 0; attempt < 10; ++attempt) {
    std::vector<double> norms = m.nonneg ? project_filters(bank) : normalize_filters(bank);
    bool dead = false;
    for (int b = 0; b < bank.maps(); ++b)
      if (norms[b] == 0.0) {
        rerandomize_map(bank, b, kInitSigma, dead_rng);
        dead = true;
      }
    if (!dead) break;
  }
}

TrainResult train(ModelState& m, const Tensor& images, const TrainOptions& opts,
                  const std::string& csv_path,
                  const std::function<void(const EpochLog&)>& progress) {
  std::vector<Tensor> imgs = split_images(images, m);
  const int N = static_cast<int>(imgs.size());
  const int l = m.num_layers();
  if (opts.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (opts.cg_steps < 1) throw std::invalid_argument("train: cg_steps must be >= 1");

  std::vector<PhasePlan> phases = opts.phases;
  if (phases.empty()) {
    for (int k = 1; k <= l; ++k) {
      PhasePlan p;
      p.top_layer = k;
      phases.push_back(p);
    }
  }

  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path);
    if (!csv) throw std::runtime_error("train: cannot open " + csv_path);
    csv << "phase,epoch,recon,sparsity,total,l0\n";
  }

  Rng dead_rng(Rng::derive(m.seed, 0xDEADF11EULL));
  TrainResult res;

  for (std::size_t ph = 0; ph < phases.size(); ++ph) {
    const PhasePlan& plan = phases[ph];
    if (plan.top_layer < 1 || plan.top_layer > l)
      throw std::invalid_argument("train: phase top_layer out of range");
    if (plan.epochs < 0 || plan.ista_steps < 1)
      throw std::invalid_argument("train: bad phase schedule");
    const int top = plan.top_layer;

    ModelState work = slice_model(m, top);
    // Keep the full model's filters in sync as the phase updates them.
    const double lambda = work.layers.back().lambda;

    std::vector<int> banks = plan.update_filters;
    if (banks.empty()) banks = {top};
    std::sort(banks.begin(), banks.end(), std::greater<int>());
    for (int b : banks)
      if (b < 1 || b > top)
        throw std::invalid_argument("train: update_filters entry out of range");

    IstaOptions o;
    o.steps = plan.ista_steps;
    o.lambda = lambda;
    o.alpha = work.layers.back().alpha;
    o.update_theta = plan.update_theta;
    o.beta_u = opts.beta_u;
    if (static_cast<int>(o.beta_u.size()) > top) o.beta_u.resize(top);
    o.denom_fraction = opts.denom_fraction;
    o.beta_fallback = opts.beta_fallback;
    o.record_final = true;

    TrainingState states(static_cast<std::size_t>(N));
    std::vector<char> inited(static_cast<std::size_t>(N), 0);

    for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      double recon = 0, sparsity = 0, total = 0, l0 = 0;

      for (int start = 0; start < N; start += opts.batch_size) {
        const int end = std::min(N, start + opts.batch_size);
        std::vector<const Tensor*> batch_imgs;
        std::vector<IstaState*> batch_states;
        for (int i = start; i < end; ++i) {
          if (!inited[i]) {
            init_state(states[i], work, imgs[i], 1);
            inited[i] = 1;
          }
          batch_imgs.push_back(&imgs[i]);
          batch_states.push_back(&states[i]);
        }

        IstaReport rep = ista_run(batch_imgs, batch_states, work, o);
        for (const CostBreakdown& c : rep.final_cost) {
          recon += c.recon;
          sparsity += c.sparsity;
          total += c.total;
          l0 += static_cast<double>(c.l0);
        }

        for (int b : banks)
          cg_update_filters(work, b, batch_imgs, batch_states, lambda, opts.cg_steps,
                            dead_rng);
      }

      EpochLog log;
      log.phase = static_cast<int>(ph) + 1;
      log.epoch = epoch;
      log.recon = recon / N;
      log.sparsity = sparsity / N;
      log.total = total / N;
      log.l0 = l0 / N;
      log.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!std::isfinite(log.total))
        throw std::runtime_error("train: cost diverged in phase " +
                                 std::to_string(log.phase) + " epoch " +
                                 std::to_string(epoch));
      res.log.push_back(log);
      if (csv.is_open()) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g\n", log.phase,
                      log.epoch, log.recon, log.sparsity, log.total, log.l0);
        csv << buf << std::flush;
      }
      if (progress) progress(log);

      if (std::find(plan.reset_epochs.begin(), plan.reset_epochs.end(), epoch) !=
          plan.reset_epochs.end())
        reset_features(states);
    }

    for (int j = 0; j < top; ++j) m.filters[j] = work.filters[j];
  }
  return res;
}

}  // namespace dpnet
