#include "dpnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dpnet/rng.hpp"

namespace dpnet {

SparseVec extract_patch_features(const Tensor& maps, int patch_size, int stride) {
  if (maps.rank() != 3)
    throw std::invalid_argument("extract_patch_features: maps must be B x h x w");
  if (patch_size <= 0 || stride <= 0)
    throw std::invalid_argument("extract_patch_features: bad patch/stride");
  const int B = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
  if (h < patch_size || w < patch_size)
    throw std::invalid_argument("extract_patch_features: maps " + maps.shape_str() +
                                " smaller than patch " + std::to_string(patch_size));
  const int npy = (h - patch_size) / stride + 1;
  const int npx = (w - patch_size) / stride + 1;

  SparseVec out;
  out.dim = npy * npx * B * patch_size * patch_size;
  int base = 0;
  double sq = 0.0;
  for (int py = 0; py < npy; ++py)
    for (int px = 0; px < npx; ++px)
      for (int b = 0; b < B; ++b) {
        for (int iy = 0; iy < patch_size; ++iy) {
          const double* row = maps.row3(b, py * stride + iy) + px * stride;
          for (int ix = 0; ix < patch_size; ++ix) {
            const double v = row[ix];
            if (v != 0.0) {
              out.idx.push_back(base + iy * patch_size + ix);
              out.val.push_back(v);
              sq += v * v;
            }
          }
        }
        base += patch_size * patch_size;
      }
  if (sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (double& v : out.val) v *= inv;
  }
  return out;
}

SparseVec dense_features(const Tensor& t, bool normalize) {
  SparseVec out;
  out.dim = static_cast<int>(t.numel());
  double sq = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (t[i] != 0.0) {
      out.idx.push_back(static_cast<int>(i));
      out.val.push_back(t[i]);
      sq += t[i] * t[i];
    }
  }
  if (normalize && sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (double& v : out.val) v *= inv;
  }
  return out;
}

namespace {

double score(const LinearModel& m, const SparseVec& x, int c) {
  const double* w = m.w.data() + static_cast<std::size_t>(c) * m.dim;
  double s = m.b[static_cast<std::size_t>(c)];
  for (std::size_t j = 0; j < x.idx.size(); ++j) s += w[x.idx[j]] * x.val[j];
  return s;
}

}  // namespace

LinearModel train_linear(const std::vector<SparseVec>& x, const std::vector<int>& y,
                         int classes, const SvmOptions& opts) {
  if (x.empty() || x.size() != y.size())
    throw std::invalid_argument("train_linear: empty or mismatched data");
  if (classes < 2) throw std::invalid_argument("train_linear: need at least 2 classes");
  int dim = 0;
  for (const SparseVec& r : x) dim = std::max(dim, r.dim);
  std::vector<char> seen(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || y[i] >= classes)
      throw std::invalid_argument("train_linear: label " + std::to_string(y[i]) +
                                  " outside 0.." + std::to_string(classes - 1));
    seen[static_cast<std::size_t>(y[i])] = 1;
  }
  if (std::count(seen.begin(), seen.end(), 1) < 2)
    throw std::invalid_argument("train_linear: need at least 2 distinct labels");

  LinearModel m;
  m.classes = classes;
  m.dim = dim;
  m.w.assign(static_cast<std::size_t>(classes) * dim, 0.0);
  m.b.assign(static_cast<std::size_t>(classes), 0.0);

  Rng rng(opts.seed);
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    const double eta = opts.step0 / std::sqrt(static_cast<double>(epoch));
    const double decay = 1.0 - eta * opts.reg;
    rng.shuffle(order);
    for (std::size_t i : order) {
      const SparseVec& xi = x[i];
      for (int c = 0; c < classes; ++c) {
        const double yc = (y[i] == c) ? 1.0 : -1.0;
        const double margin = yc * score(m, xi, c);
        double* w = m.w.data() + static_cast<std::size_t>(c) * dim;
        for (int j = 0; j < dim; ++j) w[j] *= decay;
        if (margin < 1.0) {
          const double step = eta * yc;
          for (std::size_t j = 0; j < xi.idx.size(); ++j)
            w[xi.idx[j]] += step * xi.val[j];
          m.b[static_cast<std::size_t>(c)] += step;
        }
      }
    }
  }
  return m;
}

int predict(const LinearModel& m, const SparseVec& x) {
  int best = 0;
  double best_s = score(m, x, 0);
  for (int c = 1; c < m.classes; ++c) {
    const double s = score(m, x, c);
    if (s > best_s) {
      best_s = s;
      best = c;
    }
  }
  return best;
}

double error_rate(const LinearModel& m, const std::vector<SparseVec>& x,
                  const std::vector<int>& y) {
  if (x.empty() || x.size() != y.size())
    throw std::invalid_argument("error_rate: empty or mismatched data");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < x.size(); ++i) wrong += (predict(m, x[i]) != y[i]);
  return static_cast<double>(wrong) / static_cast<double>(x.size());
}

namespace {

std::vector<SparseVec> infer_split_features(const ModelState& m, const Dataset& data,
                                            const EvalConfig& cfg, int& done, int total,
                                            const std::function<void(int, int)>& progress) {
  const int N = data.images.dim(0);
  const std::size_t stride = static_cast<std::size_t>(data.images.dim(1)) *
                             data.images.dim(2) * data.images.dim(3);
  std::vector<SparseVec> feats(static_cast<std::size_t>(N));
  const int bs = std::max(1, cfg.infer_batch);

  for (int start = 0; start < N; start += bs) {
    const int end = std::min(N, start + bs);
    std::vector<Tensor> imgs(static_cast<std::size_t>(end - start));
    std::vector<const Tensor*> ptrs(static_cast<std::size_t>(end - start));
    for (int i = start; i < end; ++i) {
      Tensor t({data.images.dim(1), data.images.dim(2), data.images.dim(3)});
      std::copy_n(data.images.data() + i * stride, stride, t.data());
      imgs[i - start] = std::move(t);
      ptrs[i - start] = &imgs[i - start];
    }
    std::vector<InferResult> res = infer_batch(ptrs, m, cfg.infer);
    for (int i = start; i < end; ++i)
      feats[i] = extract_patch_features(res[i - start].p, cfg.patch_size, cfg.stride);
    done += end - start;
    if (progress) progress(done, total);
  }
  return feats;
}

}  // namespace

std::vector<SparseVec> infer_features(const ModelState& m, const Dataset& d,
                                      const EvalConfig& cfg,
                                      const std::function<void(int, int)>& progress) {
  if (cfg.layer < 1 || cfg.layer > m.num_layers())
    throw std::invalid_argument("infer_features: layer out of range");
  ModelState sliced = slice_model(m, cfg.layer);
  EvalConfig c = cfg;
  c.infer.record_trace = false;
  int done = 0;
  return infer_split_features(sliced, d, c, done, d.images.dim(0), progress);
}

EvalResult evaluate_features(const ModelState& m, const Dataset& train,
                             const Dataset& test, const EvalConfig& cfg,
                             const std::function<void(int, int)>& progress) {
  if (cfg.layer < 1 || cfg.layer > m.num_layers())
    throw std::invalid_argument("evaluate_features: layer out of range");
  ModelState sliced = slice_model(m, cfg.layer);

  EvalConfig c = cfg;
  c.infer.record_trace = false;

  const int total = train.images.dim(0) + test.images.dim(0);
  int done = 0;
  EvalResult r;
  r.train_features = infer_split_features(sliced, train, c, done, total, progress);
  r.test_features = infer_split_features(sliced, test, c, done, total, progress);

  LinearModel lm = train_linear(r.train_features, train.labels, 10, cfg.svm);
  r.train_error = error_rate(lm, r.train_features, train.labels);
  r.test_error = error_rate(lm, r.test_features, test.labels);
  return r;
}

}  // namespace dpnet
