#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dpnet/data_io.hpp"
#include "dpnet/features.hpp"
#include "dpnet/inference.hpp"

namespace dpnet {

// Concatenates patch_size x patch_size windows at the given stride from every
// map (windows-major, then map, then cell) and scales the result to unit l2
// norm. Maps smaller than the patch are rejected.
SparseVec extract_patch_features(const Tensor& maps, int patch_size, int stride);

// Dense vector (e.g. raw pixels) as a feature row.
SparseVec dense_features(const Tensor& t, bool normalize = true);

struct LinearModel {
  int classes = 0, dim = 0;
  std::vector<double> w;  // classes x dim, row-major
  std::vector<double> b;  // classes
};

struct SvmOptions {
  double reg = 1e-4;
  int epochs = 30;
  double step0 = 0.1;  // epoch e uses step0 / sqrt(e)
  std::uint64_t seed = 1;
};

// One-vs-rest L2-regularized hinge loss by subgradient descent over seeded
// shuffles of the training rows.
LinearModel train_linear(const std::vector<SparseVec>& x, const std::vector<int>& y,
                         int classes, const SvmOptions& opts);

int predict(const LinearModel& m, const SparseVec& x);
double error_rate(const LinearModel& m, const std::vector<SparseVec>& x,
                  const std::vector<int>& y);

struct EvalConfig {
  int layer = 1;        // model depth used for features
  int patch_size = 9;
  int stride = 3;
  InferenceOptions infer;
  SvmOptions svm;
  int infer_batch = 50;  // images per shared-step inference batch
};

struct EvalResult {
  double train_error = 0, test_error = 0;
  std::vector<SparseVec> train_features, test_features;
};

// Patch features of every image in d through the model sliced to cfg.layer,
// inferred in infer_batch-sized chunks. progress (if set) receives
// (images done, images total).
std::vector<SparseVec> infer_features(const ModelState& m, const Dataset& d,
                                      const EvalConfig& cfg,
                                      const std::function<void(int, int)>& progress = {});

// Full pipeline: infer features for every train/test image with the model
// sliced to cfg.layer, extract normalized patches, fit the linear classifier
// on the training split, report both error rates. progress (if set) receives
// (images done, images total) during inference.
EvalResult evaluate_features(const ModelState& m, const Dataset& train,
                             const Dataset& test, const EvalConfig& cfg,
                             const std::function<void(int, int)>& progress = {});

}  // namespace dpnet
