#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpnet/eval.hpp"
#include "dpnet/inference.hpp"
#include "dpnet/learning.hpp"
#include "dpnet/model.hpp"

namespace dpnet {

// A bad key, value, or combination in a run configuration. The CLI maps this
// to the usage-error exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every tunable of a run, read from a key=value file (# comments, unknown
// keys rejected). Per-layer lists take either one entry (broadcast) or one
// per layer; the layer count comes from `maps`.
struct RunConfig {
  // paths and data
  std::string data_dir = "data/mnist";
  std::string out_dir = "out";
  std::string checkpoint;  // model to load (infer/eval/export/visualize)
  std::string init_from;   // checkpoint whose filters warm-start training
  int train_limit = 0;     // images used from each split; 0 = all
  int test_limit = 0;
  std::uint64_t seed = 1;

  // architecture
  std::vector<int> maps = {16, 48};
  std::vector<int> filter_size = {5};
  std::vector<int> pool_size = {2};
  std::vector<int> fan_in = {0, 8};
  std::vector<double> lambda = {2.0, 0.5};  // per-layer training weights
  double train_alpha = 0.5;
  std::string pool_mode = "gaussian";  // gaussian | max
  bool nonneg = true;

  // training schedule
  int epochs = 50;                      // per phase
  int ista_steps = 100;                 // ISTA iterations per training epoch
  std::vector<int> reset_epochs = {25};  // zero stored features after these
  int cg_steps = 2;
  int batch_size = 50;
  std::vector<double> theta_step = {1e-7};  // per-layer pooling step scale
  double denom_fraction = 0.1;

  // inference
  int infer_steps = 50;
  std::vector<double> infer_lambda = {5.0};
  double infer_alpha = 1.0;
  int phases = 1;  // 1 = joint, 2 = lower layers first
  std::vector<int> update_theta = {1};
  int infer_batch = 50;

  // feature evaluation
  int eval_layer = 2;
  std::vector<int> patch_size = {9, 6};
  std::vector<int> patch_stride = {3, 2};
  double svm_reg = 1e-4;
  int svm_epochs = 30;
  double svm_step = 0.1;

  // visualization
  std::string image_format = "png";  // png | pnm
  int viz_samples = 5;
  int viz_images = 50;
  int viz_image = 0;  // dataset index used for the decomposition render

  int layers() const { return static_cast<int>(maps.size()); }
};

// Defaults overlaid with the file's entries. Unknown keys, malformed values,
// and inconsistent list lengths all throw ConfigError.
RunConfig load_config(const std::string& path);

// Applies one key=value assignment (same validation as the file parser).
void apply_config_entry(RunConfig& cfg, const std::string& entry);

// Cross-field validation (list lengths, enums, ranges). load_config and the
// CLI both run this after the last assignment.
void validate_config(const RunConfig& cfg);

// The full effective configuration as sorted key=value lines; equal configs
// serialize identically, so its hash identifies the run's inputs.
std::string canonical_config(const RunConfig& cfg);

std::uint64_t fnv1a64(const std::string& s);
std::string config_hash(const RunConfig& cfg);  // fnv1a64 of the canonical text, hex

// Per-layer value of a broadcastable list (layer is 1-based; throws
// ConfigError when the list covers neither 1 nor `layer` entries).
int layer_int(const std::vector<int>& v, int layer);
double layer_double(const std::vector<double>& v, int layer);

// Builders mapping the configuration onto the library's option structs. The
// inference/eval builders take the layer count of the model actually in use
// (a loaded checkpoint may be shallower or deeper than `maps`).
std::vector<LayerSpec> layer_specs(const RunConfig& cfg);
ModelState model_from_config(const RunConfig& cfg, int channels, int h, int w);
TrainOptions train_from_config(const RunConfig& cfg);
InferenceOptions inference_from_config(const RunConfig& cfg, int num_layers);
EvalConfig eval_from_config(const RunConfig& cfg, int num_layers);

// manifest.json (config hash, seed, format versions) written next to a run's
// outputs; identical configurations yield byte-identical manifests.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const RunConfig& cfg);

}  // namespace dpnet
