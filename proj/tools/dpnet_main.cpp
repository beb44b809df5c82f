#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dpnet/config.hpp"
#include "dpnet/data_io.hpp"
#include "dpnet/eval.hpp"
#include "dpnet/image_io.hpp"
#include "dpnet/inference.hpp"
#include "dpnet/learning.hpp"
#include "dpnet/model.hpp"
#include "dpnet/rng.hpp"
#include "dpnet/version.hpp"
#include "dpnet/viz.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dpnet;

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

RunConfig build_config(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  for (const std::string& s : sets) apply_config_entry(cfg, s);
  validate_config(cfg);
  return cfg;
}

std::string split_path(const RunConfig& cfg, const std::string& split, bool images) {
  std::string stem = split == "train" ? "train" : "t10k";
  std::string kind = images ? "-images-idx3-ubyte" : "-labels-idx1-ubyte";
  return cfg.data_dir + "/" + stem + kind;
}

Dataset load_split(const RunConfig& cfg, const std::string& split) {
  if (split != "train" && split != "test")
    throw ConfigError("split must be train or test, got '" + split + "'");
  int limit = split == "train" ? cfg.train_limit : cfg.test_limit;
  Dataset d = load_mnist(split_path(cfg, split, true), split_path(cfg, split, false), limit);
  d.split = split;
  return d;
}

Tensor nth_image(const Tensor& images, int i) {
  if (i < 0 || i >= images.dim(0))
    throw ConfigError("image index " + std::to_string(i) + " outside dataset of " +
                      std::to_string(images.dim(0)));
  Tensor t({images.dim(1), images.dim(2), images.dim(3)});
  const std::size_t stride = t.numel();
  std::copy_n(images.data() + static_cast<std::size_t>(i) * stride, stride, t.data());
  return t;
}

ModelState load_model(const RunConfig& cfg) {
  if (cfg.checkpoint.empty())
    throw ConfigError("this command needs a model: set checkpoint=PATH");
  return load_checkpoint(cfg.checkpoint);
}

std::ofstream open_csv(const std::string& path, const std::string& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << header << '\n';
  return out;
}

void print_epoch(const EpochLog& log) {
  std::printf("phase %d epoch %3d  recon %.4g  sparsity %.4g  total %.6g  l0 %.2f\n",
              log.phase, log.epoch, log.recon, log.sparsity, log.total, log.l0);
  std::fflush(stdout);
}

std::function<void(int, int)> infer_progress(const std::string& tag) {
  return [tag](int done, int total) {
    if (done % 500 == 0 || done == total)
      std::printf("%s: inferred %d/%d\n", tag.c_str(), done, total), std::fflush(stdout);
  };
}

// ---------------------------------------------------------------- train

void cmd_train(const RunConfig& cfg) {
  Dataset tr = load_split(cfg, "train");
  ModelState m = model_from_config(cfg, tr.images.dim(1), tr.images.dim(2),
                                   tr.images.dim(3));
  if (!cfg.init_from.empty()) {
    ModelState src = load_checkpoint(cfg.init_from);
    adopt_filters(m, src);
    std::printf("adopted %d filter bank(s) from %s\n", src.num_layers(),
                cfg.init_from.c_str());
  }
  write_manifest(cfg.out_dir, "train", cfg);
  TrainOptions topts = train_from_config(cfg);
  train(m, tr.images, topts, cfg.out_dir + "/train_log.csv", print_epoch);
  std::string ckpt = cfg.out_dir + "/model.ckpt";
  save_checkpoint(ckpt, m);
  std::printf("checkpoint %s, log %s/train_log.csv\n", ckpt.c_str(), cfg.out_dir.c_str());
}

// ---------------------------------------------------------------- infer

json theta_json(const PoolParams& t, int layer) {
  return json{{"layer", layer},   {"maps", t.maps},       {"ny", t.ny},
              {"nx", t.nx},       {"s", t.s},             {"mu_x", t.mu_x},
              {"mu_y", t.mu_y},   {"gamma_x", t.gamma_x}, {"gamma_y", t.gamma_y}};
}

json switches_json(const PoolWeights& w, int layer) {
  std::vector<int> cells;
  const int ss = w.s * w.s;
  for (int b = 0; b < w.maps; ++b)
    for (int jy = 0; jy < w.ny; ++jy)
      for (int jx = 0; jx < w.nx; ++jx) {
        const double* c = w.cell(b, jy, jx);
        int best = 0;
        for (int i = 1; i < ss; ++i)
          if (c[i] > c[best]) best = i;
        cells.push_back(best);
      }
  return json{{"layer", layer}, {"maps", w.maps}, {"ny", w.ny}, {"nx", w.nx},
              {"s", w.s},       {"cells", cells}};
}

void cmd_infer(const RunConfig& cfg, const std::vector<int>& indices,
               const std::string& split) {
  Dataset ds = load_split(cfg, split);
  ModelState m = load_model(cfg);
  InferenceOptions opts = inference_from_config(cfg, m.num_layers());
  write_manifest(cfg.out_dir, "infer", cfg);
  for (int idx : indices) {
    Tensor v = nth_image(ds.images, idx);
    InferResult res = infer(v, m, opts);

    json j;
    j["index"] = idx;
    j["split"] = split;
    j["label"] = ds.labels[static_cast<std::size_t>(idx)];
    j["dims"] = res.p.dims();
    json nz = json::array();
    for (int b = 0; b < res.p.dim(0); ++b)
      for (int y = 0; y < res.p.dim(1); ++y)
        for (int x = 0; x < res.p.dim(2); ++x)
          if (res.p.at3(b, y, x) != 0.0)
            nz.push_back({b, y, x, res.p.at3(b, y, x)});
    j["p"] = nz;
    if (m.pool_mode == PoolMode::gaussian) {
      json ts = json::array();
      for (std::size_t k = 0; k < res.thetas.size(); ++k)
        ts.push_back(theta_json(res.thetas[k], static_cast<int>(k) + 1));
      j["thetas"] = ts;
    } else {
      json sw = json::array();
      for (std::size_t k = 0; k < res.weights.size(); ++k)
        sw.push_back(switches_json(res.weights[k], static_cast<int>(k) + 1));
      j["switches"] = sw;
    }
    json trace;
    for (const CostBreakdown& c : res.trace) {
      trace["recon"].push_back(c.recon);
      trace["sparsity"].push_back(c.sparsity);
      trace["total"].push_back(c.total);
      trace["l0"].push_back(c.l0);
    }
    j["trace"] = trace;
    j["used_fallback"] = res.used_fallback;

    std::string path = cfg.out_dir + "/infer_" + std::to_string(idx) + ".json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << j.dump(2) << '\n';
    std::printf("image %d label %d: cost %.6g -> %.6g, l0 %zu, %s\n", idx,
                ds.labels[static_cast<std::size_t>(idx)], res.trace.front().total,
                res.trace.back().total, res.trace.back().l0, path.c_str());
  }
}

// ---------------------------------------------------------------- eval

void cmd_eval(const RunConfig& cfg) {
  Dataset tr = load_split(cfg, "train");
  Dataset te = load_split(cfg, "test");
  ModelState m = load_model(cfg);
  EvalConfig ecfg = eval_from_config(cfg, m.num_layers());
  write_manifest(cfg.out_dir, "eval", cfg);
  EvalResult r = evaluate_features(m, tr, te, ecfg, infer_progress("eval"));
  std::printf("layer %d: train error %.4f  test error %.4f\n", ecfg.layer,
              r.train_error, r.test_error);
  json j{{"layer", ecfg.layer},
         {"train_error", r.train_error},
         {"test_error", r.test_error},
         {"train_images", tr.images.dim(0)},
         {"test_images", te.images.dim(0)}};
  std::ofstream out(cfg.out_dir + "/eval_report.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot open eval_report.json");
  out << j.dump(2) << '\n';
}

// ------------------------------------------------------- export-features

void cmd_export(const RunConfig& cfg, const std::string& split) {
  Dataset ds = load_split(cfg, split);
  ModelState m = load_model(cfg);
  EvalConfig ecfg = eval_from_config(cfg, m.num_layers());
  write_manifest(cfg.out_dir, "export-features", cfg);
  std::vector<SparseVec> feats = infer_features(m, ds, ecfg, infer_progress("export"));
  std::string path = cfg.out_dir + "/features_" + split + ".txt";
  export_features(path, feats, ds.labels);
  std::printf("wrote %zu rows to %s\n", feats.size(), path.c_str());
}

// ---------------------------------------------------------------- ablate

void write_log_rows(std::ofstream& csv, const std::string& prefix,
                    const std::vector<EpochLog>& log) {
  for (const EpochLog& e : log)
    csv << prefix << ',' << e.phase << ',' << e.epoch << ',' << fmt_g(e.recon) << ','
        << fmt_g(e.sparsity) << ',' << fmt_g(e.total) << ',' << fmt_g(e.l0) << '\n';
}

ModelState train_variant(const RunConfig& cfg, const Dataset& tr, const std::string& tag,
                         std::vector<EpochLog>* log_out = nullptr) {
  std::printf("-- training variant: %s\n", tag.c_str());
  ModelState m = model_from_config(cfg, tr.images.dim(1), tr.images.dim(2),
                                   tr.images.dim(3));
  TrainResult r = train(m, tr.images, train_from_config(cfg), "", print_epoch);
  if (log_out) *log_out = r.log;
  return m;
}

double eval_variant(const RunConfig& cfg, const ModelState& m, const Dataset& tr,
                    const Dataset& te, const std::string& tag, double* train_err) {
  EvalConfig ecfg = eval_from_config(cfg, m.num_layers());
  EvalResult r = evaluate_features(m, tr, te, ecfg, infer_progress(tag));
  std::printf("-- %s: train error %.4f  test error %.4f\n", tag.c_str(), r.train_error,
              r.test_error);
  if (train_err) *train_err = r.train_error;
  return r.test_error;
}

void ablate_max_vs_gauss(const RunConfig& cfg) {
  Dataset tr = load_split(cfg, "train");
  auto csv = open_csv(cfg.out_dir + "/ablate_max_vs_gauss.csv",
                      "pool_mode,phase,epoch,recon,sparsity,total,l0");
  for (const char* mode : {"gaussian", "max"}) {
    RunConfig c = cfg;
    c.pool_mode = mode;
    std::vector<EpochLog> log;
    train_variant(c, tr, std::string("pool_mode=") + mode, &log);
    write_log_rows(csv, mode, log);
  }
}

void ablate_posneg(const RunConfig& cfg) {
  Dataset tr = load_split(cfg, "train");
  Dataset te = load_split(cfg, "test");
  auto csv = open_csv(cfg.out_dir + "/ablate_posneg.csv", "nonneg,train_error,test_error");
  for (int nn : {1, 0}) {
    RunConfig c = cfg;
    c.nonneg = nn != 0;
    std::string tag = "nonneg=" + std::to_string(nn);
    ModelState m = train_variant(c, tr, tag);
    double train_err = 0;
    double test_err = eval_variant(c, m, tr, te, tag, &train_err);
    csv << nn << ',' << fmt_g(train_err) << ',' << fmt_g(test_err) << '\n';
  }
}

void ablate_reset(const RunConfig& cfg) {
  if (cfg.reset_epochs.empty())
    throw ConfigError("ablate reset: reset_epochs must be set (the ON variant)");
  Dataset tr = load_split(cfg, "train");
  Dataset te = load_split(cfg, "test");
  auto csv = open_csv(cfg.out_dir + "/ablate_reset.csv", "reset,train_error,test_error");
  for (int on : {1, 0}) {
    RunConfig c = cfg;
    if (!on) c.reset_epochs.clear();
    std::string tag = "reset=" + std::to_string(on);
    ModelState m = train_variant(c, tr, tag);
    double train_err = 0;
    double test_err = eval_variant(c, m, tr, te, tag, &train_err);
    csv << on << ',' << fmt_g(train_err) << ',' << fmt_g(test_err) << '\n';
  }
}

void ablate_priors(const RunConfig& cfg) {
  Dataset tr = load_split(cfg, "train");
  Dataset te = load_split(cfg, "test");
  auto csv = open_csv(cfg.out_dir + "/ablate_priors.csv",
                      "train_alpha,infer_alpha,train_error,test_error");
  for (double ta : {0.5, 1.0}) {
    RunConfig c = cfg;
    c.train_alpha = ta;
    ModelState m = train_variant(c, tr, "train_alpha=" + fmt_g(ta));
    for (double ia : {1.0, 0.5}) {
      RunConfig ce = c;
      ce.infer_alpha = ia;
      std::string tag = "train_alpha=" + fmt_g(ta) + " infer_alpha=" + fmt_g(ia);
      double train_err = 0;
      double test_err = eval_variant(ce, m, tr, te, tag, &train_err);
      csv << fmt_g(ta) << ',' << fmt_g(ia) << ',' << fmt_g(train_err) << ','
          << fmt_g(test_err) << '\n';
    }
  }
}

void ablate_ista_sweep(const RunConfig& cfg) {
  Dataset tr = load_split(cfg, "train");
  Dataset te = load_split(cfg, "test");
  ModelState m = cfg.checkpoint.empty() ? train_variant(cfg, tr, "sweep base model")
                                        : load_checkpoint(cfg.checkpoint);
  auto csv = open_csv(cfg.out_dir + "/ablate_ista_sweep.csv",
                      "ista_steps,train_error,test_error");
  for (int steps : {10, 25, 50, 100, 150}) {
    RunConfig c = cfg;
    c.infer_steps = steps;
    std::string tag = "infer_steps=" + std::to_string(steps);
    double train_err = 0;
    double test_err = eval_variant(c, m, tr, te, tag, &train_err);
    csv << steps << ',' << fmt_g(train_err) << ',' << fmt_g(test_err) << '\n';
  }
}

void cmd_ablate(const RunConfig& cfg, const std::string& variant) {
  write_manifest(cfg.out_dir, "ablate " + variant, cfg);
  if (variant == "max-vs-gauss")
    ablate_max_vs_gauss(cfg);
  else if (variant == "posneg")
    ablate_posneg(cfg);
  else if (variant == "reset")
    ablate_reset(cfg);
  else if (variant == "priors")
    ablate_priors(cfg);
  else if (variant == "ista-sweep")
    ablate_ista_sweep(cfg);
  else
    throw ConfigError("unknown ablation '" + variant + "'");
}

// ------------------------------------------------------------- visualize

std::string gray_ext(const RunConfig& cfg) {
  return cfg.image_format == "png" ? ".png" : ".pgm";
}
std::string color_ext(const RunConfig& cfg) {
  return cfg.image_format == "png" ? ".png" : ".ppm";
}

void cmd_visualize(const RunConfig& cfg, const std::string& split) {
  Dataset ds = load_split(cfg, split);
  ModelState m = load_model(cfg);
  write_manifest(cfg.out_dir, "visualize", cfg);

  for (int k = 1; k <= m.num_layers(); ++k) {
    std::string path = cfg.out_dir + "/filters_layer" + std::to_string(k) + gray_ext(cfg);
    write_image(path, render_filters(m, k));
    std::printf("filters of layer %d -> %s\n", k, path.c_str());
  }

  InferenceOptions opts = inference_from_config(cfg, m.num_layers());
  Tensor v = nth_image(ds.images, cfg.viz_image);
  InferResult res = infer(v, m, opts);
  std::string dec = cfg.out_dir + "/decomposition_" + std::to_string(cfg.viz_image) +
                    color_ext(cfg);
  write_image(dec, render_decomposition(res.p, res.weights, m));
  std::printf("decomposition of %s image %d -> %s\n", split.c_str(), cfg.viz_image,
              dec.c_str());

  int n = std::min(cfg.viz_images, ds.images.dim(0));
  for (int k = 1; k <= m.num_layers(); ++k) {
    ModelState mk = slice_model(m, k);
    InferenceOptions ok = inference_from_config(cfg, k);
    ok.record_trace = false;
    std::vector<IstaState> states(static_cast<std::size_t>(n));
    for (int start = 0; start < n; start += cfg.infer_batch) {
      int end = std::min(n, start + cfg.infer_batch);
      std::vector<Tensor> imgs;
      std::vector<const Tensor*> ptrs;
      imgs.reserve(static_cast<std::size_t>(end - start));
      for (int i = start; i < end; ++i) imgs.push_back(nth_image(ds.images, i));
      for (Tensor& t : imgs) ptrs.push_back(&t);
      std::vector<InferResult> rs = infer_batch(ptrs, mk, ok);
      for (int i = start; i < end; ++i) {
        states[static_cast<std::size_t>(i)].p = std::move(rs[i - start].p);
        states[static_cast<std::size_t>(i)].thetas = std::move(rs[i - start].thetas);
        if (mk.pool_mode == PoolMode::max)
          states[static_cast<std::size_t>(i)].switches = std::move(rs[i - start].weights);
      }
    }
    std::vector<const IstaState*> sp;
    for (const IstaState& st : states) sp.push_back(&st);
    InvarianceGrid grid = render_invariance_samples(sp, mk, cfg.viz_samples,
                                                    Rng::derive(cfg.seed, 0xb1e55edull + k));
    std::string path =
        cfg.out_dir + "/invariance_layer" + std::to_string(k) + gray_ext(cfg);
    write_image(path, grid.image);
    std::printf("invariance samples of layer %d (%d images) -> %s\n", k, n, path.c_str());
    if (!grid.inactive_maps.empty()) {
      std::string list;
      for (std::size_t i = 0; i < grid.inactive_maps.size(); ++i)
        list += (i ? ", " : "") + std::to_string(grid.inactive_maps[i]);
      std::printf("warning: layer %d maps never active, tiles left blank: %s\n", k,
                  list.c_str());
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deconvolutional feature learning with differentiable pooling"};
  app.set_version_flag("--version", kVersion);
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("-c,--config", config_path, "key=value configuration file");
  app.add_option("--set", sets, "override a config entry (key=value, repeatable)");

  app.add_subcommand("train", "learn filters; writes checkpoint + cost CSV");

  auto* infer_cmd =
      app.add_subcommand("infer", "infer one or more images; dumps features, pooling "
                                  "variables, and the cost trace as JSON");
  std::vector<int> indices{0};
  std::string infer_split = "test";
  infer_cmd->add_option("--index", indices, "dataset indices to infer");
  infer_cmd->add_option("--split", infer_split, "train or test (default test)");

  app.add_subcommand("eval", "train the linear classifier on inferred features and "
                             "report error rates");

  auto* export_cmd = app.add_subcommand(
      "export-features", "write 'label idx:val' feature rows for external tools");
  std::string export_split = "train";
  export_cmd->add_option("--split", export_split, "train or test (default train)");

  auto* ablate_cmd = app.add_subcommand("ablate", "comparison protocols; writes a CSV");
  std::string variant;
  ablate_cmd
      ->add_option("variant", variant,
                   "max-vs-gauss | posneg | reset | priors | ista-sweep")
      ->required()
      ->check(CLI::IsMember({"max-vs-gauss", "posneg", "reset", "priors", "ista-sweep"}));

  auto* viz_cmd =
      app.add_subcommand("visualize", "render filters, a feature decomposition, and "
                                      "invariance sample grids");
  std::string viz_split = "train";
  viz_cmd->add_option("--split", viz_split, "train or test (default train)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = build_config(config_path, sets);
    if (app.got_subcommand("train"))
      cmd_train(cfg);
    else if (app.got_subcommand("infer"))
      cmd_infer(cfg, indices, infer_split);
    else if (app.got_subcommand("eval"))
      cmd_eval(cfg);
    else if (app.got_subcommand("export-features"))
      cmd_export(cfg, export_split);
    else if (app.got_subcommand("ablate"))
      cmd_ablate(cfg, variant);
    else if (app.got_subcommand("visualize"))
      cmd_visualize(cfg, viz_split);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
