// Command-line front end: synth, train, eval, score, verify.
//
// Exit codes: 0 success, 1 usage/config error, 2 data-contract error,
// 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <dmtfd/checkpoint.hpp>
#include <dmtfd/config.hpp>
#include <dmtfd/dataio.hpp>
#include <dmtfd/metrics.hpp>
#include <dmtfd/propcheck.hpp>
#include <dmtfd/traineval.hpp>
#include <dmtfd/version.hpp>

namespace fs = std::filesystem;
using namespace dmtfd;

namespace {

int thread_budget() {
  if (const char* env = std::getenv("DMTFD_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

// One writer per output directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    fs::create_directories(dir);
    path_ = dir / ".dmtfd.lock";
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw UsageError("output directory is locked by another run: " + path_.string() +
                       " (remove the lockfile if that run is gone)");
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

RunConfig load_config_or_default(const std::string& config_path,
                                 std::optional<long> seed_override) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  if (seed_override) cfg.seed = *seed_override;
  return cfg;
}

TrainConfig to_train_config(const RunConfig& c) {
  TrainConfig t;
  t.window_size = c.window_size;
  t.stride = c.stride;
  t.batch_size = c.batch_size;
  t.k = c.k;
  t.n_blocks = c.n_blocks;
  t.epochs = c.epochs;
  t.hidden = c.hidden_size;
  t.latent = c.latent_size;
  t.flow_hidden = c.hidden_size;
  t.seed = static_cast<std::uint64_t>(c.seed);
  t.lr = c.lr;
  t.train_split = c.train_split;
  t.val_split = c.val_split;
  t.interp_alpha = c.interp_alpha_is_uniform() ? AlphaMode::uniform()
                                               : AlphaMode::fixed(c.interp_alpha_value());
  if (auto eps = c.epsilon_value()) t.epsilon = *eps;
  t.mml.prior_alpha = c.prior_alpha;
  t.mml.kernel.beta = c.beta;
  if (!c.sigma_is_median()) t.mml.kernel.sigma = c.sigma_value();
  t.sigma_median = c.sigma_is_median();
  t.weight_po = c.loss_weight_manifold_po;
  t.weight_ne = c.loss_weight_manifold_ne;
  t.flow_input = c.flow_input == "gnn" ? FlowInput::gnn : FlowInput::head;
  return t;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, const std::string& out_path, int entities,
              long length, int modes, double rate) {
  SynthInfo info;
  auto ds = synth_multimanifold(modes, entities, length, rate,
                                static_cast<std::uint64_t>(cfg.seed), &info);
  write_csv(ds, out_path);

  nlohmann::ordered_json side;
  side["source"] = "synthetic";
  side["seed"] = info.seed;
  side["n_modes"] = info.n_modes;
  side["entities"] = entities;
  side["length"] = length;
  side["anomaly_rate"] = rate;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& iv : info.intervals) {
    arr.push_back({{"start", iv.start}, {"end", iv.end}, {"kind", iv.kind}});
  }
  side["intervals"] = arr;
  side["version"] = kVersion;
  side["config"] = config_to_json(cfg);
  write_text_file(out_path + ".anomalies.json", side.dump(2) + "\n");
  std::cout << "wrote " << out_path << " (" << entities << " entities, " << length
            << " timestamps, " << info.intervals.size() << " anomaly intervals)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

template <class Real>
int run_train(const RunConfig& cfg, const std::string& data_path,
              const std::string& checkpoint_path, const std::string& manifest_path) {
  auto ds = load_csv(data_path, cfg.label_column);
  auto tcfg = to_train_config(cfg);
  auto result = train<Real>(ds, tcfg);

  CheckpointMeta meta;
  meta.entities = result.entities;
  meta.dims = result.model.dims;
  meta.zscore_mean = result.zscore.mean;
  meta.zscore_std = result.zscore.std;
  meta.train_split = cfg.train_split;
  meta.val_split = cfg.val_split;
  meta.stride = cfg.stride;
  save_checkpoint(result.model, meta, checkpoint_path);

  nlohmann::ordered_json manifest;
  manifest["format"] = kManifestFormatVersion;
  manifest["version"] = kVersion;
  manifest["command"] = "train";
  manifest["config"] = config_to_json(cfg);
  manifest["seed_used"] = cfg.seed;
  manifest["data"] = {{"path", data_path},
                      {"entities", ds.entities()},
                      {"timestamps", ds.timestamps()},
                      {"dropped_rows", ds.dropped_rows}};
  manifest["train_windows"] = result.train_windows;
  manifest["steps"] = result.steps;
  auto losses = nlohmann::ordered_json::array();
  for (const auto& e : result.history) {
    losses.push_back({{"nll", e.nll}, {"mml", e.mml}, {"total", e.total}});
  }
  manifest["epoch_losses"] = losses;
  manifest["final_loss"] = result.history.back().total;
  manifest["checkpoint"] = checkpoint_path;
  write_text_file(manifest_path, manifest.dump(2) + "\n");
  std::cout << "trained " << result.steps << " steps over " << result.history.size()
            << " epochs; final loss " << result.history.back().total << "\n"
            << "checkpoint: " << checkpoint_path << "\nmanifest: " << manifest_path
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval / score
// ---------------------------------------------------------------------------

TimeSeriesDataset select_slice(const TimeSeriesDataset& ds, const CheckpointMeta& meta,
                               const std::string& slice) {
  if (slice == "all") return ds;
  auto parts = split(ds, {meta.train_split, meta.val_split});
  if (slice == "train") return parts.train;
  if (slice == "validation") return parts.validation;
  if (slice == "test") return parts.test;
  throw UsageError("unknown data slice '" + slice + "'");
}

template <class Real>
int run_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& label_column, const std::string& slice,
             const fs::path& out_dir, bool metrics_wanted) {
  CheckpointMeta meta;
  auto model = load_checkpoint<Real>(checkpoint_path, meta);
  auto ds = load_csv(data_path, label_column);
  auto part = select_slice(ds, meta, slice);
  auto scored = score_dataset(model, meta, part, thread_budget());

  {
    std::ostringstream s;
    s << "window_start,score,label\n";
    for (long i = 0; i < scored.windows.count(); ++i) {
      s << scored.windows.starts[i] << ',' << format_real(scored.scores[i]) << ','
        << int(scored.windows.labels[i]) << '\n';
    }
    write_text_file(out_dir / "scores.csv", s.str());
  }

  nlohmann::ordered_json run;
  run["format"] = kManifestFormatVersion;
  run["version"] = kVersion;
  run["command"] = metrics_wanted ? "eval" : "score";
  run["checkpoint"] = checkpoint_path;
  run["data"] = data_path;
  run["slice"] = slice;
  run["n_windows"] = scored.windows.count();

  if (metrics_wanted) {
    auto report = evaluate(scored.scores, scored.windows.labels, scored.windows.starts);
    nlohmann::ordered_json metrics;
    metrics["auroc"] = report.auroc;
    metrics["auprc"] = report.auprc;
    metrics["n_windows"] = report.n_windows;
    metrics["n_anomalous"] = report.n_anomalous;
    write_text_file(out_dir / "metrics.json", metrics.dump(2) + "\n");
    {
      std::ostringstream s;
      s << "fpr,tpr\n";
      for (const auto& p : report.roc_points)
        s << format_real(p.fpr) << ',' << format_real(p.tpr) << '\n';
      write_text_file(out_dir / "roc.csv", s.str());
    }
    {
      std::ostringstream s;
      s << "recall,precision\n";
      for (const auto& p : report.pr_points)
        s << format_real(p.recall) << ',' << format_real(p.precision) << '\n';
      write_text_file(out_dir / "pr.csv", s.str());
    }
    std::cout << "auroc " << report.auroc << "  auprc " << report.auprc << "  ("
              << report.n_anomalous << "/" << report.n_windows
              << " anomalous windows)\n";
  }
  write_text_file(out_dir / "run.json", run.dump(2) + "\n");
  return 0;
}

int dispatch_eval(const std::string& checkpoint_path, const std::string& data_path,
                  const std::string& label_column, const std::string& slice,
                  const fs::path& out_dir, bool metrics_wanted) {
  auto meta = peek_checkpoint(checkpoint_path);
  if (meta.dtype == "float64")
    return run_eval<double>(checkpoint_path, data_path, label_column, slice, out_dir,
                            metrics_wanted);
  return run_eval<float>(checkpoint_path, data_path, label_column, slice, out_dir,
                         metrics_wanted);
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int cmd_verify(std::uint64_t seed, const fs::path& out_dir) {
  auto report = run_propcheck(seed);
  print_report(report, std::cout);
  write_text_file(out_dir / "propcheck_report.json",
                  report_to_json(report).dump(2) + "\n");
  if (!report.all_hard_passed()) {
    std::cerr << "verify: hard checks failed\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multivariate time-series fault detection via density estimation"};
  app.require_subcommand(1);

  std::string config_path, data_path, checkpoint_path, out_path, manifest_path;
  std::string label_column_flag, slice = "test";
  long seed_flag = -1;
  bool have_seed = false;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed_flag, "seed override")->each([&](const std::string&) {
      have_seed = true;
    });
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int synth_entities = 8, synth_modes = 3;
  long synth_length = 20000;
  double synth_rate = 0.05;
  synth->add_option("--config", config_path, "config file");
  synth->add_option("--out", out_path, "output CSV path")->required();
  synth->add_option("--entities", synth_entities, "sensor count");
  synth->add_option("--length", synth_length, "timestamp count");
  synth->add_option("--modes", synth_modes, "number of normal regimes");
  synth->add_option("--rate", synth_rate, "anomaly rate");
  add_seed(synth);

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config_path, "config file");
  train_cmd->add_option("--data", data_path, "input CSV")->required();
  train_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint output path")
      ->required();
  train_cmd->add_option("--manifest", manifest_path,
                        "manifest output path (default <checkpoint>.manifest.json)");
  add_seed(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "score a dataset and compute metrics");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
  eval_cmd->add_option("--data", data_path, "input CSV")->required();
  eval_cmd->add_option("--out", out_path, "output directory")->required();
  eval_cmd->add_option("--split", slice, "data slice: train|validation|test|all");
  eval_cmd->add_option("--label-column", label_column_flag, "label column name");

  auto* score_cmd = app.add_subcommand("score", "score a dataset (no metrics)");
  score_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
  score_cmd->add_option("--data", data_path, "input CSV")->required();
  score_cmd->add_option("--out", out_path, "output directory")->required();
  score_cmd->add_option("--split", slice, "data slice: train|validation|test|all");
  score_cmd->add_option("--label-column", label_column_flag, "label column name");

  auto* verify_cmd = app.add_subcommand("verify", "run the numeric property checks");
  verify_cmd->add_option("--out", out_path, "output directory (default .)");
  add_seed(verify_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<long> seed_override;
    if (have_seed) seed_override = seed_flag;

    if (synth->parsed()) {
      RunConfig cfg = load_config_or_default(config_path, seed_override);
      return cmd_synth(cfg, out_path, synth_entities, synth_length, synth_modes,
                       synth_rate);
    }
    if (train_cmd->parsed()) {
      RunConfig cfg = load_config_or_default(config_path, seed_override);
      if (manifest_path.empty()) manifest_path = checkpoint_path + ".manifest.json";
      if (cfg.precision == "float64")
        return run_train<double>(cfg, data_path, checkpoint_path, manifest_path);
      return run_train<float>(cfg, data_path, checkpoint_path, manifest_path);
    }
    if (eval_cmd->parsed() || score_cmd->parsed()) {
      const std::string label = label_column_flag.empty() ? "label" : label_column_flag;
      fs::path dir(out_path);
      DirLock lock(dir);
      return dispatch_eval(checkpoint_path, data_path, label, slice, dir,
                           eval_cmd->parsed());
    }
    if (verify_cmd->parsed()) {
      fs::path dir(out_path.empty() ? "." : out_path);
      fs::create_directories(dir);
      return cmd_verify(have_seed ? static_cast<std::uint64_t>(seed_flag) : 7, dir);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
