#pragma once

// Training loop and window scoring.
//
// One epoch: reshuffle the training windows (seeded), regenerate one
// augmented view per window from the neighbor index, then for every batch
// run anchors and views through the encoder stack, evaluate the flow
// negative log-likelihood over all rows plus the multi-manifold loss over
// the 2B-window pair universe, and take an adaptive-moment step.
//
// The neighbor index is built once per run: the training windows are static
// across epochs, so a per-epoch rebuild would reproduce the same index.
//
// Scoring is the negative entity-mean log-density per window; a parallel
// scoring mode splits windows into contiguous chunks whose results are
// written by index, so it matches serial scoring exactly.

#include <cmath>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dmtfd/augment.hpp"
#include "dmtfd/autodiff.hpp"
#include "dmtfd/checkpoint.hpp"
#include "dmtfd/dataio.hpp"
#include "dmtfd/encoders.hpp"
#include "dmtfd/errors.hpp"
#include "dmtfd/flow.hpp"
#include "dmtfd/losses.hpp"
#include "dmtfd/optimizer.hpp"

namespace dmtfd {

struct TrainConfig {
  int window_size = 60;
  int stride = 10;
  int batch_size = 128;
  int k = 10;
  int n_blocks = 1;
  int epochs = 200;
  int hidden = 32;
  int latent = 16;
  int flow_hidden = 32;
  std::uint64_t seed = 15;
  double lr = 0.01;
  double train_split = 0.6;
  double val_split = 0.2;
  AlphaMode interp_alpha = AlphaMode::uniform();
  std::optional<double> epsilon;
  MMLConfig mml;
  // Latent-side kernel bandwidth. The soft-label side always adapts to the
  // batch (median pairwise distance in y-space; those are constants for the
  // step). The latent side defaults to the fixed mml.kernel.sigma: an
  // adaptive bandwidth there makes the manifold term scale-free, leaving the
  // embedding norm to drift until the flow's bounded scales saturate.
  bool sigma_median = false;
  double weight_po = 1.0;          // zero both to disable the manifold term
  double weight_ne = 5.0;
  FlowInput flow_input = FlowInput::head;

  bool use_mml() const { return weight_po > 0.0 || weight_ne > 0.0; }

  void validate() const {
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 2) throw UsageError("batch_size must be >= 2");
    if (window_size < 1 || stride < 1) throw UsageError("window/stride must be >= 1");
    if (k < 1) throw UsageError("k must be >= 1");
    if (!(lr > 0)) throw UsageError("lr must be > 0");
    SplitSpec{train_split, val_split}.validate();
    if (use_mml()) {
      MMLConfig check = mml;
      check.weight_po = weight_po;
      check.weight_ne = weight_ne;
      check.validate();
    }
  }
};

struct EpochStats {
  double nll = 0.0;
  double mml = 0.0;
  double total = 0.0;
};

template <class Real>
struct TrainResult {
  ModelParameters<Real> model;
  int entities = 0;
  std::vector<EpochStats> history;
  long steps = 0;
  long train_windows = 0;
  ZscoreStats zscore;  // training-partition statistics, reused at eval time
};

namespace detail {

template <class Real>
struct ForwardOut {
  Var<Real> temporal;  // g, (rows) x h
  Var<Real> spatial;   // y
  Var<Real> head;      // z
};

template <class Real>
ForwardOut<Real> encode_stack(Tape<Real>& tape, const BoundParams<Real>& p,
                              const ModelParameters<Real>& m, const Mat<Real>& rows,
                              int entity_count) {
  auto x = tape.input(rows, "window_rows");
  auto g = rnn_encode(tape, p, m, x);
  auto y = graph_encode(tape, p, m, g, entity_count);
  auto z = head_forward(tape, p, m, y);
  return {g, y, z};
}

}  // namespace detail

template <class Real>
TrainResult<Real> train(const TimeSeriesDataset& dataset, const TrainConfig& cfg) {
  tune_allocator_for_training();
  cfg.validate();

  auto parts = split(dataset, {cfg.train_split, cfg.val_split});
  auto stats = compute_zscore_stats(parts.train);
  auto norm_train = apply_zscore(parts.train, stats);
  auto windows = slide_windows(norm_train, cfg.window_size, cfg.stride);
  const long n = windows.count();
  if (n < 1) throw DataError("training partition yields no windows");
  const int entity_count = windows.entity_count;

  auto index = build_neighbor_index(windows, cfg.k, cfg.epsilon);

  EncoderDims dims;
  dims.window_size = cfg.window_size;
  dims.hidden = cfg.hidden;
  dims.latent = cfg.latent;
  dims.n_blocks = cfg.n_blocks;
  dims.flow_hidden = cfg.flow_hidden;
  dims.flow_input = cfg.flow_input;

  TrainResult<Real> result;
  result.model.build(dims, cfg.seed);
  result.entities = entity_count;
  result.train_windows = n;
  result.zscore = stats;
  AdamOptimizer<Real> opt(result.model, static_cast<Real>(cfg.lr));

  MMLConfig mml_cfg = cfg.mml;
  mml_cfg.weight_po = cfg.weight_po;
  mml_cfg.weight_ne = cfg.weight_ne;

  std::vector<long> order(n);
  for (long i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto pairs = make_pairs(windows, index, cfg.interp_alpha,
                            derive_stream(cfg.seed, 0x9A11C0DE + epoch));
    Rng shuffle_rng(derive_stream(cfg.seed, 0x500FF1E5 + epoch));
    shuffle_rng.shuffle(order);

    EpochStats stats_epoch;
    long batches = 0;
    for (long at = 0; at < n; at += cfg.batch_size) {
      const long b = std::min<long>(cfg.batch_size, n - at);
      MatX batch_windows(2 * b, windows.windows.cols());
      for (long i = 0; i < b; ++i) {
        batch_windows.row(i) = pairs.anchors.row(order[at + i]);
        batch_windows.row(b + i) = pairs.views.row(order[at + i]);
      }
      Mat<Real> rows =
          windows_to_rows<Real>(batch_windows, entity_count, cfg.window_size);

      Tape<Real> tape;
      auto bound = bind(tape, result.model);
      auto enc = detail::encode_stack(tape, bound, result.model, rows, entity_count);
      auto flow_in = cfg.flow_input == FlowInput::head ? enc.head : enc.spatial;
      auto flow_res = flow_forward(tape, bound, result.model, flow_in, enc.temporal);
      auto nll = mle_objective(tape, flow_res, bound[result.model.flow_mu]);

      Var<Real> loss = nll;
      double mml_value = 0.0;
      if (cfg.use_mml()) {
        // Soft labels come from the pre-head space and act as constants for
        // the step; gradients reach the encoders through the latent side.
        auto y_win = group_rows(stop_gradient(enc.spatial), entity_count);
        auto z_win = group_rows(enc.head, entity_count);
        KernelConfig ky = mml_cfg.kernel, kz = mml_cfg.kernel;
        ky.sigma = median_offdiag_distance(y_win.val());
        if (cfg.sigma_median) kz.sigma = median_offdiag_distance(z_win.val());
        MMLConfig batch_cfg = mml_cfg;
        batch_cfg.kernel = kz;
        auto p_sims = kernel_matrix(y_win, ky);
        auto q_sims = kernel_matrix(z_win, kz);
        Mat<Real> homology = Mat<Real>::Zero(2 * b, 2 * b);
        for (long i = 0; i < b; ++i) {
          homology(i, b + i) = Real(1);
          homology(b + i, i) = Real(1);
        }
        auto mml = mml_loss(p_sims, q_sims, homology, batch_cfg);
        mml_value = static_cast<double>(mml.scalar());
        loss = joint_objective(nll, mml);
      }

      const double loss_value = static_cast<double>(loss.scalar());
      if (!std::isfinite(loss_value)) {
        std::string diag = "training loss is not finite at step " +
                           std::to_string(result.steps) + " (nll=" +
                           std::to_string(static_cast<double>(nll.scalar())) +
                           ", mml=" + std::to_string(mml_value) + ")";
        if (auto nf = tape.first_nonfinite())
          diag += "; first non-finite node: " + nf->second + " #" +
                  std::to_string(nf->first);
        throw NumericError(diag);
      }

      result.model.zero_gradients();
      tape.backward(loss);
      collect_gradients(tape, bound, result.model);
      opt.step();

      stats_epoch.nll += static_cast<double>(nll.scalar());
      stats_epoch.mml += mml_value;
      stats_epoch.total += loss_value;
      ++batches;
      ++result.steps;
    }
    stats_epoch.nll /= batches;
    stats_epoch.mml /= batches;
    stats_epoch.total /= batches;
    result.history.push_back(stats_epoch);
  }
  return result;
}

// ---------------------------------------------------------------------------
// scoring
// ---------------------------------------------------------------------------

// Negative entity-mean log-density per window; higher = more anomalous.
template <class Real>
std::vector<double> score_windows(const ModelParameters<Real>& model,
                                  const WindowBatch& batch, int threads = 1) {
  tune_allocator_for_training();
  const long n = batch.count();
  std::vector<double> scores(n);
  if (n == 0) return scores;
  const int entity_count = batch.entity_count;
  const long chunk = 256;

  auto score_range = [&](long begin, long end) {
    for (long at = begin; at < end; at += chunk) {
      const long b = std::min(chunk, end - at);
      Mat<Real> rows = windows_to_rows<Real>(batch.windows.middleRows(at, b),
                                             entity_count, batch.window_size);
      Tape<Real> tape;
      BoundParams<Real> p;
      p.vars.reserve(model.params.size());
      for (const auto& prm : model.params)
        p.vars.push_back(tape.input(prm.value, prm.name.c_str()));
      auto x = tape.input(rows, "window_rows");
      auto g = rnn_encode(tape, p, model, x);
      auto y = graph_encode(tape, p, model, g, entity_count);
      auto z = head_forward(tape, p, model, y);
      auto flow_in = model.dims.flow_input == FlowInput::head ? z : y;
      auto res = flow_forward(tape, p, model, flow_in, g);
      Eigen::VectorXd rows_logp = log_density_rows<Real>(
          res.z_hat.val(), res.log_det.val(), model.params[model.flow_mu].value);
      for (long w = 0; w < b; ++w)
        scores[at + w] = -rows_logp.segment(w * entity_count, entity_count).mean();
    }
  };

  if (threads <= 1) {
    score_range(0, n);
    return scores;
  }
  const int workers = std::min<long>(threads, (n + chunk - 1) / chunk);
  std::vector<std::thread> pool;
  const long per = (n + workers - 1) / workers;
  // Align worker boundaries to chunk multiples so the per-chunk forward
  // passes are identical to the serial ones.
  const long aligned = ((per + chunk - 1) / chunk) * chunk;
  for (int w = 0; w < workers; ++w) {
    const long begin = w * aligned;
    const long end = std::min(n, begin + aligned);
    if (begin >= end) break;
    pool.emplace_back(score_range, begin, end);
  }
  for (auto& t : pool) t.join();
  return scores;
}

// Prepares a dataset slice the way the checkpoint's training run did
// (training-partition z-score, same window/stride) and scores it.
template <class Real>
struct ScoredWindows {
  WindowBatch windows;
  std::vector<double> scores;
};

template <class Real>
ScoredWindows<Real> score_dataset(const ModelParameters<Real>& model,
                                  const CheckpointMeta& meta,
                                  const TimeSeriesDataset& part, int threads = 1) {
  if (part.entities() != meta.entities)
    throw DataError("checkpoint was trained on K=" + std::to_string(meta.entities) +
                    " entities but the data has K=" + std::to_string(part.entities()));
  auto norm = apply_zscore(part, {meta.zscore_mean, meta.zscore_std});
  ScoredWindows<Real> out;
  out.windows = slide_windows(norm, model.dims.window_size, meta.stride);
  if (out.windows.count() == 0)
    throw DataError("data slice of length " + std::to_string(part.timestamps()) +
                    " yields no windows of size " +
                    std::to_string(model.dims.window_size));
  out.scores = score_windows(model, out.windows, threads);
  return out;
}

}  // namespace dmtfd
