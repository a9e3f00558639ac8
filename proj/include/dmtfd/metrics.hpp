#pragma once

// Threshold-free evaluation: AUROC as the Mann-Whitney statistic (ties count
// one half), AUPRC as step-interpolated average precision with tied scores
// processed as one group, and the matching ROC / PR curves. The curve areas
// reproduce the scalar metrics exactly: trapezoids over the ROC points give
// the tie-corrected Mann-Whitney value, and precision-weighted recall
// increments over the PR points give average precision.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dmtfd/errors.hpp"

namespace dmtfd {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct EvalReport {
  std::vector<double> scores;        // higher = more anomalous
  std::vector<std::uint8_t> labels;  // per window
  std::vector<long> window_starts;
  double auroc = 0.0;
  double auprc = 0.0;
  std::vector<RocPoint> roc_points;
  std::vector<PrPoint> pr_points;
  long n_windows = 0;
  long n_anomalous = 0;
};

namespace detail {

struct ScoreGroup {
  double score;
  long positives;
  long negatives;
};

// Distinct score values in descending order with per-value class counts.
inline std::vector<ScoreGroup> descending_groups(const std::vector<double>& scores,
                                                 const std::vector<std::uint8_t>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<ScoreGroup> groups;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    ScoreGroup g{scores[order[i]], 0, 0};
    while (j < order.size() && scores[order[j]] == g.score) {
      if (labels[order[j]]) {
        ++g.positives;
      } else {
        ++g.negatives;
      }
      ++j;
    }
    groups.push_back(g);
    i = j;
  }
  return groups;
}

}  // namespace detail

// Probability that a random positive outranks a random negative, ties at 1/2.
inline double auroc(const std::vector<double>& scores,
                    const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw UsageError("auroc: scores and labels differ in length");
  long n_pos = 0, n_neg = 0;
  for (auto l : labels) (l ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw DataError("auroc needs at least one positive and one negative label");

  auto groups = detail::descending_groups(scores, labels);
  // Pairs won going down the ranking; ties within a group count one half.
  double won = 0.0;
  long neg_seen_below = n_neg;  // negatives at strictly lower scores
  for (const auto& g : groups) {
    neg_seen_below -= g.negatives;
    won += static_cast<double>(g.positives) * neg_seen_below;
    won += 0.5 * static_cast<double>(g.positives) * g.negatives;
  }
  return won / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Step-interpolated average precision over the descending-score sweep.
inline double auprc(const std::vector<double>& scores,
                    const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw UsageError("auprc: scores and labels differ in length");
  long n_pos = 0;
  for (auto l : labels) n_pos += l;
  if (n_pos == 0) throw DataError("auprc needs at least one positive label");

  auto groups = detail::descending_groups(scores, labels);
  double ap = 0.0;
  long tp = 0, fp = 0;
  double prev_recall = 0.0;
  for (const auto& g : groups) {
    tp += g.positives;
    fp += g.negatives;
    const double recall = static_cast<double>(tp) / n_pos;
    const double precision = static_cast<double>(tp) / (tp + fp);
    ap += precision * (recall - prev_recall);
    prev_recall = recall;
  }
  return ap;
}

inline std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                       const std::vector<std::uint8_t>& labels) {
  long n_pos = 0, n_neg = 0;
  for (auto l : labels) (l ? n_pos : n_neg)++;
  auto groups = detail::descending_groups(scores, labels);
  std::vector<RocPoint> pts;
  pts.push_back({0.0, 0.0});
  long tp = 0, fp = 0;
  for (const auto& g : groups) {
    tp += g.positives;
    fp += g.negatives;
    pts.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos});
  }
  return pts;
}

inline std::vector<PrPoint> pr_curve(const std::vector<double>& scores,
                                     const std::vector<std::uint8_t>& labels) {
  long n_pos = 0;
  for (auto l : labels) n_pos += l;
  auto groups = detail::descending_groups(scores, labels);
  std::vector<PrPoint> pts;
  long tp = 0, fp = 0;
  bool first = true;
  for (const auto& g : groups) {
    tp += g.positives;
    fp += g.negatives;
    const double recall = static_cast<double>(tp) / n_pos;
    const double precision = static_cast<double>(tp) / (tp + fp);
    if (first) {
      pts.push_back({0.0, precision});
      first = false;
    }
    pts.push_back({recall, precision});
  }
  return pts;
}

// Areas recomputed from curve points; used to cross-check the scalars.
inline double roc_area(const std::vector<RocPoint>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += 0.5 * (pts[i].tpr + pts[i - 1].tpr) * (pts[i].fpr - pts[i - 1].fpr);
  return area;
}

inline double pr_area(const std::vector<PrPoint>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += pts[i].precision * (pts[i].recall - pts[i - 1].recall);
  return area;
}

inline EvalReport evaluate(std::vector<double> scores, std::vector<std::uint8_t> labels,
                           std::vector<long> window_starts = {}) {
  EvalReport r;
  r.auroc = auroc(scores, labels);
  r.auprc = auprc(scores, labels);
  r.roc_points = roc_curve(scores, labels);
  r.pr_points = pr_curve(scores, labels);
  r.n_windows = static_cast<long>(labels.size());
  r.n_anomalous = 0;
  for (auto l : labels) r.n_anomalous += l;
  r.scores = std::move(scores);
  r.labels = std::move(labels);
  r.window_starts = std::move(window_starts);
  return r;
}

// Percentile of the training scores by linear interpolation on the sorted
// sample (index q*(n-1), fractional part interpolated); windows score
// strictly above the threshold are flagged anomalous.
inline double score_quantile(std::vector<double> train_scores, double q) {
  if (train_scores.empty()) throw UsageError("threshold needs non-empty training scores");
  if (!(q > 0.0 && q < 1.0)) throw UsageError("threshold quantile must lie in (0,1)");
  std::sort(train_scores.begin(), train_scores.end());
  const double pos = q * static_cast<double>(train_scores.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= train_scores.size()) return train_scores.back();
  return train_scores[lo] + frac * (train_scores[lo + 1] - train_scores[lo]);
}

inline std::vector<std::uint8_t> threshold_detect(const std::vector<double>& scores,
                                                  const std::vector<double>& train_scores,
                                                  double quantile) {
  const double theta = score_quantile(train_scores, quantile);
  std::vector<std::uint8_t> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] > theta ? 1 : 0;
  return out;
}

}  // namespace dmtfd
