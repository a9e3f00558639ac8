#pragma once

// Similarity kernels and the contrastive loss family.
//
// kernel:   generalized Gaussian similarity exp(-(|a-b|/sigma)^beta).
// cl_loss:  InfoNCE over cosine similarities. The denominator sums the
//           negatives only by default (the restructured form used by the
//           decomposition checks); the conventional variant that includes
//           the positive is available behind a flag.
// ccl_loss: paired-label cross entropy over similarity scores, with the
//           dissimilarity companion either 1-Q or exp(-S).
// mml_loss: soft-label cross entropy between input-space similarities P
//           (positive pairs boosted by e^alpha and clamped at 1) and
//           latent-space similarities Q.
//
// Pair universes are ordered pairs excluding self-pairs: losses over a
// square n x n similarity matrix average the n(n-1) off-diagonal entries.

#include <limits>
#include <vector>

#include "dmtfd/autodiff.hpp"
#include "dmtfd/errors.hpp"

namespace dmtfd {

inline constexpr double kProbFloor = 1e-7;  // clamp inside logs

struct KernelConfig {
  double sigma = 1.0;
  double beta = 2.0;

  void validate() const {
    if (!(sigma > 0.0)) throw UsageError("kernel sigma must be > 0");
    if (!(beta > 0.0 && beta <= 2.0)) throw UsageError("kernel beta must lie in (0,2]");
  }
};

struct MMLConfig {
  double prior_alpha = 0.1;  // confidence prior, boosts positive pairs by e^alpha
  double weight_po = 1.0;
  double weight_ne = 5.0;
  KernelConfig kernel;

  void validate() const {
    if (!(prior_alpha >= 0.0)) throw UsageError("prior_alpha must be >= 0");
    if (weight_po < 0.0 || weight_ne < 0.0)
      throw UsageError("loss weights must be non-negative");
    if (weight_po == 0.0 && weight_ne == 0.0)
      throw UsageError("at least one of the po/ne loss weights must be positive");
    kernel.validate();
  }
};

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

inline double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                     const KernelConfig& cfg) {
  cfg.validate();
  if (a.size() != b.size()) throw UsageError("kernel operands have different sizes");
  const double d = (a - b).norm();
  return std::exp(-std::pow(d / cfg.sigma, cfg.beta));
}

// Similarity matrix over the rows of `rows`: K_ij = kernel(row_i, row_j).
// Coincident rows are held at similarity 1 with a blocked gradient.
template <class Real>
Var<Real> kernel_matrix(Var<Real> rows, const KernelConfig& cfg) {
  cfg.validate();
  Tape<Real>& t = *rows.tape;
  auto d2 = pairwise_sqdist(rows);
  const Real inv_s2 = Real(1.0 / (cfg.sigma * cfg.sigma));
  if (cfg.beta == 2.0) {
    return exp(scale(d2, -inv_s2));
  }
  auto safe = clamp(scale(d2, inv_s2), Real(1e-12),
                    std::numeric_limits<Real>::infinity());
  return exp(scale(pow_const(safe, Real(cfg.beta / 2.0)), Real(-1)));
}

// ---------------------------------------------------------------------------
// cosine similarity and InfoNCE
// ---------------------------------------------------------------------------

template <class Real>
Var<Real> cosine(Var<Real> a, Var<Real> b) {
  if (a.val().norm() == 0 || b.val().norm() == 0)
    throw NumericError("cosine similarity of a zero-norm vector is undefined");
  auto dot = sum(hadamard(a, b));
  auto na = sqrt(sum(hadamard(a, a)));
  auto nb = sqrt(sum(hadamard(b, b)));
  return cwise_div(dot, hadamard(na, nb));
}

// -log( exp(S(anchor,positive)) / sum_k exp(S(anchor,negative_k)) ).
// include_positive adds exp(S(anchor,positive)) to the denominator
// (conventional InfoNCE).
template <class Real>
Var<Real> cl_loss(Var<Real> anchor, Var<Real> positive,
                  const std::vector<Var<Real>>& negatives,
                  bool include_positive = false) {
  if (negatives.empty()) throw UsageError("cl_loss needs at least one negative");
  Tape<Real>& t = *anchor.tape;
  auto s_pos = cosine(anchor, positive);
  Var<Real> denom = include_positive
                        ? exp(s_pos)
                        : t.input(Mat<Real>::Zero(1, 1), "cl_denom_zero");
  for (auto n : negatives) denom = add(denom, exp(cosine(anchor, n)));
  return sub(log(denom), s_pos);
}

inline double cl_loss_value(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                            const std::vector<Eigen::VectorXd>& negatives,
                            bool include_positive = false) {
  Tape<double> tape;
  auto to_var = [&](const Eigen::VectorXd& v) {
    return tape.input(Mat<double>(v.transpose()));
  };
  std::vector<Var<double>> negs;
  negs.reserve(negatives.size());
  for (const auto& n : negatives) negs.push_back(to_var(n));
  return cl_loss(to_var(anchor), to_var(positive), negs, include_positive).scalar();
}

// ---------------------------------------------------------------------------
// restructured pairwise form
// ---------------------------------------------------------------------------

enum class QdotMode { one_minus_q, exp_neg_s };

// -sum over given pairs of [ H log Q + (1-H) log Qdot ]. Square inputs skip
// the diagonal. Q entries must lie in (0, 1].
template <class Real>
Var<Real> ccl_loss(Var<Real> q, const Mat<Real>& homology,
                   QdotMode mode = QdotMode::one_minus_q) {
  const auto& qv = q.val();
  if ((qv.array() <= Real(0)).any() || (qv.array() > Real(1)).any())
    throw UsageError("ccl_loss expects similarity scores in (0, 1]");
  Tape<Real>& t = *q.tape;
  Mat<Real> pair_mask = Mat<Real>::Ones(qv.rows(), qv.cols());
  if (qv.rows() == qv.cols())
    pair_mask -= Mat<Real>(Mat<Real>::Identity(qv.rows(), qv.cols()));
  Mat<Real> h_pos = homology.cwiseProduct(pair_mask);
  Mat<Real> h_neg = (Mat<Real>::Ones(qv.rows(), qv.cols()) - homology).cwiseProduct(pair_mask);

  auto qc = clamp(q, Real(kProbFloor), Real(1));
  auto pos_term = mul_mask(log(qc), h_pos);
  Var<Real> qdot = mode == QdotMode::one_minus_q
                       ? clamp(add_scalar(scale(q, Real(-1)), Real(1)), Real(kProbFloor),
                               Real(1))
                       : cwise_div(t.input(Mat<Real>::Ones(qv.rows(), qv.cols())), qc);
  auto neg_term = mul_mask(log(qdot), h_neg);
  return scale(add(sum(pos_term), sum(neg_term)), Real(-1));
}

// ---------------------------------------------------------------------------
// multi-manifold loss
// ---------------------------------------------------------------------------

// input_sims:  kernel similarities in the pre-head space (soft labels).
// latent_sims: kernel similarities in the head space.
// homology:    1 where the pair shares an augmentation source.
// Positive pairs are boosted by e^prior_alpha and clamped at 1; the result is
// the po/ne-weighted binary cross entropy averaged over off-diagonal pairs.
template <class Real>
Var<Real> mml_loss(Var<Real> input_sims, Var<Real> latent_sims,
                   const Mat<Real>& homology, const MMLConfig& cfg) {
  cfg.validate();
  const auto rows = input_sims.val().rows();
  const auto cols = input_sims.val().cols();
  if (latent_sims.val().rows() != rows || latent_sims.val().cols() != cols)
    throw UsageError("mml_loss similarity matrices must have equal shapes");
  if (!input_sims.val().allFinite() || !latent_sims.val().allFinite())
    throw NumericError("mml_loss received non-finite similarities");

  Mat<Real> boost =
      Mat<Real>::Ones(rows, cols) +
      Real(std::exp(cfg.prior_alpha) - 1.0) * homology;
  auto p = clamp(mul_mask(input_sims, boost), Real(0), Real(1));
  auto q = clamp(latent_sims, Real(kProbFloor), Real(1.0 - kProbFloor));

  Mat<Real> pair_mask = Mat<Real>::Ones(rows, cols);
  Real pair_count = static_cast<Real>(rows * cols);
  if (rows == cols) {
    pair_mask -= Mat<Real>(Mat<Real>::Identity(rows, cols));
    pair_count = static_cast<Real>(rows * (cols - 1));
  }

  auto one_minus_p = add_scalar(scale(p, Real(-1)), Real(1));
  auto one_minus_q = add_scalar(scale(q, Real(-1)), Real(1));
  auto pos = scale(hadamard(p, log(q)), Real(cfg.weight_po));
  auto neg = scale(hadamard(one_minus_p, log(one_minus_q)), Real(cfg.weight_ne));
  auto masked = mul_mask(add(pos, neg), pair_mask);
  return scale(sum(masked), Real(-1) / pair_count);
}

// ---------------------------------------------------------------------------
// joint objective
// ---------------------------------------------------------------------------

template <class Real>
Var<Real> joint_objective(Var<Real> nll, Var<Real> mml) {
  return add(nll, mml);
}

inline double joint_objective(double nll, double mml) { return nll + mml; }

// Median off-diagonal pairwise distance between the rows of a matrix; the
// adaptive bandwidth used when no explicit sigma is configured.
template <class Real>
double median_offdiag_distance(const Mat<Real>& rows) {
  const Eigen::Index n = rows.rows();
  if (n < 2) return 1.0;
  Mat<Real> gram = rows * rows.transpose();
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      d.push_back(std::sqrt(std::max(
          0.0, static_cast<double>(gram(i, i) + gram(j, j) - Real(2) * gram(i, j)))));
  auto mid = d.begin() + (d.size() - 1) / 2;
  std::nth_element(d.begin(), mid, d.end());
  const double m = *mid;
  return m > 0.0 ? m : 1.0;
}

}  // namespace dmtfd
