#pragma once

// Conditional normalizing flow built from affine coupling blocks.
//
// Each block splits the feature vector into a passed part and a transformed
// part (alternating between blocks), feeds the passed part together with the
// condition through a small subnet, and applies y = x .* exp(s) + t to the
// transformed part. Scales go through a bounded tanh so every block stays
// comfortably invertible; subnet output layers start at zero, making the
// whole stack the identity map with zero log-determinant at initialization.
//
// The flow acts row-wise: each (window, entity) row is transformed
// independently given its condition row, so the Jacobian is block-diagonal
// and the log-determinant accumulates as the row-sum of the bounded scales.

#include <cmath>
#include <utility>

#include "dmtfd/autodiff.hpp"
#include "dmtfd/encoders.hpp"

namespace dmtfd {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

template <class Real>
struct FlowResult {
  Var<Real> z_hat;    // R x D
  Var<Real> log_det;  // R x 1
};

namespace detail {

// s, t from one coupling subnet; `passed` may have zero width (D = 1), in
// which case the subnet sees only the condition.
template <class Real>
std::pair<Var<Real>, Var<Real>> coupling_subnet(Tape<Real>& tape,
                                                const BoundParams<Real>& p,
                                                const ModelParameters<Real>& m,
                                                int block, Var<Real> passed,
                                                Var<Real> cond, int out_width) {
  const auto ids = m.flow_block(block);
  Var<Real> in = passed.cols() > 0 ? concat_cols(passed, cond) : cond;
  auto hidden = tanh(add_rowvec(matmul(in, p[ids[0]]), p[ids[1]]));
  auto st = add_rowvec(matmul(hidden, p[ids[2]]), p[ids[3]]);
  auto s = scale(tanh(slice_cols(st, 0, out_width)), Real(m.dims.flow_scale_cap));
  auto t = slice_cols(st, out_width, out_width);
  return {s, t};
}

}  // namespace detail

template <class Real>
FlowResult<Real> flow_forward(Tape<Real>& tape, const BoundParams<Real>& p,
                              const ModelParameters<Real>& m, Var<Real> input,
                              Var<Real> cond) {
  const int d = m.dims.flow_dim();
  const int da = d / 2;
  const int db = d - da;
  Var<Real> x = input;
  Var<Real> log_det =
      tape.input(Mat<Real>::Zero(input.rows(), 1), "flow_logdet_zero");
  for (int b = 0; b < m.dims.n_blocks; ++b) {
    const bool even = (b % 2 == 0);
    const int keep_w = even ? da : db;
    const int change_w = even ? db : da;
    if (change_w == 0) continue;  // degenerate alternation when D == 1
    Var<Real> part_a = slice_cols(x, 0, da);
    Var<Real> part_b = slice_cols(x, da, db);
    Var<Real> passed = even ? part_a : part_b;
    (void)keep_w;
    auto [s, t] = detail::coupling_subnet(tape, p, m, b, passed, cond, change_w);
    Var<Real> moved = even ? part_b : part_a;
    Var<Real> out = add(hadamard(moved, exp(s)), t);
    x = even ? concat_cols(part_a, out) : concat_cols(out, part_b);
    log_det = add(log_det, rowwise_sum(s));
  }
  return {x, log_det};
}

// Exact algebraic inverse at the same condition. Runs on a scratch tape with
// plain inputs; no gradients are recorded.
template <class Real>
Mat<Real> flow_inverse(const ModelParameters<Real>& m, const Mat<Real>& z_hat,
                       const Mat<Real>& cond_values) {
  const int d = m.dims.flow_dim();
  const int da = d / 2;
  const int db = d - da;
  Tape<Real> tape;
  BoundParams<Real> p;
  p.vars.reserve(m.params.size());
  for (const auto& prm : m.params) p.vars.push_back(tape.input(prm.value, prm.name.c_str()));
  Var<Real> cond = tape.input(cond_values, "flow_cond");
  Var<Real> x = tape.input(z_hat, "flow_zhat");
  for (int b = m.dims.n_blocks - 1; b >= 0; --b) {
    const bool even = (b % 2 == 0);
    const int change_w = even ? db : da;
    if (change_w == 0) continue;
    Var<Real> part_a = slice_cols(x, 0, da);
    Var<Real> part_b = slice_cols(x, da, db);
    Var<Real> passed = even ? part_a : part_b;
    auto [s, t] = detail::coupling_subnet(tape, p, m, b, passed, cond, change_w);
    Var<Real> moved = even ? part_b : part_a;
    Var<Real> back = hadamard(sub(moved, t), exp(scale(s, Real(-1))));
    x = even ? concat_cols(part_a, back) : concat_cols(back, part_b);
  }
  return x.val();
}

// Negative average log-likelihood up to the (D/2) log(2 pi) constant:
// mean over rows of [ 1/2 |z_hat - mu|^2 - log_det ].
template <class Real>
Var<Real> mle_objective(Tape<Real>& tape, const FlowResult<Real>& result,
                        Var<Real> mu) {
  auto centered = add_rowvec(result.z_hat, scale(mu, Real(-1)));
  auto sq = rowwise_sum(hadamard(centered, centered));
  auto per_row = sub(scale(sq, Real(0.5)), result.log_det);
  return mean(per_row);
}

// Per-row log density under the standard-Gaussian base:
//   log p(x) = -1/2 |z_hat - mu|^2 - (D/2) log(2 pi) + log_det.
template <class Real>
Eigen::VectorXd log_density_rows(const Mat<Real>& z_hat, const Mat<Real>& log_det,
                                 const Mat<Real>& mu) {
  const int d = static_cast<int>(z_hat.cols());
  Eigen::VectorXd out(z_hat.rows());
  for (Eigen::Index r = 0; r < z_hat.rows(); ++r) {
    double sq = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = static_cast<double>(z_hat(r, j)) - static_cast<double>(mu(0, j));
      sq += c * c;
    }
    out(r) = -0.5 * sq - 0.5 * d * kLogTwoPi + static_cast<double>(log_det(r, 0));
  }
  return out;
}

// Convenience: run the flow on plain values and return the per-window log
// density, averaging rows over each window's entities.
template <class Real>
Eigen::VectorXd log_density(const ModelParameters<Real>& m, const Mat<Real>& input,
                            const Mat<Real>& cond_values, int entity_count) {
  Tape<Real> tape;
  BoundParams<Real> p;
  p.vars.reserve(m.params.size());
  for (const auto& prm : m.params) p.vars.push_back(tape.input(prm.value, prm.name.c_str()));
  auto result = flow_forward(tape, p, m, tape.input(input, "flow_in"),
                             tape.input(cond_values, "flow_cond"));
  Eigen::VectorXd rows = log_density_rows<Real>(
      result.z_hat.val(), result.log_det.val(), m.params[m.flow_mu].value);
  const long windows = rows.size() / entity_count;
  Eigen::VectorXd per_window(windows);
  for (long w = 0; w < windows; ++w)
    per_window(w) = rows.segment(w * entity_count, entity_count).mean();
  return per_window;
}

}  // namespace dmtfd
