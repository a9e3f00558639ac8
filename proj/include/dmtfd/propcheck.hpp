#pragma once

// Numeric verification harness. Each check evaluates one of the derivations
// behind the loss family on concrete numbers and reports (name, statement,
// measured value, tolerance, pass). Hard checks gate the verify command's
// exit code; informational entries record measured magnitudes in regimes
// where the derivations are approximations.

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "dmtfd/encoders.hpp"
#include "dmtfd/flow.hpp"
#include "dmtfd/losses.hpp"
#include "dmtfd/metrics.hpp"
#include "dmtfd/optimizer.hpp"
#include "dmtfd/rng.hpp"

namespace dmtfd {

struct PropertyCheck {
  std::string name;
  std::string statement;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = true;
  bool hard = true;  // informational entries never gate
  std::string note;
};

struct PropertyReport {
  std::uint64_t seed = 0;
  std::vector<PropertyCheck> checks;

  void add(PropertyCheck c) { checks.push_back(std::move(c)); }
  bool all_hard_passed() const {
    for (const auto& c : checks)
      if (c.hard && !c.pass) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// restructuring of the InfoNCE loss into paired labels
// ---------------------------------------------------------------------------

inline void check_cl_ccl_decomposition(PropertyReport& report, std::uint64_t seed) {
  Rng rng(derive_stream(seed, 0xA1));

  // Exact identity: with S_k the negative similarities and S_p the positive,
  //   log sum_k exp(S_k) - S_p
  //     == log N_K - [ S_p - sum_k S_k + residual ]
  //   residual = sum_k S_k - log( (1/N_K) sum_k exp(S_k) ).
  double worst = 0.0;
  for (int rep = 0; rep < 32; ++rep) {
    const int nk = 2 + static_cast<int>(rng.bounded(6));
    const int d = 4;
    Eigen::VectorXd anchor(d), pos(d);
    for (int i = 0; i < d; ++i) anchor(i) = rng.normal();
    for (int i = 0; i < d; ++i) pos(i) = rng.normal();
    std::vector<Eigen::VectorXd> negs(nk, Eigen::VectorXd(d));
    for (auto& n : negs)
      for (int i = 0; i < d; ++i) n(i) = rng.normal();
    const double lhs = cl_loss_value(anchor, pos, negs, false);
    auto cos = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
      return a.dot(b) / (a.norm() * b.norm());
    };
    const double s_pos = cos(anchor, pos);
    double sum_s = 0.0, sum_exp = 0.0;
    for (const auto& n : negs) {
      const double s = cos(anchor, n);
      sum_s += s;
      sum_exp += std::exp(s);
    }
    const double residual = sum_s - std::log(sum_exp / nk);
    const double rhs = std::log(double(nk)) - (s_pos - sum_s + residual);
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  report.add({"a1_exact_identity",
              "InfoNCE equals log N_K minus the paired form plus the residual term",
              worst, 1e-9, worst < 1e-9, true, ""});

  // Residual magnitude where the derivation drops it: all negative
  // similarities small.
  auto residual_at = [&](double s_hi, int nk) {
    double sum_s = 0.0, sum_exp = 0.0;
    for (int k = 0; k < nk; ++k) {
      const double s = rng.uniform(0.0, s_hi);
      sum_s += s;
      sum_exp += std::exp(s);
    }
    return std::abs(sum_s - std::log(sum_exp / nk));
  };
  const double small = residual_at(0.002, 4);
  report.add({"a1_residual_small_regime",
              "dropped residual is small when negative similarities are below 0.01",
              small, 0.01, small < 0.01, true, "4 negatives with S in (0, 0.002)"});
  const double large = residual_at(0.9, 4);
  report.add({"a1_residual_large_regime",
              "dropped residual grows outside the near-zero similarity regime",
              large, 0.0, true, false,
              "recorded magnitude at S near 0.9; the paired form is an "
              "approximation there"});
}

// ---------------------------------------------------------------------------
// the soft loss converges to the hard loss as the confidence prior vanishes
// ---------------------------------------------------------------------------

inline void check_softcl_limit(PropertyReport& report, std::uint64_t seed) {
  Rng rng(derive_stream(seed, 0xA2));

  // Difference term for homologous pairs: (1 - e^alpha) kappa(k* d) log(1/kappa(d) - 1).
  KernelConfig kernel_cfg{1.0, 2.0};
  const int n_pairs = 16;
  std::vector<double> dist(n_pairs), kstar(n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    dist[i] = rng.uniform(0.2, 1.6);
    kstar[i] = rng.uniform(0.5, 2.0);  // Lipschitz band [1/K, K] with K = 2
  }
  auto diff_at = [&](double alpha) {
    double total = 0.0;
    for (int i = 0; i < n_pairs; ++i) {
      const double kd = std::exp(-std::pow(dist[i] / kernel_cfg.sigma, kernel_cfg.beta));
      const double kkd =
          std::exp(-std::pow(kstar[i] * dist[i] / kernel_cfg.sigma, kernel_cfg.beta));
      total += (1.0 - std::exp(alpha)) * kkd * std::log(1.0 / kd - 1.0);
    }
    return total;
  };

  const double exact_zero = diff_at(0.0);
  report.add({"a2_difference_alpha_zero_exact",
              "the soft/hard difference vanishes identically at alpha = 0",
              std::abs(exact_zero), 0.0, exact_zero == 0.0, true, ""});

  const std::vector<double> alphas{1.0, 0.1, 0.01, 0.001};
  std::vector<double> mags;
  bool monotone = true;
  for (double a : alphas) mags.push_back(std::abs(diff_at(a)));
  for (std::size_t i = 1; i < mags.size(); ++i)
    if (!(mags[i] < mags[i - 1])) monotone = false;
  report.add({"a2_difference_monotone",
              "|difference| decreases strictly along alpha = 1, 0.1, 0.01, 0.001",
              mags.back(), 0.0, monotone, true, ""});

  const double ratio = mags.back() / mags.front();
  report.add({"a2_limit_ratio",
              "|difference| at alpha = 0.001 is below 1% of its alpha = 1 value",
              ratio, 1e-2, ratio < 1e-2, true, ""});

  // kappa(d) = 1/2 makes the log factor vanish for every alpha.
  {
    const double d_half = kernel_cfg.sigma * std::sqrt(std::log(2.0));
    const double kd = std::exp(-std::pow(d_half / kernel_cfg.sigma, kernel_cfg.beta));
    const double term = (1.0 - std::exp(0.7)) * 0.9 * std::log(1.0 / kd - 1.0);
    report.add({"a2_half_similarity_exact",
                "pairs at similarity one half contribute zero for any alpha",
                std::abs(term), 1e-12, std::abs(term) < 1e-12, true, ""});
  }

  // The derivation assumes the head is Lipschitz both ways; measure the
  // empirical distance ratio of a briefly trained head.
  {
    EncoderDims dims;
    dims.window_size = 4;
    dims.hidden = 6;
    dims.latent = 4;
    dims.n_blocks = 1;
    ModelParameters<double> model;
    model.build(dims, derive_stream(seed, 0xBEEF));
    const int n = 24;
    Mat<double> y(n, 6);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 6; ++j)
        y(i, j) = rng.normal() + (i % 2 == 0 ? 1.5 : -1.5);
    Mat<double> homology = Mat<double>::Zero(n, n);
    for (int i = 0; i + 1 < n; i += 2) {
      homology(i, i + 1) = 1;
      homology(i + 1, i) = 1;
    }
    MMLConfig cfg;
    cfg.weight_po = 1.0;
    cfg.weight_ne = 1.0;
    AdamOptimizer<double> opt(model, 0.01);
    for (int step = 0; step < 40; ++step) {
      model.zero_gradients();
      Tape<double> tape;
      auto bound = bind(tape, model);
      auto yv = tape.input(y);
      auto z = head_forward(tape, bound, model, yv);
      KernelConfig ky = cfg.kernel;
      ky.sigma = median_offdiag_distance(y);
      auto p = kernel_matrix(tape.input(y), ky);
      auto q = kernel_matrix(z, cfg.kernel);
      auto loss = mml_loss(p, q, homology, cfg);
      tape.backward(loss);
      collect_gradients(tape, bound, model);
      opt.step();
    }
    Tape<double> tape;
    auto bound = bind(tape, model);
    auto z = head_forward(tape, bound, model, tape.input(y));
    double lo = 1e300, hi = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double dy = (y.row(i) - y.row(j)).norm();
        const double dz = (z.val().row(i) - z.val().row(j)).norm();
        if (dy > 1e-9 && dz > 1e-12) {
          const double r = dz / dy;
          lo = std::min(lo, r);
          hi = std::max(hi, r);
        }
      }
    }
    report.add({"a2_head_distance_ratio",
                "empirical latent/input distance ratio band of a trained head",
                hi, 0.0, true, false,
                "ratio range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                    "]; finite and bounded away from zero, as the two-sided "
                    "Lipschitz assumption requires"});
  }
}

// ---------------------------------------------------------------------------
// signal-to-noise comparison between the soft and hard losses
// ---------------------------------------------------------------------------

inline void check_snr(PropertyReport& report, std::uint64_t seed) {
  (void)seed;
  auto soft_loss = [](double s_same, double s_other, double alpha, double m) {
    const double boosted = std::min(std::exp(alpha) * s_same, 1.0);  // e^a S <= 1
    return -m * ((1.0 - s_other) * std::log(1.0 - s_other) +
                 s_other * std::log(s_other)) -
           ((1.0 - boosted) * std::log(1.0 - s_same) + boosted * std::log(s_same));
  };
  auto hard_loss = [](double s_same, double s_other, double m) {
    return -m * std::log(1.0 - s_other) - std::log(s_same);
  };

  // Positive-pair populations sit at S ~ 1 for shared-source pairs and
  // S' ~ 0 otherwise; noisy pairs reverse the two.
  const double s_hi = 0.99, s_lo = 0.01;
  double min_margin = 1e300;
  std::string worst_at;
  for (double alpha : {0.05, 0.1, 0.5}) {
    for (double m : {0.5, 1.0, 2.0}) {
      const double pl_soft = soft_loss(s_hi, s_lo, alpha, m);
      const double nl_soft = soft_loss(s_lo, s_hi, alpha, m);
      const double pl_hard = hard_loss(s_hi, s_lo, m);
      const double nl_hard = hard_loss(s_lo, s_hi, m);
      const double margin = pl_soft / nl_soft - pl_hard / nl_hard;
      if (margin < min_margin) {
        min_margin = margin;
        worst_at = "alpha=" + std::to_string(alpha) + ", M=" + std::to_string(m);
      }
    }
  }
  report.add({"a3_snr_inequality_grid",
              "soft-loss SNR exceeds hard-loss SNR across the (alpha, M) grid",
              min_margin, 0.0, min_margin > 0.0, true,
              "smallest margin at " + worst_at});

  // At the clamp boundary e^alpha S = 1 the S-term of the difference is zero.
  {
    const double alpha = 0.1;
    const double s = std::exp(-alpha);  // e^alpha * S = 1 exactly
    const double term = (std::min(std::exp(alpha) * s, 1.0) - 1.0) *
                        std::log(s / (1.0 - s));
    report.add({"a3_boundary_term_zero",
                "the boosted-similarity term vanishes at the e^alpha S = 1 boundary",
                std::abs(term), 1e-12, std::abs(term) < 1e-12, true, ""});
  }
}

// ---------------------------------------------------------------------------
// kernel smoothness
// ---------------------------------------------------------------------------

inline void check_kernel_lipschitz(PropertyReport& report, std::uint64_t seed) {
  Rng rng(derive_stream(seed, 0xB1));

  auto empirical_max_slope = [](double beta, double sigma) {
    // Central differences of the kernel over a fine grid on [0, sigma].
    const double step = sigma * 1e-4;
    const double h = sigma * 1e-7;
    auto kappa = [&](double d) { return std::exp(-std::pow(d / sigma, beta)); };
    double best = 0.0;
    for (double d = step; d <= sigma; d += step) {
      const double slope = std::abs(kappa(d + h) - kappa(d - h)) / (2.0 * h);
      best = std::max(best, slope);
    }
    return best;
  };

  const double got_b2 = empirical_max_slope(2.0, 1.0);
  const double expect_b2 = std::sqrt(2.0) * std::exp(-0.5);
  report.add({"lemma1_beta2_max_derivative",
              "max |dk/dd| for beta=2, sigma=1 is sqrt(2) e^{-1/2}",
              got_b2, 1e-3, std::abs(got_b2 - expect_b2) < 1e-3, true, ""});

  const double got_b1 = empirical_max_slope(1.0, 1.0);
  report.add({"lemma1_beta1_max_derivative",
              "max |dk/dd| for beta=1, sigma=1 approaches 1 at d -> 0+",
              got_b1, 1e-3, std::abs(got_b1 - 1.0) < 1e-3, true, ""});

  bool secant_ok = true;
  double worst_violation = 0.0;
  for (double beta : {1.0, 1.5, 2.0}) {
    for (double sigma : {0.5, 1.0, 2.0}) {
      const double l_emp = empirical_max_slope(beta, sigma);
      auto kappa = [&](double d) { return std::exp(-std::pow(d / sigma, beta)); };
      for (int i = 0; i < 10000; ++i) {
        const double d1 = rng.uniform(0.0, sigma);
        const double d2 = rng.uniform(0.0, sigma);
        const double lhs = std::abs(kappa(d1) - kappa(d2));
        const double rhs = l_emp * std::abs(d1 - d2) * (1.0 + 1e-6) + 1e-12;
        if (lhs > rhs) {
          secant_ok = false;
          worst_violation = std::max(worst_violation, lhs - rhs);
        }
      }
    }
  }
  report.add({"lemma1_secant_bound",
              "|k(d1)-k(d2)| <= L_emp |d1-d2| on 10^4 sampled pairs per (beta, sigma)",
              worst_violation, 0.0, secant_ok, true, ""});

  // The closed form (beta/sigma^beta) e^{-1} understates the measured
  // constant (for beta=2, sigma=1: 0.736 vs 0.858 at d = sigma/sqrt(2)), so
  // it is recorded rather than asserted.
  const double claimed_b2 = 2.0 * std::exp(-1.0);
  report.add({"lemma1_closed_form_comparison",
              "closed-form constant (beta/sigma^beta) e^{-1} vs measured maximum",
              claimed_b2, 0.0, true, false,
              "beta=2, sigma=1: closed form " + std::to_string(claimed_b2) +
                  " < measured " + std::to_string(got_b2) +
                  "; the derivative peaks inside (0, sigma), not at d = sigma"});

  report.add({"lemma1_beta_below_one_skipped",
              "beta < 1 is excluded: the derivative is unbounded as d -> 0+",
              0.0, 0.0, true, false, "check skipped by design for beta < 1"});
}

// ---------------------------------------------------------------------------
// runtime invariants gated by the verify command
// ---------------------------------------------------------------------------

inline void check_runtime_invariants(PropertyReport& report, std::uint64_t seed) {
  Rng rng(derive_stream(seed, 0xC1));

  // Gradient spot check: joint loss on a tiny model vs central differences.
  {
    EncoderDims dims;
    dims.window_size = 5;
    dims.hidden = 4;
    dims.latent = 3;
    dims.n_blocks = 2;
    dims.flow_hidden = 5;
    ModelParameters<double> model;
    model.build(dims, derive_stream(seed, 0xD1));
    for (int b = 0; b < dims.n_blocks; ++b) {
      auto ids = model.flow_block(b);
      for (int pi : {ids[2], ids[3]}) {
        auto& v = model.params[pi].value;
        for (Eigen::Index i = 0; i < v.rows(); ++i)
          for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = 0.3 * rng.normal();
      }
    }
    const int entities = 2, windows = 3;
    Mat<double> x(windows * entities, dims.window_size);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (int t = 0; t < dims.window_size; ++t) x(i, t) = rng.normal();

    auto loss_value = [&]() {
      Tape<double> tape;
      BoundParams<double> p;
      for (const auto& prm : model.params)
        p.vars.push_back(tape.input(prm.value, prm.name.c_str()));
      auto g = rnn_encode(tape, p, model, tape.input(x));
      auto y = graph_encode(tape, p, model, g, entities);
      auto z = head_forward(tape, p, model, y);
      auto fr = flow_forward(tape, p, model, z, g);
      return mle_objective(tape, fr, p.vars[model.flow_mu]).scalar();
    };

    model.zero_gradients();
    {
      Tape<double> tape;
      auto bound = bind(tape, model);
      auto g = rnn_encode(tape, bound, model, tape.input(x));
      auto y = graph_encode(tape, bound, model, g, entities);
      auto z = head_forward(tape, bound, model, y);
      auto fr = flow_forward(tape, bound, model, z, g);
      auto loss = mle_objective(tape, fr, bound[model.flow_mu]);
      tape.backward(loss);
      collect_gradients(tape, bound, model);
    }
    double worst = 0.0;
    const double h = 1e-5;
    for (auto& prm : model.params) {
      for (Eigen::Index i = 0; i < prm.value.rows(); ++i) {
        for (Eigen::Index j = 0; j < prm.value.cols(); ++j) {
          const double keep = prm.value(i, j);
          prm.value(i, j) = keep + h;
          const double up = loss_value();
          prm.value(i, j) = keep - h;
          const double down = loss_value();
          prm.value(i, j) = keep;
          const double fd = (up - down) / (2.0 * h);
          const double an = prm.grad(i, j);
          worst = std::max(worst, std::abs(fd - an) /
                                      std::max({1.0, std::abs(fd), std::abs(an)}));
        }
      }
    }
    report.add({"grad_full_stack",
                "end-to-end gradient matches central finite differences",
                worst, 1e-4, worst < 1e-4, true, ""});
  }

  // Flow invertibility, with an environment hook that corrupts the measured
  // log-determinant so the gate itself can be exercised.
  {
    EncoderDims dims;
    dims.window_size = 4;
    dims.hidden = 3;
    dims.latent = 4;
    dims.n_blocks = 3;
    dims.flow_hidden = 6;
    ModelParameters<double> model;
    model.build(dims, derive_stream(seed, 0xD2));
    for (int b = 0; b < dims.n_blocks; ++b) {
      auto ids = model.flow_block(b);
      for (int pi : {ids[2], ids[3]}) {
        auto& v = model.params[pi].value;
        for (Eigen::Index i = 0; i < v.rows(); ++i)
          for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = 0.4 * rng.normal();
      }
    }
    const int n = 200;
    Mat<double> x(n, 4), cond(n, 3);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 4; ++j) x(i, j) = rng.normal();
      for (int j = 0; j < 3; ++j) cond(i, j) = rng.normal();
    }
    Tape<double> tape;
    BoundParams<double> p;
    for (const auto& prm : model.params)
      p.vars.push_back(tape.input(prm.value, prm.name.c_str()));
    auto res = flow_forward(tape, p, model, tape.input(x), tape.input(cond));
    Mat<double> log_det = res.log_det.val();
    if (std::getenv("DMTFD_TEST_CORRUPT_LOGDET") != nullptr) {
      log_det.array() += 0.5;  // test hook: simulate a broken determinant
    }
    auto back = flow_inverse(model, res.z_hat.val(), cond);
    const double recon = (back - x).cwiseAbs().maxCoeff();
    report.add({"flow_inverse_roundtrip",
                "inverse(forward(x)) reconstructs x to 1e-6",
                recon, 1e-6, recon < 1e-6, true, ""});

    // Cross-check the analytic log-determinant against a finite-difference
    // Jacobian on a few rows.
    double worst = 0.0;
    const double h = 1e-5;
    for (int r = 0; r < 4; ++r) {
      Mat<double> jac(4, 4);
      for (int i = 0; i < 4; ++i) {
        Mat<double> xp = x, xm = x;
        xp(r, i) += h;
        xm(r, i) -= h;
        Tape<double> t2;
        BoundParams<double> p2;
        for (const auto& prm : model.params)
          p2.vars.push_back(t2.input(prm.value, prm.name.c_str()));
        auto up = flow_forward(t2, p2, model, t2.input(xp), t2.input(cond));
        auto dn = flow_forward(t2, p2, model, t2.input(xm), t2.input(cond));
        jac.col(i) = (up.z_hat.val().row(r) - dn.z_hat.val().row(r)).transpose() / (2 * h);
      }
      const double fd = std::log(std::abs(jac.determinant()));
      worst = std::max(worst, std::abs(fd - log_det(r, 0)) /
                                  std::max(1.0, std::abs(fd)));
    }
    report.add({"flow_logdet_jacobian",
                "analytic log-determinant matches the finite-difference Jacobian",
                worst, 1e-4, worst < 1e-4, true, ""});
  }

  // Metric oracles: ranking metrics against brute-force counting.
  {
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      const int n = 2 + static_cast<int>(rng.bounded(60));
      std::vector<double> scores(n);
      std::vector<std::uint8_t> labels(n);
      for (int i = 0; i < n; ++i) {
        scores[i] = rep % 2 == 0 ? std::floor(rng.uniform(0.0, 5.0)) : rng.normal();
        labels[i] = rng.u01() < 0.4 ? 1 : 0;
      }
      labels[0] = 1;
      labels[n - 1] = 0;
      double won = 0.0;
      long pairs = 0;
      for (int i = 0; i < n; ++i) {
        if (!labels[i]) continue;
        for (int j = 0; j < n; ++j) {
          if (labels[j]) continue;
          ++pairs;
          if (scores[i] > scores[j]) won += 1.0;
          if (scores[i] == scores[j]) won += 0.5;
        }
      }
      worst = std::max(worst, std::abs(auroc(scores, labels) - won / pairs));
    }
    report.add({"metric_auroc_oracle",
                "ranking metric equals pairwise brute-force counting",
                worst, 1e-9, worst < 1e-9, true, ""});
  }
}

inline PropertyReport run_propcheck(std::uint64_t seed) {
  PropertyReport report;
  report.seed = seed;
  check_cl_ccl_decomposition(report, seed);
  check_softcl_limit(report, seed);
  check_snr(report, seed);
  check_kernel_lipschitz(report, seed);
  check_runtime_invariants(report, seed);
  return report;
}

inline nlohmann::ordered_json report_to_json(const PropertyReport& r) {
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["all_hard_passed"] = r.all_hard_passed();
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : r.checks) {
    nlohmann::ordered_json e;
    e["name"] = c.name;
    e["statement"] = c.statement;
    e["measured"] = c.measured;
    e["tolerance"] = c.tolerance;
    e["pass"] = c.pass;
    e["hard"] = c.hard;
    e["note"] = c.note;
    arr.push_back(e);
  }
  j["checks"] = arr;
  return j;
}

inline void print_report(const PropertyReport& r, std::ostream& out) {
  out << "property checks (seed " << r.seed << ")\n";
  for (const auto& c : r.checks) {
    out << "  [" << (c.pass ? "PASS" : "FAIL") << (c.hard ? "" : "*") << "] "
        << std::left << std::setw(34) << c.name << " measured "
        << std::setprecision(6) << c.measured;
    if (c.tolerance > 0) out << " (tol " << c.tolerance << ")";
    if (!c.note.empty()) out << "  -- " << c.note;
    out << "\n";
  }
  out << "  (* informational, does not gate)\n";
}

}  // namespace dmtfd
