#pragma once

// Central finite-difference gradient oracle used across the test suites.
// Independent of the tape's backward pass: it re-evaluates the forward
// function at perturbed parameter values only.

#include <dmtfd/autodiff.hpp>
#include <dmtfd/encoders.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testsupport {

using BuildFn = std::function<dmtfd::Var<double>(
    dmtfd::Tape<double>&, const std::vector<dmtfd::Var<double>>&)>;

// Max elementwise error between tape gradients and central differences,
// relative for large gradients and absolute for small ones:
//   err = |fd - analytic| / max(1, |fd|, |analytic|)
inline double grad_check(const BuildFn& build, std::vector<dmtfd::Mat<double>> params,
                         double step = 1e-5) {
  dmtfd::Tape<double> tape;
  std::vector<dmtfd::Var<double>> vars;
  vars.reserve(params.size());
  for (auto& p : params) vars.push_back(tape.param(p));
  dmtfd::Var<double> loss = build(tape, vars);
  tape.backward(loss);
  std::vector<dmtfd::Mat<double>> analytic;
  analytic.reserve(vars.size());
  for (auto v : vars) analytic.push_back(tape.grad_of(v));

  auto eval = [&](const std::vector<dmtfd::Mat<double>>& ps) {
    dmtfd::Tape<double> tp;
    std::vector<dmtfd::Var<double>> vs;
    vs.reserve(ps.size());
    for (auto& p : ps) vs.push_back(tp.input(p));
    return build(tp, vs).scalar();
  };

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (Eigen::Index i = 0; i < params[pi].rows(); ++i) {
      for (Eigen::Index j = 0; j < params[pi].cols(); ++j) {
        auto plus = params;
        auto minus = params;
        plus[pi](i, j) += step;
        minus[pi](i, j) -= step;
        const double fd = (eval(plus) - eval(minus)) / (2.0 * step);
        const double an = analytic[pi](i, j);
        const double err =
            std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

// Same oracle at model level: perturbs stored parameter values and rebuilds
// the forward pass through a user-supplied loss builder.
using ModelLossFn = std::function<dmtfd::Var<double>(
    dmtfd::Tape<double>&, const dmtfd::BoundParams<double>&,
    const dmtfd::ModelParameters<double>&)>;

inline double model_grad_check(dmtfd::ModelParameters<double>& model,
                               const ModelLossFn& build, double step = 1e-5) {
  model.zero_gradients();
  {
    dmtfd::Tape<double> tape;
    auto bound = dmtfd::bind(tape, model);
    auto loss = build(tape, bound, model);
    tape.backward(loss);
    dmtfd::collect_gradients(tape, bound, model);
  }
  auto eval = [&]() {
    dmtfd::Tape<double> tape;
    dmtfd::BoundParams<double> bound;
    for (const auto& p : model.params)
      bound.vars.push_back(tape.input(p.value, p.name.c_str()));
    return build(tape, bound, model).scalar();
  };

  double worst = 0.0;
  for (auto& p : model.params) {
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
        const double keep = p.value(i, j);
        p.value(i, j) = keep + step;
        const double up = eval();
        p.value(i, j) = keep - step;
        const double down = eval();
        p.value(i, j) = keep;
        const double fd = (up - down) / (2.0 * step);
        const double an = p.grad(i, j);
        const double err =
            std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

}  // namespace testsupport
