#pragma once

// Encoder stack: per-entity gated recurrent encoder over the time axis, a
// dense-attention graph encoder over entities, and the latent projection
// head. Parameters are plain matrices with gradient storage; every forward
// runs on a fresh Tape so the recorded graph lives only for one step.

#include <array>
#include <cassert>
#include <string>
#include <vector>

#include "dmtfd/autodiff.hpp"
#include "dmtfd/errors.hpp"
#include "dmtfd/rng.hpp"
#include "dmtfd/tensor.hpp"

namespace dmtfd {

template <class Real>
struct Parameter {
  std::string name;
  Mat<Real> value;
  Mat<Real> grad;
};

enum class FlowInput { head, gnn };

struct EncoderDims {
  int window_size = 60;    // T
  int hidden = 32;         // h
  int latent = 16;         // h_z
  int n_blocks = 1;        // coupling blocks
  int flow_hidden = 32;    // coupling subnet hidden width
  double flow_scale_cap = 2.0;  // |log scale| bound per coupling block
  FlowInput flow_input = FlowInput::head;
  bool head_nonlinearity = true;

  int flow_dim() const { return flow_input == FlowInput::head ? latent : hidden; }
};

template <class Real>
struct ModelParameters {
  EncoderDims dims;
  std::vector<Parameter<Real>> params;

  int rnn_w_rz = -1, rnn_w_n = -1, rnn_b_rz = -1, rnn_b_n = -1;
  int gnn_wq = -1, gnn_wk = -1, gnn_wmix = -1;
  int head_w1 = -1, head_b1 = -1, head_w2 = -1, head_b2 = -1;
  std::array<int, 4> flow_block(int b) const {
    return {flow_w1_ + 4 * b, flow_w1_ + 4 * b + 1, flow_w1_ + 4 * b + 2,
            flow_w1_ + 4 * b + 3};
  }
  int flow_mu = -1;

  void build(const EncoderDims& d, std::uint64_t seed) {
    dims = d;
    params.clear();
    const int h = d.hidden;
    Rng rng(derive_stream(seed, 0x1A17));

    rnn_w_rz = add_weight(rng, "rnn.w_rz", 1 + h, 2 * h);
    rnn_w_n = add_weight(rng, "rnn.w_n", 1 + h, h);
    rnn_b_rz = add_zeros("rnn.b_rz", 1, 2 * h);
    rnn_b_n = add_zeros("rnn.b_n", 1, h);

    gnn_wq = add_weight(rng, "gnn.w_q", h, h);
    gnn_wk = add_weight(rng, "gnn.w_k", h, h);
    gnn_wmix = add_weight(rng, "gnn.w_mix", h, h);

    head_w1 = add_weight(rng, "head.w1", h, h);
    head_b1 = add_zeros("head.b1", 1, h);
    head_w2 = add_weight(rng, "head.w2", h, d.latent);
    head_b2 = add_zeros("head.b2", 1, d.latent);

    const int fd = d.flow_dim();
    const int da = fd / 2;          // untouched part (may be empty for D=1)
    const int db = fd - da;         // transformed part
    flow_w1_ = static_cast<int>(params.size());
    for (int b = 0; b < d.n_blocks; ++b) {
      // Blocks alternate which half conditions which; widths swap with them.
      const int in_w = (b % 2 == 0 ? da : db) + h;  // conditioned on temporal code
      const int out_w = 2 * (b % 2 == 0 ? db : da);
      const std::string pre = "flow.b" + std::to_string(b);
      add_weight(rng, pre + ".w1", in_w, d.flow_hidden);
      add_zeros(pre + ".b1", 1, d.flow_hidden);
      // Final layers start at zero: the stack is the identity map at init.
      add_zeros(pre + ".w2", d.flow_hidden, std::max(out_w, 0));
      add_zeros(pre + ".b2", 1, std::max(out_w, 0));
    }
    flow_mu = add_zeros("flow.mu", 1, fd);
  }

  void zero_gradients() {
    for (auto& p : params) p.grad.setZero(p.value.rows(), p.value.cols());
  }

 private:
  int flow_w1_ = -1;

  int add_weight(Rng& rng, std::string name, int rows, int cols) {
    Parameter<Real> p;
    p.name = std::move(name);
    p.value.resize(rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        p.value(i, j) = static_cast<Real>(rng.uniform(-bound, bound));
    p.grad = Mat<Real>::Zero(rows, cols);
    params.push_back(std::move(p));
    return static_cast<int>(params.size()) - 1;
  }

  int add_zeros(std::string name, int rows, int cols) {
    Parameter<Real> p;
    p.name = std::move(name);
    p.value = Mat<Real>::Zero(rows, cols);
    p.grad = Mat<Real>::Zero(rows, cols);
    params.push_back(std::move(p));
    return static_cast<int>(params.size()) - 1;
  }
};

// Parameters registered on a tape for one forward/backward step.
template <class Real>
struct BoundParams {
  std::vector<Var<Real>> vars;
  Var<Real> operator[](int i) const { return vars[i]; }
};

template <class Real>
BoundParams<Real> bind(Tape<Real>& tape, const ModelParameters<Real>& model) {
  BoundParams<Real> b;
  b.vars.reserve(model.params.size());
  for (const auto& p : model.params) b.vars.push_back(tape.param(p.value, p.name.c_str()));
  return b;
}

// Accumulates tape gradients back into parameter storage.
template <class Real>
void collect_gradients(Tape<Real>& tape, const BoundParams<Real>& bound,
                       ModelParameters<Real>& model) {
  for (std::size_t i = 0; i < model.params.size(); ++i)
    model.params[i].grad += tape.grad_of(bound.vars[i]);
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

// x: (B*K) x T, one row per (window, entity). Returns the final hidden state
// per row, (B*K) x h. Weights are shared across entities.
template <class Real>
Var<Real> rnn_encode(Tape<Real>& tape, const BoundParams<Real>& p,
                     const ModelParameters<Real>& m, Var<Real> x) {
  return gru_sequence(x, p[m.rnn_w_rz], p[m.rnn_w_n], p[m.rnn_b_rz], p[m.rnn_b_n]);
}

// Dense attention adjacency over the K entities of each window; rows of the
// adjacency sum to one.
template <class Real>
Var<Real> graph_attention(Tape<Real>& tape, const BoundParams<Real>& p,
                          const ModelParameters<Real>& m, Var<Real> g, int entity_count) {
  auto q = matmul(g, p[m.gnn_wq]);
  auto k = matmul(g, p[m.gnn_wk]);
  const Real scale_f = Real(1) / std::sqrt(static_cast<Real>(m.dims.hidden));
  return softmax_rows(scale(batched_nt(q, k, entity_count), scale_f));
}

// y = A * g * W_mix + g (residual).
template <class Real>
Var<Real> graph_encode(Tape<Real>& tape, const BoundParams<Real>& p,
                       const ModelParameters<Real>& m, Var<Real> g, int entity_count) {
  auto a = graph_attention(tape, p, m, g, entity_count);
  auto mixed = batched_nn(a, g, entity_count);
  return add(matmul(mixed, p[m.gnn_wmix]), g);
}

// Two-layer perceptron applied per entity row.
template <class Real>
Var<Real> head_forward(Tape<Real>& tape, const BoundParams<Real>& p,
                       const ModelParameters<Real>& m, Var<Real> y) {
  auto pre = add_rowvec(matmul(y, p[m.head_w1]), p[m.head_b1]);
  auto hidden = m.dims.head_nonlinearity ? tanh(pre) : pre;
  return add_rowvec(matmul(hidden, p[m.head_w2]), p[m.head_b2]);
}

// ---------------------------------------------------------------------------
// data layout helper
// ---------------------------------------------------------------------------

// Flattened windows (B x K*T, entity-major) -> encoder input rows
// ((B*K) x T): row b*K + k carries window b, entity k.
template <class Real>
Mat<Real> windows_to_rows(const MatX& windows, int entity_count, int window_size) {
  const long b = windows.rows();
  Mat<Real> rows(b * entity_count, window_size);
  for (long w = 0; w < b; ++w)
    for (int k = 0; k < entity_count; ++k)
      rows.row(w * entity_count + k) =
          windows.row(w)
              .segment(static_cast<long>(k) * window_size, window_size)
              .template cast<Real>();
  return rows;
}

}  // namespace dmtfd
