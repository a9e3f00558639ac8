#include <catch2/catch_amalgamated.hpp>

#include <dmtfd/encoders.hpp>
#include <dmtfd/rng.hpp>

#include "support/gradcheck.hpp"

using namespace dmtfd;
using testsupport::model_grad_check;

namespace {

EncoderDims small_dims() {
  EncoderDims d;
  d.window_size = 6;
  d.hidden = 4;
  d.latent = 3;
  d.n_blocks = 1;
  d.flow_hidden = 5;
  return d;
}

Mat<double> random_mat(Rng& rng, int r, int c, double s = 1.0) {
  Mat<double> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = s * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("initialization is deterministic in the seed") {
  ModelParameters<double> a, b, c;
  a.build(small_dims(), 5);
  b.build(small_dims(), 5);
  c.build(small_dims(), 6);
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    REQUIRE(a.params[i].name == b.params[i].name);
    REQUIRE((a.params[i].value - b.params[i].value).cwiseAbs().maxCoeff() == 0.0);
  }
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if ((a.params[i].value - c.params[i].value).cwiseAbs().maxCoeff() > 0) any_diff = true;
  REQUIRE(any_diff);
}

TEST_CASE("rnn encoder fixes zero input at zero with zero biases") {
  ModelParameters<double> m;
  m.build(small_dims(), 3);  // biases start at zero
  Tape<double> tape;
  auto p = bind(tape, m);
  auto out = rnn_encode(tape, p, m, tape.input(Mat<double>::Zero(8, 6)));
  REQUIRE(out.val().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rnn weight sharing gives identical entities identical codes") {
  ModelParameters<double> m;
  m.build(small_dims(), 4);
  Rng rng(2);
  Mat<double> x(6, 6);  // three windows of two entities, rows 2w and 2w+1 equal
  for (int w = 0; w < 3; ++w) {
    for (int t = 0; t < 6; ++t) {
      const double v = rng.normal();
      x(2 * w, t) = v;
      x(2 * w + 1, t) = v;
    }
  }
  Tape<double> tape;
  auto p = bind(tape, m);
  auto out = rnn_encode(tape, p, m, tape.input(x));
  for (int w = 0; w < 3; ++w) {
    REQUIRE((out.val().row(2 * w) - out.val().row(2 * w + 1)).cwiseAbs().maxCoeff() ==
            0.0);
  }
}

TEST_CASE("rnn encoder gradient matches central differences") {
  ModelParameters<double> m;
  m.build(small_dims(), 7);
  Rng rng(9);
  Mat<double> x = random_mat(rng, 4, 6);
  auto err = model_grad_check(m, [&x](Tape<double>& t, const BoundParams<double>& p,
                                      const ModelParameters<double>& mm) {
    return mean(rnn_encode(t, p, mm, t.input(x)));
  });
  REQUIRE(err < 1e-4);
}

TEST_CASE("graph encoder with one entity reduces to mix plus residual") {
  ModelParameters<double> m;
  m.build(small_dims(), 11);
  Rng rng(3);
  Mat<double> g = random_mat(rng, 5, 4);  // five windows, K = 1
  Tape<double> tape;
  auto p = bind(tape, m);
  auto gv = tape.input(g);
  auto a = graph_attention(tape, p, m, gv, 1);
  REQUIRE((a.val().array() - 1.0).abs().maxCoeff() == 0.0);
  auto y = graph_encode(tape, p, m, gv, 1);
  Mat<double> expect = g * m.params[m.gnn_wmix].value + g;
  REQUIRE((y.val() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("graph attention rows sum to one") {
  ModelParameters<double> m;
  m.build(small_dims(), 13);
  Rng rng(5);
  Mat<double> g = random_mat(rng, 12, 4);  // three windows of four entities
  Tape<double> tape;
  auto p = bind(tape, m);
  auto a = graph_attention(tape, p, m, tape.input(g), 4);
  auto rs = a.val().rowwise().sum();
  for (int r = 0; r < 12; ++r) REQUIRE(rs(r) == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("graph encoder is permutation equivariant over entities") {
  ModelParameters<double> m;
  m.build(small_dims(), 17);
  Rng rng(7);
  const int k = 5, b = 3;
  Mat<double> g = random_mat(rng, b * k, 4);

  std::vector<int> perm{3, 0, 4, 1, 2};
  Mat<double> gp(b * k, 4);
  for (int w = 0; w < b; ++w)
    for (int e = 0; e < k; ++e) gp.row(w * k + e) = g.row(w * k + perm[e]);

  Tape<double> tape;
  auto p = bind(tape, m);
  auto y = graph_encode(tape, p, m, tape.input(g), k);
  auto yp = graph_encode(tape, p, m, tape.input(gp), k);
  for (int w = 0; w < b; ++w) {
    for (int e = 0; e < k; ++e) {
      REQUIRE((yp.val().row(w * k + e) - y.val().row(w * k + perm[e]))
                  .cwiseAbs()
                  .maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("graph encoder gradient matches central differences") {
  ModelParameters<double> m;
  m.build(small_dims(), 19);
  Rng rng(11);
  Mat<double> g = random_mat(rng, 6, 4);
  auto err = model_grad_check(m, [&g](Tape<double>& t, const BoundParams<double>& p,
                                      const ModelParameters<double>& mm) {
    auto y = graph_encode(t, p, mm, t.input(g), 3);
    return mean(hadamard(y, y));
  });
  REQUIRE(err < 1e-4);
}

TEST_CASE("head is zero at zero parameters and linear without nonlinearity") {
  auto dims = small_dims();
  ModelParameters<double> m;
  m.build(dims, 23);
  Rng rng(13);
  Mat<double> y = random_mat(rng, 5, 4);

  {
    ModelParameters<double> zeroed = m;
    zeroed.params[zeroed.head_w1].value.setZero();
    zeroed.params[zeroed.head_w2].value.setZero();
    Tape<double> tape;
    auto p = bind(tape, zeroed);
    auto z = head_forward(tape, p, zeroed, tape.input(y));
    REQUIRE(z.val().cwiseAbs().maxCoeff() == 0.0);
  }
  {
    ModelParameters<double> linear = m;
    linear.dims.head_nonlinearity = false;  // biases are zero from init
    Tape<double> tape;
    auto p = bind(tape, linear);
    auto z1 = head_forward(tape, p, linear, tape.input(y));
    auto z2 = head_forward(tape, p, linear, tape.input(Mat<double>(2.0 * y)));
    REQUIRE((z2.val() - 2.0 * z1.val()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("head gradient matches central differences") {
  ModelParameters<double> m;
  m.build(small_dims(), 29);
  Rng rng(17);
  Mat<double> y = random_mat(rng, 4, 4);
  auto err = model_grad_check(m, [&y](Tape<double>& t, const BoundParams<double>& p,
                                      const ModelParameters<double>& mm) {
    auto z = head_forward(t, p, mm, t.input(y));
    return mean(hadamard(z, z));
  });
  REQUIRE(err < 1e-4);
}

TEST_CASE("forward passes are deterministic given parameters and inputs") {
  ModelParameters<double> m;
  m.build(small_dims(), 31);
  Rng rng(19);
  Mat<double> x = random_mat(rng, 8, 6);
  auto run = [&]() {
    Tape<double> tape;
    auto p = bind(tape, m);
    auto g = rnn_encode(tape, p, m, tape.input(x));
    auto y = graph_encode(tape, p, m, g, 2);
    auto z = head_forward(tape, p, m, y);
    return Mat<double>(z.val());
  };
  auto a = run();
  auto b = run();
  REQUIRE((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("windows_to_rows lays entities out row-major per window") {
  MatX w(2, 6);  // two windows, K=2, T=3
  w << 1, 2, 3, 4, 5, 6,
       7, 8, 9, 10, 11, 12;
  auto rows = windows_to_rows<double>(w, 2, 3);
  REQUIRE(rows.rows() == 4);
  REQUIRE(rows(0, 0) == 1);
  REQUIRE(rows(1, 0) == 4);
  REQUIRE(rows(2, 2) == 9);
  REQUIRE(rows(3, 2) == 12);
}
