#include <catch2/catch_amalgamated.hpp>

#include <dmtfd/augment.hpp>

using namespace dmtfd;

namespace {

WindowBatch batch_from_rows(const MatX& rows) {
  WindowBatch b;
  b.windows = rows;
  b.labels.assign(rows.rows(), 0);
  b.starts.resize(rows.rows());
  for (long i = 0; i < rows.rows(); ++i) b.starts[i] = i;
  b.window_size = static_cast<int>(rows.cols());
  b.stride = 1;
  b.entity_count = 1;
  return b;
}

}  // namespace

TEST_CASE("radius cap filters far neighbors") {
  MatX rows(3, 1);
  rows << 0.0, 0.1, 5.0;
  auto batch = batch_from_rows(rows);
  auto index = build_neighbor_index(batch, 1, 0.2);
  REQUIRE(index.neighbor_ids[0] == std::vector<long>{1});
  REQUIRE(index.neighbor_ids[1] == std::vector<long>{0});
  REQUIRE(index.neighbor_ids[2].empty());  // 5 - 0.1 > epsilon
}

TEST_CASE("ties break by ascending index") {
  MatX rows = MatX::Constant(4, 2, 3.5);
  auto batch = batch_from_rows(rows);
  auto index = build_neighbor_index(batch, 2);
  REQUIRE(index.neighbor_ids[0] == std::vector<long>{1, 2});
  REQUIRE(index.neighbor_ids[1] == std::vector<long>{0, 2});
  REQUIRE(index.neighbor_ids[2] == std::vector<long>{0, 1});
  REQUIRE(index.neighbor_ids[3] == std::vector<long>{0, 1});
}

TEST_CASE("neighbor lists are sorted by distance and respect epsilon") {
  Rng rng(3);
  MatX rows(20, 6);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 6; ++j) rows(i, j) = rng.normal();
  auto batch = batch_from_rows(rows);
  const double eps = 2.5;
  auto index = build_neighbor_index(batch, 5, eps);
  for (long c = 0; c < 20; ++c) {
    double prev = -1.0;
    for (long j : index.neighbor_ids[c]) {
      REQUIRE(j != c);
      const double d = (rows.row(c) - rows.row(j)).norm();
      REQUIRE(d <= eps);
      REQUIRE(d >= prev);
      prev = d;
    }
    REQUIRE(index.neighbor_ids[c].size() <= 5);
  }
}

TEST_CASE("single-window batches get empty neighbor lists") {
  auto batch = batch_from_rows(MatX::Ones(1, 4));
  auto index = build_neighbor_index(batch, 3);
  REQUIRE(index.neighbor_ids[0].empty());
}

TEST_CASE("interpolation endpoints and midpoint") {
  Eigen::RowVectorXd a(2), b(2);
  a << 0, 2;
  b << 2, 4;
  REQUIRE((interpolate(a, b, 1.0) - a).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((interpolate(a, b, 0.0) - b).cwiseAbs().maxCoeff() == 0.0);
  Eigen::RowVectorXd mid(2);
  mid << 1, 3;
  REQUIRE((interpolate(a, b, 0.5) - mid).cwiseAbs().maxCoeff() == 0.0);
  Eigen::RowVectorXd wrong(3);
  REQUIRE_THROWS_AS(interpolate(a, wrong, 0.5), UsageError);
}

TEST_CASE("pair generation falls back to the anchor and is deterministic") {
  auto lone = batch_from_rows(MatX::Random(1, 4));
  auto index1 = build_neighbor_index(lone, 2);
  auto pairs1 = make_pairs(lone, index1, AlphaMode::uniform(), 99);
  REQUIRE((pairs1.views - pairs1.anchors).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(17);
  MatX rows(12, 5);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 5; ++j) rows(i, j) = rng.normal();
  auto batch = batch_from_rows(rows);
  auto index = build_neighbor_index(batch, 4);

  auto fixed1 = make_pairs(batch, index, AlphaMode::fixed(1.0), 5);
  REQUIRE((fixed1.views - fixed1.anchors).cwiseAbs().maxCoeff() == 0.0);

  auto a = make_pairs(batch, index, AlphaMode::uniform(), 123);
  auto b = make_pairs(batch, index, AlphaMode::uniform(), 123);
  REQUIRE((a.views - b.views).cwiseAbs().maxCoeff() == 0.0);
  auto c = make_pairs(batch, index, AlphaMode::uniform(), 124);
  REQUIRE((a.views - c.views).cwiseAbs().maxCoeff() > 0.0);

  REQUIRE(a.homology.isIdentity(0.0));
}

TEST_CASE("views lie on the anchor-neighbor segment") {
  Rng rng(31);
  MatX rows(15, 7);
  for (int i = 0; i < 15; ++i)
    for (int j = 0; j < 7; ++j) rows(i, j) = rng.uniform(-2.0, 2.0);
  auto batch = batch_from_rows(rows);
  auto index = build_neighbor_index(batch, 3);
  auto pairs = make_pairs(batch, index, AlphaMode::uniform(), 7);

  for (long cidx = 0; cidx < 15; ++cidx) {
    const auto anchor = rows.row(cidx);
    const auto view = pairs.views.row(cidx);
    // Distance from the view to the nearest point of any catalogued segment.
    double best = std::numeric_limits<double>::infinity();
    auto candidates = index.neighbor_ids[cidx];
    candidates.push_back(cidx);  // self-fallback segment degenerates to a point
    for (long j : candidates) {
      const Eigen::RowVectorXd seg = rows.row(j) - anchor;
      const double len2 = seg.squaredNorm();
      double tproj = 0.0;
      if (len2 > 0) tproj = std::clamp((view - anchor).dot(seg) / len2, 0.0, 1.0);
      best = std::min(best, (view - (anchor + tproj * seg)).norm());
    }
    REQUIRE(best < 1e-9);
    // Convexity: view stays inside the elementwise envelope.
    const auto neighbor = rows.row(pairs.neighbor_of[cidx]);
    for (int d = 0; d < 7; ++d) {
      REQUIRE(view(d) >= std::min(anchor(d), neighbor(d)) - 1e-12);
      REQUIRE(view(d) <= std::max(anchor(d), neighbor(d)) + 1e-12);
    }
  }
}
