#include <catch2/catch_amalgamated.hpp>

#include <dmtfd/metrics.hpp>
#include <dmtfd/rng.hpp>

using namespace dmtfd;

namespace {

// Pairwise counting oracle: every (positive, negative) pair, ties worth 1/2.
double brute_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double won = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      ++pairs;
      if (s[i] > s[j]) won += 1.0;
      if (s[i] == s[j]) won += 0.5;
    }
  }
  return won / pairs;
}

// Full-rescan sweep oracle for average precision.
double brute_auprc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  std::vector<double> thresholds = s;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  long n_pos = 0;
  for (auto l : y) n_pos += l;
  double ap = 0.0, prev_recall = 0.0;
  for (double th : thresholds) {
    long tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= th) (y[i] ? tp : fp)++;
    }
    const double recall = double(tp) / n_pos;
    const double precision = double(tp) / (tp + fp);
    ap += precision * (recall - prev_recall);
    prev_recall = recall;
  }
  return ap;
}

struct Instance {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

Instance random_instance(Rng& rng, bool force_ties) {
  Instance inst;
  const int n = 2 + static_cast<int>(rng.bounded(199));
  inst.scores.resize(n);
  inst.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    inst.scores[i] = force_ties ? std::floor(rng.uniform(0.0, 6.0)) / 4.0
                                : rng.normal();
    inst.labels[i] = rng.u01() < 0.3 ? 1 : 0;
  }
  // guarantee both classes
  inst.labels[0] = 1;
  inst.labels[n - 1] = 0;
  return inst;
}

}  // namespace

TEST_CASE("auroc worked examples") {
  REQUIRE(auroc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  REQUIRE(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == Catch::Approx(0.75).margin(1e-15));
  REQUIRE(auroc({0.5, 0.5}, {1, 0}) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE_THROWS_AS(auroc({0.5, 0.6}, {1, 1}), DataError);
}

TEST_CASE("auprc worked examples") {
  REQUIRE(auprc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  // All scores equal: a single group at prevalence precision.
  REQUIRE(auprc({0.3, 0.3, 0.3, 0.3}, {1, 0, 0, 0}) == Catch::Approx(0.25).margin(1e-15));
  REQUIRE_THROWS_AS(auprc({0.5, 0.6}, {0, 0}), DataError);
}

TEST_CASE("metrics match brute-force oracles on random instances") {
  Rng rng(12345);
  for (int rep = 0; rep < 300; ++rep) {
    auto inst = random_instance(rng, rep % 2 == 0);
    REQUIRE(auroc(inst.scores, inst.labels) ==
            Catch::Approx(brute_auroc(inst.scores, inst.labels)).margin(1e-9));
    REQUIRE(auprc(inst.scores, inst.labels) ==
            Catch::Approx(brute_auprc(inst.scores, inst.labels)).margin(1e-9));
  }
}

TEST_CASE("curve endpoints and areas reproduce the scalar metrics") {
  Rng rng(777);
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = random_instance(rng, rep % 2 == 0);
    auto report = evaluate(inst.scores, inst.labels);
    REQUIRE(report.roc_points.front().fpr == 0.0);
    REQUIRE(report.roc_points.front().tpr == 0.0);
    REQUIRE(report.roc_points.back().fpr == 1.0);
    REQUIRE(report.roc_points.back().tpr == 1.0);
    REQUIRE(report.pr_points.front().recall == 0.0);
    REQUIRE(report.pr_points.back().recall == 1.0);
    REQUIRE(roc_area(report.roc_points) == Catch::Approx(report.auroc).margin(1e-9));
    REQUIRE(pr_area(report.pr_points) == Catch::Approx(report.auprc).margin(1e-9));
  }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
  Rng rng(31);
  auto inst = random_instance(rng, true);
  const double base = auroc(inst.scores, inst.labels);
  auto transformed = inst.scores;
  for (auto& s : transformed) s = std::exp(2.0 * s) + 1.0;
  REQUIRE(auroc(transformed, inst.labels) == Catch::Approx(base).margin(1e-12));
  for (auto& s : transformed) s = std::atan(s - 2.0);
  REQUIRE(auroc(transformed, inst.labels) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("threshold detection follows the interpolated quantile rule") {
  std::vector<double> train(100);
  for (int i = 0; i < 100; ++i) train[i] = i;  // 0..99
  // Linear-interpolation percentile: position 0.95 * 99 = 94.05.
  REQUIRE(score_quantile(train, 0.95) == Catch::Approx(94.05).margin(1e-12));

  auto pred = threshold_detect({93.0, 94.05, 95.0}, train, 0.95);
  REQUIRE(pred == std::vector<std::uint8_t>{0, 0, 1});

  // All test scores below the max training score, quantile just under 1.
  auto none = threshold_detect({10.0, 50.0, 98.9}, train, 0.9999);
  REQUIRE(none == std::vector<std::uint8_t>{0, 0, 0});

  REQUIRE_THROWS_AS(threshold_detect({1.0}, {}, 0.9), UsageError);
  REQUIRE_THROWS_AS(threshold_detect({1.0}, train, 1.0), UsageError);
}

TEST_CASE("raising the quantile never adds predicted anomalies") {
  Rng rng(91);
  std::vector<double> train(57), test(40);
  for (auto& v : train) v = rng.normal();
  for (auto& v : test) v = rng.normal();
  long prev = test.size() + 1;
  for (double q : {0.05, 0.25, 0.5, 0.75, 0.9, 0.99}) {
    auto pred = threshold_detect(test, train, q);
    long flagged = 0;
    for (auto p : pred) flagged += p;
    REQUIRE(flagged <= prev);
    prev = flagged;
  }
}
