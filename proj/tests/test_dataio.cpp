#include <catch2/catch_amalgamated.hpp>

#include <dmtfd/dataio.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace dmtfd;

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("load_csv reads a small file back verbatim") {
  auto path = temp_file("dmtfd_small.csv");
  write_text(path,
             "timestamp,a,b,label\n"
             "0,1.5,2.5,0\n"
             "1,2.0,3.0,0\n"
             "2,9.0,9.5,1\n"
             "3,1.0,2.0,0\n");
  auto ds = load_csv(path, "label");
  REQUIRE(ds.entities() == 2);
  REQUIRE(ds.timestamps() == 4);
  REQUIRE(ds.dropped_rows == 0);
  REQUIRE(ds.values(0, 0) == 1.5);
  REQUIRE(ds.values(1, 2) == 9.5);
  std::vector<std::uint8_t> expect{0, 0, 1, 0};
  REQUIRE(ds.labels == expect);
}

TEST_CASE("rows with non-numeric sensor cells are dropped") {
  auto path = temp_file("dmtfd_nan.csv");
  write_text(path,
             "a,b,label\n"
             "1.0,2.0,0\n"
             "NaN,3.0,0\n"
             "4.0,5.0,1\n");
  auto ds = load_csv(path, "label");
  REQUIRE(ds.timestamps() == 2);
  REQUIRE(ds.dropped_rows == 1);
}

TEST_CASE("load errors: missing label column, empty file, majority drop") {
  auto path = temp_file("dmtfd_bad.csv");
  write_text(path, "a,b,c\n1,2,3\n");
  REQUIRE_THROWS_AS(load_csv(path, "label"), UsageError);

  write_text(path, "");
  REQUIRE_THROWS_AS(load_csv(path, "label"), UsageError);

  write_text(path,
             "a,label\n"
             "x,0\n"
             "y,0\n"
             "1.0,0\n");
  REQUIRE_THROWS_AS(load_csv(path, "label"), DataError);
}

TEST_CASE("a 51-sensor header yields 51 entities") {
  auto path = temp_file("dmtfd_wide.csv");
  std::string header = "timestamp";
  for (int i = 0; i < 51; ++i) header += ",s" + std::to_string(i);
  header += ",label\n";
  std::string row0 = "0", row1 = "1";
  for (int i = 0; i < 51; ++i) {
    row0 += ",1.0";
    row1 += ",2.0";
  }
  write_text(path, header + row0 + ",0\n" + row1 + ",1\n");
  auto ds = load_csv(path, "label");
  REQUIRE(ds.entities() == 51);
  REQUIRE(ds.timestamps() == 2);
}

TEST_CASE("zscore maps constant rows to zeros") {
  TimeSeriesDataset ds;
  ds.values.resize(1, 3);
  ds.values << 5, 5, 5;
  ds.labels = {0, 0, 0};
  auto out = zscore_normalize(ds);
  REQUIRE(out.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zscore matches the direct formula") {
  TimeSeriesDataset ds;
  ds.values.resize(1, 3);
  ds.values << 0, 1, 2;
  ds.labels = {0, 0, 0};
  auto out = zscore_normalize(ds);
  // Independent evaluation: mean 1, population std sqrt(2/3).
  const double s = std::sqrt(2.0 / 3.0);
  REQUIRE(out.values(0, 0) == Catch::Approx((0 - 1.0) / s).margin(1e-5));
  REQUIRE(out.values(0, 0) == Catch::Approx(-1.224745).margin(1e-5));
  REQUIRE(out.values(0, 1) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(out.values(0, 2) == Catch::Approx(1.224745).margin(1e-5));
}

TEST_CASE("zscore is idempotent") {
  Rng rng(5);
  TimeSeriesDataset ds;
  ds.values.resize(3, 50);
  for (int k = 0; k < 3; ++k)
    for (int t = 0; t < 50; ++t) ds.values(k, t) = rng.uniform(-4.0, 9.0);
  ds.labels.assign(50, 0);
  auto once = zscore_normalize(ds);
  auto twice = zscore_normalize(once);
  REQUIRE((once.values - twice.values).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sliding windows follow the counting rule") {
  TimeSeriesDataset ds;
  ds.values = MatX::Zero(2, 100);
  ds.labels.assign(100, 0);

  auto batch = slide_windows(ds, 60, 10);
  REQUIRE(batch.count() == 5);
  std::vector<long> expect{0, 10, 20, 30, 40};
  REQUIRE(batch.starts == expect);

  auto one = slide_windows(ds, 100, 10);
  REQUIRE(one.count() == 1);

  auto empty = slide_windows(ds, 101, 10);
  REQUIRE(empty.count() == 0);
}

TEST_CASE("window labels follow the any-anomalous rule") {
  TimeSeriesDataset ds;
  ds.values = MatX::Zero(1, 100);
  ds.labels.assign(100, 0);
  ds.labels[65] = 1;
  auto batch = slide_windows(ds, 60, 10);
  // Brute-force enumeration of which [start, start+60) ranges cover 65.
  std::vector<std::uint8_t> expect;
  for (long s = 0; s + 60 <= 100; s += 10) {
    std::uint8_t any = 0;
    for (long t = s; t < s + 60; ++t) any |= ds.labels[t];
    expect.push_back(any);
  }
  REQUIRE(batch.labels == expect);
  REQUIRE(batch.labels == std::vector<std::uint8_t>{0, 1, 1, 1, 1});
}

TEST_CASE("window content matches the source slice") {
  Rng rng(9);
  TimeSeriesDataset ds;
  ds.values.resize(3, 40);
  for (int k = 0; k < 3; ++k)
    for (int t = 0; t < 40; ++t) ds.values(k, t) = rng.normal();
  ds.labels.assign(40, 0);
  auto batch = slide_windows(ds, 8, 4);
  for (long c = 0; c < batch.count(); ++c) {
    for (int k = 0; k < 3; ++k) {
      for (int t = 0; t < 8; ++t) {
        REQUIRE(batch.windows(c, k * 8 + t) == ds.values(k, c * 4 + t));
      }
    }
  }
}

TEST_CASE("chronological split lengths") {
  TimeSeriesDataset ds;
  ds.values = MatX::Zero(1, 10);
  ds.labels.assign(10, 0);

  auto s1 = split(ds, {0.6, 0.2});
  REQUIRE(s1.train.timestamps() == 6);
  REQUIRE(s1.validation.timestamps() == 2);
  REQUIRE(s1.test.timestamps() == 2);

  auto s2 = split(ds, {0.6, 0.0});
  REQUIRE(s2.train.timestamps() == 6);
  REQUIRE(s2.validation.timestamps() == 0);
  REQUIRE(s2.test.timestamps() == 4);

  TimeSeriesDataset ds7;
  ds7.values = MatX::Zero(1, 7);
  ds7.labels.assign(7, 0);
  auto s3 = split(ds7, {0.6, 0.2});
  REQUIRE(s3.train.timestamps() == 4);   // floor(4.2)
  REQUIRE(s3.validation.timestamps() == 1);  // floor(1.4)
  REQUIRE(s3.test.timestamps() == 2);    // remainder
}

TEST_CASE("split pieces are contiguous, ordered, and cover the series") {
  Rng rng(21);
  TimeSeriesDataset ds;
  const long l = 137;
  ds.values.resize(2, l);
  for (int k = 0; k < 2; ++k)
    for (long t = 0; t < l; ++t) ds.values(k, t) = rng.normal();
  ds.labels.assign(l, 0);
  for (long t = 0; t < l; ++t) ds.labels[t] = (rng.u01() < 0.3) ? 1 : 0;

  auto parts = split(ds, {0.55, 0.17});
  REQUIRE(parts.train.timestamps() + parts.validation.timestamps() +
              parts.test.timestamps() ==
          l);
  REQUIRE(parts.train.origin_offset == 0);
  REQUIRE(parts.validation.origin_offset == parts.train.timestamps());
  REQUIRE(parts.test.origin_offset ==
          parts.train.timestamps() + parts.validation.timestamps());
  // Concatenating the parts reproduces the original values and labels.
  MatX glued(2, l);
  glued << parts.train.values, parts.validation.values, parts.test.values;
  REQUIRE((glued - ds.values).cwiseAbs().maxCoeff() == 0.0);

  REQUIRE_THROWS_AS(split(ds, SplitSpec{0.8, 0.3}), UsageError);
}

TEST_CASE("synthetic generator is deterministic") {
  auto a = synth_multimanifold(3, 4, 2000, 0.05, 42);
  auto b = synth_multimanifold(3, 4, 2000, 0.05, 42);
  REQUIRE((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.labels == b.labels);
  auto c = synth_multimanifold(3, 4, 2000, 0.05, 43);
  REQUIRE((a.values - c.values).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("synthetic anomaly rate lands near the target") {
  auto ds = synth_multimanifold(3, 4, 10000, 0.05, 7);
  double mean = 0.0;
  for (auto v : ds.labels) mean += v;
  mean /= static_cast<double>(ds.labels.size());
  REQUIRE(mean >= 0.03);
  REQUIRE(mean <= 0.07);
}

TEST_CASE("synthetic regimes are well separated") {
  const int modes = 3, k = 6;
  auto ds = synth_multimanifold(modes, k, 12000, 0.04, 11);
  // Decode the regime of each normal timestamp from the cross-entity mean:
  // regime centers sit near 0, 8, 16, so rounding to the nearest multiple
  // of 8 recovers the layout.
  std::vector<std::vector<long>> members(modes);
  for (long t = 0; t < ds.timestamps(); ++t) {
    if (ds.labels[t]) continue;
    const double m = ds.values.col(t).mean();
    int r = static_cast<int>(std::lround(m / 8.0));
    if (r < 0 || r >= modes) continue;
    members[r].push_back(t);
  }
  for (int r = 0; r < modes; ++r) REQUIRE(members[r].size() > 500);

  MatX mu(modes, k), sd(modes, k);
  for (int r = 0; r < modes; ++r) {
    for (int e = 0; e < k; ++e) {
      double s = 0.0, s2 = 0.0;
      for (long t : members[r]) s += ds.values(e, t);
      const double m = s / members[r].size();
      for (long t : members[r]) {
        const double d = ds.values(e, t) - m;
        s2 += d * d;
      }
      mu(r, e) = m;
      sd(r, e) = std::sqrt(s2 / members[r].size());
    }
  }
  for (int r = 0; r < modes; ++r) {
    for (int s = r + 1; s < modes; ++s) {
      for (int e = 0; e < k; ++e) {
        const double sep = std::abs(mu(r, e) - mu(s, e));
        REQUIRE(sep >= 3.0 * std::max(sd(r, e), sd(s, e)));
      }
    }
  }
}

TEST_CASE("csv round trip preserves values bit-exactly") {
  SynthInfo info;
  auto ds = synth_multimanifold(2, 3, 500, 0.1, 3, &info);
  auto path = temp_file("dmtfd_roundtrip.csv");
  write_csv(ds, path);
  auto back = load_csv(path, "label");
  REQUIRE(back.entities() == ds.entities());
  REQUIRE(back.timestamps() == ds.timestamps());
  REQUIRE((back.values - ds.values).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(back.labels == ds.labels);
  // Sidecar intervals exactly cover the label-1 timestamps.
  std::vector<std::uint8_t> covered(ds.timestamps(), 0);
  for (const auto& iv : info.intervals)
    for (long t = iv.start; t < iv.end; ++t) covered[t] = 1;
  REQUIRE(covered == ds.labels);
}
