#pragma once

// Dataset loading, normalization, windowing, chronological splitting, and a
// deterministic multi-regime synthetic generator for desk-scale experiments.
//
// CSV contract: header row; an optional leading "timestamp" column (ignored
// for modeling); one label column (configurable name, values 0/1); every
// other column is a sensor. Rows with unparsable or non-finite cells are
// dropped and counted.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dmtfd/errors.hpp"
#include "dmtfd/rng.hpp"
#include "dmtfd/tensor.hpp"

namespace dmtfd {

struct TimeSeriesDataset {
  MatX values;  // K entities x L timestamps
  std::vector<std::uint8_t> labels;
  std::vector<std::string> entity_names;
  std::string source_name;
  long dropped_rows = 0;
  // Index of the first timestamp within the originating series; lets window
  // starts stay absolute after a chronological split.
  long origin_offset = 0;

  int entities() const { return static_cast<int>(values.rows()); }
  long timestamps() const { return static_cast<long>(values.cols()); }
};

struct WindowBatch {
  // Row c is window c flattened entity-major: element (k, t) sits at k*T + t.
  MatX windows;  // N x (K*T)
  std::vector<std::uint8_t> labels;
  std::vector<long> starts;
  int window_size = 0;
  int stride = 0;
  int entity_count = 0;

  long count() const { return static_cast<long>(windows.rows()); }
};

struct SplitSpec {
  double train_fraction = 0.6;
  double validation_fraction = 0.2;  // chronological mode only

  void validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw UsageError("train_fraction must lie in (0,1)");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw UsageError("validation_fraction must lie in [0,1)");
    if (!(train_fraction + validation_fraction < 1.0))
      throw UsageError("train_fraction + validation_fraction must be < 1");
  }
};

// ---------------------------------------------------------------------------
// CSV load / store
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline bool parse_real(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
  if (b == e) return false;
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

}  // namespace detail

inline TimeSeriesDataset load_csv(const std::string& path,
                                  const std::string& label_column = "label") {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open dataset file: " + path);

  std::string header;
  if (!std::getline(in, header)) throw UsageError("empty dataset file: " + path);
  auto columns = detail::split_csv_line(header);

  int label_idx = -1;
  int timestamp_idx = -1;
  std::vector<int> sensor_idx;
  std::vector<std::string> sensor_names;
  for (int i = 0; i < static_cast<int>(columns.size()); ++i) {
    if (columns[i] == label_column) {
      label_idx = i;
    } else if (i == 0 && columns[i] == "timestamp") {
      timestamp_idx = i;
    } else {
      sensor_idx.push_back(i);
      sensor_names.push_back(columns[i]);
    }
  }
  (void)timestamp_idx;
  if (label_idx < 0)
    throw UsageError("label column '" + label_column + "' not found in " + path);
  if (sensor_idx.empty()) throw UsageError("no sensor columns in " + path);

  std::vector<std::vector<double>> rows;
  std::vector<std::uint8_t> labels;
  long dropped = 0;
  long total = 0;
  std::string line;
  std::vector<double> row(sensor_idx.size());
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++total;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != columns.size()) {
      ++dropped;
      continue;
    }
    bool ok = true;
    for (std::size_t k = 0; k < sensor_idx.size(); ++k) {
      double v;
      if (!detail::parse_real(cells[sensor_idx[k]], v) || !std::isfinite(v)) {
        ok = false;
        break;
      }
      row[k] = v;
    }
    double lv;
    if (ok && (!detail::parse_real(cells[label_idx], lv) || !std::isfinite(lv)))
      ok = false;
    if (!ok) {
      ++dropped;
      continue;
    }
    rows.push_back(row);
    labels.push_back(lv != 0.0 ? 1 : 0);
  }
  if (total == 0) throw UsageError("dataset has a header but no rows: " + path);
  if (rows.empty() || dropped * 2 > total)
    throw DataError("more than half of the rows were unparsable in " + path);

  TimeSeriesDataset ds;
  const int k = static_cast<int>(sensor_idx.size());
  const long l = static_cast<long>(rows.size());
  ds.values.resize(k, l);
  for (long t = 0; t < l; ++t)
    for (int e = 0; e < k; ++e) ds.values(e, t) = rows[t][e];
  ds.labels = std::move(labels);
  ds.entity_names = std::move(sensor_names);
  ds.source_name = path;
  ds.dropped_rows = dropped;
  if (dropped > 0)
    std::cerr << "[dataio] dropped " << dropped << " unparsable rows from " << path
              << "\n";
  return ds;
}

inline void write_csv(const TimeSeriesDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write dataset file: " + path);
  out << "timestamp";
  for (const auto& n : ds.entity_names) out << ',' << n;
  out << ",label\n";
  char buf[64];
  for (long t = 0; t < ds.timestamps(); ++t) {
    out << (ds.origin_offset + t);
    for (int k = 0; k < ds.entities(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.values(k, t));
      out << ',' << buf;
    }
    out << ',' << int(ds.labels[t]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// z-score normalization (population std; constant rows map to zeros)
// ---------------------------------------------------------------------------

struct ZscoreStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
};

inline ZscoreStats compute_zscore_stats(const TimeSeriesDataset& ds) {
  if (ds.timestamps() < 1) throw DataError("cannot normalize an empty dataset");
  ZscoreStats s;
  s.mean = ds.values.rowwise().mean();
  s.std.resize(ds.entities());
  const double inv_l = 1.0 / static_cast<double>(ds.timestamps());
  for (int k = 0; k < ds.entities(); ++k) {
    const double m = s.mean(k);
    double acc = 0.0;
    for (long t = 0; t < ds.timestamps(); ++t) {
      const double d = ds.values(k, t) - m;
      acc += d * d;
    }
    s.std(k) = std::sqrt(acc * inv_l);
  }
  return s;
}

inline TimeSeriesDataset apply_zscore(const TimeSeriesDataset& ds,
                                      const ZscoreStats& stats) {
  TimeSeriesDataset out = ds;
  for (int k = 0; k < ds.entities(); ++k) {
    if (stats.std(k) < 1e-8) {
      out.values.row(k).setZero();
    } else {
      out.values.row(k) =
          (ds.values.row(k).array() - stats.mean(k)) / stats.std(k);
    }
  }
  return out;
}

inline TimeSeriesDataset zscore_normalize(const TimeSeriesDataset& ds) {
  return apply_zscore(ds, compute_zscore_stats(ds));
}

// ---------------------------------------------------------------------------
// sliding windows
// ---------------------------------------------------------------------------

inline WindowBatch slide_windows(const TimeSeriesDataset& ds, int window_size,
                                 int stride) {
  if (window_size < 1) throw UsageError("window size must be >= 1");
  if (stride < 1) throw UsageError("stride must be >= 1");

  WindowBatch batch;
  batch.window_size = window_size;
  batch.stride = stride;
  batch.entity_count = ds.entities();
  const long l = ds.timestamps();
  if (window_size > l) {
    std::cerr << "[dataio] window size " << window_size << " exceeds series length "
              << l << "; producing an empty batch\n";
    batch.windows.resize(0, static_cast<long>(ds.entities()) * window_size);
    return batch;
  }
  const long n = (l - window_size) / stride + 1;
  const int k = ds.entities();
  batch.windows.resize(n, static_cast<long>(k) * window_size);
  batch.labels.resize(n);
  batch.starts.resize(n);
  for (long c = 0; c < n; ++c) {
    const long s = c * stride;
    batch.starts[c] = ds.origin_offset + s;
    std::uint8_t any = 0;
    for (long t = s; t < s + window_size; ++t) any |= ds.labels[t];
    batch.labels[c] = any;
    for (int e = 0; e < k; ++e) {
      batch.windows.block(c, static_cast<long>(e) * window_size, 1, window_size) =
          ds.values.row(e).segment(s, window_size);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// chronological split (floor for train and validation, remainder to test)
// ---------------------------------------------------------------------------

struct DatasetSplit {
  TimeSeriesDataset train;
  TimeSeriesDataset validation;
  TimeSeriesDataset test;
};

namespace detail {
inline TimeSeriesDataset slice_dataset(const TimeSeriesDataset& ds, long begin,
                                       long count) {
  TimeSeriesDataset out;
  out.values = ds.values.middleCols(begin, count);
  out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + begin + count);
  out.entity_names = ds.entity_names;
  out.source_name = ds.source_name;
  out.origin_offset = ds.origin_offset + begin;
  return out;
}
}  // namespace detail

inline DatasetSplit split(const TimeSeriesDataset& ds, const SplitSpec& spec) {
  spec.validate();
  const long l = ds.timestamps();
  const long n_train = static_cast<long>(std::floor(spec.train_fraction * l));
  const long n_val = static_cast<long>(std::floor(spec.validation_fraction * l));
  const long n_test = l - n_train - n_val;
  DatasetSplit out;
  out.train = detail::slice_dataset(ds, 0, n_train);
  out.validation = detail::slice_dataset(ds, n_train, n_val);
  out.test = detail::slice_dataset(ds, n_train + n_val, n_test);
  return out;
}

// ---------------------------------------------------------------------------
// synthetic multi-regime generator
// ---------------------------------------------------------------------------

struct AnomalyInterval {
  long start = 0;  // inclusive
  long end = 0;    // exclusive
  std::string kind;
};

struct SynthInfo {
  std::vector<AnomalyInterval> intervals;
  int n_modes = 0;
  std::uint64_t seed = 0;
};

// Normal behavior alternates among n_modes stationary regimes with distinct
// per-entity means, oscillation frequencies, and phase patterns. Anomalies
// are injected as labeled off-regime bursts: additive spikes on a random
// subset of entities, common level shifts, and decorrelated noise segments.
inline TimeSeriesDataset synth_multimanifold(int n_modes, int k, long l,
                                             double anomaly_rate,
                                             std::uint64_t seed,
                                             SynthInfo* info = nullptr) {
  if (n_modes < 2) throw UsageError("synthetic generator needs n_modes >= 2");
  if (!(anomaly_rate > 0.0 && anomaly_rate < 0.5))
    throw UsageError("anomaly_rate must lie in (0, 0.5)");
  if (k < 1 || l < 10) throw UsageError("synthetic generator needs K >= 1, L >= 10");

  Rng rng(derive_stream(seed, 0xD5A7));

  // Regime parameters: means spread 8 apart, within-regime std about 0.6.
  std::vector<std::vector<double>> mean(n_modes, std::vector<double>(k));
  std::vector<std::vector<double>> phase(n_modes, std::vector<double>(k));
  std::vector<double> freq(n_modes);
  for (int r = 0; r < n_modes; ++r) {
    for (int e = 0; e < k; ++e) {
      mean[r][e] = 8.0 * r + rng.uniform(-0.5, 0.5);
      phase[r][e] = rng.uniform(0.0, 6.283185307179586);
    }
    freq[r] = 1.0 / (16.0 + 12.0 * r);
  }
  const double amp = 0.8;
  const double noise = 0.25;

  // Regime layout: shuffled round-robin so every mode appears in each cycle.
  std::vector<int> regime_of(l);
  {
    std::vector<int> cycle(n_modes);
    for (int r = 0; r < n_modes; ++r) cycle[r] = r;
    long t = 0;
    int pos = n_modes;  // force an initial shuffle
    while (t < l) {
      if (pos == n_modes) {
        rng.shuffle(cycle);
        pos = 0;
      }
      const long seg = 400 + static_cast<long>(rng.bounded(401));
      const long end = std::min(l, t + seg);
      for (long u = t; u < end; ++u) regime_of[u] = cycle[pos];
      t = end;
      ++pos;
    }
  }

  TimeSeriesDataset ds;
  ds.values.resize(k, l);
  ds.labels.assign(l, 0);
  ds.source_name = "synthetic";
  ds.entity_names.resize(k);
  for (int e = 0; e < k; ++e) ds.entity_names[e] = "sensor_" + std::to_string(e);

  for (long t = 0; t < l; ++t) {
    const int r = regime_of[t];
    for (int e = 0; e < k; ++e) {
      ds.values(e, t) = mean[r][e] +
                        amp * std::sin(6.283185307179586 * freq[r] * t + phase[r][e]) +
                        noise * rng.normal();
    }
  }

  // Anomaly bursts, placed without overlap until the target count is hit.
  // Bursts run tens of timestamps so that windows overlapping them carry a
  // substantial off-regime span rather than a single blip.
  const long target = std::lround(anomaly_rate * static_cast<double>(l));
  std::vector<std::uint8_t> taken(l, 0);
  std::vector<AnomalyInterval> intervals;
  const char* kinds[] = {"spike", "level_shift", "decorrelation"};
  long placed = 0;
  int kind_idx = 0;
  int attempts = 0;
  while (placed < target && attempts < 200000) {
    ++attempts;
    long len = 30 + static_cast<long>(rng.bounded(51));
    len = std::min(len, target - placed);
    if (len < 1) break;
    const long start = static_cast<long>(rng.bounded(static_cast<std::uint64_t>(l - len + 1)));
    bool free = true;
    const long lo = std::max<long>(0, start - 2);
    const long hi = std::min(l, start + len + 2);
    for (long u = lo; u < hi; ++u) {
      if (taken[u]) {
        free = false;
        break;
      }
    }
    if (!free) continue;

    const char* kind = kinds[kind_idx % 3];
    ++kind_idx;
    if (kind == kinds[0]) {  // spike: random subset of entities
      std::vector<int> hit;
      for (int e = 0; e < k; ++e)
        if (rng.u01() < 0.5) hit.push_back(e);
      if (hit.empty()) hit.push_back(static_cast<int>(rng.bounded(k)));
      std::vector<double> delta(hit.size());
      for (std::size_t i = 0; i < hit.size(); ++i)
        delta[i] = (rng.u01() < 0.5 ? -1.0 : 1.0) * rng.uniform(7.0, 12.0);
      for (long u = start; u < start + len; ++u)
        for (std::size_t i = 0; i < hit.size(); ++i) ds.values(hit[i], u) += delta[i];
    } else if (kind == kinds[1]) {  // common level shift
      const double delta = (rng.u01() < 0.5 ? -1.0 : 1.0) * rng.uniform(5.0, 9.0);
      for (long u = start; u < start + len; ++u)
        for (int e = 0; e < k; ++e) ds.values(e, u) += delta;
    } else {  // decorrelation: independent wide noise around the regime mean
      for (long u = start; u < start + len; ++u) {
        const int r = regime_of[u];
        for (int e = 0; e < k; ++e)
          ds.values(e, u) = mean[r][e] + 3.5 * rng.normal();
      }
    }
    for (long u = start; u < start + len; ++u) {
      taken[u] = 1;
      ds.labels[u] = 1;
    }
    intervals.push_back({start, start + len, kind});
    placed += len;
  }
  std::sort(intervals.begin(), intervals.end(),
            [](const AnomalyInterval& a, const AnomalyInterval& b) {
              return a.start < b.start;
            });
  if (info) {
    info->intervals = std::move(intervals);
    info->n_modes = n_modes;
    info->seed = seed;
  }
  return ds;
}

}  // namespace dmtfd
