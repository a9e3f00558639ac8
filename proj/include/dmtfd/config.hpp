#pragma once

// Flat key = value run configuration. One scalar per line, UTF-8, '#' starts
// a comment. Unknown keys are rejected with a nearest-key suggestion; all
// validation failures are reported together. Defaults follow the published
// hyperparameter profile for the water-treatment benchmark where one exists.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dmtfd/errors.hpp"

namespace dmtfd {

struct RunConfig {
  std::string name = "default";
  int window_size = 60;
  int stride = 10;
  int batch_size = 128;
  int k = 10;
  // "uniform" draws the interpolation coefficient per pair; a number fixes it.
  std::string interp_alpha = "uniform";
  double prior_alpha = 0.1;
  // Latent-side kernel bandwidth: a number anchors the embedding scale;
  // "median" re-adapts it to each batch (the soft-label side always adapts).
  std::string sigma = "1.0";
  double beta = 2.0;
  double lr = 0.01;
  int epochs = 200;
  int n_blocks = 1;
  long seed = 15;
  double train_split = 0.6;
  double val_split = 0.2;
  double loss_weight_manifold_po = 1.0;
  double loss_weight_manifold_ne = 5.0;
  std::string flow_input = "head";  // or "gnn"
  std::string label_column = "label";
  double nu = 0.01;  // accepted and recorded; no mechanism is attached to it
  // implementation knobs
  int hidden_size = 32;
  int latent_size = 16;
  std::string precision = "float32";  // "float64" for verification-grade runs
  std::string epsilon = "none";       // optional neighbor radius cap

  bool interp_alpha_is_uniform() const { return interp_alpha == "uniform"; }
  double interp_alpha_value() const { return std::stod(interp_alpha); }
  bool sigma_is_median() const { return sigma == "median"; }
  double sigma_value() const { return std::stod(sigma); }
  std::optional<double> epsilon_value() const {
    if (epsilon == "none") return std::nullopt;
    return std::stod(epsilon);
  }
};

namespace detail {

inline int levenshtein(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "name",        "window_size", "stride",      "batch_size",
      "k",           "interp_alpha", "prior_alpha", "sigma",
      "beta",        "lr",          "epochs",      "n_blocks",
      "seed",        "train_split", "val_split",   "loss_weight_manifold_po",
      "loss_weight_manifold_ne",    "flow_input",  "label_column",
      "nu",          "hidden_size", "latent_size", "precision",
      "epsilon"};
  return keys;
}

inline bool parse_number(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (...) {
    return false;
  }
}

}  // namespace detail

// Applies one key/value onto the config; appends a message on failure.
inline void apply_config_entry(RunConfig& cfg, const std::string& key,
                               const std::string& value,
                               std::vector<std::string>& errors) {
  auto want_number = [&](double& slot, auto pred, const std::string& what) {
    double v;
    if (!detail::parse_number(value, v) || !pred(v)) {
      errors.push_back(key + " = " + value + ": " + what);
    } else {
      slot = v;
    }
  };
  auto want_int = [&](int& slot, auto pred, const std::string& what) {
    double v;
    if (!detail::parse_number(value, v) || v != std::floor(v) || !pred(static_cast<int>(v))) {
      errors.push_back(key + " = " + value + ": " + what);
    } else {
      slot = static_cast<int>(v);
    }
  };

  if (key == "name") {
    cfg.name = value;
  } else if (key == "window_size") {
    want_int(cfg.window_size, [](int v) { return v >= 1; }, "expected an integer >= 1");
  } else if (key == "stride") {
    want_int(cfg.stride, [](int v) { return v >= 1; }, "expected an integer >= 1");
  } else if (key == "batch_size") {
    want_int(cfg.batch_size, [](int v) { return v >= 2; },
             "expected an integer >= 2 (pairs need company)");
  } else if (key == "k") {
    want_int(cfg.k, [](int v) { return v >= 1; }, "expected an integer >= 1");
  } else if (key == "interp_alpha") {
    double v;
    if (value == "uniform" || (detail::parse_number(value, v) && v >= 0.0 && v <= 1.0)) {
      cfg.interp_alpha = value;
    } else {
      errors.push_back("interp_alpha = " + value + ": expected 'uniform' or a real in [0,1]");
    }
  } else if (key == "prior_alpha") {
    want_number(cfg.prior_alpha, [](double v) { return v >= 0.0; }, "expected a real >= 0");
  } else if (key == "sigma") {
    double v;
    if (value == "median" || (detail::parse_number(value, v) && v > 0.0)) {
      cfg.sigma = value;
    } else {
      errors.push_back("sigma = " + value + ": expected 'median' or a real > 0");
    }
  } else if (key == "beta") {
    want_number(cfg.beta, [](double v) { return v > 0.0 && v <= 2.0; },
                "expected a real in (0,2]");
  } else if (key == "lr") {
    want_number(cfg.lr, [](double v) { return v > 0.0; }, "expected a real > 0");
  } else if (key == "epochs") {
    want_int(cfg.epochs, [](int v) { return v >= 1; }, "expected an integer >= 1");
  } else if (key == "n_blocks") {
    want_int(cfg.n_blocks, [](int v) { return v >= 1; }, "expected an integer >= 1");
  } else if (key == "seed") {
    double v;
    if (!detail::parse_number(value, v) || v != std::floor(v) || v < 0) {
      errors.push_back("seed = " + value + ": expected a non-negative integer");
    } else {
      cfg.seed = static_cast<long>(v);
    }
  } else if (key == "train_split") {
    want_number(cfg.train_split, [](double v) { return v > 0.0 && v < 1.0; },
                "expected a real in (0,1)");
  } else if (key == "val_split") {
    want_number(cfg.val_split, [](double v) { return v >= 0.0 && v < 1.0; },
                "expected a real in [0,1)");
  } else if (key == "loss_weight_manifold_po") {
    want_number(cfg.loss_weight_manifold_po, [](double v) { return v >= 0.0; },
                "expected a real >= 0");
  } else if (key == "loss_weight_manifold_ne") {
    want_number(cfg.loss_weight_manifold_ne, [](double v) { return v >= 0.0; },
                "expected a real >= 0");
  } else if (key == "flow_input") {
    if (value == "head" || value == "gnn") {
      cfg.flow_input = value;
    } else {
      errors.push_back("flow_input = " + value + ": expected 'head' or 'gnn'");
    }
  } else if (key == "label_column") {
    cfg.label_column = value;
  } else if (key == "nu") {
    want_number(cfg.nu, [](double) { return true; }, "expected a real");
  } else if (key == "hidden_size") {
    want_int(cfg.hidden_size, [](int v) { return v >= 1; }, "expected an integer >= 1");
  } else if (key == "latent_size") {
    want_int(cfg.latent_size, [](int v) { return v >= 1; }, "expected an integer >= 1");
  } else if (key == "precision") {
    if (value == "float32" || value == "float64") {
      cfg.precision = value;
    } else {
      errors.push_back("precision = " + value + ": expected 'float32' or 'float64'");
    }
  } else if (key == "epsilon") {
    double v;
    if (value == "none" || (detail::parse_number(value, v) && v > 0.0)) {
      cfg.epsilon = value;
    } else {
      errors.push_back("epsilon = " + value + ": expected 'none' or a real > 0");
    }
  } else {
    int best = 1 << 20;
    std::string suggestion;
    for (const auto& k2 : detail::config_keys()) {
      const int d = detail::levenshtein(key, k2);
      if (d < best) {
        best = d;
        suggestion = k2;
      }
    }
    std::string msg = "unknown key '" + key + "'";
    if (best <= 3) msg += " (did you mean '" + suggestion + "'?)";
    errors.push_back(msg);
  }
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::vector<std::string> errors;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    apply_config_entry(cfg, key, value, errors);
  }
  // cross-field constraint
  if (cfg.train_split + cfg.val_split >= 1.0)
    errors.push_back("train_split + val_split must be < 1");
  if (!errors.empty()) {
    std::string joined = "configuration errors:";
    for (const auto& e : errors) joined += "\n  - " + e;
    throw UsageError(joined);
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Canonical serialization; parse(serialize(cfg)) == cfg.
inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "name = " << c.name << "\n";
  out << "window_size = " << c.window_size << "\n";
  out << "stride = " << c.stride << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "k = " << c.k << "\n";
  out << "interp_alpha = " << c.interp_alpha << "\n";
  out << "prior_alpha = " << num(c.prior_alpha) << "\n";
  out << "sigma = " << c.sigma << "\n";
  out << "beta = " << num(c.beta) << "\n";
  out << "lr = " << num(c.lr) << "\n";
  out << "epochs = " << c.epochs << "\n";
  out << "n_blocks = " << c.n_blocks << "\n";
  out << "seed = " << c.seed << "\n";
  out << "train_split = " << num(c.train_split) << "\n";
  out << "val_split = " << num(c.val_split) << "\n";
  out << "loss_weight_manifold_po = " << num(c.loss_weight_manifold_po) << "\n";
  out << "loss_weight_manifold_ne = " << num(c.loss_weight_manifold_ne) << "\n";
  out << "flow_input = " << c.flow_input << "\n";
  out << "label_column = " << c.label_column << "\n";
  out << "nu = " << num(c.nu) << "\n";
  out << "hidden_size = " << c.hidden_size << "\n";
  out << "latent_size = " << c.latent_size << "\n";
  out << "precision = " << c.precision << "\n";
  out << "epsilon = " << c.epsilon << "\n";
  return out.str();
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["name"] = c.name;
  j["window_size"] = c.window_size;
  j["stride"] = c.stride;
  j["batch_size"] = c.batch_size;
  j["k"] = c.k;
  j["interp_alpha"] = c.interp_alpha;
  j["prior_alpha"] = c.prior_alpha;
  j["sigma"] = c.sigma;
  j["beta"] = c.beta;
  j["lr"] = c.lr;
  j["epochs"] = c.epochs;
  j["n_blocks"] = c.n_blocks;
  j["seed"] = c.seed;
  j["train_split"] = c.train_split;
  j["val_split"] = c.val_split;
  j["loss_weight_manifold_po"] = c.loss_weight_manifold_po;
  j["loss_weight_manifold_ne"] = c.loss_weight_manifold_ne;
  j["flow_input"] = c.flow_input;
  j["label_column"] = c.label_column;
  j["nu"] = c.nu;
  j["hidden_size"] = c.hidden_size;
  j["latent_size"] = c.latent_size;
  j["precision"] = c.precision;
  j["epsilon"] = c.epsilon;
  return j;
}

}  // namespace dmtfd
