#pragma once

// Checkpoint format: <path> is a JSON manifest listing parameter names,
// shapes, dtype, and byte offsets; <path>.bin is the raw little-endian blob
// of parameter values in column-major order. Round trips are bit-exact.

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dmtfd/encoders.hpp"
#include "dmtfd/errors.hpp"
#include "dmtfd/version.hpp"

namespace dmtfd {

struct CheckpointMeta {
  int entities = 0;  // K the model was trained on
  EncoderDims dims;
  std::string dtype;
  std::string version;
  // Training-partition normalization statistics and the split/stride context
  // needed to score new data exactly the way training data was prepared.
  Eigen::VectorXd zscore_mean;
  Eigen::VectorXd zscore_std;
  double train_split = 0.6;
  double val_split = 0.2;
  int stride = 10;
};

template <class Real>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<Real, float>) {
    return "float32";
  } else {
    return "float64";
  }
}

template <class Real>
void save_checkpoint(const ModelParameters<Real>& model, const CheckpointMeta& meta,
                     const std::string& path) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormatVersion;
  j["version"] = kVersion;
  j["dtype"] = dtype_name<Real>();
  j["entities"] = meta.entities;
  j["dims"] = {{"window_size", model.dims.window_size},
               {"hidden", model.dims.hidden},
               {"latent", model.dims.latent},
               {"n_blocks", model.dims.n_blocks},
               {"flow_hidden", model.dims.flow_hidden},
               {"flow_input", model.dims.flow_input == FlowInput::head ? "head" : "gnn"},
               {"head_nonlinearity", model.dims.head_nonlinearity}};
  {
    nlohmann::ordered_json norm;
    std::vector<double> mean(meta.zscore_mean.data(),
                             meta.zscore_mean.data() + meta.zscore_mean.size());
    std::vector<double> stdv(meta.zscore_std.data(),
                             meta.zscore_std.data() + meta.zscore_std.size());
    norm["mean"] = mean;
    norm["std"] = stdv;
    j["zscore"] = norm;
    j["train_split"] = meta.train_split;
    j["val_split"] = meta.val_split;
    j["stride"] = meta.stride;
  }

  std::string blob;
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& p : model.params) {
    nlohmann::ordered_json e;
    e["name"] = p.name;
    e["rows"] = p.value.rows();
    e["cols"] = p.value.cols();
    e["offset"] = blob.size();
    const std::size_t nbytes = sizeof(Real) * p.value.size();
    e["nbytes"] = nbytes;
    params.push_back(e);
    const std::size_t at = blob.size();
    blob.resize(at + nbytes);
    std::memcpy(blob.data() + at, p.value.data(), nbytes);
  }
  j["params"] = params;
  j["blob"] = std::filesystem::path(path).filename().string() + ".bin";
  j["blob_bytes"] = blob.size();

  std::ofstream mout(path);
  if (!mout) throw UsageError("cannot write checkpoint manifest: " + path);
  mout << j.dump(2) << "\n";
  std::ofstream bout(path + ".bin", std::ios::binary);
  if (!bout) throw UsageError("cannot write checkpoint blob: " + path + ".bin");
  bout.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("malformed checkpoint manifest " + path + ": " + e.what());
  }
  if (j.value("format", "") != std::string(kCheckpointFormatVersion))
    throw DataError("unsupported checkpoint format in " + path);
  CheckpointMeta meta;
  meta.entities = j.at("entities").get<int>();
  meta.dtype = j.at("dtype").get<std::string>();
  meta.version = j.value("version", "");
  const auto& d = j.at("dims");
  meta.dims.window_size = d.at("window_size").get<int>();
  meta.dims.hidden = d.at("hidden").get<int>();
  meta.dims.latent = d.at("latent").get<int>();
  meta.dims.n_blocks = d.at("n_blocks").get<int>();
  meta.dims.flow_hidden = d.at("flow_hidden").get<int>();
  meta.dims.flow_input =
      d.at("flow_input").get<std::string>() == "head" ? FlowInput::head : FlowInput::gnn;
  meta.dims.head_nonlinearity = d.at("head_nonlinearity").get<bool>();
  const auto& norm = j.at("zscore");
  const auto mean = norm.at("mean").get<std::vector<double>>();
  const auto stdv = norm.at("std").get<std::vector<double>>();
  meta.zscore_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
  meta.zscore_std = Eigen::Map<const Eigen::VectorXd>(stdv.data(), stdv.size());
  meta.train_split = j.at("train_split").get<double>();
  meta.val_split = j.at("val_split").get<double>();
  meta.stride = j.at("stride").get<int>();
  return meta;
}

template <class Real>
ModelParameters<Real> load_checkpoint(const std::string& path, CheckpointMeta& meta) {
  meta = peek_checkpoint(path);
  if (meta.dtype != dtype_name<Real>())
    throw DataError("checkpoint " + path + " holds " + meta.dtype +
                    " values; expected " + dtype_name<Real>());

  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  std::ifstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw UsageError("cannot open checkpoint blob: " + path + ".bin");
  std::string blob((std::istreambuf_iterator<char>(bin)),
                   std::istreambuf_iterator<char>());
  if (blob.size() != j.at("blob_bytes").get<std::size_t>())
    throw DataError("checkpoint blob size mismatch for " + path);

  ModelParameters<Real> model;
  model.build(meta.dims, 0);
  const auto& params = j.at("params");
  if (params.size() != model.params.size())
    throw DataError("checkpoint parameter count mismatch for " + path);
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& e = params[i];
    auto& p = model.params[i];
    if (e.at("name").get<std::string>() != p.name ||
        e.at("rows").get<Eigen::Index>() != p.value.rows() ||
        e.at("cols").get<Eigen::Index>() != p.value.cols())
      throw DataError("checkpoint parameter layout mismatch at '" + p.name + "'");
    const std::size_t off = e.at("offset").get<std::size_t>();
    const std::size_t nbytes = e.at("nbytes").get<std::size_t>();
    if (off + nbytes > blob.size())
      throw DataError("checkpoint blob truncated at '" + p.name + "'");
    std::memcpy(p.value.data(), blob.data() + off, nbytes);
  }
  return model;
}

}  // namespace dmtfd
