#include "lt2m/checkpoint.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace lt2m {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "lt2m-checkpoint";

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd json_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), Index(v.size()));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["epoch"] = ck.epoch;
  manifest["valid_loss"] = ck.valid_loss;
  json config = json::object();
  for (const auto& [k, v] : ck.config.items()) config[k] = v;
  manifest["config"] = config;
  if (ck.normalizer.fitted()) {
    manifest["normalizer"] = {{"mean", vector_json(ck.normalizer.mean())},
                              {"std", vector_json(ck.normalizer.stddev())}};
  }

  std::ofstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw CheckpointError("cannot write " + (dir / "params.bin").string());
  json index = json::array();
  std::size_t offset = 0;
  for (const auto& [name, p] : ck.model.parameters()) {
    const std::size_t count = static_cast<std::size_t>(p.numel());
    index.push_back({{"name", name}, {"shape", p.shape()}, {"offset", offset}, {"count", count}});
    write_f32_le(blob, p.array().data(), count);
    offset += count * sizeof(float);
  }
  manifest["params"] = index;
  manifest["blob"] = "params.bin";
  manifest["blob_bytes"] = offset;
  if (!blob) throw CheckpointError("short write to " + (dir / "params.bin").string());

  std::ofstream out(dir / "manifest.json");
  if (!out) throw CheckpointError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("missing " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw CheckpointError("unreadable manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kFormat) throw CheckpointError("not a checkpoint manifest");
  const int version = manifest.value("version", -1);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }

  Checkpoint ck;
  try {
    ck.config = RunConfig::preset_named(manifest.at("config").at("preset").get<std::string>());
    for (const auto& [k, v] : manifest.at("config").items()) {
      if (k != "preset") ck.config.set(k, v.get<std::string>());
    }
    ck.config.validate();
    ck.epoch = manifest.value("epoch", Index(0));
    ck.valid_loss = manifest.value("valid_loss", 0.0);
    if (manifest.contains("normalizer")) {
      ck.normalizer = Normalizer(json_vector(manifest["normalizer"].at("mean")),
                                 json_vector(manifest["normalizer"].at("std")));
    }
  } catch (const std::exception& e) {
    throw CheckpointError("bad checkpoint manifest: " + std::string(e.what()));
  }

  ck.model = LightT2M<float>(ck.config.model, ck.config.seed);
  auto params = ck.model.parameters();
  const json& index = manifest.at("params");
  if (index.size() != params.size()) throw CheckpointError("parameter count mismatch");
  const std::size_t blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
  const auto blob_path = dir / manifest.value("blob", "params.bin");
  std::error_code ec;
  if (std::filesystem::file_size(blob_path, ec) != blob_bytes || ec) {
    throw CheckpointError("blob size does not match manifest");
  }
  std::ifstream blob(blob_path, std::ios::binary);
  std::size_t expect = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params[i];
    const json& entry = index[i];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("shape").get<Shape>() != p.shape() ||
        entry.at("offset").get<std::size_t>() != expect) {
      throw CheckpointError("layout mismatch at parameter " + name);
    }
    const auto count = static_cast<std::size_t>(p.numel());
    read_f32_le(blob, p.parameter_data().data(), count);
    expect += count * sizeof(float);
  }
  if (expect != blob_bytes) throw CheckpointError("blob length disagrees with parameter index");
  return ck;
}

}  // namespace lt2m
