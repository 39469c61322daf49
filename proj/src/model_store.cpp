#include "acps/model_store.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <iterator>

#include "acps/errors.hpp"

namespace acps {

namespace fs = std::filesystem;

namespace {

constexpr int kManifestVersion = 1;
constexpr const char* kManifestFormat = "acps-models";

const char* const kActionFiles[] = {"codebooks.txt", "channels.txt", "svm.txt", "histograms.txt"};

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot read model file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string joint_file(int j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "forests/joint_%02d.acpf", j);
  return buf;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_bytes(path)); }

ModelManifest read_manifest(const fs::path& dir) {
  ModelManifest m;
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) return m;
  using R = FormatError::Reason;
  try {
    const auto j = nlohmann::ordered_json::parse(read_text_file(path));
    if (j.at("format").get<std::string>() != kManifestFormat) {
      throw FormatError(R::bad_magic, "model manifest: unexpected format '" + j.at("format").get<std::string>() + "'");
    }
    if (j.at("version").get<int>() != kManifestVersion) {
      throw FormatError(R::version_mismatch, "model manifest: unsupported version " + j.at("version").dump());
    }
    m.actions = j.at("actions").get<std::vector<std::string>>();
    for (const auto& [name, c] : j.at("components").items()) {
      ModelComponent comp;
      comp.version = c.at("version").get<int>();
      comp.seed = c.at("seed").get<std::uint64_t>();
      comp.params = c.at("params");
      for (const auto& f : c.at("files")) comp.files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
      m.components[name] = std::move(comp);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(R::parse, "model manifest: " + std::string(e.what()));
  }
  return m;
}

void write_manifest(const fs::path& dir, const ModelManifest& m) {
  nlohmann::ordered_json j;
  j["format"] = kManifestFormat;
  j["version"] = kManifestVersion;
  j["actions"] = m.actions;
  nlohmann::ordered_json comps = nlohmann::ordered_json::object();
  for (const auto& [name, c] : m.components) {
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const auto& f : c.files) files.push_back({{"path", f.path}, {"sha256", f.sha256}});
    comps[name] = {{"version", c.version}, {"seed", c.seed}, {"params", c.params}, {"files", files}};
  }
  j["components"] = comps;
  fs::create_directories(dir);
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

namespace {

ModelManifest open_for_update(const fs::path& dir, const std::vector<std::string>& actions) {
  ModelManifest m = read_manifest(dir);
  if (!m.components.empty() && m.actions != actions) {
    throw ModelError("model directory " + dir.string() + " holds components trained on a different action list");
  }
  m.actions = actions;
  return m;
}

void record(const fs::path& dir, ModelManifest& m, const std::string& name, const ComponentInfo& info,
            const std::vector<std::string>& files) {
  ModelComponent c;
  c.seed = info.seed;
  c.params = info.params;
  for (const auto& f : files) c.files.push_back({f, file_sha256(dir / f)});
  m.components[name] = std::move(c);
  write_manifest(dir, m);
}

}  // namespace

void store_forests(const fs::path& dir, const std::vector<std::string>& actions,
                   std::span<const ConditionalForest> forests, const ComponentInfo& info) {
  ModelManifest m = open_for_update(dir, actions);
  fs::create_directories(dir / "forests");
  std::vector<std::string> files;
  for (std::size_t j = 0; j < forests.size(); ++j) {
    files.push_back(joint_file(static_cast<int>(j)));
    save_forest(dir / files.back(), forests[j]);
  }
  record(dir, m, "forests", info, files);
}

void store_pairwise(const fs::path& dir, const std::vector<std::string>& actions, const PairwiseStatistics& stats,
                    const ComponentInfo& info) {
  ModelManifest m = open_for_update(dir, actions);
  save_pairwise(dir / "pairwise.txt", stats);
  record(dir, m, "pairwise", info, {"pairwise.txt"});
}

void store_sharing(const fs::path& dir, const std::vector<std::string>& actions, const SharingWeights& weights,
                   const ComponentInfo& info) {
  ModelManifest m = open_for_update(dir, actions);
  save_sharing(dir / "sharing.txt", weights);
  record(dir, m, "sharing", info, {"sharing.txt"});
}

void store_action(const fs::path& dir, const std::vector<std::string>& actions, const ActionModel& model,
                  const ComponentInfo& info) {
  ModelManifest m = open_for_update(dir, actions);
  save_action_model(dir / "action", model);
  std::vector<std::string> files;
  for (const char* f : kActionFiles) files.push_back(std::string("action/") + f);
  record(dir, m, "action", info, files);
}

Models load_models(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw ModelError("no manifest.json in model directory " + dir.string());
  const ModelManifest m = read_manifest(dir);
  for (const auto& [name, c] : m.components) {
    for (const auto& f : c.files) {
      const fs::path p = dir / f.path;
      if (!fs::exists(p)) throw ModelError("model component '" + name + "' is missing " + p.string());
      if (file_sha256(p) != f.sha256) throw ModelError("hash mismatch for " + p.string());
    }
  }
  Models models;
  models.action_names = m.actions;
  const int A = static_cast<int>(m.actions.size());
  auto check_actions = [&](int got, const std::string& what) {
    if (got != A) {
      throw ModelError(what + " has " + std::to_string(got) + " actions, manifest lists " + std::to_string(A));
    }
  };
  if (auto it = m.components.find("forests"); it != m.components.end()) {
    for (const auto& f : it->second.files) {
      models.forests.push_back(load_forest(dir / f.path));
      check_actions(models.forests.back().action_count, f.path);
    }
  }
  if (m.components.count("pairwise")) {
    models.pairwise = load_pairwise(dir / "pairwise.txt");
    check_actions(models.pairwise->action_count, "pairwise.txt");
  }
  if (m.components.count("sharing")) {
    models.sharing = load_sharing(dir / "sharing.txt");
    check_actions(models.sharing->action_count(), "sharing.txt");
  }
  if (m.components.count("action")) {
    models.action = load_action_model(dir / "action");
    check_actions(models.action->action_count, "action model");
  }
  return models;
}

}  // namespace acps
