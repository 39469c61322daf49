#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "acps/pipeline.hpp"
#include "json.hpp"

namespace acps {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string file_sha256(const std::filesystem::path& path);

struct ModelFile {
  std::string path;  // relative to the model directory
  std::string sha256;
};

struct ModelComponent {
  int version = 1;
  std::uint64_t seed = 0;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  std::vector<ModelFile> files;
};

/// manifest.json of a model directory. Components are keyed "forests",
/// "pairwise", "sharing" and "action"; each is written by its own training
/// command, so a directory may hold any subset.
struct ModelManifest {
  std::vector<std::string> actions;
  std::map<std::string, ModelComponent> components;
};

/// Empty manifest when the directory has none yet.
ModelManifest read_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& dir, const ModelManifest& manifest);

/// Provenance recorded next to a component's file hashes.
struct ComponentInfo {
  std::uint64_t seed = 0;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
};

// Each store_* writes the component's files and updates the manifest. A
// manifest trained on a different action list raises ModelError.
void store_forests(const std::filesystem::path& dir, const std::vector<std::string>& actions,
                   std::span<const ConditionalForest> forests, const ComponentInfo& info);
void store_pairwise(const std::filesystem::path& dir, const std::vector<std::string>& actions,
                    const PairwiseStatistics& stats, const ComponentInfo& info);
void store_sharing(const std::filesystem::path& dir, const std::vector<std::string>& actions,
                   const SharingWeights& weights, const ComponentInfo& info);
void store_action(const std::filesystem::path& dir, const std::vector<std::string>& actions,
                  const ActionModel& model, const ComponentInfo& info);

/// Loads every component listed in the manifest. Throws ModelError when the
/// manifest is absent, a listed file is missing or its hash differs.
Models load_models(const std::filesystem::path& dir);

}  // namespace acps
