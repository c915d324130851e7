#pragma once

#include "jarvis/synthdata/annotations.hpp"
#include "jarvis/synthdata/scenario.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace jarvis {

inline constexpr int kManifestVersion = 1;

/// 16 hex digits of FNV-1a over the canonical JSON of the config.
std::string config_hash(const ScenarioConfig& cfg);

long timestamp_of(const ClipSample& s);
/// Ground truth of the given clips, one AnnotatedBox per actor with a non-empty label set.
std::vector<AnnotatedBox> annotations_of(std::span<const ClipSample> clips);

nlohmann::json dataset_manifest(const SyntheticDataset& d);

// Layout of a dataset directory:
//   manifest.json      format version, config echo and hash, clip list
//   train_gt.csv       ground truth, annotation CSV
//   eval_gt.csv
// Clip contents are a pure function of the config, so loading regenerates
// them and checks the result against the stored manifest and ground truth.
void write_dataset(const SyntheticDataset& d, const std::filesystem::path& dir);
SyntheticDataset load_dataset(const std::filesystem::path& dir, int threads = 1);
ScenarioConfig read_dataset_config(const std::filesystem::path& dir);

}  // namespace jarvis
