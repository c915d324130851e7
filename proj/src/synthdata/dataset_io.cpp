#include "jarvis/synthdata/dataset_io.hpp"

#include "jarvis/numerics/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace jarvis {

namespace {

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::string config_hash(const ScenarioConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_json(cfg).dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

long timestamp_of(const ClipSample& s) { return std::lround(s.keyframe_time); }

std::vector<AnnotatedBox> annotations_of(std::span<const ClipSample> clips) {
  std::vector<AnnotatedBox> out;
  for (const auto& s : clips)
    for (const auto& g : s.ground_truth)
      if (!g.classes.empty()) out.push_back(AnnotatedBox{s.id, timestamp_of(s), g.box, g.classes});
  return out;
}

nlohmann::json dataset_manifest(const SyntheticDataset& d) {
  const ScenarioConfig& c = d.world->config;
  nlohmann::json clips = nlohmann::json::array();
  auto add = [&](const std::vector<ClipSample>& split, const char* name) {
    for (const auto& s : split) {
      clips.push_back({{"id", s.id},
                       {"stream", s.stream},
                       {"split", name},
                       {"keyframe_time", s.keyframe_time},
                       {"actors", s.actors.size()},
                       {"detections", s.detections.size()}});
    }
  };
  add(d.train, "train");
  add(d.eval, "eval");
  return {{"format_version", kManifestVersion},
          {"seed", c.seed},
          {"config_hash", config_hash(c)},
          {"scenario", to_json(c)},
          {"clips", clips}};
}

void write_dataset(const SyntheticDataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << dataset_manifest(d).dump(2) << '\n';
    if (!out) throw IoError("failed writing " + (dir / "manifest.json").string());
  }
  write_annotations(dir / "train_gt.csv", annotations_of(d.train));
  write_annotations(dir / "eval_gt.csv", annotations_of(d.eval));
}

ScenarioConfig read_dataset_config(const std::filesystem::path& dir) {
  const auto m = read_manifest(dir);
  if (!m.contains("format_version") || m["format_version"] != kManifestVersion) {
    throw ConfigError((dir / "manifest.json").string() + ": unsupported format_version");
  }
  if (!m.contains("scenario")) throw ConfigError((dir / "manifest.json").string() + ": missing scenario");
  return scenario_config_from_json(m["scenario"], "manifest.scenario");
}

SyntheticDataset load_dataset(const std::filesystem::path& dir, int threads) {
  const ScenarioConfig cfg = read_dataset_config(dir);
  const auto stored = read_manifest(dir);
  if (stored.value("config_hash", std::string()) != config_hash(cfg)) {
    throw ValidationError((dir / "manifest.json").string() + ": config hash does not match the scenario echo");
  }
  SyntheticDataset d = generate_dataset(cfg, threads);
  if (dataset_manifest(d) != stored) {
    throw ValidationError((dir / "manifest.json").string() + ": regenerated clips disagree with the manifest");
  }
  auto check = [&](const char* file, const std::vector<ClipSample>& split) {
    const auto path = dir / file;
    if (!std::filesystem::exists(path)) return;
    const auto expect = annotations_of(split);
    const auto got = read_annotations(path);
    // stored coordinates carry six decimals
    bool same = got.size() == expect.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) {
      same = got[i].clip_id == expect[i].clip_id && got[i].timestamp == expect[i].timestamp &&
             got[i].classes == expect[i].classes && std::abs(got[i].box.x_lt - expect[i].box.x_lt) < 1e-6 &&
             std::abs(got[i].box.y_lt - expect[i].box.y_lt) < 1e-6 &&
             std::abs(got[i].box.x_rb - expect[i].box.x_rb) < 1e-6 &&
             std::abs(got[i].box.y_rb - expect[i].box.y_rb) < 1e-6;
    }
    if (!same) throw ValidationError(path.string() + ": ground truth disagrees with the regenerated dataset");
  };
  check("train_gt.csv", d.train);
  check("eval_gt.csv", d.eval);
  return d;
}

}  // namespace jarvis
