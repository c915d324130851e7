#pragma once

#include "jarvis/numerics/tensor.hpp"
#include "jarvis/relation_model/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace jarvis {

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct CheckpointSection {
  std::string name;
  std::vector<NamedTensor> tensors;
};

/// On disk:
///   line 1: "JARVIS-CHECKPOINT <format_version> <header_bytes>\n"
///   header: JSON manifest of exactly header_bytes bytes (sections, tensor
///           names, shapes, byte offsets into the blob region, config echo)
///   blobs:  little-endian float64 values, row-major, in manifest order
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  std::vector<CheckpointSection> sections;

  const CheckpointSection* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

CheckpointSection section_from_params(const std::string& name, const ParameterSet& params);
/// Copies values into `params` by name; every parameter must be present
/// with a matching shape.
void load_params(const CheckpointSection& section, ParameterSet& params);

/// Model section "model" plus the config echo under config["model"].
Checkpoint model_checkpoint(const ModelParams& model);
ModelParams model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace jarvis
