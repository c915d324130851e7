#include "jarvis/relation_model/checkpoint.hpp"

#include "jarvis/numerics/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace jarvis {

namespace {

constexpr const char* kMagic = "JARVIS-CHECKPOINT";

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

const CheckpointSection* Checkpoint::find(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["config"] = ckpt.config;
  header["meta"] = ckpt.meta;
  nlohmann::json sections = nlohmann::json::array();
  std::string blobs;
  for (const auto& s : ckpt.sections) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : s.tensors) {
      tensors.push_back({{"name", t.name},
                         {"shape", {t.value.rows(), t.value.cols()}},
                         {"offset", blobs.size()}});
      for (Eigen::Index i = 0; i < t.value.size(); ++i) put_f64(blobs, t.value.data()[i]);
    }
    sections.push_back({{"name", s.name}, {"tensors", std::move(tensors)}});
  }
  header["sections"] = std::move(sections);
  header["data_bytes"] = blobs.size();
  const std::string text = header.dump(1);
  std::ostringstream os;
  os << kMagic << ' ' << kCheckpointFormatVersion << ' ' << text.size() << '\n' << text << blobs;
  return os.str();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  const auto eol = bytes.find('\n');
  if (eol == std::string::npos) throw IoError("checkpoint: missing header line");
  std::istringstream first(bytes.substr(0, eol));
  std::string magic;
  int version = 0;
  std::size_t header_bytes = 0;
  first >> magic >> version >> header_bytes;
  if (magic != kMagic) throw IoError("checkpoint: bad magic");
  if (version != kCheckpointFormatVersion) {
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const std::size_t blob_start = eol + 1 + header_bytes;
  if (blob_start > bytes.size()) throw IoError("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(bytes.substr(eol + 1, header_bytes));
  const std::size_t data_bytes = header.at("data_bytes").get<std::size_t>();
  if (bytes.size() - blob_start != data_bytes) throw IoError("checkpoint: blob region has the wrong length");

  Checkpoint ckpt;
  ckpt.config = header.at("config");
  ckpt.meta = header.at("meta");
  for (const auto& s : header.at("sections")) {
    CheckpointSection section;
    section.name = s.at("name").get<std::string>();
    for (const auto& t : s.at("tensors")) {
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      const auto offset = t.at("offset").get<std::size_t>();
      const std::size_t count = static_cast<std::size_t>(rows * cols);
      if (offset + 8 * count > data_bytes) throw IoError("checkpoint: tensor '" + t.at("name").get<std::string>() + "' overruns the blob region");
      NamedTensor nt;
      nt.name = t.at("name").get<std::string>();
      nt.value.resize(rows, cols);
      const char* base = bytes.data() + blob_start + offset;
      for (std::size_t i = 0; i < count; ++i) nt.value.data()[i] = get_f64(base + 8 * i);
      section.tensors.push_back(std::move(nt));
    }
    ckpt.sections.push_back(std::move(section));
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

CheckpointSection section_from_params(const std::string& name, const ParameterSet& params) {
  CheckpointSection s;
  s.name = name;
  for (const auto& p : params) s.tensors.push_back({p.name, p.value});
  return s;
}

void load_params(const CheckpointSection& section, ParameterSet& params) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : section.tensors) by_name[t.name] = &t.value;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ConfigError("checkpoint section '" + section.name + "' lacks parameter '" + p.name + "'");
    if (it->second->rows() != p.value.rows() || it->second->cols() != p.value.cols()) {
      throw DimensionError("checkpoint parameter '" + p.name + "' has shape " + shape_string(*it->second) +
                           ", model expects " + shape_string(p.value));
    }
    p.value = *it->second;
  }
  if (by_name.size() != params.size()) {
    throw ConfigError("checkpoint section '" + section.name + "' has parameters the model does not know");
  }
}

Checkpoint model_checkpoint(const ModelParams& model) {
  Checkpoint c;
  c.config["model"] = to_json(model.config);
  c.sections.push_back(section_from_params("model", model.params));
  return c;
}

ModelParams model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.config.contains("model")) throw ConfigError("checkpoint carries no model config");
  const ModelConfig config = model_config_from_json(ckpt.config.at("model"));
  RngStream rng(0, 0);
  ModelParams m = init_model(config, rng);
  const CheckpointSection* s = ckpt.find("model");
  if (s == nullptr) throw ConfigError("checkpoint has no 'model' section");
  load_params(*s, m.params);
  return m;
}

}  // namespace jarvis
