#include "doctest.h"

#include "jarvis/cli/commands.hpp"
#include "jarvis/synthdata/dataset_io.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

using namespace jarvis;
namespace fs = std::filesystem;

namespace {

fs::path workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("jarvis_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

nlohmann::json tiny_config() {
  return {{"seed", 3},
          {"scenario", {{"train_clips", 6}, {"eval_clips", 4}}},
          {"model", {{"embed_dim", 16}, {"layers", 1}, {"heads", 2}, {"ffn_dim", 32}}},
          {"optimizer", {{"epochs", 2}, {"batch_size", 3}}},
          {"windowing", {{"l_past", 2}, {"l_future", 2}}},
          {"aggregation", {{"epochs", 2}}}};
}

fs::path write_config(const std::string& name, const nlohmann::json& j) {
  const auto p = workdir() / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

int cli(std::initializer_list<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::vector<std::string> owned{"jarvis"};
  owned.insert(owned.end(), args);
  std::vector<const char*> argv;
  for (const auto& a : owned) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

// dataset + short + long phase, shared by several cases
struct Prepared {
  fs::path config, data, run;
};

const Prepared& prepared() {
  static const Prepared p = [] {
    Prepared r{write_config("tiny.json", tiny_config()), workdir() / "data", workdir() / "run"};
    REQUIRE(cli({"generate", "--config", r.config.string(), "--out", r.data.string()}) == 0);
    REQUIRE(cli({"train", "--config", r.config.string(), "--data", r.data.string(), "--out", r.run.string()}) == 0);
    REQUIRE(cli({"train", "--config", r.config.string(), "--data", r.data.string(), "--out", r.run.string(),
                 "--phase", "long"}) == 0);
    return r;
  }();
  return p;
}

std::map<std::string, double> sweep_maps(const fs::path& csv) {
  std::map<std::string, double> out;
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    out[cells[1] + "/" + cells[3] + "/" + cells[4]] = std::stod(cells[5]);
  }
  return out;
}

}  // namespace

TEST_CASE("run config") {
  const RunConfig c = run_config_from_json(tiny_config());
  CHECK(c.scenario.seed == 3);
  CHECK(c.aggregation.seed == 3);
  CHECK(c.model.embed_dim == 16);
  CHECK(c.model.num_classes == c.scenario.num_classes);
  CHECK(run_config_from_json(to_json(c)).model.embed_dim == 16);
  CHECK(to_json(run_config_from_json(to_json(c))) == to_json(c));

  auto bad = tiny_config();
  bad["model"]["embd_dim"] = 8;
  CHECK_THROWS_WITH_AS(run_config_from_json(bad), doctest::Contains("model.embd_dim"), ConfigError);
  bad = tiny_config();
  bad["scenario"]["seed"] = 4;
  CHECK_THROWS_AS(run_config_from_json(bad), ConfigError);
  bad = tiny_config();
  bad["extra"] = 1;
  CHECK_THROWS_AS(run_config_from_json(bad), ConfigError);
  bad = tiny_config();
  bad["model"]["num_classes"] = 5;
  CHECK_THROWS_AS(run_config_from_json(bad), ConfigError);

  CHECK_THROWS_WITH_AS(load_run_config(workdir() / "missing.json"), doctest::Contains("missing.json"), ConfigError);
  std::ofstream(workdir() / "broken.json") << "{ \"seed\": ";
  CHECK_THROWS_AS(load_run_config(workdir() / "broken.json"), ConfigError);

  const RunConfig d = run_config_from_json(nlohmann::json::object());
  CHECK(d.scenario.train_clips == 200);
  CHECK(d.scenario.eval_clips == 50);
  CHECK(d.model.embed_dim == desk_model_config().embed_dim);
}

TEST_CASE("threads from the environment") {
  ::setenv("JARVIS_THREADS", "3", 1);
  CHECK(default_threads() == 3);
  ::setenv("JARVIS_THREADS", "zero", 1);
  CHECK(default_threads() == 1);
  ::unsetenv("JARVIS_THREADS");
  CHECK(default_threads() == 1);
}

TEST_CASE("generate") {
  const auto cfg = write_config("gen.json", tiny_config());
  const auto a = workdir() / "gen_a", b = workdir() / "gen_b";
  CHECK(cli({"generate", "--config", cfg.string(), "--out", a.string()}) == 0);
  CHECK(cli({"generate", "--config", cfg.string(), "--out", b.string()}) == 0);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  CHECK(slurp(a / "eval_gt.csv") == slurp(b / "eval_gt.csv"));

  std::string err;
  CHECK(cli({"generate", "--config", cfg.string(), "--out", a.string()}, nullptr, &err) == 1);
  CHECK(err.find("--force") != std::string::npos);
  CHECK(cli({"generate", "--config", cfg.string(), "--out", a.string(), "--force"}) == 0);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));

  CHECK(cli({"generate", "--config", (workdir() / "absent.json").string(), "--out", a.string()}, nullptr, &err) == 1);
  CHECK(err.find("absent.json") != std::string::npos);
  CHECK(cli({"frobnicate"}) == 1);
}

TEST_CASE("train") {
  const auto& p = prepared();
  CHECK(fs::exists(p.run / "last.ckpt"));
  CHECK(fs::exists(p.run / "best.ckpt"));
  CHECK(fs::exists(p.run / "long.ckpt"));
  CHECK(slurp(p.run / "train.log").find("config: {") != std::string::npos);

  SUBCASE("long phase needs the short checkpoint") {
    std::string err;
    CHECK(cli({"train", "--config", p.config.string(), "--data", p.data.string(), "--out",
               (workdir() / "nothing").string(), "--phase", "long"},
              nullptr, &err) == 1);
    CHECK(err.find("last.ckpt") != std::string::npos);
  }
  SUBCASE("same seed, same bytes") {
    const auto again = workdir() / "run_again";
    CHECK(cli({"train", "--config", p.config.string(), "--data", p.data.string(), "--out", again.string()}) == 0);
    CHECK(slurp(again / "last.ckpt") == slurp(p.run / "last.ckpt"));
    // a finished run resumes into a no-op
    CHECK(cli({"train", "--config", p.config.string(), "--data", p.data.string(), "--out", again.string()}) == 0);
    CHECK(slurp(again / "last.ckpt") == slurp(p.run / "last.ckpt"));
  }
  SUBCASE("lr 0 keeps the initial parameters") {
    auto j = tiny_config();
    j["optimizer"]["lr"] = 0.0;
    const auto cfg = write_config("lr0.json", j);
    const auto out = workdir() / "run_lr0";
    CHECK(cli({"train", "--config", cfg.string(), "--data", p.data.string(), "--out", out.string()}) == 0);
    TrainState init = init_train_state(run_config_from_json(j).train_options(1));
    CHECK(hash_values(load_train_state(out / "last.ckpt").model.params) == hash_values(init.model.params));
  }
  SUBCASE("mismatched dataset") {
    auto j = tiny_config();
    j["scenario"]["eval_clips"] = 5;
    const auto cfg = write_config("other.json", j);
    CHECK(cli({"train", "--config", cfg.string(), "--data", p.data.string(), "--out",
               (workdir() / "run_other").string()}) == 1);
  }
  SUBCASE("divergence aborts with a diagnostic") {
    auto j = tiny_config();
    j["optimizer"]["lr"] = 1e300;
    j["optimizer"]["clip_norm"] = 0.0;
    const auto cfg = write_config("nan.json", j);
    const auto out = workdir() / "run_nan";
    CHECK(cli({"train", "--config", cfg.string(), "--data", p.data.string(), "--out", out.string()}) == 2);
    REQUIRE(fs::exists(out / "diagnostic.json"));
    const auto diag = nlohmann::json::parse(slurp(out / "diagnostic.json"));
    CHECK(diag.contains("step"));
    CHECK(diag.contains("error"));
  }
}

TEST_CASE("eval") {
  const auto& p = prepared();
  const auto out = workdir() / "eval";
  CHECK(cli({"eval", "--checkpoint", (p.run / "long.ckpt").string(), "--data", p.data.string(), "--out", out.string(),
             "--strategy", "weighted", "--strategy", "avg", "--support", "2.1", "--support", "5", "--threshold",
             "0.9", "--threshold", "0"}) == 0);
  const auto maps = sweep_maps(out / "sweep.csv");
  CHECK(maps.size() == 8);
  CHECK(fs::exists(out / "report_007.csv"));
  CHECK(slurp(out / "summary.txt").find("frame-mAP@0.5") != std::string::npos);

  // a 2.1 s support is the keyframe window alone
  const auto plain = workdir() / "eval_plain";
  CHECK(cli({"eval", "--checkpoint", (p.run / "long.ckpt").string(), "--data", p.data.string(), "--out",
             plain.string(), "--threshold", "0"}) == 0);
  const auto plain_maps = sweep_maps(plain / "sweep.csv");
  CHECK(plain_maps.begin()->second == maps.at("2.100000/weighted/threshold=0"));
  CHECK(slurp(plain / "report_000.csv") == slurp(out / "report_001.csv"));

  // uniform weights make the weighted sum an average
  const auto uni = workdir() / "eval_uniform";
  CHECK(cli({"eval", "--checkpoint", (p.run / "long.ckpt").string(), "--data", p.data.string(), "--out", uni.string(),
             "--strategy", "weighted", "--strategy", "avg", "--support", "5", "--uniform"}) == 0);
  CHECK(slurp(uni / "report_000.csv") == slurp(uni / "report_001.csv"));

  std::string err;
  CHECK(cli({"eval", "--checkpoint", (p.run / "best.ckpt").string(), "--data", p.data.string(), "--out", uni.string(),
             "--variant", "encoder_decoder"},
            nullptr, &err) == 1);
  CHECK(err.find("variant") != std::string::npos);
  // best.ckpt holds no aggregation weights
  CHECK(cli({"eval", "--checkpoint", (p.run / "best.ckpt").string(), "--data", p.data.string(), "--out", uni.string(),
             "--support", "5"}) == 1);
  CHECK(cli({"eval", "--checkpoint", (p.run / "none.ckpt").string(), "--data", p.data.string(), "--out",
             uni.string()}) == 1);
}

TEST_CASE("inspect") {
  const auto& p = prepared();
  const auto csv = workdir() / "att.csv";
  CHECK(cli({"inspect", "--checkpoint", (p.run / "best.ckpt").string(), "--data", p.data.string(), "--clip",
             "clip_0007", "--attention", csv.string(), "--actor", "1"}) == 0);
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer,head,kind,query,key,weight");
  std::map<std::string, double> sums;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> c;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) c.push_back(cell);
    REQUIRE(c.size() == 6);
    CHECK(c[3] == "1");
    sums[c[0] + "/" + c[1] + "/" + c[2]] += std::stod(c[5]);
    ++rows;
  }
  CHECK(sums.size() == 2);  // one layer, two heads
  for (const auto& [k, s] : sums) CHECK(std::abs(s - 1.0) <= 1e-9);
  CHECK(rows == 2 * (10 + 8 * 8 * 4));

  std::string err;
  CHECK(cli({"inspect", "--checkpoint", (p.run / "best.ckpt").string(), "--data", p.data.string(), "--clip", "nope",
             "--attention", csv.string()},
            nullptr, &err) == 1);
  CHECK(err.find("nope") != std::string::npos);
}
