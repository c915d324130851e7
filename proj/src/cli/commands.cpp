#include "jarvis/cli/commands.hpp"

#include "jarvis/numerics/errors.hpp"
#include "jarvis/synthdata/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <functional>

namespace jarvis {

namespace fs = std::filesystem;

namespace {

/// Maps exceptions to exit codes so every command fails the same way.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

RunConfig config_or_default(const std::optional<fs::path>& path) {
  if (path) return load_run_config(*path);
  RunConfig c = run_config_from_json(nlohmann::json::object());
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

bool non_empty_dir(const fs::path& dir) {
  return fs::exists(dir) && (!fs::is_directory(dir) || !fs::is_empty(dir));
}

fs::path required_path(const std::optional<fs::path>& flag, const std::string& from_config, const char* what) {
  if (flag) return *flag;
  if (!from_config.empty()) return from_config;
  throw ConfigError(std::string("no ") + what + " directory given (flag or paths." + what + ")");
}

SyntheticDataset load_matching_dataset(const fs::path& dir, const ScenarioConfig& scenario, int threads) {
  SyntheticDataset d = load_dataset(dir, threads);
  if (config_hash(d.world->config) != config_hash(scenario)) {
    throw ConfigError("dataset '" + dir.string() + "' was generated from a different scenario than the run config");
  }
  return d;
}

struct LoadedModel {
  ModelParams model;
  std::optional<AggregationWeights> aggregation;
  WindowingConfig short_window = WindowingConfig::single_window();
  std::optional<WindowingConfig> long_window;
};

LoadedModel load_model(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint '" + path.string() + "' does not exist");
  const Checkpoint ckpt = read_checkpoint(path);
  LoadedModel m;
  if (ckpt.meta.value("kind", "") == "train_state") {
    const TrainState s = train_state_from_checkpoint(ckpt);
    m.model = s.best_model();
    m.aggregation = s.aggregation;
    if (s.config.contains("windowing")) m.short_window = windowing_config_from_json(s.config.at("windowing"));
    if (s.config.contains("windowing_long"))
      m.long_window = windowing_config_from_json(s.config.at("windowing_long"));
  } else {
    m.model = model_from_checkpoint(ckpt);
  }
  return m;
}

}  // namespace

int cmd_generate(const GenerateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = config_or_default(args.config);
    const fs::path dir = required_path(args.out, cfg.paths.dataset, "dataset");
    if (non_empty_dir(dir)) {
      if (!args.force) throw ConfigError("'" + dir.string() + "' is not empty; pass --force to overwrite");
      fs::remove_all(dir);
    }
    out << "config: " << to_json(cfg).dump() << "\n";
    const SyntheticDataset d = generate_dataset(cfg.scenario, args.threads);
    write_dataset(d, dir);
    out << "wrote " << d.train.size() << " train and " << d.eval.size() << " eval clips to " << dir.string()
        << " (config_hash " << config_hash(cfg.scenario) << ")\n";
    return kExitOk;
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    if (args.phase != "short" && args.phase != "long")
      throw ConfigError("--phase must be short or long, got '" + args.phase + "'");
    const RunConfig cfg = config_or_default(args.config);
    const fs::path data_dir = required_path(args.data, cfg.paths.dataset, "dataset");
    const fs::path out_dir = required_path(args.out, cfg.paths.output, "output");
    const fs::path last = out_dir / "last.ckpt";
    if (args.phase == "long" && !fs::exists(last)) {
      throw ConfigError("long phase needs the short-phase checkpoint '" + last.string() + "'");
    }
    const SyntheticDataset data = load_matching_dataset(data_dir, cfg.scenario, args.threads);
    fs::create_directories(out_dir);
    write_text(out_dir / "config.json", to_json(cfg).dump(2) + "\n");

    std::ofstream log(out_dir / "train.log", std::ios::app);
    auto sink = [&](const std::string& line) {
      out << line << "\n" << std::flush;
      log << line << "\n" << std::flush;
    };
    sink("config: " + to_json(cfg).dump());

    TrainOptions opt = cfg.train_options(args.threads);
    opt.log_sink = sink;
    opt.checkpoint_dir = out_dir;

    try {
      if (args.phase == "short") {
        TrainState state;
        if (fs::exists(last) && !args.force) {
          state = load_train_state(last);
          if (state.model.config.variant != opt.model.variant || to_json(state.model.config) != to_json(opt.model) ||
              state.seed != opt.seed) {
            throw ConfigError("'" + last.string() + "' was trained with a different config; pass --force to restart");
          }
          sink("resuming at epoch " + std::to_string(state.epoch) + " batch " + std::to_string(state.batch));
        } else {
          state = init_train_state(opt);
        }
        train_short_term(state, data, opt);
        char buf[96];
        std::snprintf(buf, sizeof buf, "best map=%.4f epoch=%d", state.best_map, state.best_epoch);
        sink(buf);
        return kExitOk;
      }

      TrainState state = load_train_state(last);
      if (!state.finished(cfg.optimizer)) {
        throw ConfigError("short phase in '" + last.string() + "' has not finished (epoch " +
                          std::to_string(state.epoch) + " of " + std::to_string(cfg.optimizer.epochs) + ")");
      }
      const LongTermResult r = train_long_term(state, data, cfg.windowing, cfg.loss, cfg.aggregation,
                                               cfg.scenario.num_proposals, args.threads, sink);
      save_train_state(out_dir / "long.ckpt", state);
      char buf[128];
      std::snprintf(buf, sizeof buf, "short_term_map=%.6f\nlong_term_map=%.6f\n", r.short_term_map, r.long_term_map);
      write_text(out_dir / "long_summary.txt", buf);
      return kExitOk;
    } catch (const NumericError& e) {
      nlohmann::json diag = e.diagnostic();
      diag["error"] = e.what();
      write_text(out_dir / "diagnostic.json", diag.dump(2) + "\n");
      err << "diagnostic written to " << (out_dir / "diagnostic.json").string() << "\n";
      throw;
    }
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const LoadedModel lm = load_model(args.checkpoint);
    const ModelParams& model = lm.model;
    if (args.variant && parse_variant(*args.variant) != model.config.variant) {
      throw ConfigError("--variant " + *args.variant + " does not match the checkpoint variant " +
                        to_string(model.config.variant));
    }
    const SyntheticDataset data = load_dataset(args.data, args.threads);
    if (data.world->config.num_classes != model.config.num_classes ||
        data.world->config.actor_feature_dim != model.config.actor_feature_dim ||
        data.world->config.scene_feature_dim != model.config.scene_feature_dim) {
      throw ConfigError("checkpoint and dataset disagree on class count or feature dims");
    }
    if (args.split != "eval" && args.split != "train") throw ConfigError("--split must be eval or train");
    const auto& clips = args.split == "eval" ? data.eval : data.train;

    std::vector<ProposalSampling> samplings;
    const int k = args.topk.value_or(data.world->config.num_proposals);
    if (k < 1) throw ConfigError("--topk must be positive");
    for (double tau : args.thresholds) {
      if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("--threshold values must lie in [0, 1]");
      samplings.push_back(ProposalSampling::thresholded(tau, k));
    }
    if (samplings.empty()) samplings.push_back(ProposalSampling::top_k(k));

    std::vector<std::optional<double>> supports(args.supports.begin(), args.supports.end());
    if (supports.empty()) supports.push_back(std::nullopt);

    std::vector<AggregationStrategy> strategies;
    for (const auto& s : args.strategies) strategies.push_back({parse_strategy(s), args.topk_windows});

    fs::create_directories(args.out);
    std::ofstream sweep(args.out / "sweep.csv");
    if (!sweep) throw IoError("cannot write '" + (args.out / "sweep.csv").string() + "'");
    sweep << "setting,support,windows,strategy,sampling,map\n";
    std::string summary;
    int setting = 0;
    for (const auto& support : supports) {
      const WindowingConfig w =
          support ? WindowingConfig::from_support(*support, lm.long_window ? lm.long_window->stride : 1.0,
                                                  lm.short_window.t_past, lm.short_window.t_future)
                  : lm.short_window;
      w.validate();
      const int nw = w.window_count();
      std::optional<AggregationWeights> weights;
      if (args.uniform) {
        weights = AggregationWeights::uniform(nw, model.config.num_classes);
      } else if (lm.aggregation && lm.aggregation->A.rows() == nw) {
        weights = lm.aggregation;
      }
      for (const auto& strategy : strategies) {
        if (strategy.kind == Strategy::WeightedSum && nw > 1 && !weights) {
          throw ConfigError("weighted strategy over " + std::to_string(nw) +
                            " windows needs learned weights with that many rows or --uniform");
        }
        for (const auto& sampling : samplings) {
          InferenceOptions io{sampling, w, strategy, weights ? &*weights : nullptr};
          const EvalReport report = evaluate_model(model, clips, io, args.threads);
          char name[64];
          std::snprintf(name, sizeof name, "report_%03d.csv", setting);
          write_report_csv(args.out / name, report);
          char samp[48];
          if (sampling.mode == ProposalSampling::Mode::TopK) {
            std::snprintf(samp, sizeof samp, "topk=%d", sampling.k);
          } else {
            std::snprintf(samp, sizeof samp, "threshold=%g", sampling.threshold);
          }
          char row[256];
          std::snprintf(row, sizeof row, "%d,%s,%d,%s,%s,%.6f\n", setting,
                        support ? std::to_string(*support).c_str() : "", nw, to_string(strategy.kind).c_str(), samp,
                        report.mean_ap);
          sweep << row;
          char head[200];
          std::snprintf(head, sizeof head, "[%s] support=%s windows=%d strategy=%s %s\n", name,
                        support ? std::to_string(*support).c_str() : "keyframe", nw,
                        to_string(strategy.kind).c_str(), samp);
          summary += head + report_summary(report) + "\n";
          char map[48];
          std::snprintf(map, sizeof map, "  frame-mAP@0.5 %.4f\n", report.mean_ap);
          out << head << map;
          ++setting;
        }
      }
    }
    write_text(args.out / "summary.txt", summary);
    return kExitOk;
  });
}

int cmd_inspect(const InspectArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const LoadedModel lm = load_model(args.checkpoint);
    const SyntheticDataset data = load_dataset(args.data, args.threads);
    const ClipSample* clip = data.find(args.clip);
    if (clip == nullptr) throw ValidationError("unknown clip id '" + args.clip + "'");
    const int k = data.world->config.num_proposals;
    if (args.actor < 0 || args.actor >= k) throw ConfigError("--actor must lie in [0, " + std::to_string(k) + ")");
    const auto proposals = sample_proposals(clip->detections, ProposalSampling::top_k(k),
                                            lm.model.config.actor_feature_dim);
    AttentionTrace trace;
    infer_logits(lm.model, proposals, clip->short_clip(lm.short_window.t_past), &trace);

    std::ofstream csv(args.attention);
    if (!csv) throw IoError("cannot write '" + args.attention.string() + "'");
    // keys are numbered as in the joint sequence: actors first, then scene tokens
    csv << "layer,head,kind,query,key,weight\n";
    std::size_t rows = 0;
    const bool unified = lm.model.config.variant == Variant::Unified;
    for (const auto& e : trace.entries) {
      if (e.kind == "scene_self") continue;
      const Eigen::Index key_base = e.kind == "cross" && !unified ? k : 0;
      for (Eigen::Index key = 0; key < e.weights.rows(); ++key) {
        char line[128];
        std::snprintf(line, sizeof line, "%d,%d,%s,%d,%ld,%.17g\n", e.layer, e.head, e.kind.c_str(), args.actor,
                      static_cast<long>(key_base + key), e.weights(key, args.actor));
        csv << line;
        ++rows;
      }
    }
    if (!csv) throw IoError("write failed for '" + args.attention.string() + "'");
    out << "wrote " << rows << " attention weights for actor " << args.actor << " of " << args.clip << " to "
        << args.attention.string() << "\n";
    return kExitOk;
  });
}

}  // namespace jarvis
