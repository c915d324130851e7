#include "jarvis/cli/commands.hpp"

#include "CLI11.hpp"

#include <sstream>

namespace jarvis {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Actor-scene relation model on synthetic clips"};
  app.require_subcommand(1);
  int threads = default_threads();
  app.add_option("--threads", threads, "Worker threads (default from JARVIS_THREADS, else 1)")
      ->check(CLI::PositiveNumber);

  GenerateArgs gen;
  std::string gen_config, gen_out;
  auto* g = app.add_subcommand("generate", "Generate a synthetic dataset directory");
  g->add_option("--config", gen_config, "Run config (JSON)");
  g->add_option("--out", gen_out, "Output directory (default paths.dataset)");
  g->add_flag("--force", gen.force, "Replace a non-empty output directory");

  TrainArgs tr;
  std::string tr_config, tr_data, tr_out;
  auto* t = app.add_subcommand("train", "Train the relation model or the aggregation weights");
  t->add_option("--config", tr_config, "Run config (JSON)");
  t->add_option("--data", tr_data, "Dataset directory (default paths.dataset)");
  t->add_option("--out", tr_out, "Run directory (default paths.output)");
  t->add_option("--phase", tr.phase, "short or long")->check(CLI::IsMember({"short", "long"}));
  t->add_flag("--force", tr.force, "Restart the short phase instead of resuming");

  EvalArgs ev;
  std::string ev_variant;
  int ev_topk = 0;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint, sweeping the requested settings");
  e->add_option("--checkpoint", ev.checkpoint, "Model or train-state checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--strategy", ev.strategies, "weighted, max, avg or topk (repeatable)")
      ->check(CLI::IsMember({"weighted", "max", "avg", "topk"}));
  e->add_option("--support", ev.supports, "Temporal support in seconds (repeatable)");
  e->add_option("--threshold", ev.thresholds, "Proposal score thresholds (repeatable)");
  auto* topk = e->add_option("--topk", ev_topk, "Proposals per keyframe")->check(CLI::PositiveNumber);
  e->add_option("--topk-windows", ev.topk_windows, "k of the topk strategy")->check(CLI::PositiveNumber);
  e->add_option("--variant", ev_variant, "Expected architecture variant")
      ->check(CLI::IsMember({"unified", "decoder_only", "encoder_decoder"}));
  e->add_flag("--uniform", ev.uniform, "Uniform aggregation weights");
  e->add_option("--split", ev.split, "eval or train")->check(CLI::IsMember({"eval", "train"}));

  InspectArgs in;
  auto* i = app.add_subcommand("inspect", "Export attention weights of one actor token");
  i->add_option("--checkpoint", in.checkpoint, "Model or train-state checkpoint")->required();
  i->add_option("--data", in.data, "Dataset directory")->required();
  i->add_option("--clip", in.clip, "Clip id")->required();
  i->add_option("--attention", in.attention, "Output CSV")->required();
  i->add_option("--actor", in.actor, "Actor token index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    std::ostringstream o, r;
    const int code = app.exit(ex, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s); };
  if (g->parsed()) {
    gen.config = opt_path(gen_config);
    gen.out = opt_path(gen_out);
    gen.threads = threads;
    return cmd_generate(gen, out, err);
  }
  if (t->parsed()) {
    tr.config = opt_path(tr_config);
    tr.data = opt_path(tr_data);
    tr.out = opt_path(tr_out);
    tr.threads = threads;
    return cmd_train(tr, out, err);
  }
  if (e->parsed()) {
    if (!ev_variant.empty()) ev.variant = ev_variant;
    if (topk->count() > 0) ev.topk = ev_topk;
    ev.threads = threads;
    return cmd_eval(ev, out, err);
  }
  in.threads = threads;
  return cmd_inspect(in, out, err);
}

}  // namespace jarvis
