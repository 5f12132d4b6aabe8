// vad: command-line front end for the two-stage anomaly pipeline.

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vad/pipeline/ablation.hpp"
#include "vad/pipeline/run.hpp"

using namespace vad;
using namespace vad::pipeline;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> stages;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  bool dry_run = false;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "run config JSON (defaults apply when omitted)");
  app->add_option("--seed", c.seed, "override the run seed");
  app->add_option("--threshold", c.threshold, "override the proposal threshold");
  app->add_flag("--dry-run", c.dry_run, "print planned client calls without issuing them");
  app->add_flag("-q,--quiet", c.quiet, "no progress output");
}

RunConfig make_config(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threshold) cfg.threshold = *c.threshold;
  cfg.normalize();
  cfg.validate();
  return cfg;
}

void print_summary(const RunResult& r, bool dry_run) {
  std::cout << (dry_run ? "plan for " : "run ") << r.run_dir.string() << " (config " << r.config_hash.substr(0, 16) << ")\n";
  for (const auto& s : r.stages) {
    std::cout << "  " << s.stage << ": " << s.status;
    if (s.client_requests) std::cout << ", " << s.client_requests << " client requests";
    if (!s.detail.empty()) std::cout << " (" << s.detail << ")";
    std::cout << "\n";
  }
  if (!dry_run) std::cout << "client requests: " << r.client_requests() << "\n";
  if (!r.report.is_null()) std::cout << "\n" << Pipeline::report_text(r.report);
}

int run_through(const Common& c, RunOptions opt) {
  const RunConfig cfg = make_config(c);
  opt.dry_run = c.dry_run;
  opt.log = c.quiet ? nullptr : &std::cerr;
  const auto r = run_pipeline(cfg, opt);
  print_summary(r, c.dry_run);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vad: object-aware self-supervised proposals validated by rule-grounded language reasoning"};
  app.require_subcommand(1);

  Common run_opts;
  auto* run = app.add_subcommand("run", "run the pipeline (all stages, or those named with --stage)");
  add_common(run, run_opts);
  run->add_option("--stage", run_opts.stages, "stage(s) to run; others must already have artifacts")
      ->check(CLI::IsMember(stage_names()));

  // train: the pipeline through the train stage, with training controls.
  Common train_opts;
  std::optional<double> alpha;
  std::optional<int> phase;
  std::vector<std::size_t> epochs;
  bool resume = false;
  auto* train = app.add_subcommand("train", "ingest and train the self-supervised model");
  add_common(train, train_opts);
  train->add_option("--alpha", alpha, "GradNorm asymmetry");
  train->add_option("--phase", phase, "stop after this phase (0 encoder only, 1 unfreezing, 2 full)")->check(CLI::Range(0, 2));
  train->add_option("--epochs", epochs, "epochs per phase, three values")->expected(3)->delimiter(',');
  train->add_flag("--resume", resume, "continue from the progress checkpoint of an interrupted run");

  std::map<std::string, Common> through;
  for (const std::string s : {"propose", "caption", "refine", "rules", "verify", "smooth", "evaluate"}) {
    auto* sub = app.add_subcommand(s, "run the pipeline through the " + s + " stage");
    add_common(sub, through[s]);
  }

  Common abl_opts;
  std::vector<std::string> deltas{"no-rules", "captioner=alt", "no-cleaning", "memory=4", "tokens=100", "window=5"};
  std::string abl_out;
  auto* ablate = app.add_subcommand("ablate", "baseline plus one run per configuration change");
  add_common(ablate, abl_opts);
  ablate->add_option("--delta", deltas, "changes to try (no-rules, no-cleaning, captioner=alt, memory=K, tokens=N, window=N, "
                                        "backbone=V, tasks=T1-T3, level=frame)");
  ablate->add_option("-o,--out", abl_out, "write the table as JSON here");

  Common synth_opts;
  std::string synth_dir;
  auto* synth = app.add_subcommand("synth", "render the synthetic scenario of the config");
  add_common(synth, synth_opts);
  synth->add_option("--out", synth_dir, "output directory (default: data.dir of the config)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      RunOptions o;
      o.stages.insert(run_opts.stages.begin(), run_opts.stages.end());
      return run_through(run_opts, o);
    }
    if (*train) {
      RunConfig cfg = make_config(train_opts);
      if (alpha) cfg.train.alpha = *alpha;
      if (!epochs.empty()) cfg.train.plan.epochs = {epochs[0], epochs[1], epochs[2]};
      cfg.validate();
      RunOptions o;
      o.stages = stages_through("train");
      o.dry_run = train_opts.dry_run;
      o.resume = resume;
      o.last_phase = phase;
      o.log = train_opts.quiet ? nullptr : &std::cerr;
      print_summary(run_pipeline(cfg, o), o.dry_run);
      return 0;
    }
    for (auto& [s, c] : through) {
      if (!*app.get_subcommand(s)) continue;
      RunOptions o;
      o.stages = stages_through(s);
      return run_through(c, o);
    }
    if (*ablate) {
      const RunConfig cfg = make_config(abl_opts);
      if (abl_opts.dry_run) {
        for (const auto& d : deltas) {
          const RunConfig c = apply_delta(cfg, d);
          std::cout << d << ": config " << config_hash(c).substr(0, 16) << "\n";
        }
        return 0;
      }
      const auto rows = run_ablation(cfg, deltas, abl_opts.quiet ? nullptr : &std::cerr);
      std::cout << ablation_table(rows);
      if (!abl_out.empty()) write_json(abl_out, ablation_json(rows));
      return 0;
    }
    if (*synth) {
      RunConfig cfg = make_config(synth_opts);
      if (!synth_dir.empty()) cfg.data.dir = synth_dir;
      if (cfg.data.scenario.empty()) cfg.data.scenario = "default";
      if (synth_opts.dry_run) {
        std::cout << "would render scenario " << cfg.data.scenario << " into " << cfg.data.dir << "\n";
        return 0;
      }
      std::cout << (ensure_synthetic_data(cfg) ? "rendered " : "up to date: ") << cfg.data.dir << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
