// noteacher: command-line driver.
//
// Exit codes: 0 success, 1 config error, 2 data error, 3 runtime failure.

#include <iostream>

#include <CLI11.hpp>

#include "noteacher/noteacher.hpp"

namespace {

int exit_code(const std::exception& e) {
  if (dynamic_cast<const nt::ConfigError*>(&e)) return 1;
  if (dynamic_cast<const nt::DataError*>(&e)) return 2;
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NoTeacher semi-supervised experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  bool quiet = false;
  auto common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", config_path, "experiment config (JSON)");
    if (needs_config) c->required();
    cmd->add_option("--seed", seed, "run only this seed");
    cmd->add_option("--out", out, "output root (default: config 'out', $NOTEACHER_OUT, ./out)");
    cmd->add_flag("--quiet", quiet, "suppress progress output");
  };

  auto* gen = app.add_subcommand("gen", "generate synthetic datasets and manifests");
  auto* sample = app.add_subcommand("sample", "draw realistic budget splits");
  auto* mismatch = app.add_subcommand("mismatch", "build class-distribution mismatch splits");
  auto* train = app.add_subcommand("train", "train every configured method, split and seed");
  auto* eval = app.add_subcommand("eval", "re-evaluate trained models on the test set");
  auto* compare = app.add_subcommand("compare", "aggregate test AUROC or AUPRC over seeds");
  auto* dynamics = app.add_subcommand("dynamics", "validation AUROC and disagreement of a NoT and an MT run");
  for (auto* c : {gen, sample, mismatch, train, eval, compare}) common(c, true);

  nt::TrainOptions train_opts;
  train->add_flag("--resume", train_opts.resume, "continue from checkpoint.json when present");
  train->add_option("--stop-after", train_opts.stop_after, "pause after N iterations and save a checkpoint");

  std::string metric = "auroc";
  compare->add_option("--metric", metric, "auroc or auprc")->check(CLI::IsMember({"auroc", "auprc"}));

  std::string not_run, mt_run;
  double tau = 0.0;
  dynamics->add_option("--not-run", not_run, "NoT run directory")->required();
  dynamics->add_option("--mt-run", mt_run, "MT run directory")->required();
  dynamics->add_option("--tau", tau, "binarization threshold")->required();
  dynamics->add_option("--out", out, "output directory")->required();
  dynamics->add_flag("--quiet", quiet, "suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (dynamics->parsed()) {
      const auto rows = nt::cmd_dynamics(not_run, mt_run, tau, out);
      if (!quiet) std::cerr << "dynamics: " << rows.size() << " checkpoints written to " << out << '\n';
      return 0;
    }
    const nt::ExperimentConfig cfg = nt::load_experiment(config_path);
    nt::CommandOptions opts;
    opts.out = out;
    opts.quiet = quiet;
    for (auto* c : {gen, sample, mismatch, train, eval, compare})
      if (c->parsed() && c->count("--seed") > 0) opts.seed = seed;

    if (gen->parsed()) nt::cmd_gen(cfg, opts);
    else if (sample->parsed()) nt::cmd_sample(cfg, opts);
    else if (mismatch->parsed()) nt::cmd_mismatch(cfg, opts);
    else if (train->parsed()) nt::cmd_train(cfg, opts, train_opts);
    else if (eval->parsed()) nt::cmd_eval(cfg, opts, std::cout);
    else if (compare->parsed()) nt::cmd_compare(cfg, opts, metric);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
}
