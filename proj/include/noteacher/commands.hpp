#pragma once

// Subcommands behind the command-line tool. Each takes a parsed config and
// writes its outputs below an output root; errors surface as nt::Error
// subclasses that the tool maps to exit codes.
//
// Output layout:
//   <out>/data/s<seed>/{pool.csv,test.csv,manifest.json}
//   <out>/splits/s<seed>/<tag>.json
//   <out>/runs/<method>/<tag>/s<seed>/{history.csv,metrics.csv,model.json,...}
//   <out>/compare.{csv,txt}
//   <out>/dynamics.{csv,svg}

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "noteacher/config.hpp"
#include "noteacher/report.hpp"

namespace nt {

namespace fs = std::filesystem;

struct CommandOptions {
  std::optional<std::uint64_t> seed;  // overrides the config seed list
  std::string out;                    // overrides the config output root
  bool quiet = false;
  std::ostream* log = &std::cerr;
};

/// Output root: --out, then config "out", then $NOTEACHER_OUT, then "out".
inline fs::path output_root(const ExperimentConfig& c, const CommandOptions& o) {
  if (!o.out.empty()) return o.out;
  if (!c.out.empty()) return config_detail::resolve(c.base_dir, c.out);
  if (const char* env = std::getenv("NOTEACHER_OUT"); env && *env) return env;
  return "out";
}

inline std::vector<std::uint64_t> run_seeds(const ExperimentConfig& c, const CommandOptions& o) {
  if (o.seed) return {*o.seed};
  return c.seeds;
}

struct PreparedData {
  Dataset pool;
  Dataset test;
};

inline PreparedData prepare_dataset(const ExperimentConfig& c, std::uint64_t seed) {
  const DatasetConfig& d = c.dataset;
  PreparedData out;
  if (d.source == "csv") {
    out.pool = ingest_csv(d.path, d.schema);
    if (!d.test_path.empty()) {
      out.test = ingest_csv(d.test_path, d.schema);
      if (out.test.dim != out.pool.dim || out.test.K != out.pool.K) {
        throw DataError("dataset: test csv disagrees with the pool on features or labels");
      }
    } else {
      out.test = Dataset{{}, out.pool.K, out.pool.dim, out.pool.mode, out.pool.structure};
    }
    return out;
  }
  const bool exact = d.mode == LabelMode::unilabel && !d.geometry.class_counts.empty();
  if (exact && d.test_n > 0) throw ConfigError("dataset.test_n cannot be combined with geometry.class_counts");
  Dataset all = gen_synthetic(derive_seed(seed, "dataset"), d.n + d.test_n, d.K, d.mode, d.structure, d.geometry);
  const std::size_t n_pool = exact ? all.size() : d.n;
  out.pool = all;
  out.pool.samples.resize(n_pool);
  out.test = Dataset{{}, all.K, all.dim, all.mode, all.structure};
  out.test.samples.assign(all.samples.begin() + static_cast<std::ptrdiff_t>(n_pool), all.samples.end());
  return out;
}

/// One labeled/unlabeled/val/test split of the pool, tagged for paths.
struct TaggedSplit {
  std::string tag;
  SplitData data;
  Json manifest;
};

inline std::vector<TaggedSplit> prepare_splits(const ExperimentConfig& c, const PreparedData& p, std::uint64_t seed) {
  std::vector<TaggedSplit> out;
  if (c.sampling) {
    for (const auto& s : realistic_sample(p.pool, *c.sampling, derive_seed(seed, "sampling"))) {
      Json m = to_json(s);
      m["seed"] = seed;
      out.push_back({"b" + std::to_string(s.budget), materialize(p.pool, s, p.test), m});
    }
  } else if (c.mismatch) {
    const MismatchSplit s = build_mismatch(p.pool, *c.mismatch, derive_seed(seed, "sampling"));
    Json m{{"seed", seed},
           {"name", c.mismatch_name},
           {"labeled", s.labeled},
           {"unlabeled", s.unlabeled},
           {"val", s.val},
           {"test", s.test},
           {"counts",
            {{"labeled", s.counts.labeled}, {"unlabeled", s.counts.unlabeled}, {"val", s.counts.val}, {"test", s.counts.test}}},
           {"gamma", s.distribution.gamma},
           {"alpha_L", s.distribution.alpha_L},
           {"alpha_U", s.distribution.alpha_U}};
    out.push_back({c.mismatch_name, materialize(p.pool, s), m});
  } else {
    throw ConfigError("config needs a 'sampling' or 'mismatch' section");
  }
  return out;
}

inline fs::path run_dir(const fs::path& root, const TrainConfig& t, const std::string& tag, std::uint64_t seed) {
  return root / "runs" / to_string(t.method) / tag / ("s" + std::to_string(seed));
}

// ---------------------------------------------------------------------------
// gen

inline Json dataset_manifest(const ExperimentConfig& c, const PreparedData& p, std::uint64_t seed) {
  return Json{{"seed", seed},
              {"source", c.dataset.source},
              {"K", p.pool.K},
              {"dim", p.pool.dim},
              {"mode", to_string(p.pool.mode)},
              {"structure", to_string(p.pool.structure)},
              {"pool_size", p.pool.size()},
              {"test_size", p.test.size()},
              {"files", {"pool.csv", "test.csv"}}};
}

inline std::string csv_text(const Dataset& d) {
  std::ostringstream s;
  write_csv(s, d);
  return s.str();
}

inline void cmd_gen(const ExperimentConfig& c, const CommandOptions& o) {
  const fs::path root = output_root(c, o);
  for (std::uint64_t seed : run_seeds(c, o)) {
    const PreparedData p = prepare_dataset(c, seed);
    const fs::path dir = root / "data" / ("s" + std::to_string(seed));
    write_file_atomic(dir / "pool.csv", csv_text(p.pool));
    write_file_atomic(dir / "test.csv", csv_text(p.test));
    write_file_atomic(dir / "manifest.json", dataset_manifest(c, p, seed).dump(2) + "\n");
    if (!o.quiet) *o.log << "gen: wrote " << dir.string() << " (" << p.pool.size() << " pool, " << p.test.size() << " test)\n";
  }
}

// ---------------------------------------------------------------------------
// sample / mismatch

inline void write_split_manifests(const ExperimentConfig& c, const CommandOptions& o, const char* name) {
  const fs::path root = output_root(c, o);
  for (std::uint64_t seed : run_seeds(c, o)) {
    const PreparedData p = prepare_dataset(c, seed);
    for (const auto& s : prepare_splits(c, p, seed)) {
      const fs::path file = root / "splits" / ("s" + std::to_string(seed)) / (s.tag + ".json");
      write_file_atomic(file, s.manifest.dump(2) + "\n");
      if (!o.quiet) {
        *o.log << name << ": " << file.string() << " (train " << s.data.labeled.size() << ", val "
               << s.data.val.size() << ", unlabeled " << s.data.unlabeled.size() << ")\n";
      }
    }
  }
}

inline void cmd_sample(const ExperimentConfig& c, const CommandOptions& o) {
  if (!c.sampling) throw ConfigError("sample: config has no 'sampling' section");
  write_split_manifests(c, o, "sample");
}

inline void cmd_mismatch(const ExperimentConfig& c, const CommandOptions& o) {
  if (!c.mismatch) throw ConfigError("mismatch: config has no 'mismatch' section");
  write_split_manifests(c, o, "mismatch");
}

/// Rebuilds a budget split from its manifest.
inline SplitData replay_budget_manifest(const Json& manifest, const PreparedData& p) {
  return materialize(p.pool, budget_split_from_json(manifest), p.test);
}

// ---------------------------------------------------------------------------
// train / eval

inline std::string targets_csv(const Tensor& y) {
  std::ostringstream out;
  out << "sample";
  for (std::size_t k = 0; k < y.cols(); ++k) out << ",label_" << k;
  out << '\n';
  for (std::size_t i = 0; i < y.rows(); ++i) {
    out << i;
    for (std::size_t k = 0; k < y.cols(); ++k) out << ',' << fmt(y(i, k));
    out << '\n';
  }
  return out.str();
}

inline Tensor parse_targets_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("targets csv: empty file");
  const std::size_t K = csv_detail::split(line).size() - 1;
  std::vector<double> vals;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = csv_detail::split(line);
    if (cells.size() != K + 1) throw DataError("targets csv: wrong row width");
    for (std::size_t k = 0; k < K; ++k) {
      const auto v = csv_detail::parse_double(cells[k + 1]);
      if (!v) throw DataError("targets csv: bad value");
      vals.push_back(*v);
    }
    ++rows;
  }
  Tensor t(rows, K);
  t.data = vals;
  return t;
}

/// Long-format metrics rows keyed by run id, seed, budget and method.
inline std::string metrics_csv(const MetricsReport& r, const std::string& run_id, std::uint64_t seed,
                               const std::string& budget, const std::string& method) {
  std::ostringstream out;
  out << "run_id,seed,budget,method,metric,label,value\n";
  auto row = [&](const std::string& metric, const std::string& label, const std::optional<double>& v) {
    out << run_id << ',' << seed << ',' << budget << ',' << method << ',' << metric << ',' << label << ','
        << fmt(v) << '\n';
  };
  row("auroc", "mean", r.mean_auroc);
  row("auprc", "mean", r.mean_auprc);
  for (std::size_t k = 0; k < r.per_label_auroc.size(); ++k) {
    row("auroc", std::to_string(k), r.per_label_auroc[k]);
    row("auprc", std::to_string(k), r.per_class_auprc[k]);
    row("precision", std::to_string(k), r.at_threshold.precision[k]);
    row("recall", std::to_string(k), r.at_threshold.recall[k]);
  }
  return out.str();
}

inline std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "true";
  for (std::size_t j = 0; j < m.size(); ++j) out << ",pred_" << j;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << i;
    for (auto v : m[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

inline MetricsReport test_report(const MlpSpec& spec, const ParamSet& params, const Dataset& test, double tau) {
  if (test.size() == 0) throw DataError("no test set: set dataset.test_n or dataset.test_path");
  return evaluate_posteriors(predict(spec, params, test), test.targets(), tau, test.mode == LabelMode::unilabel);
}

inline void write_run_outputs(const fs::path& dir, const TrainConfig& t, const SplitData& data, const TrainedRun& r,
                              const std::string& tag, std::uint64_t seed) {
  write_file_atomic(dir / "history.csv", history_csv(r.history, t.method));
  write_file_atomic(dir / "model.json", serialize_model(r.spec, r.best_params));
  write_file_atomic(dir / "val_posteriors.csv", snapshots_csv(r.snapshots));
  write_file_atomic(dir / "val_targets.csv", targets_csv(data.val.targets()));
  const MetricsReport rep = test_report(r.spec, r.best_params, data.test, t.binarize_tau);
  const std::string run_id = to_string(t.method) + "/" + tag + "/s" + std::to_string(seed);
  write_file_atomic(dir / "metrics.csv", metrics_csv(rep, run_id, seed, tag, to_string(t.method)));
  if (data.test.mode == LabelMode::unilabel) write_file_atomic(dir / "confusion.csv", confusion_csv(rep.confusion));
  const Json summary{{"method", to_string(t.method)},
                     {"tag", tag},
                     {"seed", seed},
                     {"best_iter", r.best_iter},
                     {"best_net", r.best_net == 0 ? "a" : "b"},
                     {"best_val_auroc", r.best_metric},
                     {"iterations", r.loss_trace.size()},
                     {"test_mean_auroc", rep.mean_auroc ? Json(*rep.mean_auroc) : Json(nullptr)},
                     {"test_mean_auprc", rep.mean_auprc ? Json(*rep.mean_auprc) : Json(nullptr)}};
  write_file_atomic(dir / "run.json", summary.dump(2) + "\n");
}

struct TrainOptions {
  bool resume = false;
  std::int64_t stop_after = 0;  // > 0: pause after this many iterations
};

/// Trains every method x split x seed of the config.
inline void cmd_train(const ExperimentConfig& c, const CommandOptions& o, const TrainOptions& to = {}) {
  if (c.methods.empty()) throw ConfigError("train: config lists no methods");
  const auto seeds = run_seeds(c, o);
  for (const auto& m : c.methods) m.validate();  // fail before any training
  const fs::path root = output_root(c, o);
  for (std::uint64_t seed : seeds) {
    const PreparedData p = prepare_dataset(c, seed);
    for (const auto& split : prepare_splits(c, p, seed)) {
      for (TrainConfig t : c.methods) {
        t.seed = seed;
        const fs::path dir = run_dir(root, t, split.tag, seed);
        const fs::path ckpt = dir / "checkpoint.json";
        std::optional<Trainer> trainer;
        if (to.resume && fs::exists(ckpt)) {
          Checkpoint cp = load_checkpoint(ckpt);
          if (to_json(cp.config) != to_json(t)) {
            throw ConfigError("resume: checkpoint " + ckpt.string() + " was written with a different config");
          }
          trainer.emplace(t, split.data, cp.state);
        } else {
          trainer.emplace(t, split.data);
        }
        if (!o.quiet) *o.log << "train: " << dir.string() << " from iter " << trainer->iteration() << '\n';
        if (to.stop_after > 0) trainer->run_until(to.stop_after);
        else trainer->run();
        save_checkpoint(ckpt, *trainer);
        if (!trainer->done()) {
          if (!o.quiet) *o.log << "train: paused at iter " << trainer->iteration() << '\n';
          continue;
        }
        write_run_outputs(dir, t, split.data, trainer->result(), split.tag, seed);
        if (!o.quiet) {
          const auto& h = trainer->result().history;
          *o.log << "train: done after " << trainer->iteration() << " iterations, " << h.size() << " validations\n";
        }
      }
    }
  }
}

/// Re-evaluates saved models on the regenerated test sets.
inline void cmd_eval(const ExperimentConfig& c, const CommandOptions& o, std::ostream& out) {
  const fs::path root = output_root(c, o);
  for (std::uint64_t seed : run_seeds(c, o)) {
    const PreparedData p = prepare_dataset(c, seed);
    for (const auto& split : prepare_splits(c, p, seed)) {
      for (TrainConfig t : c.methods) {
        const fs::path dir = run_dir(root, t, split.tag, seed);
        if (!fs::exists(dir / "model.json")) throw DataError("eval: no trained model in " + dir.string());
        const auto [spec, params] = parse_model(read_file(dir / "model.json"));
        const MetricsReport rep = test_report(spec, params, split.data.test, t.binarize_tau);
        const std::string run_id = to_string(t.method) + "/" + split.tag + "/s" + std::to_string(seed);
        const std::string csv = metrics_csv(rep, run_id, seed, split.tag, to_string(t.method));
        write_file_atomic(dir / "eval.csv", csv);
        out << run_id << " mean_auroc=" << fmt(rep.mean_auroc) << " mean_auprc=" << fmt(rep.mean_auprc) << '\n';
      }
    }
  }
}

// ---------------------------------------------------------------------------
// compare

inline std::optional<double> read_mean_metric(const fs::path& metrics_file, const std::string& metric) {
  std::istringstream in(read_file(metrics_file));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto cells = csv_detail::split(line);
    if (cells.size() == 7 && cells[4] == metric && cells[5] == "mean") return csv_detail::parse_double(cells[6]);
  }
  return std::nullopt;
}

/// Split tags of the config in order, without touching any data.
inline std::vector<std::string> split_tags(const ExperimentConfig& c) {
  if (c.sampling) {
    std::vector<std::string> tags;
    for (auto b : c.sampling->budgets) tags.push_back("b" + std::to_string(b));
    return tags;
  }
  if (c.mismatch) return {c.mismatch_name};
  throw ConfigError("config needs a 'sampling' or 'mismatch' section");
}

inline CompareTable cmd_compare(const ExperimentConfig& c, const CommandOptions& o, const std::string& metric = "auroc") {
  const fs::path root = output_root(c, o);
  CompareTable table;
  table.metric = metric;
  table.budgets = split_tags(c);
  std::vector<std::string> missing;
  for (const auto& m : c.methods) {
    const std::string name = to_string(m.method);
    if (std::find(table.methods.begin(), table.methods.end(), name) == table.methods.end()) table.methods.push_back(name);
  }
  for (const auto& tag : table.budgets) {
    for (const auto& m : c.methods) {
      CompareCell cell{to_string(m.method), tag, {}, 0.0, 0.0};
      for (std::uint64_t seed : run_seeds(c, o)) {
        const fs::path f = run_dir(root, m, tag, seed) / "metrics.csv";
        if (!fs::exists(f)) {
          missing.push_back(f.parent_path().string());
          continue;
        }
        const auto v = read_mean_metric(f, metric);
        if (!v) throw DataError("compare: " + f.string() + " has no defined mean " + metric);
        cell.values.push_back(*v);
      }
      if (!cell.values.empty()) {
        summarize(cell);
        table.cells.push_back(cell);
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "compare: missing runs:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }
  write_file_atomic(root / "compare.csv", compare_csv(table));
  write_file_atomic(root / "compare.txt", compare_text(table));
  if (!o.quiet) *o.log << compare_text(table);
  return table;
}

// ---------------------------------------------------------------------------
// dynamics

inline std::vector<DynamicsRow> cmd_dynamics(const fs::path& not_run, const fs::path& mt_run, double tau,
                                             const fs::path& out_dir) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("dynamics: tau must lie in (0, 1)");
  for (const auto& d : {not_run, mt_run}) {
    if (!fs::exists(d / "val_posteriors.csv") || !fs::exists(d / "val_targets.csv")) {
      throw DataError("dynamics: " + d.string() + " is not a finished run directory");
    }
  }
  const Tensor y = parse_targets_csv(read_file(not_run / "val_targets.csv"));
  if (!(parse_targets_csv(read_file(mt_run / "val_targets.csv")) == y)) {
    throw DataError("dynamics: the two runs were validated on different splits");
  }
  const auto rows = dynamics_rows(parse_snapshots_csv(read_file(not_run / "val_posteriors.csv")),
                                  parse_snapshots_csv(read_file(mt_run / "val_posteriors.csv")), y, tau);
  write_file_atomic(out_dir / "dynamics.csv", dynamics_csv(rows));
  write_file_atomic(out_dir / "dynamics.svg", dynamics_svg(rows, "Validation AUROC and disagreement (tau = " + fmt(tau) + ")"));
  return rows;
}

}  // namespace nt
