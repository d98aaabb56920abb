#pragma once

// Experiment configuration document (JSON). Every object rejects unknown keys.
//
//   {
//     "seeds": [0, 1, 2],
//     "out": "out",
//     "dataset": {"source": "synthetic", "n": 2000, "test_n": 1000, "K": 2,
//                 "mode": "multilabel", "structure": "flat", "geometry": {...}},
//     "sampling": {"budgets": [100], ...}        // or "mismatch": {...}
//     "train": {...shared TrainConfig fields...},
//     "methods": [{"method": "SUP"}, {"method": "NoT", "nU": 32}]
//   }

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "noteacher/io.hpp"
#include "noteacher/sampling.hpp"

namespace nt {

struct DatasetConfig {
  std::string source = "synthetic";  // "synthetic" or "csv"
  std::size_t n = 1000;
  std::size_t test_n = 0;
  std::size_t K = 2;
  LabelMode mode = LabelMode::multilabel;
  Structure structure = Structure::flat;
  ClassGeometry geometry;
  std::string path;       // csv: pool
  std::string test_path;  // csv: optional held-out test set
  CsvSchema schema;
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{0};
  std::string out;
  DatasetConfig dataset;
  std::optional<BudgetPlan> sampling;
  std::optional<MismatchSpec> mismatch;
  std::string mismatch_name = "mismatch";
  std::vector<TrainConfig> methods;
  /// Directory of the config file; relative paths resolve against it.
  std::filesystem::path base_dir;
};

namespace config_detail {

using io_detail::Fields;

inline void read_geometry(ClassGeometry& g, const Json& j, const std::string& path) {
  Fields f(j, path);
  f.get("dim", g.dim);
  f.get("overlap", g.overlap);
  f.get("separation_scale", g.separation_scale);
  f.get("noise_std", g.noise_std);
  f.get("prevalence", g.prevalence);
  f.get("label_correlation", g.label_correlation);
  f.get("class_weights", g.class_weights);
  f.get("class_counts", g.class_counts);
  f.get("min_slices", g.min_slices);
  f.get("max_slices", g.max_slices);
  f.get("signal_fraction", g.signal_fraction);
  f.finish();
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path q(p);
  return q.is_absolute() || base.empty() ? q : base / q;
}

inline DatasetConfig read_dataset(const Json& j, const std::filesystem::path& base) {
  DatasetConfig d;
  Fields f(j, "dataset");
  f.get("source", d.source);
  std::string mode = to_string(d.mode), structure = to_string(d.structure);
  f.get("mode", mode);
  f.get("structure", structure);
  d.mode = parse_label_mode(mode);
  d.structure = parse_structure(structure);
  if (d.source == "synthetic") {
    f.get("n", d.n);
    f.get("test_n", d.test_n);
    if (f.has("K")) {
      long long k = 0;
      f.get("K", k);
      if (k < 1) throw ConfigError("dataset.K must be >= 1");
      d.K = static_cast<std::size_t>(k);
    } else {
      f.mark("K");
    }
    if (f.has("geometry")) {
      read_geometry(d.geometry, f.sub("geometry"), "dataset.geometry");
    } else {
      f.mark("geometry");
    }
    d.geometry.validate(d.K);
  } else if (d.source == "csv") {
    f.require("path", d.path);
    f.get("test_path", d.test_path);
    f.get("label_columns", d.schema.label_columns);
    f.get("label_prefix", d.schema.label_prefix);
    f.get("id_column", d.schema.id_column);
    f.get("bag_column", d.schema.bag_column);
    d.schema.mode = d.mode;
    d.path = resolve(base, d.path).string();
    if (!std::filesystem::exists(d.path)) throw ConfigError("dataset.path: file '" + d.path + "' does not exist");
    if (!d.test_path.empty()) {
      d.test_path = resolve(base, d.test_path).string();
      if (!std::filesystem::exists(d.test_path)) {
        throw ConfigError("dataset.test_path: file '" + d.test_path + "' does not exist");
      }
    }
  } else {
    throw ConfigError("dataset.source must be 'synthetic' or 'csv'");
  }
  f.finish();
  return d;
}

inline BudgetPlan read_sampling(const Json& j) {
  BudgetPlan p;
  Fields f(j, "sampling");
  f.require("budgets", p.budgets);
  f.get("min_positives_per_label", p.min_positives_per_label);
  f.get("min_val_size", p.min_val_size);
  f.get("val_fraction", p.val_fraction);
  f.finish();
  p.validate();
  return p;
}

inline std::vector<std::int64_t> read_counts(Fields& f, const char* key) {
  std::vector<std::int64_t> v;
  f.require(key, v);
  return v;
}

inline MismatchSpec read_mismatch(const Json& j, std::string& name) {
  Fields f(j, "mismatch");
  if (f.has("preset")) {
    std::string preset;
    f.get("preset", preset);
    f.finish();
    name = preset;
    if (preset == "DM-7511") return dm7511_spec();
    if (preset == "DM-3311") return dm3311_spec();
    if (preset == "DM-1133") return dm1133_spec();
    if (preset == "DM-1313") return dm1313_spec();
    throw ConfigError("mismatch.preset must be one of DM-7511, DM-3311, DM-1133, DM-1313");
  }
  MismatchSpec s;
  f.get("name", name);
  f.require("class_names", s.class_names);
  f.require("labeled_ratio", s.labeled_ratio);
  f.require("unlabeled_ratio", s.unlabeled_ratio);
  if (f.has("counts")) {
    Fields c(f.sub("counts"), "mismatch.counts");
    SplitCounts sc;
    sc.labeled = read_counts(c, "labeled");
    sc.unlabeled = read_counts(c, "unlabeled");
    sc.val = read_counts(c, "val");
    sc.test = read_counts(c, "test");
    c.finish();
    s.counts = sc;
  } else {
    f.mark("counts");
  }
  f.get("labeled_total", s.labeled_total);
  f.get("unlabeled_total", s.unlabeled_total);
  f.get("val_total", s.val_total);
  f.get("test_total", s.test_total);
  f.finish();
  (void)resolve_counts(s);  // surfaces ratio/count errors at parse time
  return s;
}

}  // namespace config_detail

inline ExperimentConfig parse_experiment(const Json& j, const std::filesystem::path& base_dir = {}) {
  using config_detail::Fields;
  ExperimentConfig c;
  c.base_dir = base_dir;
  Fields f(j, "");
  f.get("seeds", c.seeds);
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  f.get("out", c.out);
  if (f.has("dataset")) {
    c.dataset = config_detail::read_dataset(f.sub("dataset"), base_dir);
  } else {
    f.mark("dataset");
  }
  if (f.has("sampling")) c.sampling = config_detail::read_sampling(f.sub("sampling"));
  else f.mark("sampling");
  if (f.has("mismatch")) c.mismatch = config_detail::read_mismatch(f.sub("mismatch"), c.mismatch_name);
  else f.mark("mismatch");
  if (c.sampling && c.mismatch) throw ConfigError("give either sampling or mismatch, not both");
  if (c.mismatch && c.dataset.mode != LabelMode::unilabel) throw ConfigError("mismatch requires dataset.mode = unilabel");

  TrainConfig shared;
  if (f.has("train")) apply_train_json(shared, f.sub("train"), "train");
  else f.mark("train");
  if (f.has("methods")) {
    const Json& ms = f.sub("methods");
    if (!ms.is_array()) throw ConfigError("methods must be an array");
    for (std::size_t i = 0; i < ms.size(); ++i) {
      TrainConfig t = shared;
      const std::string path = "methods[" + std::to_string(i) + "]";
      if (!ms[i].is_object() || !ms[i].contains("method")) throw ConfigError(path + ".method is required");
      apply_train_json(t, ms[i], path);
      c.methods.push_back(t);
    }
  } else {
    f.mark("methods");
    if (f.has("train")) c.methods.push_back(shared);
  }
  f.finish();
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + path.string() + "': invalid JSON (" + e.what() + ")");
  }
  return parse_experiment(j, path.parent_path());
}

}  // namespace nt
