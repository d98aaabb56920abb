#pragma once

// Serialization: JSON forms of tensors, parameter sets, configs and trainer
// state; versioned checkpoints; history and posterior CSVs; atomic writes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "noteacher/data.hpp"
#include "noteacher/trainer.hpp"

namespace nt {

using Json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "noteacher-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Writes to a sibling temp file, then renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw DataError(what + ": invalid JSON (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------
// Value types

inline Json to_json(const Tensor& t) { return Json{{"rows", t.rows()}, {"cols", t.cols()}, {"data", t.data}}; }

inline Tensor tensor_from_json(const Json& j) {
  Tensor t(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != t.data.size()) throw DataError("tensor: data length does not match shape");
  t.data = std::move(data);
  return t;
}

inline Json to_json(const ParamSet& p) {
  Json a = Json::array();
  for (const auto& t : p.tensors) a.push_back(to_json(t));
  return a;
}

inline ParamSet params_from_json(const Json& j) {
  ParamSet p;
  for (const auto& t : j) p.tensors.push_back(tensor_from_json(t));
  return p;
}

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("activation must be 'relu' or 'tanh', got '" + s + "'");
}

inline std::string to_string(AugLevel l) {
  switch (l) {
    case AugLevel::none: return "none";
    case AugLevel::noise: return "noise";
    case AugLevel::noise_affine: return "noise+affine";
    case AugLevel::noise_affine_intensity: return "noise+affine+intensity";
  }
  return "?";
}

inline AugLevel parse_aug_level(const std::string& s, const std::string& path = "augment.level") {
  for (AugLevel l : {AugLevel::none, AugLevel::noise, AugLevel::noise_affine, AugLevel::noise_affine_intensity})
    if (to_string(l) == s) return l;
  throw ConfigError(path + " must be one of none, noise, noise+affine, noise+affine+intensity, got '" + s + "'");
}

inline std::string to_string(LabelMode m) { return m == LabelMode::multilabel ? "multilabel" : "unilabel"; }

inline LabelMode parse_label_mode(const std::string& s) {
  if (s == "multilabel") return LabelMode::multilabel;
  if (s == "unilabel") return LabelMode::unilabel;
  throw ConfigError("mode must be 'multilabel' or 'unilabel', got '" + s + "'");
}

inline std::string to_string(Structure s) { return s == Structure::flat ? "flat" : "scan_bag"; }

inline Structure parse_structure(const std::string& s) {
  if (s == "flat") return Structure::flat;
  if (s == "scan_bag") return Structure::scan_bag;
  throw ConfigError("structure must be 'flat' or 'scan_bag', got '" + s + "'");
}

inline Json to_json(const MlpSpec& s) {
  return Json{{"input_dim", s.input_dim},
              {"hidden_dims", s.hidden_dims},
              {"output_dim", s.output_dim},
              {"activation", to_string(s.activation)},
              {"output", s.output == OutputMode::softmax_unilabel ? "softmax" : "sigmoid"}};
}

inline MlpSpec spec_from_json(const Json& j) {
  MlpSpec s{j.at("input_dim").get<std::size_t>(), j.at("hidden_dims").get<std::vector<std::size_t>>(),
            j.at("output_dim").get<std::size_t>(), parse_activation(j.at("activation").get<std::string>()),
            j.at("output").get<std::string>() == "softmax" ? OutputMode::softmax_unilabel
                                                          : OutputMode::sigmoid_multilabel};
  s.validate();
  return s;
}

inline Json to_json(const TrainConfig& c) {
  Json j{{"method", to_string(c.method)},
         {"nL", c.nL},
         {"nU", c.nU},
         {"lr", c.lr},
         {"weight_decay", c.weight_decay},
         {"adam_betas", {c.adam_beta1, c.adam_beta2}},
         {"adam_eps", c.adam_eps},
         {"ema_decay", c.ema_decay},
         {"lambda_cons", c.lambda_cons},
         {"vat_epsilon", c.vat_epsilon},
         {"vat_xi", c.vat_xi},
         {"vat_power_iters", c.vat_power_iters},
         {"vat_weight", c.vat_weight},
         {"psu_weight", c.psu_weight},
         {"psu_threshold", c.psu_threshold},
         {"graph", {{"sigma1_sq", c.graph.sigma1_sq}, {"sigma2_sq", c.graph.sigma2_sq}, {"sigmay_sq", c.graph.sigmay_sq}}},
         {"max_epochs", c.max_epochs},
         {"max_iters", c.max_iters},
         {"early_stop_patience", c.early_stop_patience},
         {"reduce_lr_patience", c.reduce_lr_patience},
         {"lr_reduce_factor", c.lr_reduce_factor},
         {"checkpoint_interval_iters", c.checkpoint_interval_iters},
         {"binarize_tau", c.binarize_tau},
         {"seed", c.seed},
         {"hidden_dims", c.hidden_dims},
         {"activation", to_string(c.activation)},
         {"augment",
          {{"level", to_string(c.augment.level)},
           {"noise_std", c.augment.noise_std},
           {"scale_range", c.augment.scale_range},
           {"shift_std", c.augment.shift_std},
           {"intensity_range", c.augment.intensity_range}}}};
  if (c.gamma) j["gamma"] = *c.gamma;
  return j;
}

namespace io_detail {

/// Reads keys of `obj` into a target, rejecting unknown keys. Field errors
/// name the full dotted path.
class Fields {
 public:
  Fields(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.emplace_back(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(name(key) + " has the wrong type");
    }
  }

  template <typename T>
  void require(const char* key, T& out) {
    if (!obj_.contains(key)) throw ConfigError(name(key) + " is required");
    get(key, out);
  }

  [[nodiscard]] bool has(const char* key) const { return obj_.contains(key); }

  const Json& sub(const char* key) {
    seen_.emplace_back(key);
    return obj_.at(key);
  }

  void mark(const char* key) { seen_.emplace_back(key); }

  [[nodiscard]] std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  /// Throws on any key that was never requested.
  void finish() const {
    for (const auto& [k, v] : obj_.items()) {
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) throw ConfigError("unknown key '" + name(k) + "'");
    }
  }

 private:
  const Json& obj_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace io_detail

/// Overlays keys of `j` onto `c`; unknown keys are rejected.
inline void apply_train_json(TrainConfig& c, const Json& j, const std::string& path) {
  io_detail::Fields f(j, path);
  if (f.has("method")) {
    std::string m;
    f.get("method", m);
    c.method = parse_method(m);
  } else {
    f.mark("method");
  }
  f.get("nL", c.nL);
  f.get("nU", c.nU);
  f.get("lr", c.lr);
  f.get("weight_decay", c.weight_decay);
  if (f.has("adam_betas")) {
    std::vector<double> b;
    f.get("adam_betas", b);
    if (b.size() != 2) throw ConfigError(f.name("adam_betas") + " must have two entries");
    c.adam_beta1 = b[0];
    c.adam_beta2 = b[1];
  } else {
    f.mark("adam_betas");
  }
  f.get("adam_eps", c.adam_eps);
  f.get("ema_decay", c.ema_decay);
  f.get("lambda_cons", c.lambda_cons);
  f.get("vat_epsilon", c.vat_epsilon);
  f.get("vat_xi", c.vat_xi);
  f.get("vat_power_iters", c.vat_power_iters);
  f.get("vat_weight", c.vat_weight);
  f.get("psu_weight", c.psu_weight);
  f.get("psu_threshold", c.psu_threshold);
  if (f.has("graph")) {
    io_detail::Fields g(f.sub("graph"), f.name("graph"));
    g.get("sigma1_sq", c.graph.sigma1_sq);
    g.get("sigma2_sq", c.graph.sigma2_sq);
    g.get("sigmay_sq", c.graph.sigmay_sq);
    g.finish();
  } else {
    f.mark("graph");
  }
  if (f.has("gamma")) {
    std::vector<double> g;
    f.get("gamma", g);
    c.gamma = g;
  } else {
    f.mark("gamma");
  }
  f.get("max_epochs", c.max_epochs);
  f.get("max_iters", c.max_iters);
  f.get("early_stop_patience", c.early_stop_patience);
  f.get("reduce_lr_patience", c.reduce_lr_patience);
  f.get("lr_reduce_factor", c.lr_reduce_factor);
  f.get("checkpoint_interval_iters", c.checkpoint_interval_iters);
  f.get("binarize_tau", c.binarize_tau);
  f.get("seed", c.seed);
  f.get("hidden_dims", c.hidden_dims);
  if (f.has("activation")) {
    std::string a;
    f.get("activation", a);
    c.activation = parse_activation(a);
  } else {
    f.mark("activation");
  }
  if (f.has("augment")) {
    io_detail::Fields a(f.sub("augment"), f.name("augment"));
    if (a.has("level")) {
      std::string l;
      a.get("level", l);
      c.augment.level = parse_aug_level(l, a.name("level"));
    } else {
      a.mark("level");
    }
    a.get("noise_std", c.augment.noise_std);
    a.get("scale_range", c.augment.scale_range);
    a.get("shift_std", c.augment.shift_std);
    a.get("intensity_range", c.augment.intensity_range);
    a.finish();
  } else {
    f.mark("augment");
  }
  f.finish();
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  apply_train_json(c, j, "train");
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace io_detail {

inline Json opt_to_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::optional<double> opt_from_json(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace io_detail

inline Json to_json(const TrainerState& s) {
  Json hist = Json::array();
  for (const auto& h : s.history) {
    hist.push_back({{"iter", h.iter},
                    {"epoch", h.epoch},
                    {"lr", h.lr},
                    {"train_loss", h.train_loss},
                    {"auroc_a", io_detail::opt_to_json(h.auroc_a)},
                    {"auroc_b", io_detail::opt_to_json(h.auroc_b)},
                    {"disagreement", h.disagreement ? Json(*h.disagreement) : Json(nullptr)}});
  }
  Json snaps = Json::array();
  for (const auto& v : s.snapshots) snaps.push_back({{"iter", v.iter}, {"a", to_json(v.post_a)}, {"b", to_json(v.post_b)}});
  const bool infinite_best = std::isinf(s.best_metric);
  return Json{{"iter", s.iter},
              {"epoch", s.epoch},
              {"batch_cursor", s.batch_cursor},
              {"epoch_order", s.epoch_order},
              {"lr", s.lr},
              {"net_a", to_json(s.net_a)},
              {"net_b", to_json(s.net_b)},
              {"adam_a_m", to_json(s.adam_a_m)},
              {"adam_a_v", to_json(s.adam_a_v)},
              {"adam_b_m", to_json(s.adam_b_m)},
              {"adam_b_v", to_json(s.adam_b_v)},
              {"adam_a_steps", s.adam_a_steps},
              {"adam_b_steps", s.adam_b_steps},
              {"rng_batching", s.rng_batching},
              {"rng_augment", s.rng_augment},
              {"rng_vat", s.rng_vat},
              {"best_metric", infinite_best ? Json(nullptr) : Json(s.best_metric)},
              {"best_iter", s.best_iter},
              {"best_net", s.best_net},
              {"best_params", to_json(s.best_params)},
              {"since_improvement", s.since_improvement},
              {"since_lr_change", s.since_lr_change},
              {"finished", s.finished},
              {"loss_sum", s.loss_sum},
              {"loss_count", s.loss_count},
              {"history", hist},
              {"snapshots", snaps},
              {"loss_trace", s.loss_trace}};
}

inline TrainerState trainer_state_from_json(const Json& j) {
  TrainerState s;
  s.iter = j.at("iter").get<std::int64_t>();
  s.epoch = j.at("epoch").get<std::int64_t>();
  s.batch_cursor = j.at("batch_cursor").get<std::size_t>();
  s.epoch_order = j.at("epoch_order").get<std::vector<std::size_t>>();
  s.lr = j.at("lr").get<double>();
  s.net_a = params_from_json(j.at("net_a"));
  s.net_b = params_from_json(j.at("net_b"));
  s.adam_a_m = params_from_json(j.at("adam_a_m"));
  s.adam_a_v = params_from_json(j.at("adam_a_v"));
  s.adam_b_m = params_from_json(j.at("adam_b_m"));
  s.adam_b_v = params_from_json(j.at("adam_b_v"));
  s.adam_a_steps = j.at("adam_a_steps").get<std::int64_t>();
  s.adam_b_steps = j.at("adam_b_steps").get<std::int64_t>();
  s.rng_batching = j.at("rng_batching").get<std::string>();
  s.rng_augment = j.at("rng_augment").get<std::string>();
  s.rng_vat = j.at("rng_vat").get<std::string>();
  const auto& bm = j.at("best_metric");
  s.best_metric = bm.is_null() ? -std::numeric_limits<double>::infinity() : bm.get<double>();
  s.best_iter = j.at("best_iter").get<std::int64_t>();
  s.best_net = j.at("best_net").get<int>();
  s.best_params = params_from_json(j.at("best_params"));
  s.since_improvement = j.at("since_improvement").get<std::size_t>();
  s.since_lr_change = j.at("since_lr_change").get<std::size_t>();
  s.finished = j.at("finished").get<bool>();
  s.loss_sum = j.at("loss_sum").get<double>();
  s.loss_count = j.at("loss_count").get<std::int64_t>();
  for (const auto& h : j.at("history")) {
    HistoryRow r;
    r.iter = h.at("iter").get<std::int64_t>();
    r.epoch = h.at("epoch").get<std::int64_t>();
    r.lr = h.at("lr").get<double>();
    r.train_loss = h.at("train_loss").get<double>();
    r.auroc_a = io_detail::opt_from_json(h.at("auroc_a"));
    r.auroc_b = io_detail::opt_from_json(h.at("auroc_b"));
    if (!h.at("disagreement").is_null()) r.disagreement = h.at("disagreement").get<std::int64_t>();
    s.history.push_back(r);
  }
  for (const auto& v : j.at("snapshots"))
    s.snapshots.push_back({v.at("iter").get<std::int64_t>(), tensor_from_json(v.at("a")), tensor_from_json(v.at("b"))});
  s.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  return s;
}

struct Checkpoint {
  TrainConfig config;
  TrainerState state;
};

inline std::string serialize_checkpoint(const TrainConfig& config, const TrainerState& state) {
  const Json j{{"format", kCheckpointFormat},
               {"version", kCheckpointVersion},
               {"config", to_json(config)},
               {"state", to_json(state)}};
  return j.dump();
}

/// Parses a checkpoint completely before returning; any defect throws.
inline Checkpoint parse_checkpoint(const std::string& text) {
  const Json j = parse_json(text, "checkpoint");
  try {
    if (!j.is_object() || j.value("format", "") != kCheckpointFormat) throw DataError("checkpoint: not a checkpoint file");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw DataError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    }
    return Checkpoint{train_config_from_json(j.at("config")), trainer_state_from_json(j.at("state"))};
  } catch (const Json::exception& e) {
    throw DataError(std::string("checkpoint: malformed (") + e.what() + ")");
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: bad config (") + e.what() + ")");
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Trainer& t) {
  write_file_atomic(path, serialize_checkpoint(t.config(), t.state()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

/// Trained weights plus the model spec, for evaluation without the trainer.
inline std::string serialize_model(const MlpSpec& spec, const ParamSet& params) {
  return Json{{"format", "noteacher-model"}, {"version", kCheckpointVersion}, {"spec", to_json(spec)},
              {"params", to_json(params)}}
      .dump();
}

inline std::pair<MlpSpec, ParamSet> parse_model(const std::string& text) {
  const Json j = parse_json(text, "model");
  try {
    if (j.value("format", "") != "noteacher-model") throw DataError("model: not a model file");
    MlpSpec spec = spec_from_json(j.at("spec"));
    ParamSet p = params_from_json(j.at("params"));
    if (!p.same_shapes(zero_params(spec))) throw DataError("model: parameter shapes do not match the spec");
    return {spec, p};
  } catch (const Json::exception& e) {
    throw DataError(std::string("model: malformed (") + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------
// CSV outputs

inline std::string fmt(double v) { return csv_detail::format_double(v); }

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

/// iter, epoch, lr, train_loss, one AUROC column per network, disagreement.
inline std::string history_csv(const std::vector<HistoryRow>& rows, Method method) {
  const bool two = has_second_network(method);
  std::ostringstream out;
  out << "iter,epoch,lr,train_loss,val_auroc_a";
  if (two) out << ",val_auroc_b,disagreement";
  out << '\n';
  for (const auto& r : rows) {
    out << r.iter << ',' << r.epoch << ',' << fmt(r.lr) << ',' << fmt(r.train_loss) << ',' << fmt(r.auroc_a);
    if (two) out << ',' << fmt(r.auroc_b) << ',' << (r.disagreement ? std::to_string(*r.disagreement) : "");
    out << '\n';
  }
  return out.str();
}

/// Long-format validation posteriors: iter, net, sample, then one column per label.
inline std::string snapshots_csv(const std::vector<ValSnapshot>& snaps) {
  std::ostringstream out;
  const std::size_t K = snaps.empty() ? 0 : snaps.front().post_a.cols();
  out << "iter,net,sample";
  for (std::size_t k = 0; k < K; ++k) out << ",p" << k;
  out << '\n';
  for (const auto& s : snaps) {
    for (int net = 0; net < 2; ++net) {
      const Tensor& p = net == 0 ? s.post_a : s.post_b;
      for (std::size_t i = 0; i < p.rows(); ++i) {
        out << s.iter << ',' << (net == 0 ? 'a' : 'b') << ',' << i;
        for (std::size_t k = 0; k < p.cols(); ++k) out << ',' << fmt(p(i, k));
        out << '\n';
      }
    }
  }
  return out.str();
}

inline std::vector<ValSnapshot> parse_snapshots_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("posteriors csv: empty file");
  const std::size_t K = csv_detail::split(line).size() - 3;
  std::vector<ValSnapshot> out;
  std::vector<std::vector<double>> rows_a, rows_b;
  std::int64_t cur = -1;
  auto flush = [&] {
    if (cur < 0) return;
    auto to_tensor = [K](const std::vector<std::vector<double>>& rows) {
      Tensor t(rows.size(), K);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < K; ++k) t(i, k) = rows[i][k];
      return t;
    };
    out.push_back({cur, to_tensor(rows_a), to_tensor(rows_b)});
    rows_a.clear();
    rows_b.clear();
  };
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = csv_detail::split(line);
    if (cells.size() != K + 3) throw DataError("posteriors csv: line " + std::to_string(lineno) + " has wrong width");
    const auto it = csv_detail::parse_double(cells[0]);
    if (!it) throw DataError("posteriors csv: bad iter on line " + std::to_string(lineno));
    const auto iter = static_cast<std::int64_t>(*it);
    if (iter != cur) {
      flush();
      cur = iter;
    }
    std::vector<double> row;
    for (std::size_t k = 0; k < K; ++k) {
      const auto v = csv_detail::parse_double(cells[3 + k]);
      if (!v) throw DataError("posteriors csv: bad value on line " + std::to_string(lineno));
      row.push_back(*v);
    }
    (cells[1] == "a" ? rows_a : rows_b).push_back(std::move(row));
  }
  flush();
  return out;
}

/// Index lists of one split, for manifests.
inline Json to_json(const BudgetSplit& s) {
  return Json{{"budget", s.budget}, {"labeled_total", s.labeled_total}, {"train", s.train}, {"val", s.val},
              {"unlabeled", s.unlabeled}};
}

inline BudgetSplit budget_split_from_json(const Json& j) {
  BudgetSplit s;
  s.budget = j.at("budget").get<std::size_t>();
  s.labeled_total = j.at("labeled_total").get<std::size_t>();
  s.train = j.at("train").get<std::vector<std::size_t>>();
  s.val = j.at("val").get<std::vector<std::size_t>>();
  s.unlabeled = j.at("unlabeled").get<std::vector<std::size_t>>();
  return s;
}

}  // namespace nt
