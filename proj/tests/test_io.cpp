#include <gtest/gtest.h>

#include <filesystem>

#include "noteacher/noteacher.hpp"

using namespace nt;
namespace fs = std::filesystem;

namespace {

SplitData split(LabelMode mode) {
  ClassGeometry g;
  g.dim = 4;
  const Dataset pool = gen_synthetic(1, 300, 2, mode, Structure::flat, g);
  BudgetPlan plan;
  plan.budgets = {40};
  return materialize(pool, realistic_sample(pool, plan, 0)[0], Dataset{});
}

TrainConfig cfg(Method m) {
  TrainConfig c;
  c.method = m;
  c.nL = 8;
  c.nU = 8;
  c.lr = 1e-3;
  c.hidden_dims = {5};
  c.checkpoint_interval_iters = 7;
  c.max_iters = 40;
  if (m == Method::NoTGA) c.gamma = std::vector<double>{0.3, 0.6};
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("noteacher_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

template <typename E>
std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return "<no exception>";
}

}  // namespace

TEST(Io, CheckpointRoundTripResumesBitExact) {
  const SplitData multi = split(LabelMode::multilabel), uni = split(LabelMode::unilabel);
  for (Method m : {Method::SUP, Method::PSU, Method::VAT, Method::MT, Method::NoT, Method::NoTGA}) {
    const SplitData& data = m == Method::NoTGA ? uni : multi;
    const TrainConfig c = cfg(m);
    Trainer straight(c, data);
    straight.run();
    Trainer first(c, data);
    first.run_until(19);
    const Checkpoint ck = parse_checkpoint(serialize_checkpoint(c, first.state()));
    EXPECT_EQ(ck.state, first.state()) << to_string(m);
    EXPECT_EQ(to_json(ck.config), to_json(c));
    Trainer resumed(ck.config, data, ck.state);
    resumed.run();
    EXPECT_EQ(resumed.state(), straight.state()) << to_string(m);
  }
}

TEST(Io, CorruptCheckpointsAreRejected) {
  const SplitData data = split(LabelMode::multilabel);
  Trainer t(cfg(Method::NoT), data);
  t.run_until(5);
  const std::string good = serialize_checkpoint(t.config(), t.state());
  EXPECT_THROW((void)parse_checkpoint(good.substr(0, good.size() / 2)), DataError);
  EXPECT_THROW((void)parse_checkpoint("{}"), DataError);

  Json j = Json::parse(good);
  j["version"] = 2;
  EXPECT_NE(message_of<DataError>([&] { (void)parse_checkpoint(j.dump()); }).find("version 2"), std::string::npos);

  j = Json::parse(good);
  j["state"].erase("net_a");
  EXPECT_THROW((void)parse_checkpoint(j.dump()), DataError);

  j = Json::parse(good);
  j["state"]["iter"] = "five";
  EXPECT_THROW((void)parse_checkpoint(j.dump()), DataError);

  j = Json::parse(good);
  j["config"]["bogus"] = 1;
  EXPECT_THROW((void)parse_checkpoint(j.dump()), DataError);
}

TEST(Io, AtomicWriteLeavesNoTemporaries) {
  const fs::path dir = scratch("atomic");
  write_file_atomic(dir / "a.json", "one");
  write_file_atomic(dir / "a.json", "two");
  EXPECT_EQ(read_file(dir / "a.json"), "two");
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
  EXPECT_EQ(n, 1u);
  EXPECT_THROW((void)read_file(dir / "missing.json"), DataError);
}

TEST(Io, ModelRoundTrip) {
  const MlpSpec spec{3, {4, 2}, 2, Activation::tanh, OutputMode::softmax_unilabel};
  const ParamSet p = init_params(spec, 9);
  const auto [s2, p2] = parse_model(serialize_model(spec, p));
  EXPECT_EQ(s2, spec);
  EXPECT_EQ(p2, p);
  MlpSpec other = spec;
  other.hidden_dims = {5};
  EXPECT_THROW((void)parse_model(serialize_model(other, p)), DataError);
}

TEST(Io, TrainConfigRejectsUnknownKeysWithPath) {
  TrainConfig c;
  EXPECT_NE(message_of<ConfigError>([&] { apply_train_json(c, Json{{"lrr", 1}}, "train"); }).find("train.lrr"),
            std::string::npos);
  EXPECT_NE(message_of<ConfigError>([&] {
              apply_train_json(c, Json{{"augment", {{"level", "noise"}, {"sigma", 1}}}}, "train");
            }).find("train.augment.sigma"),
            std::string::npos);
  EXPECT_NE(message_of<ConfigError>([&] { apply_train_json(c, Json{{"nL", "many"}}, "train"); }).find("train.nL"),
            std::string::npos);
  EXPECT_THROW(apply_train_json(c, Json{{"method", "XYZ"}}, "train"), ConfigError);
  EXPECT_THROW(apply_train_json(c, Json{{"augment", {{"level", "heavy"}}}}, "train"), ConfigError);
}

TEST(Io, TrainConfigJsonRoundTrip) {
  TrainConfig c = cfg(Method::NoTGA);
  c.augment.level = AugLevel::noise_affine;
  c.graph = {0.3, 0.3, 0.05};
  EXPECT_EQ(to_json(train_config_from_json(to_json(c))), to_json(c));
}

TEST(Io, HistoryCsvColumnsFollowMethod) {
  const std::vector<HistoryRow> rows = {{10, 1, 1e-3, 0.5, 0.75, std::nullopt, std::nullopt}};
  EXPECT_EQ(history_csv(rows, Method::PSU), "iter,epoch,lr,train_loss,val_auroc_a\n10,1,0.001,0.5,0.75\n");
  const std::vector<HistoryRow> two = {{10, 1, 1e-3, 0.5, 0.75, 0.5, 3}};
  EXPECT_EQ(history_csv(two, Method::NoT),
            "iter,epoch,lr,train_loss,val_auroc_a,val_auroc_b,disagreement\n10,1,0.001,0.5,0.75,0.5,3\n");
}

TEST(Io, SnapshotsCsvRoundTrip) {
  const SplitData data = split(LabelMode::multilabel);
  const TrainedRun r = train(cfg(Method::NoT), data);
  ASSERT_FALSE(r.snapshots.empty());
  EXPECT_EQ(parse_snapshots_csv(snapshots_csv(r.snapshots)), r.snapshots);
}

TEST(Io, ExperimentConfigParsing) {
  const Json good = Json::parse(R"({
    "seeds": [1, 2],
    "dataset": {"n": 100, "K": 3, "geometry": {"dim": 4}},
    "sampling": {"budgets": [10]},
    "train": {"lr": 0.01},
    "methods": [{"method": "SUP"}, {"method": "NoT", "nU": 4}]
  })");
  const ExperimentConfig c = parse_experiment(good);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2}));
  ASSERT_EQ(c.methods.size(), 2u);
  EXPECT_EQ(c.methods[1].method, Method::NoT);
  EXPECT_EQ(c.methods[1].nU, 4u);
  EXPECT_EQ(c.methods[1].lr, 0.01);

  Json bad = good;
  bad["dataset"]["K"] = 0;
  EXPECT_NE(message_of<ConfigError>([&] { (void)parse_experiment(bad); }).find("dataset.K"), std::string::npos);
  bad = good;
  bad["dataset"]["geometry"]["dims"] = 4;
  EXPECT_NE(message_of<ConfigError>([&] { (void)parse_experiment(bad); }).find("dataset.geometry.dims"),
            std::string::npos);
  bad = good;
  bad["methods"][0]["method"] = "Teacher";
  EXPECT_THROW((void)parse_experiment(bad), ConfigError);
  bad = good;
  bad["mismatch"] = {{"preset", "DM-3311"}};
  EXPECT_THROW((void)parse_experiment(bad), ConfigError);
  bad = good;
  bad["dataset"] = {{"source", "csv"}, {"path", "/nonexistent/pool.csv"}};
  EXPECT_THROW((void)parse_experiment(bad), ConfigError);
  EXPECT_THROW((void)load_experiment("/nonexistent/config.json"), ConfigError);
}

TEST(Io, MismatchPresetsResolve) {
  const Json j = Json::parse(R"({
    "dataset": {"mode": "unilabel", "K": 4, "geometry": {"dim": 3}},
    "mismatch": {"preset": "DM-3311"},
    "methods": [{"method": "NoT-GA", "gamma": [0.25, 0.25, 0.75, 0.75]}]
  })");
  const ExperimentConfig c = parse_experiment(j);
  EXPECT_EQ(c.mismatch_name, "DM-3311");
  EXPECT_EQ(c.methods[0].method, Method::NoTGA);
  ASSERT_TRUE(c.methods[0].gamma.has_value());
}
