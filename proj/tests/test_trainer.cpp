#include <algorithm>
#include <limits>
#include <set>

#include "doctest.h"
#include "tut/checkpoint.hpp"
#include "tut/config.hpp"
#include "tut/trainer.hpp"

using namespace tut;

namespace {

SyntheticDataset small_synth(double noise, std::uint64_t seed, int videos = 3) {
  SynthSpec s;
  s.num_classes = 3;
  s.num_videos = videos;
  s.min_length = 32;
  s.max_length = 48;
  s.min_segments = 2;
  s.max_segments = 4;
  s.feature_dim = 6;
  s.noise = noise;
  s.seed = seed;
  return generate_synthetic(s);
}

ModelConfig small_model() {
  ModelConfig c;
  c.refinement_stages = 1;
  c.layers = 2;
  c.attention.window = 5;
  c.attention.heads = 2;
  c.hidden_dim = 8;
  c.ffn_dim = 8;
  c.refine_hidden_dim = 8;
  c.refine_ffn_dim = 8;
  c.input_dim = 0;
  c.num_classes = 0;
  return c;
}

TrainConfig small_train(int epochs) {
  TrainConfig t;
  t.max_epochs = epochs;
  t.lr = 5e-3;
  t.seed = 4;
  t.seed_set = true;
  return t;
}

}  // namespace

TEST_CASE("learning rate halves after the third rise") {
  LrSchedule s(1.0, 3, 0.5);
  // rises at epochs 3, 5 and 7
  const std::vector<double> trace{10, 9, 9.5, 9, 9.2, 8, 8.5, 8, 7, 7.5};
  std::vector<double> lrs;
  for (std::size_t e = 0; e < trace.size(); ++e) {
    const bool reduced = s.observe(trace[e]);
    CHECK(reduced == (e + 1 == 7));
    lrs.push_back(s.lr());
  }
  CHECK(lrs[5] == 1.0);
  CHECK(lrs[6] == 0.5);
  CHECK(lrs.back() == 0.5);
  CHECK(s.counter() == 1);
  for (std::size_t e = 1; e < lrs.size(); ++e) CHECK(lrs[e] <= lrs[e - 1]);
  // equal losses are not rises
  LrSchedule flat(1.0, 1, 0.5);
  for (int e = 0; e < 5; ++e) CHECK_FALSE(flat.observe(3.0));
}

TEST_CASE("config text, overrides and unknown keys") {
  auto kv = KeyValueConfig::parse(
      "# comment\n[model]\nwindow = 7\nattention = LogSparse\n[train]\nlr = 0.01\nseed = 9\n[data]\nthresholds = 0.1,0.5\n");
  CHECK(kv.get("model.window") == "7");
  const auto rest = kv.apply_overrides({"--heads", "2", "--train.max-epochs=12", "--beta", "0.5", "positional"});
  CHECK(rest == std::vector<std::string>{"positional"});
  const RunConfig rc = bind_config(kv);
  CHECK(rc.model.attention.window == 7);
  CHECK(rc.model.attention.heads == 2);
  CHECK(rc.model.attention.pattern == AttentionPattern::LogSparse);
  CHECK(rc.train.lr == 0.01);
  CHECK(rc.train.max_epochs == 12);
  CHECK(rc.train.loss.beta == 0.5);
  CHECK(rc.train.seed_set);
  CHECK(rc.data.thresholds == std::vector<double>{0.1, 0.5});
  CHECK_THROWS_AS(kv.set("model.colour", "red"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("[model]\nwidth = 3\n"), ConfigError);
  CHECK(kv.apply_overrides({"--nonsense", "1"}) == std::vector<std::string>{"--nonsense", "1"});
  CHECK_THROWS_AS(kv.apply_overrides({"--window"}), ConfigError);
  CHECK(KeyValueConfig::parse(kv.serialize()).values() == kv.values());
  auto bad = KeyValueConfig::parse("[train]\nbatch_size = 4\n");
  CHECK_THROWS_AS(bind_config(bad).train.validate(), ConfigError);
  ModelConfig m = small_model();
  m.input_dim = 6;
  m.num_classes = 3;
  CHECK(serialize_model_config(parse_model_config(serialize_model_config(m))) == serialize_model_config(m));
  DataConfig d;
  d.source_fps = 30;
  d.target_fps = 15;
  CHECK(d.resample_factor() == 2);
  d.target_fps = 20;
  CHECK_THROWS_AS(d.resample_factor(), ConfigError);
}

TEST_CASE("training loss falls on clean synthetic data") {
  const auto data = small_synth(0.0, 1);
  const auto r = train(data.data, small_model(), small_train(20));
  REQUIRE(r.log.size() == 20);
  CHECK(r.log[19].loss < r.log[0].loss);
  for (const auto& e : r.log) CHECK(std::isfinite(e.loss));
}

TEST_CASE("training is deterministic for a seed") {
  const auto data = small_synth(0.25, 2);
  auto tc = small_train(3);
  tc.loss.beta = 0.1;
  auto mc = small_model();
  mc.input_dropout = 0.2;
  const auto a = train(data.data, mc, tc), b = train(data.data, mc, tc);
  CHECK(log_csv(a.log) == log_csv(b.log));
  CHECK(encode_checkpoint(a.model, data.data.classes.names()) == encode_checkpoint(b.model, data.data.classes.names()));
  tc.seed = 5;
  const auto c = train(data.data, mc, tc);
  CHECK(log_csv(a.log) != log_csv(c.log));
}

TEST_CASE("checkpoint round trip reproduces evaluation") {
  const auto data = small_synth(0.25, 3);
  const auto r = train(data.data, small_model(), small_train(2));
  const std::string bytes = encode_checkpoint(r.model, data.data.classes.names(), {{"epoch", "2"}});
  const auto loaded = decode_checkpoint(bytes);
  CHECK(loaded.class_names == data.data.classes.names());
  CHECK(loaded.meta.at("epoch") == "2");
  CHECK(encode_checkpoint(loaded.model, loaded.class_names, loaded.meta) == bytes);
  const DataConfig dc;
  CHECK(report_csv(evaluate_run(loaded.model, data.data, dc).report) == report_csv(evaluate_run(r.model, data.data, dc).report));
  ModelConfig other = r.model.config();
  other.attention.window = 3;
  CHECK_THROWS_AS(decode_checkpoint(bytes, &other), LoadError);
  CHECK_NOTHROW(decode_checkpoint(bytes, &r.model.config()));
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), LoadError);
  CHECK_THROWS_AS(decode_checkpoint("TUTCKPT0" + bytes.substr(8)), LoadError);
  const auto manifest = checkpoint_manifest(bytes);
  CHECK(manifest.front().name == "__config__");
  CHECK(manifest.size() == r.model.params().size() + 3);
}

TEST_CASE("non-finite losses stop training with the video named") {
  auto data = small_synth(0.25, 4);
  data.data.videos[1].features(5, 2) = std::numeric_limits<float>::quiet_NaN();
  try {
    train(data.data, small_model(), small_train(2));
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find(data.data.videos[1].id) != std::string::npos);
  }
}

TEST_CASE("videos shorter than the downsampling depth are rejected") {
  auto data = small_synth(0.25, 5);
  auto mc = small_model();
  mc.layers = 6;
  CHECK_THROWS_AS(train(data.data, mc, small_train(1)), ConfigError);
}

TEST_CASE("segment table and timeline rendering") {
  const std::vector<std::string> names{"pour", "stir"};
  const std::vector<int> pred{0, 0, 1, 1, 1, 0};
  CHECK(segments_csv(pred, names) == "class,start,end\npour,0,1\nstir,2,4\npour,5,5\n");
  const std::string svg = render_timeline_svg(pred, pred, names);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t rects = 0;
  for (auto at = svg.find("<rect"); at != std::string::npos; at = svg.find("<rect", at + 1)) ++rects;
  CHECK(rects >= 6);
  CHECK(render_timeline_svg(pred, {}, names).size() < svg.size());
}

TEST_CASE("ablation grids have the documented shapes") {
  const ModelConfig m = small_model();
  const TrainConfig t = small_train(1);
  CHECK(ablation_grid("architecture", m, t).size() == 6);
  CHECK(ablation_grid("positional", m, t).size() == 6);
  CHECK(ablation_grid("ba_distance", m, t).size() == 4);
  CHECK(ablation_grid("window", m, t, {3, 5, 7}).size() == 3);
  CHECK_THROWS_AS(ablation_grid("colour", m, t), ConfigError);
  std::set<std::pair<int, int>> arms;
  for (const auto& c : ablation_grid("architecture", m, t))
    arms.emplace(static_cast<int>(c.model.architecture), static_cast<int>(c.model.attention.pattern));
  CHECK(arms.size() == 6);
  const auto data = small_synth(0.25, 6, 2);
  const auto rows = run_ablation(ablation_grid("beta", m, t, {0, 0.1}), data.data, data.data, DataConfig{});
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) CHECK(r.status == "ok");
  const std::string csv = ablation_csv(rows, default_thresholds());
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
