#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "mvoc/eval.hpp"
#include "mvoc/json_util.hpp"

namespace fs = std::filesystem;
using namespace mvoc;

namespace {

fs::path temp_dir(const char* tag) {
  auto p = fs::temp_directory_path() / (std::string("mvoc_eval_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig eval_model_config() {
  ModelConfig c;
  c.image_size = 16;
  c.d_enc = 8;
  c.slot_attr_size = 6;
  c.slot_view_size = 3;
  c.num_slots = 3;
  c.num_iterations = 2;
  c.num_viewpoints = 4;
  c.view_hidden = 8;
  c.dec_hidden = 10;
  c.unet_base = 4;
  c.unet_mults = {1, 2};
  c.timesteps = 10;
  c.codec = "half";
  return c;
}

DatasetIndex eval_dataset(const fs::path& dir, int num_test) {
  DatasetConfig dc;
  dc.image_size = 16;
  dc.num_views = 4;
  dc.min_objects = 2;
  dc.max_objects = 3;
  dc.num_train = 1;
  dc.num_valid = 1;
  dc.num_test = num_test;
  ThreadPool pool(1);
  return generate_dataset(dc, dir, 42, pool);
}

GenerateFn true_image_generator() {
  return [](const MultiViewScene& scene, int view, const Tensor&, Rng&) {
    return scene.images[static_cast<std::size_t>(view)].clone();
  };
}

MaskStack stripes(int V, int H, int W, int period) {
  MaskStack m;
  m.V = V;
  m.H = H;
  m.W = W;
  m.ids.resize(static_cast<std::size_t>(m.numel()));
  for (int v = 0; v < V; ++v)
    for (int p = 0; p < H * W; ++p)
      m.ids[static_cast<std::size_t>(v) * H * W + static_cast<std::size_t>(p)] =
          (p / period) % 2;
  return m;
}

}  // namespace

TEST_CASE("scene scoring reproduces the oracle extremes") {
  MaskStack truth = stripes(2, 4, 4, 2);
  Rng rng(3);
  std::vector<Tensor> images = {Tensor::randn({4, 4, 3}, rng), Tensor::randn({4, 4, 3}, rng)};

  SceneEval perfect = score_scene(truth, truth, images, images);
  CHECK(perfect.ari_a == 1.0);
  CHECK(perfect.ari_o == 1.0);
  CHECK(perfect.miou == 1.0);
  CHECK(perfect.recon_mse == 0.0);

  // One constant cluster against balanced stripes: chance level.
  MaskStack constant = truth;
  std::fill(constant.ids.begin(), constant.ids.end(), 0);
  SceneEval chance = score_scene(constant, truth, images, images);
  CHECK(std::abs(chance.ari_a) < 1e-12);
  CHECK(chance.miou < 1.0);
}

TEST_CASE("eval config validation") {
  EvalConfig ok;
  ok.validate();

  EvalConfig bad = ok;
  bad.strategy = "greedy";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.budget = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.seeds.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.sampler.num_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.split = "";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("evaluation walks every scene and view with exact bookkeeping") {
  fs::path dir = temp_dir("walk");
  DatasetIndex data = eval_dataset(dir, 3);
  ModelConfig mc = eval_model_config();
  Model model(mc, 5);

  EvalConfig cfg;
  cfg.strategy = "random";
  cfg.budget = 2;
  cfg.seeds = {7, 8};
  cfg.generator = true_image_generator();

  ThreadPool pool(1);
  EvalReport rep = evaluate(model, data, cfg, pool);

  REQUIRE(rep.per_scene.size() == 6);  // 2 seeds x 3 scenes
  const auto& test_ids = data.split("test");
  for (std::size_t i = 0; i < rep.per_scene.size(); ++i) {
    const SceneEval& e = rep.per_scene[i];
    CHECK(e.scene_id == test_ids[i % 3]);
    CHECK(e.seed == cfg.seeds[i / 3]);
    CHECK(e.observed.size() == 2);
    for (int v : e.observed) {
      CHECK(v >= 0);
      CHECK(v < 4);
    }
    // The mocked renderer returns the true images, so reconstruction is exact.
    CHECK(e.recon_mse == 0.0);
    CHECK(e.ari_a >= -0.5);
    CHECK(e.ari_a <= 1.0);
    CHECK(e.miou >= 0.0);
    CHECK(e.miou <= 1.0);
    CHECK(std::isfinite(e.ari_o));
  }
  CHECK(rep.recon_mse.mean == 0.0);
  CHECK(rep.config.at("strategy") == "random");
  CHECK(rep.config.at("num_scenes") == 3);

  // Aggregate = mean over seeds of per-seed scene means, sample deviation.
  auto seed_mean = [&](std::size_t s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i) acc += rep.per_scene[s * 3 + i].ari_a;
    return acc / 3.0;
  };
  const double m0 = seed_mean(0), m1 = seed_mean(1);
  const double mean = (m0 + m1) / 2.0;
  const double sd = std::sqrt((m0 - mean) * (m0 - mean) + (m1 - mean) * (m1 - mean));
  CHECK(rep.ari_a.mean == doctest::Approx(mean).epsilon(1e-14));
  CHECK(rep.ari_a.stddev == doctest::Approx(sd).epsilon(1e-12));

  // Single seed: deviation pinned to zero.
  EvalConfig one = cfg;
  one.seeds = {7};
  EvalReport rep1 = evaluate(model, data, one, pool);
  CHECK(rep1.ari_a.stddev == 0.0);
  CHECK(rep1.ari_a.mean == doctest::Approx(m0).epsilon(1e-14));

  fs::remove_all(dir);
}

TEST_CASE("evaluation is deterministic across runs and thread counts") {
  fs::path dir = temp_dir("det");
  DatasetIndex data = eval_dataset(dir, 3);
  ModelConfig mc = eval_model_config();
  Model model(mc, 11);

  EvalConfig cfg;
  cfg.strategy = "random";
  cfg.budget = 2;
  cfg.seeds = {3};
  cfg.sampler.num_steps = 2;  // real sampler path, untrained weights

  ThreadPool pool1(1);
  EvalReport a = evaluate(model, data, cfg, pool1);
  EvalReport b = evaluate(model, data, cfg, pool1);
  ThreadPool pool4(4);
  EvalReport c = evaluate(model, data, cfg, pool4);
  const std::string ja = report_to_json(a).dump();
  CHECK(ja == report_to_json(b).dump());
  CHECK(ja == report_to_json(c).dump());

  for (const SceneEval& e : a.per_scene) {
    CHECK(e.recon_mse > 0.0);
    CHECK(std::isfinite(e.recon_mse));
  }

  fs::remove_all(dir);
}

TEST_CASE("active evaluation needs a trained model and then completes") {
  fs::path dir = temp_dir("act");
  DatasetIndex data = eval_dataset(dir, 2);
  ModelConfig mc = eval_model_config();
  Model model(mc, 13);

  EvalConfig cfg;
  cfg.strategy = "active";
  cfg.budget = 2;
  cfg.seeds = {1};
  cfg.sampler.num_steps = 2;

  ThreadPool pool(1);
  CHECK_THROWS_AS(evaluate(model, data, cfg, pool), std::logic_error);

  model.pretrained = true;
  EvalReport rep = evaluate(model, data, cfg, pool);
  REQUIRE(rep.per_scene.size() == 2);
  for (const SceneEval& e : rep.per_scene) CHECK(e.observed.size() == 2);

  fs::remove_all(dir);
}

TEST_CASE("evaluation rejects an empty split") {
  fs::path dir = temp_dir("empty");
  DatasetIndex data = eval_dataset(dir, 0);
  ModelConfig mc = eval_model_config();
  Model model(mc, 17);
  EvalConfig cfg;
  cfg.generator = true_image_generator();
  ThreadPool pool(1);
  CHECK_THROWS_AS(evaluate(model, data, cfg, pool), std::invalid_argument);
  cfg.split = "holdout";
  CHECK_THROWS_AS(evaluate(model, data, cfg, pool), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("eval report round trips through json and rejects bad documents") {
  fs::path dir = temp_dir("json");
  DatasetIndex data = eval_dataset(dir, 2);
  ModelConfig mc = eval_model_config();
  Model model(mc, 19);

  EvalConfig cfg;
  cfg.strategy = "random";
  cfg.budget = 1;
  cfg.seeds = {4, 5};
  cfg.generator = true_image_generator();

  ThreadPool pool(1);
  EvalReport rep = evaluate(model, data, cfg, pool);
  nlohmann::json j = report_to_json(rep);
  EvalReport back = report_from_json(j);
  CHECK(report_to_json(back).dump() == j.dump());
  REQUIRE(back.per_scene.size() == rep.per_scene.size());
  CHECK(back.per_scene[1].scene_id == rep.per_scene[1].scene_id);
  CHECK(back.per_scene[1].observed == rep.per_scene[1].observed);
  CHECK(back.ari_o.mean == rep.ari_o.mean);
  CHECK(back.ari_o.stddev == rep.ari_o.stddev);

  nlohmann::json extra = j;
  extra["surprise"] = 1;
  CHECK_THROWS_AS(report_from_json(extra), ConfigError);
  nlohmann::json missing = j;
  missing.at("aggregate").erase("miou");
  CHECK_THROWS_AS(report_from_json(missing), ConfigError);
  nlohmann::json bad_scene = j;
  bad_scene.at("per_scene").at(0).erase("ari_a");
  CHECK_THROWS_AS(report_from_json(bad_scene), ConfigError);

  fs::remove_all(dir);
}
