#include "mvoc/nets.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "grad_check.hpp"
#include "mvoc/json_util.hpp"
#include "mvoc/mvsa.hpp"
#include "mvoc/util.hpp"

using namespace mvoc;
using ad::Var;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.image_size = 16;
  c.d_enc = 8;
  c.slot_attr_size = 6;
  c.slot_view_size = 3;
  c.num_slots = 2;
  c.num_iterations = 2;
  c.num_viewpoints = 4;
  c.view_hidden = 8;
  c.dec_hidden = 10;
  c.unet_base = 4;
  c.unet_mults = {1, 2};
  c.timesteps = 50;
  return c;
}

Tensor rand_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({size, size, 3});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("extract_features: shape, determinism, finiteness") {
  Model model(micro_config(), 7);
  Tensor img = rand_image(16, 1);
  Var f1 = model.extract_features(img);
  Var f2 = model.extract_features(img);
  CHECK(f1->value.shape() == std::vector<std::int64_t>{16, 8});
  CHECK(f1->value.all_finite());
  CHECK(max_abs_diff(f1->value, f2->value) == 0.0);
  Var fz = model.extract_features(Tensor::zeros({16, 16, 3}));
  CHECK(fz->value.all_finite());
  CHECK_THROWS_AS(model.extract_features(Tensor::zeros({8, 8, 3})), std::invalid_argument);
}

TEST_CASE("extract_features: perturbation stays within the receptive field") {
  // Strided 3x3 stack: patch o is centered at input 4o with radius 8.
  Model model(micro_config(), 7);
  Tensor img = rand_image(16, 2);
  Tensor base = model.extract_features(img)->value;
  const int P = 4;
  for (auto [py, px] : std::vector<std::pair<int, int>>{{0, 0}, {9, 14}, {15, 3}}) {
    Tensor pert = img.clone();
    pert[(static_cast<std::int64_t>(py) * 16 + px) * 3 + 1] += 0.5;
    Tensor out = model.extract_features(pert)->value;
    for (int oy = 0; oy < P; ++oy)
      for (int ox = 0; ox < P; ++ox) {
        bool covered = std::abs(4 * oy - py) <= 8 && std::abs(4 * ox - px) <= 8;
        if (covered) continue;
        for (int c = 0; c < 8; ++c) {
          CAPTURE(py);
          CAPTURE(px);
          CAPTURE(oy);
          CAPTURE(ox);
          CHECK(out[(oy * P + ox) * 8 + c] == base[(oy * P + ox) * 8 + c]);
        }
      }
  }
}

TEST_CASE("encode_viewpoint: determinism, distinctness, fractional inputs") {
  Model model(micro_config(), 7);
  std::vector<Tensor> reps;
  for (int c = 1; c <= 4; ++c) reps.push_back(model.encode_viewpoint(c)->value.clone());
  for (int c = 1; c <= 4; ++c)
    CHECK(max_abs_diff(model.encode_viewpoint(c)->value, reps[static_cast<std::size_t>(c - 1)]) == 0.0);
  for (std::size_t a = 0; a < reps.size(); ++a)
    for (std::size_t b = a + 1; b < reps.size(); ++b) CHECK(max_abs_diff(reps[a], reps[b]) > 1e-8);
  Var frac = model.encode_viewpoint(1.5);
  CHECK(frac->value.all_finite());
  CHECK(frac->value.numel() == 3);
  ModelConfig five = micro_config();
  five.view_input_channels = 5;
  Model m5(five, 7);
  CHECK(m5.encode_viewpoint(2.5)->value.all_finite());
}

TEST_CASE("decode_features: alpha normalization and symmetry") {
  Model model(micro_config(), 9);
  Rng rng(44);
  Tensor slots = Tensor::randn({2, 9}, rng);
  auto [recon, alphas] = model.decode_features(ad::constant(slots));
  CHECK(recon->value.shape() == std::vector<std::int64_t>{16, 8});
  CHECK(alphas->value.shape() == std::vector<std::int64_t>{16, 2});
  for (int n = 0; n < 16; ++n) {
    double s = alphas->value.at(n, 0) + alphas->value.at(n, 1);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  // identical slots -> identical alpha maps
  Tensor twin = Tensor::zeros({2, 9});
  for (int j = 0; j < 9; ++j) twin.at(0, j) = twin.at(1, j) = slots.at(0, j);
  auto [r2, a2] = model.decode_features(ad::constant(twin));
  for (int n = 0; n < 16; ++n) CHECK(a2->value.at(n, 0) == a2->value.at(n, 1));
  CHECK_THROWS_AS(model.decode_features(ad::constant(Tensor::zeros({2, 5}))), std::invalid_argument);
}

TEST_CASE("decode_features: gradient matches finite differences") {
  Model model(micro_config(), 9);
  Tensor slots = gradcheck::rand_t({2, 9}, 3, 0.5);
  Tensor target = gradcheck::rand_t({16, 8}, 4, 0.5);
  double err = gradcheck::max_grad_err({slots}, [&](const std::vector<Var>& in) {
    auto [recon, alphas] = model.decode_features(in[0]);
    return ad::sse(recon, ad::constant(target));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("denoise: shape contract and zero output at init") {
  Model model(micro_config(), 11);
  Rng rng(5);
  Tensor z = Tensor::randn({16, 16, 3}, rng);
  Tensor slots = Tensor::randn({2, 9}, rng);
  for (double t : {1.0, 25.0, 50.0}) {
    Var eps = model.denoise(ad::constant(z), t, ad::constant(slots));
    CHECK(eps->value.shape() == z.shape());
    CHECK(eps->value.all_finite());
    // final conv starts zero-initialized
    CHECK(max_abs_diff(eps->value, Tensor::zeros({16, 16, 3})) == 0.0);
  }
  CHECK_THROWS_AS(model.denoise(ad::constant(Tensor::zeros({8, 8, 3})), 1.0, ad::constant(slots)),
                  std::invalid_argument);
}

TEST_CASE("denoise: invariant to slot permutation") {
  Model model(micro_config(), 11);
  // Give the zero-initialized output layers non-trivial weights.
  Rng wr(17);
  for (const auto& name : model.params().names()) {
    Tensor& t = model.params().get(name)->value;
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] += 0.05 * wr.normal();
  }
  Rng rng(6);
  Tensor z = Tensor::randn({16, 16, 3}, rng);
  Tensor slots = Tensor::randn({3, 9}, rng);  // also checks K != num_slots support
  Tensor perm = Tensor::zeros({3, 9});
  const int order[3] = {2, 0, 1};
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 9; ++j) perm.at(k, j) = slots.at(order[k], j);
  Tensor a = model.denoise(ad::constant(z), 7.0, ad::constant(slots))->value;
  Tensor b = model.denoise(ad::constant(z), 7.0, ad::constant(perm))->value;
  CHECK(max_abs_diff(a, b) < 1e-6);
  CHECK(max_abs_diff(a, Tensor::zeros({16, 16, 3})) > 1e-6);  // non-degenerate check
}

TEST_CASE("denoise: gradient w.r.t. latent and slots matches finite differences") {
  ModelConfig cfg = micro_config();
  cfg.codec = "half";  // 8x8 latent keeps the element count small for the FD sweep
  Model model(cfg, 13);
  Rng wr(18);
  for (const auto& name : model.params().names()) {
    Tensor& t = model.params().get(name)->value;
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] += 0.05 * wr.normal();
  }
  Tensor z = gradcheck::rand_t({8, 8, 3}, 21, 0.5);
  Tensor slots = gradcheck::rand_t({2, 9}, 22, 0.5);
  Tensor probe = gradcheck::rand_t({8, 8, 3}, 23);
  double err = gradcheck::max_grad_err(
      {z, slots},
      [&](const std::vector<Var>& in) {
        Var out = model.denoise(in[0], 9.0, in[1]);
        return ad::sum_all(ad::mul(out, ad::constant(probe)));
      },
      1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("parameter store: registration, freezing, hashing") {
  Model model(micro_config(), 3);
  ParamStore& ps = model.params();
  CHECK_THROWS_AS(ps.add("enc.pos", Tensor::zeros({1})), std::logic_error);
  CHECK_THROWS_AS(ps.get("nope"), std::out_of_range);
  CHECK(ps.total_numel() > 1000);

  int enc_params = ps.set_trainable("enc.", false);
  CHECK(enc_params == 15);  // 4 convs (w+b), pos, ln (g+b), 2 fc (w+b)
  CHECK_FALSE(ps.get("enc.conv1.w")->requires_grad);
  CHECK(ps.get("sa.mu")->requires_grad);
  ps.set_trainable("enc.", true);
  CHECK(ps.get("enc.conv1.w")->requires_grad);

  std::uint64_t h0 = ps.content_hash();
  CHECK(h0 == ps.content_hash());
  ps.get("sa.mu")->value[0] += 1e-9;
  CHECK(ps.content_hash() != h0);
}

TEST_CASE("truncated normal init stays within bounds") {
  Rng rng(99);
  Tensor t = truncated_normal({4000}, 0.1, rng);
  double mean = 0.0;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    CHECK(std::abs(t[i]) <= 0.2000001);
    mean += t[i];
  }
  mean /= static_cast<double>(t.numel());
  CHECK(std::abs(mean) < 0.01);
}

TEST_CASE("model config json round trip and validation") {
  ModelConfig c = micro_config();
  c.codec = "half";
  c.data_mean = {0.5, 0.4, 0.3};
  c.data_std = {0.2, 0.2, 0.25};
  ModelConfig d = model_config_from_json(model_config_to_json(c));
  CHECK(d.image_size == c.image_size);
  CHECK(d.codec == "half");
  CHECK(d.latent_size() == 8);
  CHECK(d.data_std == c.data_std);
  CHECK(d.unet_mults == c.unet_mults);

  nlohmann::json bad = model_config_to_json(c);
  bad["mystery"] = 1;
  CHECK_THROWS_AS(model_config_from_json(bad), ConfigError);
  nlohmann::json bad2 = model_config_to_json(c);
  bad2["codec"] = "vae";
  CHECK_THROWS_AS(model_config_from_json(bad2), ConfigError);
  nlohmann::json bad3 = model_config_to_json(c);
  bad3["view_input_channels"] = 3;
  CHECK_THROWS_AS(model_config_from_json(bad3), ConfigError);
}

TEST_CASE("checkpoint round trip preserves parameters, config, optimizer") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "mvoc_ckpt_test";
  fs::create_directories(dir);
  std::string path = (dir / "model.ckpt").string();

  ModelConfig cfg = micro_config();
  cfg.data_mean = {0.1, 0.2, 0.3};
  Model model(cfg, 42);
  model.pretrained = true;
  OptimizerState opt;
  opt.t = 77;
  Rng rng(8);
  for (const auto& name : model.params().names()) {
    const Tensor& p = model.params().get(name)->value;
    opt.slots.emplace(name, AdamSlot{Tensor::randn(p.shape(), rng, 0.01),
                                     Tensor::randn(p.shape(), rng, 0.001)});
  }
  save_checkpoint(path, model, &opt, 1234);

  OptimizerState opt2;
  std::int64_t step = 0;
  auto loaded = load_checkpoint(path, &opt2, &step);
  CHECK(step == 1234);
  CHECK(loaded->pretrained);
  CHECK(loaded->config().data_mean == cfg.data_mean);
  CHECK(loaded->params().content_hash() == model.params().content_hash());
  CHECK(opt2.t == 77);
  REQUIRE(opt2.slots.count("sa.mu") == 1);
  CHECK(max_abs_diff(opt2.slots.at("sa.mu").m, opt.slots.at("sa.mu").m) == 0.0);
  CHECK(max_abs_diff(opt2.slots.at("sa.mu").v, opt.slots.at("sa.mu").v) == 0.0);

  // two saves of identical state are byte-identical
  std::string path2 = (dir / "model2.ckpt").string();
  save_checkpoint(path2, model, &opt, 1234);
  CHECK(hash_file(path) == hash_file(path2));

  // corrupted magic rejected
  std::string junk = (dir / "junk.ckpt").string();
  atomic_write_file(junk, std::string("NOTAMODEL"));
  CHECK_THROWS_AS(load_checkpoint(junk), std::runtime_error);
  fs::remove_all(dir);
}
