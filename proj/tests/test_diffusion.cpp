#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "grad_check.hpp"
#include "mvoc/autodiff.hpp"
#include "mvoc/diffusion.hpp"
#include "mvoc/image.hpp"
#include "mvoc/rng.hpp"
#include "mvoc/tensor.hpp"

using namespace mvoc;
using ad::Var;

namespace {

ModelConfig half_config() {
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
  c.codec = "half";
  return c;
}

}  // namespace

TEST_CASE("linear schedule endpoints, monotonicity, cumulative product") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4, 2e-2);
  CHECK(s.T == 1000);
  CHECK(s.beta.front() == 1e-4);
  CHECK(s.beta.back() == doctest::Approx(2e-2).epsilon(1e-14));
  for (std::size_t i = 1; i < s.beta.size(); ++i) CHECK(s.beta[i] > s.beta[i - 1]);
  for (std::size_t i = 1; i < s.alpha_bar.size(); ++i) CHECK(s.alpha_bar[i] < s.alpha_bar[i - 1]);
  CHECK(s.alpha_bar.front() == 1.0 - 1e-4);
  CHECK(s.alpha_bar.back() > 0.0);
  CHECK(s.alpha_bar.back() < 1e-3);

  // Recurrence holds bit for bit since the forward pass is the same product.
  for (int t = 2; t <= s.T; ++t)
    CHECK(s.abar(t) == s.abar(t - 1) * (1.0 - s.beta[static_cast<std::size_t>(t - 1)]));

  // Independent reverse-order product.
  for (int t : {1, 7, 500, 1000}) {
    double prod = 1.0;
    for (int i = t - 1; i >= 0; --i) prod *= 1.0 - s.beta[static_cast<std::size_t>(i)];
    CHECK(s.abar(t) == doctest::Approx(prod).epsilon(1e-12));
  }

  CHECK(s.abar(0) == 1.0);
  CHECK_THROWS_AS(s.abar(-1), std::out_of_range);
  CHECK_THROWS_AS(s.abar(1001), std::out_of_range);

  CHECK_THROWS_AS(NoiseSchedule::linear(0, 1e-4, 2e-2), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.0, 2e-2), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.5, 0.4), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 1e-4, 1.0), std::invalid_argument);

  NoiseSchedule one = NoiseSchedule::linear(1, 0.75, 0.75);
  CHECK(one.beta[0] == 0.75);
  CHECK(one.abar(1) == 0.25);
}

TEST_CASE("forward noise closed form and limits") {
  NoiseSchedule s = NoiseSchedule::linear(1, 0.75, 0.75);  // abar(1) = 1/4
  Tensor z0 = Tensor::full({2, 3}, 1.0);
  Tensor eps = Tensor::full({2, 3}, 1.0);

  Tensor zt = forward_noise(z0, 1, eps, s);
  for (std::int64_t i = 0; i < zt.numel(); ++i)
    CHECK(zt[i] == doctest::Approx(0.5 + std::sqrt(0.75)).epsilon(1e-14));

  // t = 0 is the identity.
  Rng rng(11);
  Tensor z = Tensor::randn({4, 5}, rng);
  Tensor e = Tensor::randn({4, 5}, rng);
  Tensor z_same = forward_noise(z, 0, e, s);
  for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(z_same[i] == z[i]);

  Tensor bad = Tensor::zeros({3, 3});
  CHECK_THROWS_AS(forward_noise(z, 1, bad, s), std::invalid_argument);
}

TEST_CASE("forward noise graph form propagates the two mixing weights") {
  NoiseSchedule s = NoiseSchedule::linear(20, 0.01, 0.1);
  const int t = 13;
  Rng rng(5);
  Var z0 = ad::leaf(Tensor::randn({3, 4}, rng));
  Var eps = ad::leaf(Tensor::randn({3, 4}, rng));

  Var out = forward_noise(z0, t, eps, s);
  const double a = std::sqrt(s.abar(t)), b = std::sqrt(1.0 - s.abar(t));
  for (std::int64_t i = 0; i < out->value.numel(); ++i)
    CHECK(out->value[i] == doctest::Approx(a * z0->value[i] + b * eps->value[i]).epsilon(1e-14));

  ad::GradStore grads;
  ad::backward(ad::sum_all(out), grads);
  const Tensor& gz = *grads.find(z0.get());
  const Tensor& ge = *grads.find(eps.get());
  for (std::int64_t i = 0; i < gz.numel(); ++i) {
    CHECK(gz[i] == doctest::Approx(a).epsilon(1e-14));
    CHECK(ge[i] == doctest::Approx(b).epsilon(1e-14));
  }
}

TEST_CASE("denoising loss is zero for the exact noise inverter") {
  NoiseSchedule s = NoiseSchedule::linear(100, 1e-3, 5e-2);
  Rng data_rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor z0 = Tensor::randn({4, 4, 3}, data_rng);
    DenoiseVarFn inverter = [&](const Var& zt, int t) {
      const double a = std::sqrt(s.abar(t)), b = std::sqrt(1.0 - s.abar(t));
      return ad::scale(ad::add(zt, ad::scale(ad::constant(z0), -a)), 1.0 / b);
    };
    Rng rng(900 + trial);
    DenoisingLoss dl = denoising_loss_with(inverter, z0, rng, s);
    CHECK(dl.t >= 1);
    CHECK(dl.t <= s.T);
    CHECK(dl.loss->value.numel() == 1);
    CHECK(dl.loss->value[0] < 1e-20);
  }
}

TEST_CASE("denoising loss against a zero denoiser is the squared noise norm") {
  NoiseSchedule s = NoiseSchedule::linear(4, 1e-2, 2e-2);
  Tensor z0 = Tensor::zeros({4, 4, 3});
  DenoiseVarFn zero_fn = [&](const Var& zt, int) {
    return ad::constant(Tensor::zeros(zt->value.shape()));
  };

  Rng rng(31);
  double mean = 0.0;
  std::vector<int> t_seen(5, 0);
  const int n_draws = 400;
  for (int i = 0; i < n_draws; ++i) {
    DenoisingLoss dl = denoising_loss_with(zero_fn, z0, rng, s);
    double expect = 0.0;
    for (std::int64_t j = 0; j < dl.eps.numel(); ++j) expect += dl.eps[j] * dl.eps[j];
    CHECK(dl.loss->value[0] == doctest::Approx(expect).epsilon(1e-12));
    mean += dl.loss->value[0];
    t_seen[static_cast<std::size_t>(dl.t)]++;
  }
  mean /= n_draws;
  // E||eps||^2 = numel = 48, sd of the mean is sqrt(2 * 48 / 400) ~ 0.49.
  CHECK(std::abs(mean - 48.0) < 2.5);
  for (int t = 1; t <= 4; ++t) CHECK(t_seen[static_cast<std::size_t>(t)] > 0);
}

TEST_CASE("denoising loss gradient reaches the denoiser parameters") {
  NoiseSchedule s = NoiseSchedule::linear(10, 1e-2, 5e-2);
  Rng init(3);
  Var w = ad::leaf(Tensor::randn({2, 3}, init, 0.3));
  Tensor z0 = Tensor::randn({2, 3}, init);

  auto f = [&]() {
    DenoiseVarFn fn = [&](const Var& zt, int) { return ad::mul(zt, w); };
    Rng rng(1234);
    return denoising_loss_with(fn, z0, rng, s).loss;
  };
  CHECK(gradcheck::max_param_grad_err({w}, f, 1e-5) < 1e-6);
}

TEST_CASE("sampler step schedule") {
  SamplerConfig full;
  full.num_steps = 10;
  std::vector<int> all = full.step_schedule(10);
  for (int i = 0; i < 10; ++i) CHECK(all[static_cast<std::size_t>(i)] == i + 1);

  SamplerConfig one;
  one.num_steps = 1;
  CHECK(one.step_schedule(1000) == std::vector<int>{1000});

  SamplerConfig eight;
  eight.num_steps = 8;
  CHECK(eight.step_schedule(1000) ==
        std::vector<int>{125, 250, 375, 500, 625, 750, 875, 1000});

  SamplerConfig odd;
  odd.num_steps = 7;
  std::vector<int> steps = odd.step_schedule(1000);
  CHECK(steps.size() == 7);
  CHECK(steps.back() == 1000);
  for (std::size_t i = 1; i < steps.size(); ++i) CHECK(steps[i] > steps[i - 1]);
  CHECK(steps.front() >= 1);

  SamplerConfig bad;
  bad.num_steps = 0;
  CHECK_THROWS_AS(bad.step_schedule(10), std::invalid_argument);
  bad.num_steps = 11;
  CHECK_THROWS_AS(bad.step_schedule(10), std::invalid_argument);
}

TEST_CASE("fast sampler recovers a point mass") {
  NoiseSchedule s = NoiseSchedule::linear(40, 1e-3, 2e-2);
  Rng target_rng(8);
  Tensor target = Tensor::randn({3, 3, 3}, target_rng);

  // If the data distribution is a Dirac at `target`, the optimal denoiser is
  // available in closed form and the sampler must land on the target exactly.
  DenoiseFn oracle = [&](const Tensor& z, int t) {
    const double a = std::sqrt(s.abar(t)), b = std::sqrt(1.0 - s.abar(t));
    Tensor e(z.shape());
    for (std::int64_t i = 0; i < z.numel(); ++i) e[i] = (z[i] - a * target[i]) / b;
    return e;
  };

  for (int num_steps : {40, 7, 1}) {
    SamplerConfig cfg;
    cfg.num_steps = num_steps;
    Rng rng(99);
    Tensor out = fast_sample(oracle, {3, 3, 3}, cfg, rng, s);
    for (std::int64_t i = 0; i < out.numel(); ++i)
      CHECK(out[i] == doctest::Approx(target[i]).epsilon(1e-9));
  }
}

TEST_CASE("fast sampler determinism and stability") {
  NoiseSchedule s = NoiseSchedule::linear(30, 1e-3, 2e-2);
  DenoiseFn bounded = [](const Tensor& z, int) {
    Tensor e(z.shape());
    for (std::int64_t i = 0; i < z.numel(); ++i) e[i] = std::tanh(z[i]);
    return e;
  };
  SamplerConfig cfg;
  cfg.num_steps = 6;

  Rng r1(42), r2(42), r3(43);
  Tensor a = fast_sample(bounded, {4, 4, 3}, cfg, r1, s);
  Tensor b = fast_sample(bounded, {4, 4, 3}, cfg, r2, s);
  Tensor c = fast_sample(bounded, {4, 4, 3}, cfg, r3, s);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.numel())) ==
        0);
  double diff = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) diff += std::abs(a[i] - c[i]);
  CHECK(diff > 1e-6);
  CHECK(a.all_finite());

  DenoiseFn wrong_shape = [](const Tensor&, int) { return Tensor::zeros({2, 2, 3}); };
  Rng r4(1);
  CHECK_THROWS_AS(fast_sample(wrong_shape, {4, 4, 3}, cfg, r4, s), std::runtime_error);
}

TEST_CASE("identity codec standardizes channels and inverts") {
  ModelConfig c = half_config();
  c.codec = "identity";
  c.data_mean = {0.2, 0.4, 0.6};
  c.data_std = {0.5, 0.25, 2.0};
  auto codec = make_codec(c);
  CHECK(codec->latent_shape() == std::vector<std::int64_t>{16, 16, 3});

  Rng rng(17);
  Tensor img({16, 16, 3});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform();

  Tensor z = codec->encode(img);
  CHECK(z.shape() == img.shape());
  for (std::int64_t i = 0; i < z.numel(); ++i) {
    std::size_t ch = static_cast<std::size_t>(i % 3);
    CHECK(z[i] == doctest::Approx((img[i] - c.data_mean[ch]) / c.data_std[ch]).epsilon(1e-14));
  }

  Tensor back = codec->decode(z);
  for (std::int64_t i = 0; i < back.numel(); ++i)
    CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));

  // Decode clips to the displayable range.
  Tensor loud = Tensor::full({16, 16, 3}, 50.0);
  Tensor clipped = codec->decode(loud);
  for (std::int64_t i = 0; i < clipped.numel(); ++i) CHECK(clipped[i] == 1.0);

  CHECK_THROWS_AS(codec->encode(Tensor::zeros({8, 8, 3})), std::invalid_argument);
  CHECK_THROWS_AS(codec->encode(Tensor::zeros({16, 16})), std::invalid_argument);

  ModelConfig bad = half_config();
  bad.codec = "nonsense";
  CHECK_THROWS_AS(make_codec(bad), std::invalid_argument);
}

TEST_CASE("half codec pools down and resizes back") {
  ModelConfig c = half_config();
  auto codec = make_codec(c);
  CHECK(codec->latent_shape() == std::vector<std::int64_t>{8, 8, 3});

  Tensor flat = Tensor::full({16, 16, 3}, 0.3);
  Tensor z = codec->encode(flat);
  CHECK(z.shape() == std::vector<std::int64_t>{8, 8, 3});
  for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == doctest::Approx(0.3).epsilon(1e-14));
  Tensor back = codec->decode(z);
  CHECK(back.shape() == std::vector<std::int64_t>{16, 16, 3});
  for (std::int64_t i = 0; i < back.numel(); ++i)
    CHECK(back[i] == doctest::Approx(0.3).epsilon(1e-12));

  // A smooth ramp survives the round trip up to border clamping.
  Tensor ramp({16, 16, 3});
  for (std::int64_t y = 0; y < 16; ++y)
    for (std::int64_t x = 0; x < 16; ++x)
      for (std::int64_t ch = 0; ch < 3; ++ch)
        ramp[(y * 16 + x) * 3 + ch] = static_cast<double>(y + x) / 30.0;
  Tensor rt = codec->decode(codec->encode(ramp));
  double mse = 0.0;
  for (std::int64_t i = 0; i < rt.numel(); ++i) {
    double d = rt[i] - ramp[i];
    mse += d * d;
  }
  mse /= static_cast<double>(rt.numel());
  CHECK(mse < 1e-3);
}

TEST_CASE("bilinear resize hand values") {
  Tensor src({2, 2, 1});
  src[0] = 0.0;
  src[1] = 1.0;
  src[2] = 2.0;
  src[3] = 3.0;
  Tensor up = resize_bilinear(src, 4, 4);
  const double expect[16] = {0.0, 0.25, 0.75, 1.0,  0.5, 0.75, 1.25, 1.5,
                             1.5, 1.75, 2.25, 2.5,  2.0, 2.25, 2.75, 3.0};
  for (int i = 0; i < 16; ++i)
    CHECK(up[i] == doctest::Approx(expect[i]).epsilon(1e-14));

  // Same-size resize is the identity.
  Rng rng(2);
  Tensor x = Tensor::randn({5, 7, 2}, rng);
  Tensor same = resize_bilinear(x, 5, 7);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(same[i] == x[i]);

  CHECK_THROWS_AS(resize_bilinear(Tensor::zeros({4, 4}), 2, 2), std::invalid_argument);
}

TEST_CASE("average pooling and clipping") {
  Tensor src({2, 2, 1});
  src[0] = 1.0;
  src[1] = 2.0;
  src[2] = 3.0;
  src[3] = 4.0;
  Tensor p = avgpool2x(src);
  CHECK(p.shape() == std::vector<std::int64_t>{1, 1, 1});
  CHECK(p[0] == 2.5);
  CHECK_THROWS_AS(avgpool2x(Tensor::zeros({3, 4, 1})), std::invalid_argument);

  Tensor v({3});
  v[0] = -0.5;
  v[1] = 0.5;
  v[2] = 1.5;
  Tensor cl = clip01(v);
  CHECK(cl[0] == 0.0);
  CHECK(cl[1] == 0.5);
  CHECK(cl[2] == 1.0);
}

TEST_CASE("model denoiser plugs into the loss and sampler seams") {
  ModelConfig c = half_config();
  Model model(c, 404);
  NoiseSchedule s = NoiseSchedule::from_config(c);
  CHECK(s.T == 50);
  auto codec = make_codec(c);

  Rng rng(6);
  Tensor img({16, 16, 3});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
  Tensor z0 = codec->encode(img);

  Var slots = ad::constant(Tensor::randn({c.num_slots, c.d_full()}, rng));
  ad::NoGradGuard ng;
  DenoisingLoss dl = denoising_loss(model, z0, slots, rng, s);
  // Zero-initialized output heads make the initial prediction exactly zero,
  // so the first loss is the plain noise norm.
  double expect = 0.0;
  for (std::int64_t j = 0; j < dl.eps.numel(); ++j) expect += dl.eps[j] * dl.eps[j];
  CHECK(dl.loss->value[0] == doctest::Approx(expect).epsilon(1e-12));

  SamplerConfig cfg;
  cfg.num_steps = 4;
  DenoiseFn fn = [&](const Tensor& z, int t) {
    return model.denoise(ad::constant(z), static_cast<double>(t), slots)->value;
  };
  Tensor sample = fast_sample(fn, codec->latent_shape(), cfg, rng, s);
  CHECK(sample.shape() == codec->latent_shape());
  CHECK(sample.all_finite());
  Tensor decoded = codec->decode(sample);
  CHECK(decoded.shape() == std::vector<std::int64_t>{16, 16, 3});
}
