#include "mvoc/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "mvoc/image.hpp"

namespace mvoc {

using ad::Var;

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  if (T < 1 || beta_start <= 0 || beta_end < beta_start || beta_end >= 1)
    throw std::invalid_argument("NoiseSchedule::linear: bad parameters");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<std::size_t>(T));
  s.alpha_bar.resize(static_cast<std::size_t>(T));
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    s.beta[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - s.beta[static_cast<std::size_t>(i)];
    s.alpha_bar[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

double NoiseSchedule::abar(int t) const {
  if (t == 0) return 1.0;
  if (t < 1 || t > T) throw std::out_of_range("NoiseSchedule::abar: t outside [0, T]");
  return alpha_bar[static_cast<std::size_t>(t - 1)];
}

std::vector<int> SamplerConfig::step_schedule(int T) const {
  if (num_steps < 1 || num_steps > T) throw std::invalid_argument("sampler: bad num_steps");
  std::vector<int> steps(static_cast<std::size_t>(num_steps));
  for (int i = 0; i < num_steps; ++i)
    steps[static_cast<std::size_t>(i)] =
        static_cast<int>(static_cast<std::int64_t>(i + 1) * T / num_steps);
  return steps;
}

Tensor forward_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
  if (z0.shape() != eps.shape()) throw std::invalid_argument("forward_noise: shape mismatch");
  const double ab = s.abar(t);
  Tensor out(z0.shape());
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

Var forward_noise(const Var& z0, int t, const Var& eps, const NoiseSchedule& s) {
  if (z0->value.shape() != eps->value.shape())
    throw std::invalid_argument("forward_noise: shape mismatch");
  const double ab = s.abar(t);
  return ad::add(ad::scale(z0, std::sqrt(ab)), ad::scale(eps, std::sqrt(1.0 - ab)));
}

DenoisingLoss denoising_loss_with(const DenoiseVarFn& fn, const Tensor& z0, Rng& rng,
                                  const NoiseSchedule& s) {
  const int t = 1 + static_cast<int>(rng.uniform_int(s.T));
  Tensor eps = Tensor::randn(z0.shape(), rng);
  Var zt = forward_noise(ad::constant(z0), t, ad::constant(eps), s);
  Var loss = ad::sse(ad::constant(eps), fn(zt, t));
  return {loss, t, std::move(eps)};
}

DenoisingLoss denoising_loss(const Model& model, const Tensor& z0, const Var& slots_full, Rng& rng,
                             const NoiseSchedule& s) {
  return denoising_loss_with(
      [&](const Var& zt, int t) { return model.denoise(zt, static_cast<double>(t), slots_full); },
      z0, rng, s);
}

Tensor fast_sample(const DenoiseFn& fn, const std::vector<std::int64_t>& latent_shape,
                   const SamplerConfig& cfg, Rng& rng, const NoiseSchedule& s) {
  const std::vector<int> steps = cfg.step_schedule(s.T);
  Tensor z = Tensor::randn(latent_shape, rng);
  for (int i = static_cast<int>(steps.size()) - 1; i >= 0; --i) {
    const int t = steps[static_cast<std::size_t>(i)];
    const int t_prev = i > 0 ? steps[static_cast<std::size_t>(i - 1)] : 0;
    const Tensor eps_hat = fn(z, t);
    if (eps_hat.shape() != z.shape()) throw std::runtime_error("fast_sample: denoiser shape");
    const double ab = s.abar(t), ab_prev = s.abar(t_prev);
    const double inv_sqrt_ab = 1.0 / std::sqrt(ab);
    const double noise_coeff = std::sqrt(1.0 - ab);
    const double a = std::sqrt(ab_prev), b = std::sqrt(1.0 - ab_prev);
    Tensor next(z.shape());
    for (std::int64_t j = 0; j < z.numel(); ++j) {
      const double z0_hat = (z[j] - noise_coeff * eps_hat[j]) * inv_sqrt_ab;
      next[j] = a * z0_hat + b * eps_hat[j];
    }
    z = std::move(next);
  }
  return z;
}

namespace {

class ScaledCodec : public LatentCodec {
 public:
  ScaledCodec(const ModelConfig& c, bool half) : half_(half) {
    image_size_ = c.image_size;
    mean_ = c.data_mean;
    std_ = c.data_std;
  }

  Tensor encode(const Tensor& image) const override {
    if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) != image_size_ ||
        image.dim(1) != image_size_)
      throw std::invalid_argument("codec encode: image shape");
    Tensor z = half_ ? avgpool2x(image) : image.clone();
    for (std::int64_t i = 0; i < z.numel(); ++i) {
      std::size_t ch = static_cast<std::size_t>(i % 3);
      z[i] = (z[i] - mean_[ch]) / std_[ch];
    }
    return z;
  }

  Tensor decode(const Tensor& latent) const override {
    Tensor x = latent.clone();
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      std::size_t ch = static_cast<std::size_t>(i % 3);
      x[i] = x[i] * std_[ch] + mean_[ch];
    }
    if (half_) x = resize_bilinear(x, image_size_, image_size_);
    return clip01(x);
  }

  std::vector<std::int64_t> latent_shape() const override {
    const std::int64_t hs = half_ ? image_size_ / 2 : image_size_;
    return {hs, hs, 3};
  }

 private:
  bool half_;
  int image_size_ = 0;
  std::vector<double> mean_, std_;
};

}  // namespace

std::unique_ptr<LatentCodec> make_codec(const ModelConfig& c) {
  if (c.codec == "identity") return std::make_unique<ScaledCodec>(c, false);
  if (c.codec == "half") return std::make_unique<ScaledCodec>(c, true);
  throw std::invalid_argument("unknown codec: " + c.codec);
}

}  // namespace mvoc
