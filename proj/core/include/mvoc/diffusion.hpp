#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mvoc/nets.hpp"

namespace mvoc {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // beta[t-1] for t in 1..T
  std::vector<double> alpha_bar;  // alpha_bar[t-1], cumulative product of (1 - beta)

  static NoiseSchedule linear(int T, double beta_start, double beta_end);
  static NoiseSchedule from_config(const ModelConfig& c) {
    return linear(c.timesteps, c.beta_start, c.beta_end);
  }
  // alpha_bar with the t = 0 convention of 1.
  double abar(int t) const;
};

struct SamplerConfig {
  int num_steps = 25;
  // Evenly spaced ascending subsequence of 1..T, ending at T; equals 1..T when
  // num_steps == T.
  std::vector<int> step_schedule(int T) const;
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
Tensor forward_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s);
ad::Var forward_noise(const ad::Var& z0, int t, const ad::Var& eps, const NoiseSchedule& s);

// Denoiser seams: plain-tensor form for sampling, graph form for training.
using DenoiseFn = std::function<Tensor(const Tensor& z_t, int t)>;
using DenoiseVarFn = std::function<ad::Var(const ad::Var& z_t, int t)>;

struct DenoisingLoss {
  ad::Var loss;  // scalar
  int t = 0;
  Tensor eps;
};

// Draws t ~ U{1..T} and eps ~ N(0, I), returns ||eps - fn(z_t, t)||^2.
DenoisingLoss denoising_loss_with(const DenoiseVarFn& fn, const Tensor& z0, Rng& rng,
                                  const NoiseSchedule& s);
DenoisingLoss denoising_loss(const Model& model, const Tensor& z0, const ad::Var& slots_full,
                             Rng& rng, const NoiseSchedule& s);

// Deterministic reverse process over the step subsequence: start from
// z ~ N(0, I), at each step predict z0 from the noise estimate and re-noise
// to the previous timestep in the schedule.
Tensor fast_sample(const DenoiseFn& fn, const std::vector<std::int64_t>& latent_shape,
                   const SamplerConfig& cfg, Rng& rng, const NoiseSchedule& s);

// Image <-> latent mapping. Latents are channel-standardized with the
// training-set statistics carried in the model config.
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual Tensor encode(const Tensor& image) const = 0;
  virtual Tensor decode(const Tensor& latent) const = 0;
  virtual std::vector<std::int64_t> latent_shape() const = 0;
};

std::unique_ptr<LatentCodec> make_codec(const ModelConfig& c);

}  // namespace mvoc
