#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mvoc/avs.hpp"
#include "mvoc/diffusion.hpp"
#include "mvoc/mvsa.hpp"
#include "mvoc/scenegen.hpp"
#include "mvoc/threadpool.hpp"

namespace mvoc {

struct TrainConfig {
  std::string stage = "pretrain";    // pretrain | multiview
  std::string strategy = "random";   // random | active (multiview only)
  int budget = 4;                    // views per observation set
  int batch_size = 8;
  int max_steps = 20000;
  double learning_rate = 1e-4;
  std::map<std::string, double> lr_multipliers;  // parameter prefix -> factor
  int lr_warmup_steps = 1000;
  int lambda_warmup_steps = 2000;
  double final_lambda = 0.5;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  int validate_every = 1000;
  int log_every = 10;
  bool freeze_encoder = true;    // multiview: keep the feature targets stationary
  bool frozen_selector = false;  // active: select with the pretrain weights
  int selection_samples = 1;
  int sampler_steps = 8;  // selection-time sampler budget

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// 0 through the warmup, then linear up to final_lambda at max_steps.
double lambda_schedule(std::int64_t step, const TrainConfig& c);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 0;  // linear learning-rate ramp
  std::map<std::string, double> multipliers;
};

AdamConfig adam_from(const TrainConfig& c);

// Base rate at optimizer tick t (1-based), before per-parameter multipliers.
double adam_rate(const AdamConfig& cfg, std::int64_t t);

// One update over accumulated gradients; touches only parameters that both
// require gradients and received one.
void adam_step(ParamStore& params, const ad::GradStore& grads, OptimizerState& state,
               const AdamConfig& cfg);

// Single-view denoising loss: cold slot attention on one view, then the
// noise-prediction error of the conditioned denoiser.
ad::Var pretrain_loss(const Model& model, const Tensor& image, double annotation,
                      const NoiseSchedule& s, const LatentCodec& codec, Rng& rng);

// Blended multi-view loss over the observed views of one scene: for each view,
// lambda times the denoising error plus (1 - lambda) times the feature
// reconstruction error against the (detached) encoder features. The rng
// stream is consumed identically for every lambda.
ad::Var multiview_loss(const Model& model, const MultiViewScene& scene,
                       const std::vector<int>& observed, double lambda, const NoiseSchedule& s,
                       const LatentCodec& codec, Rng& rng);

struct RunManifest {
  nlohmann::json config;        // training config echo
  nlohmann::json model_config;  // architecture the run used
  std::string dataset_hash;     // fingerprint of the dataset manifest
  std::string loss_log;         // relative path of the per-step log
  std::vector<std::string> checkpoints;
  std::string final_checkpoint;
  std::int64_t steps_completed = 0;
  bool diverged = false;
};

void write_manifest(const RunManifest& m, const std::filesystem::path& out_dir);
RunManifest read_manifest(const std::filesystem::path& out_dir);

// Stage one: train on randomly chosen single views with the denoising loss.
// Aborts on a non-finite loss, keeping the last good checkpoint as final.
RunManifest pretrain_single_view(const DatasetIndex& data, const ModelConfig& mc,
                                 const TrainConfig& tc, const std::filesystem::path& out_dir,
                                 ThreadPool& pool);

// Stage two: blended-loss training with per-scene observation sets chosen by
// the configured strategy. Starts from `pretrain_checkpoint` when given (and
// always for strategy=active), otherwise from `scratch_config`. `resume`
// continues a run from one of its checkpoints. Non-finite steps are rejected
// and logged, not fatal.
RunManifest train_multiview(const DatasetIndex& data, const TrainConfig& tc,
                            const std::filesystem::path& pretrain_checkpoint,
                            const ModelConfig* scratch_config,
                            const std::filesystem::path& out_dir, ThreadPool& pool,
                            const std::filesystem::path& resume = {});

}  // namespace mvoc
