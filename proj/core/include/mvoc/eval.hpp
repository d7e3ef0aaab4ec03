#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mvoc/avs.hpp"
#include "mvoc/metrics.hpp"
#include "mvoc/threadpool.hpp"

namespace mvoc {

// Renders one view during evaluation; the default samples the diffusion
// decoder conditioned on the inferred attribute slots.
using GenerateFn =
    std::function<Tensor(const MultiViewScene& scene, int view, const Tensor& attr, Rng& rng)>;

struct EvalConfig {
  std::string split = "test";
  std::string strategy = "random";  // random | active
  int budget = 2;
  std::vector<std::uint64_t> seeds = {1};
  SamplerConfig sampler{8};
  int selection_samples = 1;
  GenerateFn generator;

  void validate() const;
};

struct SceneEval {
  std::string scene_id;
  std::uint64_t seed = 0;
  std::vector<int> observed;
  double ari_a = 0.0;
  double ari_o = 0.0;
  double miou = 0.0;
  double recon_mse = 0.0;
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample deviation across seeds, 0 for a single seed
};

struct EvalReport {
  nlohmann::json config;
  std::vector<SceneEval> per_scene;  // seed-major, scenes in dataset order
  MetricSummary ari_a, ari_o, miou, recon_mse;
};

// Metric block for one scene given its predictions; identity fields are left
// for the caller.
SceneEval score_scene(const MaskStack& pred, const MaskStack& truth,
                      const std::vector<Tensor>& pred_images,
                      const std::vector<Tensor>& true_images);

// Full evaluation pass: per scene and seed, choose an observation set by the
// configured strategy, infer slots, render every view from them, segment all
// views (real images for observed ones, rendered images for the rest) with a
// warm-started attention pass, and score against ground truth.
EvalReport evaluate(const Model& model, const DatasetIndex& data, const EvalConfig& cfg,
                    ThreadPool& pool);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// The generator hook is not serialized.
nlohmann::json eval_config_to_json(const EvalConfig& cfg);
EvalConfig eval_config_from_json(const nlohmann::json& j);

// One (scene, seed) pair under both strategies; values are active minus random.
struct PairedDelta {
  std::string scene_id;
  std::uint64_t seed = 0;
  double ari_a = 0.0;
  double ari_o = 0.0;
  double miou = 0.0;
  double recon_mse = 0.0;
};

struct DeltaSummary {
  double mean = 0.0;
  double stddev = 0.0;
  // One-sided sign test for "active is better"; ties are dropped. Better means
  // higher for ari/miou and lower for recon_mse.
  double p_value = 1.0;
};

struct StrategyComparison {
  EvalReport random, active;
  std::vector<PairedDelta> deltas;  // aligned with per_scene order
  DeltaSummary ari_a, ari_o, miou, recon_mse;
};

// P(W >= wins) for W ~ Binomial(wins + losses, 1/2); 1.0 when there are no
// untied pairs.
double sign_test_p(int wins, int losses);

// Pairs two reports by (scene, seed); throws std::invalid_argument when they
// do not cover the same evaluations in the same order.
StrategyComparison compare_reports(const EvalReport& random_report,
                                   const EvalReport& active_report);

// Runs evaluate() twice with the strategy forced to random and active.
StrategyComparison compare_strategies(const Model& model, const DatasetIndex& data,
                                      const EvalConfig& base, ThreadPool& pool);

nlohmann::json comparison_to_json(const StrategyComparison& c);

}  // namespace mvoc
