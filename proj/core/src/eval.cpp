#include "mvoc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mvoc/json_util.hpp"

namespace mvoc {

using ad::Var;

void EvalConfig::validate() const {
  if (split.empty()) throw ConfigError("eval config: split must be named");
  if (strategy != "random" && strategy != "active")
    throw ConfigError("eval config: strategy must be random or active");
  if (budget < 1) throw ConfigError("eval config: budget must be >= 1");
  if (seeds.empty()) throw ConfigError("eval config: at least one seed");
  if (sampler.num_steps < 1) throw ConfigError("eval config: sampler steps must be >= 1");
  if (selection_samples < 1) throw ConfigError("eval config: selection_samples must be >= 1");
}

SceneEval score_scene(const MaskStack& pred, const MaskStack& truth,
                      const std::vector<Tensor>& pred_images,
                      const std::vector<Tensor>& true_images) {
  SceneEval e;
  e.ari_a = ari(pred, truth, AriMode::All);
  e.ari_o = ari(pred, truth, AriMode::Objects);
  e.miou = mvoc::miou(pred, truth);
  e.recon_mse = recon_error(pred_images, true_images);
  return e;
}

namespace {

// predict_view without the trained-model gate: evaluation of a scratch
// checkpoint should complete and report chance-level numbers.
Tensor sample_view(const Model& model, const LatentCodec& codec, const Tensor& attr,
                   double annotation, const SamplerConfig& sampler, Rng& rng) {
  ad::NoGradGuard ng;
  Var view_rep = model.encode_viewpoint(annotation);
  Var slots_full = make_slots_full(ad::constant(attr.clone()), view_rep);
  NoiseSchedule schedule = NoiseSchedule::from_config(model.config());
  DenoiseFn fn = [&](const Tensor& z, int t) {
    return model.denoise(ad::constant(z.clone()), static_cast<double>(t), slots_full)->value;
  };
  return codec.decode(fast_sample(fn, codec.latent_shape(), sampler, rng, schedule));
}

SceneEval eval_scene(const Model& model, const LatentCodec& codec, const MultiViewScene& scene,
                     const EvalConfig& cfg, std::uint64_t seed, std::uint64_t scene_idx) {
  ad::NoGradGuard ng;
  const int V = scene.num_views();
  const int M = std::min(cfg.budget, V);
  const std::uint64_t scene_seed = mix_seed({seed, stream_tag("eval_scene"), scene_idx});

  std::vector<int> observed;
  Tensor attr;
  if (cfg.strategy == "active") {
    SelectionConfig sc;
    sc.sampler = cfg.sampler;
    sc.samples_per_candidate = cfg.selection_samples;
    SelectionResult res = active_select(model, scene, M, sc, scene_seed);
    observed = res.partition.observed;
    attr = res.slots.attr;
  } else {
    Rng rng(scene_seed);
    observed = random_select(V, M, rng).observed;
    std::vector<Var> feats, reps;
    for (int v : observed) {
      feats.push_back(model.extract_features(scene.images[static_cast<std::size_t>(v)]));
      reps.push_back(model.encode_viewpoint(scene.annotations[static_cast<std::size_t>(v)]));
    }
    SlotAttnResult res = multiview_slot_attention(model, feats, reps, std::nullopt, &rng);
    attr = res.attr->value.clone();
  }

  // Every view is rendered from the inferred slots; unknown views additionally
  // stand in for the missing real images during mask inference.
  std::vector<Tensor> rendered(static_cast<std::size_t>(V));
  for (int v = 0; v < V; ++v) {
    Rng grng(mix_seed({seed, stream_tag("eval_render"), scene_idx, static_cast<std::uint64_t>(v)}));
    rendered[static_cast<std::size_t>(v)] =
        cfg.generator
            ? cfg.generator(scene, v, attr, grng)
            : sample_view(model, codec, attr, scene.annotations[static_cast<std::size_t>(v)],
                          cfg.sampler, grng);
    if (rendered[static_cast<std::size_t>(v)].shape() !=
        scene.images[static_cast<std::size_t>(v)].shape())
      throw std::runtime_error("evaluate: rendered view shape mismatch");
  }

  std::vector<char> is_obs(static_cast<std::size_t>(V), 0);
  for (int v : observed) is_obs[static_cast<std::size_t>(v)] = 1;
  std::vector<Var> feats, reps;
  for (int v = 0; v < V; ++v) {
    const Tensor& img = is_obs[static_cast<std::size_t>(v)]
                            ? scene.images[static_cast<std::size_t>(v)]
                            : rendered[static_cast<std::size_t>(v)];
    feats.push_back(model.extract_features(img));
    reps.push_back(model.encode_viewpoint(scene.annotations[static_cast<std::size_t>(v)]));
  }
  SlotAttnResult warm = multiview_slot_attention(model, feats, reps, attr.clone(), nullptr);
  std::vector<Tensor> attn;
  for (const Var& a : warm.attn) attn.push_back(a->value.clone());
  MaskStack pred =
      masks_from_attention(attn, model.config().patch_grid(), scene.height, scene.width);
  MaskStack truth = MaskStack::from_bytes(scene.masks, scene.height, scene.width);

  SceneEval e = score_scene(pred, truth, rendered, scene.images);
  e.scene_id = scene.id;
  e.seed = seed;
  e.observed = observed;
  return e;
}

MetricSummary summarize(const std::vector<double>& per_seed) {
  MetricSummary s;
  for (double v : per_seed) s.mean += v;
  s.mean /= static_cast<double>(per_seed.size());
  if (per_seed.size() > 1) {
    double acc = 0.0;
    for (double v : per_seed) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(per_seed.size() - 1));
  }
  return s;
}

}  // namespace

EvalReport evaluate(const Model& model, const DatasetIndex& data, const EvalConfig& cfg,
                    ThreadPool& pool) {
  cfg.validate();
  if (cfg.strategy == "active" && !model.pretrained)
    throw std::logic_error("evaluate: active strategy needs a pretrained model");
  auto codec = make_codec(model.config());
  std::vector<MultiViewScene> scenes;
  for (const std::string& id : data.split(cfg.split)) scenes.push_back(load_scene(data.root / id));
  if (scenes.empty()) throw std::invalid_argument("evaluate: split " + cfg.split + " is empty");

  EvalReport report;
  report.config = {{"split", cfg.split},
                   {"strategy", cfg.strategy},
                   {"budget", cfg.budget},
                   {"seeds", cfg.seeds},
                   {"sampler_steps", cfg.sampler.num_steps},
                   {"selection_samples", cfg.selection_samples},
                   {"num_scenes", scenes.size()}};

  std::vector<double> seed_ari_a, seed_ari_o, seed_miou, seed_mse;
  for (std::uint64_t seed : cfg.seeds) {
    std::vector<SceneEval> results(scenes.size());
    pool.parallel_for(static_cast<std::int64_t>(scenes.size()), [&](std::int64_t i) {
      results[static_cast<std::size_t>(i)] =
          eval_scene(model, *codec, scenes[static_cast<std::size_t>(i)], cfg, seed,
                     static_cast<std::uint64_t>(i));
    });
    double aa = 0.0, ao = 0.0, mi = 0.0, ms = 0.0;
    for (const SceneEval& e : results) {
      aa += e.ari_a;
      ao += e.ari_o;
      mi += e.miou;
      ms += e.recon_mse;
    }
    const double n = static_cast<double>(scenes.size());
    seed_ari_a.push_back(aa / n);
    seed_ari_o.push_back(ao / n);
    seed_miou.push_back(mi / n);
    seed_mse.push_back(ms / n);
    report.per_scene.insert(report.per_scene.end(), results.begin(), results.end());
  }
  report.ari_a = summarize(seed_ari_a);
  report.ari_o = summarize(seed_ari_o);
  report.miou = summarize(seed_miou);
  report.recon_mse = summarize(seed_mse);
  return report;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const SceneEval& e : r.per_scene)
    per.push_back({{"scene", e.scene_id},
                   {"seed", e.seed},
                   {"observed", e.observed},
                   {"ari_a", e.ari_a},
                   {"ari_o", e.ari_o},
                   {"miou", e.miou},
                   {"recon_mse", e.recon_mse}});
  auto agg = [](const MetricSummary& m) {
    return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}};
  };
  return nlohmann::json{{"config", r.config},
                        {"per_scene", per},
                        {"aggregate",
                         {{"ari_a", agg(r.ari_a)},
                          {"ari_o", agg(r.ari_o)},
                          {"miou", agg(r.miou)},
                          {"recon_mse", agg(r.recon_mse)}}}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    check_keys(j, "eval report", {"config", "per_scene", "aggregate"});
    EvalReport r;
    r.config = j.at("config");
    for (const auto& e : j.at("per_scene")) {
      check_keys(e, "eval report scene",
                 {"scene", "seed", "observed", "ari_a", "ari_o", "miou", "recon_mse"});
      SceneEval s;
      s.scene_id = e.at("scene").get<std::string>();
      s.seed = e.at("seed").get<std::uint64_t>();
      s.observed = e.at("observed").get<std::vector<int>>();
      s.ari_a = e.at("ari_a").get<double>();
      s.ari_o = e.at("ari_o").get<double>();
      s.miou = e.at("miou").get<double>();
      s.recon_mse = e.at("recon_mse").get<double>();
      r.per_scene.push_back(std::move(s));
    }
    const auto& agg = j.at("aggregate");
    check_keys(agg, "eval report aggregate", {"ari_a", "ari_o", "miou", "recon_mse"});
    auto get = [](const nlohmann::json& m) {
      check_keys(m, "eval report metric", {"mean", "std"});
      return MetricSummary{m.at("mean").get<double>(), m.at("std").get<double>()};
    };
    r.ari_a = get(agg.at("ari_a"));
    r.ari_o = get(agg.at("ari_o"));
    r.miou = get(agg.at("miou"));
    r.recon_mse = get(agg.at("recon_mse"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("eval report: ") + e.what());
  }
}

nlohmann::json eval_config_to_json(const EvalConfig& cfg) {
  return nlohmann::json{{"split", cfg.split},
                        {"strategy", cfg.strategy},
                        {"budget", cfg.budget},
                        {"seeds", cfg.seeds},
                        {"sampler_steps", cfg.sampler.num_steps},
                        {"selection_samples", cfg.selection_samples}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
  check_keys(j, "eval config",
             {"split", "strategy", "budget", "seeds", "sampler_steps", "selection_samples"});
  EvalConfig cfg;
  cfg.split = get_or(j, "split", cfg.split);
  cfg.strategy = get_or(j, "strategy", cfg.strategy);
  cfg.budget = get_or(j, "budget", cfg.budget);
  cfg.seeds = get_or(j, "seeds", cfg.seeds);
  cfg.sampler.num_steps = get_or(j, "sampler_steps", cfg.sampler.num_steps);
  cfg.selection_samples = get_or(j, "selection_samples", cfg.selection_samples);
  cfg.validate();
  return cfg;
}

double sign_test_p(int wins, int losses) {
  if (wins < 0 || losses < 0)
    throw std::invalid_argument("sign test: counts must be nonnegative");
  const int n = wins + losses;
  if (n == 0) return 1.0;
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    const double lc =
        std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    p += std::exp(lc - n * std::log(2.0));
  }
  return std::min(p, 1.0);
}

namespace {

DeltaSummary delta_summary(const std::vector<double>& deltas, bool smaller_is_better) {
  DeltaSummary s;
  if (deltas.empty()) return s;
  double sum = 0.0;
  int wins = 0, losses = 0;
  for (double d : deltas) {
    sum += d;
    const double gain = smaller_is_better ? -d : d;
    if (gain > 0)
      ++wins;
    else if (gain < 0)
      ++losses;
  }
  s.mean = sum / static_cast<double>(deltas.size());
  if (deltas.size() > 1) {
    double ss = 0.0;
    for (double d : deltas) ss += (d - s.mean) * (d - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(deltas.size() - 1));
  }
  s.p_value = sign_test_p(wins, losses);
  return s;
}

}  // namespace

StrategyComparison compare_reports(const EvalReport& random_report,
                                   const EvalReport& active_report) {
  if (random_report.per_scene.size() != active_report.per_scene.size())
    throw std::invalid_argument("strategy comparison: reports cover different evaluations");
  StrategyComparison c;
  c.random = random_report;
  c.active = active_report;
  std::vector<double> da, d_o, dm, dr;
  for (std::size_t i = 0; i < random_report.per_scene.size(); ++i) {
    const SceneEval& r = random_report.per_scene[i];
    const SceneEval& a = active_report.per_scene[i];
    if (r.scene_id != a.scene_id || r.seed != a.seed)
      throw std::invalid_argument("strategy comparison: pair mismatch at index " +
                                  std::to_string(i));
    PairedDelta d;
    d.scene_id = r.scene_id;
    d.seed = r.seed;
    d.ari_a = a.ari_a - r.ari_a;
    d.ari_o = a.ari_o - r.ari_o;
    d.miou = a.miou - r.miou;
    d.recon_mse = a.recon_mse - r.recon_mse;
    da.push_back(d.ari_a);
    d_o.push_back(d.ari_o);
    dm.push_back(d.miou);
    dr.push_back(d.recon_mse);
    c.deltas.push_back(std::move(d));
  }
  c.ari_a = delta_summary(da, false);
  c.ari_o = delta_summary(d_o, false);
  c.miou = delta_summary(dm, false);
  c.recon_mse = delta_summary(dr, true);
  return c;
}

StrategyComparison compare_strategies(const Model& model, const DatasetIndex& data,
                                      const EvalConfig& base, ThreadPool& pool) {
  EvalConfig random_cfg = base;
  random_cfg.strategy = "random";
  EvalConfig active_cfg = base;
  active_cfg.strategy = "active";
  EvalReport random_report = evaluate(model, data, random_cfg, pool);
  EvalReport active_report = evaluate(model, data, active_cfg, pool);
  return compare_reports(random_report, active_report);
}

nlohmann::json comparison_to_json(const StrategyComparison& c) {
  nlohmann::json deltas = nlohmann::json::array();
  for (const PairedDelta& d : c.deltas)
    deltas.push_back({{"scene", d.scene_id},
                      {"seed", d.seed},
                      {"ari_a", d.ari_a},
                      {"ari_o", d.ari_o},
                      {"miou", d.miou},
                      {"recon_mse", d.recon_mse}});
  auto agg = [](const DeltaSummary& s) {
    return nlohmann::json{{"mean", s.mean}, {"std", s.stddev}, {"p_value", s.p_value}};
  };
  return nlohmann::json{{"random", report_to_json(c.random)},
                        {"active", report_to_json(c.active)},
                        {"deltas", deltas},
                        {"delta_aggregate",
                         {{"ari_a", agg(c.ari_a)},
                          {"ari_o", agg(c.ari_o)},
                          {"miou", agg(c.miou)},
                          {"recon_mse", agg(c.recon_mse)}}}};
}

}  // namespace mvoc
