#include "mvoc/avs.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mvoc/json_util.hpp"

namespace mvoc {

using ad::Var;

ViewPartition make_partition(int num_views, int first_view) {
  if (num_views < 1) throw std::invalid_argument("make_partition: num_views");
  if (first_view < 0 || first_view >= num_views)
    throw std::invalid_argument("make_partition: first_view out of range");
  ViewPartition p;
  p.num_views = num_views;
  p.observed.push_back(first_view);
  for (int v = 0; v < num_views; ++v)
    if (v != first_view) p.unknown.push_back(v);
  return p;
}

void observe(ViewPartition& p, int view) {
  auto it = std::find(p.unknown.begin(), p.unknown.end(), view);
  if (it == p.unknown.end()) throw std::invalid_argument("observe: view is not unknown");
  p.unknown.erase(it);
  p.observed.push_back(view);
}

bool partition_valid(const ViewPartition& p) {
  std::vector<int> all = p.observed;
  all.insert(all.end(), p.unknown.begin(), p.unknown.end());
  if (static_cast<int>(all.size()) != p.num_views) return false;
  std::sort(all.begin(), all.end());
  for (int v = 0; v < p.num_views; ++v)
    if (all[static_cast<std::size_t>(v)] != v) return false;
  return !p.observed.empty();
}

double slot_similarity(const Tensor& s_prev, const Tensor& s_new) {
  if (s_prev.shape() != s_new.shape() || s_prev.rank() != 2)
    throw std::invalid_argument("slot_similarity: shapes");
  const std::int64_t K = s_prev.rows(), D = s_prev.cols();
  double total = 0.0;
  for (std::int64_t k = 0; k < K; ++k) {
    double dot = 0, na = 0, nb = 0;
    for (std::int64_t j = 0; j < D; ++j) {
      const double a = s_prev.at(k, j), b = s_new.at(k, j);
      dot += a * b;
      na += a * a;
      nb += b * b;
    }
    if (na == 0.0 || nb == 0.0) {
      std::cerr << "warning: zero-norm slot " << k << " in similarity\n";
      continue;
    }
    total += dot / (std::sqrt(na) * std::sqrt(nb));
  }
  return total;
}

Tensor predict_view(const Model& model, const LatentCodec& codec, const Tensor& slots_attr,
                    double annotation, const SamplerConfig& sampler, Rng& rng) {
  if (!model.pretrained)
    throw std::logic_error("predict_view: selection needs a pretrained model");
  ad::NoGradGuard ng;
  Var view_rep = model.encode_viewpoint(annotation);
  Var slots_full = make_slots_full(ad::constant(slots_attr.clone()), view_rep);
  NoiseSchedule schedule = NoiseSchedule::from_config(model.config());
  DenoiseFn fn = [&](const Tensor& z, int t) {
    return model.denoise(ad::constant(z.clone()), static_cast<double>(t), slots_full)->value;
  };
  Tensor latent = fast_sample(fn, codec.latent_shape(), sampler, rng, schedule);
  return codec.decode(latent);
}

namespace {

struct ObservedCache {
  std::vector<Var> features;   // per observed view, in partition order
  std::vector<Var> view_reps;
};

ScoredCandidate score_with_cache(const Model& model, const LatentCodec& codec,
                                 const MultiViewScene& scene, const ObservedCache& cache,
                                 const Tensor& s_prev, int candidate, const SelectionConfig& cfg,
                                 std::uint64_t rng_seed) {
  ad::NoGradGuard ng;
  if (cfg.samples_per_candidate < 1)
    throw std::invalid_argument("score_candidate: samples_per_candidate");
  const double annotation = scene.annotations[static_cast<std::size_t>(candidate)];

  ScoredCandidate out;
  double total = 0.0;
  for (int j = 0; j < cfg.samples_per_candidate; ++j) {
    Rng rng(cfg.samples_per_candidate == 1 ? rng_seed
                                           : mix_seed({rng_seed, static_cast<std::uint64_t>(j)}));
    Tensor predicted = cfg.predictor
                           ? cfg.predictor(candidate, s_prev, rng)
                           : predict_view(model, codec, s_prev, annotation, cfg.sampler, rng);

    std::vector<Var> features = cache.features;
    std::vector<Var> view_reps = cache.view_reps;
    features.push_back(model.extract_features(predicted));
    view_reps.push_back(model.encode_viewpoint(annotation));
    SlotAttnResult res =
        multiview_slot_attention(model, features, view_reps, s_prev.clone(), nullptr);
    total += slot_similarity(s_prev, res.attr->value);
    if (j == 0) out.slots_attr = res.attr->value.clone();
  }
  out.similarity = total / cfg.samples_per_candidate;
  return out;
}

ObservedCache build_cache(const Model& model, const MultiViewScene& scene,
                          const std::vector<int>& observed) {
  ObservedCache cache;
  for (int v : observed) {
    cache.features.push_back(model.extract_features(scene.images[static_cast<std::size_t>(v)]));
    cache.view_reps.push_back(
        model.encode_viewpoint(scene.annotations[static_cast<std::size_t>(v)]));
  }
  return cache;
}

}  // namespace

ScoredCandidate score_candidate(const Model& model, const LatentCodec& codec,
                                const MultiViewScene& scene, const ViewPartition& partition,
                                const Tensor& s_prev, int candidate, const SelectionConfig& cfg,
                                std::uint64_t rng_seed) {
  if (std::find(partition.unknown.begin(), partition.unknown.end(), candidate) ==
      partition.unknown.end())
    throw std::invalid_argument("score_candidate: candidate is not unknown");
  ad::NoGradGuard ng;
  ObservedCache cache = build_cache(model, scene, partition.observed);
  return score_with_cache(model, codec, scene, cache, s_prev, candidate, cfg, rng_seed);
}

SelectionResult active_select(const Model& model, const MultiViewScene& scene, int budget,
                              const SelectionConfig& cfg, std::uint64_t seed) {
  const int V = scene.num_views();
  if (budget < 1 || budget > V) throw std::invalid_argument("active_select: budget");
  if (!model.pretrained && !cfg.predictor)
    throw std::logic_error("active_select: selection needs a pretrained model");
  ad::NoGradGuard ng;

  Rng init_rng(mix_seed({seed, stream_tag("avs_init")}));
  const int initial = static_cast<int>(init_rng.uniform_int(V));

  SelectionResult result;
  result.partition = make_partition(V, initial);
  result.trace.initial_view = initial;
  result.trace.budget = budget;
  result.trace.seed = seed;

  auto codec = make_codec(model.config());
  ObservedCache cache = build_cache(model, scene, result.partition.observed);

  Rng cold_rng(mix_seed({seed, stream_tag("avs_cold")}));
  Tensor s_prev =
      multiview_slot_attention(model, cache.features, cache.view_reps, std::nullopt, &cold_rng)
          .attr->value.clone();

  while (static_cast<int>(result.partition.observed.size()) < budget) {
    const std::uint64_t round = result.trace.rounds.size();
    SelectionRound rec;
    rec.s_prev = s_prev.clone();
    double best = std::numeric_limits<double>::infinity();
    Tensor best_slots;
    for (int candidate : result.partition.unknown) {
      const std::uint64_t cand_seed = mix_seed(
          {seed, stream_tag("avs_candidate"), round, static_cast<std::uint64_t>(candidate)});
      ScoredCandidate sc =
          score_with_cache(model, *codec, scene, cache, s_prev, candidate, cfg, cand_seed);
      rec.candidates.push_back({candidate, sc.similarity, cand_seed, false});
      if (sc.similarity < best) {
        best = sc.similarity;
        rec.selected_view = candidate;
        best_slots = std::move(sc.slots_attr);
      }
    }
    for (CandidateScore& c : rec.candidates) c.selected = c.view == rec.selected_view;
    observe(result.partition, rec.selected_view);
    cache.features.push_back(
        model.extract_features(scene.images[static_cast<std::size_t>(rec.selected_view)]));
    cache.view_reps.push_back(
        model.encode_viewpoint(scene.annotations[static_cast<std::size_t>(rec.selected_view)]));
    s_prev = std::move(best_slots);
    result.trace.rounds.push_back(std::move(rec));
  }

  result.trace.warm_slots = s_prev.clone();
  Rng final_rng(mix_seed({seed, stream_tag("avs_final")}));
  SlotAttnResult final_pass =
      multiview_slot_attention(model, cache.features, cache.view_reps, std::nullopt, &final_rng);
  result.trace.final_slots = final_pass.attr->value.clone();
  result.slots = final_pass.detached();
  return result;
}

ViewPartition random_select(int num_views, int budget, Rng& rng) {
  if (budget < 1 || budget > num_views) throw std::invalid_argument("random_select: budget");
  std::vector<int> order(static_cast<std::size_t>(num_views));
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < budget; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(num_views - i));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  ViewPartition p;
  p.num_views = num_views;
  p.observed.assign(order.begin(), order.begin() + budget);
  p.unknown.assign(order.begin() + budget, order.end());
  std::sort(p.unknown.begin(), p.unknown.end());
  return p;
}

namespace {

nlohmann::json tensor_to_json(const Tensor& t) {
  nlohmann::json j;
  j["shape"] = t.shape();
  std::vector<double> data(t.data(), t.data() + t.numel());
  j["data"] = data;
  return j;
}

Tensor tensor_from_json(const nlohmann::json& j) {
  check_keys(j, "tensor", {"shape", "data"});
  std::vector<std::int64_t> shape = j.at("shape").get<std::vector<std::int64_t>>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  Tensor t(shape);
  if (t.numel() != static_cast<std::int64_t>(data.size()))
    throw ConfigError("tensor: data length does not match shape");
  std::copy(data.begin(), data.end(), t.data());
  return t;
}

}  // namespace

std::string trace_to_json(const SelectionTrace& t) {
  nlohmann::json j;
  j["initial_view"] = t.initial_view;
  j["budget"] = t.budget;
  j["seed"] = t.seed;
  j["rounds"] = nlohmann::json::array();
  for (const SelectionRound& r : t.rounds) {
    nlohmann::json jr;
    jr["selected_view"] = r.selected_view;
    jr["s_prev"] = tensor_to_json(r.s_prev);
    jr["candidates"] = nlohmann::json::array();
    for (const CandidateScore& c : r.candidates)
      jr["candidates"].push_back({{"view", c.view},
                                  {"similarity", c.similarity},
                                  {"rng_seed", c.rng_seed},
                                  {"selected", c.selected}});
    j["rounds"].push_back(std::move(jr));
  }
  j["warm_slots"] = tensor_to_json(t.warm_slots);
  j["final_slots"] = tensor_to_json(t.final_slots);
  return j.dump(2);
}

SelectionTrace trace_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("trace: ") + e.what());
  }
  check_keys(j, "trace",
             {"initial_view", "budget", "seed", "rounds", "warm_slots", "final_slots"});
  SelectionTrace t;
  t.initial_view = j.at("initial_view").get<int>();
  t.budget = j.at("budget").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  for (const nlohmann::json& jr : j.at("rounds")) {
    check_keys(jr, "trace round", {"selected_view", "s_prev", "candidates"});
    SelectionRound r;
    r.selected_view = jr.at("selected_view").get<int>();
    r.s_prev = tensor_from_json(jr.at("s_prev"));
    for (const nlohmann::json& jc : jr.at("candidates")) {
      check_keys(jc, "trace candidate", {"view", "similarity", "rng_seed", "selected"});
      r.candidates.push_back({jc.at("view").get<int>(), jc.at("similarity").get<double>(),
                              jc.at("rng_seed").get<std::uint64_t>(),
                              jc.at("selected").get<bool>()});
    }
    t.rounds.push_back(std::move(r));
  }
  t.warm_slots = tensor_from_json(j.at("warm_slots"));
  t.final_slots = tensor_from_json(j.at("final_slots"));
  return t;
}

}  // namespace mvoc
