#include "mvoc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "mvoc/json_util.hpp"
#include "mvoc/metrics.hpp"
#include "mvoc/util.hpp"

namespace fs = std::filesystem;

namespace mvoc {

using ad::Var;

void TrainConfig::validate() const {
  if (stage != "pretrain" && stage != "multiview")
    throw ConfigError("train config: stage must be pretrain or multiview");
  if (strategy != "random" && strategy != "active")
    throw ConfigError("train config: strategy must be random or active");
  if (budget < 1) throw ConfigError("train config: budget must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (max_steps < 1) throw ConfigError("train config: max_steps must be >= 1");
  if (learning_rate <= 0) throw ConfigError("train config: learning_rate must be positive");
  if (lr_warmup_steps < 0) throw ConfigError("train config: lr_warmup_steps must be >= 0");
  if (lambda_warmup_steps < 0 || lambda_warmup_steps >= max_steps)
    throw ConfigError("train config: lambda_warmup_steps must lie in [0, max_steps)");
  if (final_lambda < 0 || final_lambda > 1)
    throw ConfigError("train config: final_lambda must lie in [0, 1]");
  if (selection_samples < 1) throw ConfigError("train config: selection_samples must be >= 1");
  if (sampler_steps < 1) throw ConfigError("train config: sampler_steps must be >= 1");
  for (const auto& [prefix, mult] : lr_multipliers)
    if (mult <= 0) throw ConfigError("train config: lr multiplier for '" + prefix + "'");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["stage"] = c.stage;
  j["strategy"] = c.strategy;
  j["budget"] = c.budget;
  j["batch_size"] = c.batch_size;
  j["max_steps"] = c.max_steps;
  j["learning_rate"] = c.learning_rate;
  j["lr_multipliers"] = c.lr_multipliers;
  j["lr_warmup_steps"] = c.lr_warmup_steps;
  j["lambda_warmup_steps"] = c.lambda_warmup_steps;
  j["final_lambda"] = c.final_lambda;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["validate_every"] = c.validate_every;
  j["log_every"] = c.log_every;
  j["freeze_encoder"] = c.freeze_encoder;
  j["frozen_selector"] = c.frozen_selector;
  j["selection_samples"] = c.selection_samples;
  j["sampler_steps"] = c.sampler_steps;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  check_keys(j, "train config",
             {"stage", "strategy", "budget", "batch_size", "max_steps", "learning_rate",
              "lr_multipliers", "lr_warmup_steps", "lambda_warmup_steps", "final_lambda", "seed",
              "checkpoint_every", "validate_every", "log_every", "freeze_encoder",
              "frozen_selector", "selection_samples", "sampler_steps"});
  TrainConfig c;
  c.stage = get_or(j, "stage", c.stage);
  c.strategy = get_or(j, "strategy", c.strategy);
  c.budget = get_or(j, "budget", c.budget);
  c.batch_size = get_or(j, "batch_size", c.batch_size);
  c.max_steps = get_or(j, "max_steps", c.max_steps);
  c.learning_rate = get_or(j, "learning_rate", c.learning_rate);
  c.lr_multipliers = get_or(j, "lr_multipliers", c.lr_multipliers);
  c.lr_warmup_steps = get_or(j, "lr_warmup_steps", c.lr_warmup_steps);
  c.lambda_warmup_steps = get_or(j, "lambda_warmup_steps", c.lambda_warmup_steps);
  c.final_lambda = get_or(j, "final_lambda", c.final_lambda);
  c.seed = get_or(j, "seed", c.seed);
  c.checkpoint_every = get_or(j, "checkpoint_every", c.checkpoint_every);
  c.validate_every = get_or(j, "validate_every", c.validate_every);
  c.log_every = get_or(j, "log_every", c.log_every);
  c.freeze_encoder = get_or(j, "freeze_encoder", c.freeze_encoder);
  c.frozen_selector = get_or(j, "frozen_selector", c.frozen_selector);
  c.selection_samples = get_or(j, "selection_samples", c.selection_samples);
  c.sampler_steps = get_or(j, "sampler_steps", c.sampler_steps);
  c.validate();
  return c;
}

double lambda_schedule(std::int64_t step, const TrainConfig& c) {
  if (step < 0 || step > c.max_steps) throw std::invalid_argument("lambda_schedule: step");
  if (step <= c.lambda_warmup_steps) return 0.0;
  const double span = static_cast<double>(c.max_steps - c.lambda_warmup_steps);
  return c.final_lambda * (static_cast<double>(step - c.lambda_warmup_steps) / span);
}

AdamConfig adam_from(const TrainConfig& c) {
  AdamConfig a;
  a.lr = c.learning_rate;
  a.warmup_steps = c.lr_warmup_steps;
  a.multipliers = c.lr_multipliers;
  return a;
}

double adam_rate(const AdamConfig& cfg, std::int64_t t) {
  if (cfg.warmup_steps <= 0) return cfg.lr;
  const double f = static_cast<double>(t) / cfg.warmup_steps;
  return cfg.lr * std::min(1.0, f);
}

namespace {

double multiplier_for(const AdamConfig& cfg, const std::string& name) {
  std::size_t best_len = 0;
  double mult = 1.0;
  for (const auto& [prefix, m] : cfg.multipliers)
    if (prefix.size() >= best_len && name.rfind(prefix, 0) == 0) {
      best_len = prefix.size();
      mult = m;
    }
  return mult;
}

}  // namespace

void adam_step(ParamStore& params, const ad::GradStore& grads, OptimizerState& state,
               const AdamConfig& cfg) {
  state.t += 1;
  const double base = adam_rate(cfg, state.t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (const std::string& name : params.names()) {
    const Var& p = params.get(name);
    if (!p->requires_grad) continue;
    const Tensor* g = grads.find(p.get());
    if (!g) continue;
    AdamSlot& slot = state.slots[name];
    if (slot.m.numel() == 0) {
      slot.m = Tensor::zeros(p->value.shape());
      slot.v = Tensor::zeros(p->value.shape());
    }
    const double lr = base * multiplier_for(cfg, name);
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double gi = (*g)[i];
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gi;
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

Var pretrain_loss(const Model& model, const Tensor& image, double annotation,
                  const NoiseSchedule& s, const LatentCodec& codec, Rng& rng) {
  Var features = model.extract_features(image);
  Var view_rep = model.encode_viewpoint(annotation);
  SlotAttnResult res = multiview_slot_attention(model, {features}, {view_rep}, std::nullopt, &rng);
  Var slots_full = make_slots_full(res.attr, res.view_state[0]);
  Tensor z0 = codec.encode(image);
  return denoising_loss(model, z0, slots_full, rng, s).loss;
}

Var multiview_loss(const Model& model, const MultiViewScene& scene,
                   const std::vector<int>& observed, double lambda, const NoiseSchedule& s,
                   const LatentCodec& codec, Rng& rng) {
  if (observed.empty()) throw std::invalid_argument("multiview_loss: empty observation set");
  if (lambda < 0 || lambda > 1) throw std::invalid_argument("multiview_loss: lambda");
  std::vector<Var> features, view_reps;
  for (int v : observed) {
    if (v < 0 || v >= scene.num_views())
      throw std::invalid_argument("multiview_loss: view index");
    features.push_back(model.extract_features(scene.images[static_cast<std::size_t>(v)]));
    view_reps.push_back(
        model.encode_viewpoint(scene.annotations[static_cast<std::size_t>(v)]));
  }
  SlotAttnResult res = multiview_slot_attention(model, features, view_reps, std::nullopt, &rng);

  Var total;
  for (std::size_t m = 0; m < observed.size(); ++m) {
    Var slots_full = make_slots_full(res.attr, res.view_state[m]);
    const Tensor& image = scene.images[static_cast<std::size_t>(observed[m])];

    // The noise draw happens for every lambda so the stream is schedule
    // independent; the graph is only built for terms with nonzero weight.
    Tensor z0 = codec.encode(image);
    const int t = 1 + static_cast<int>(rng.uniform_int(s.T));
    Tensor eps = Tensor::randn(z0.shape(), rng);

    Var term;
    if (lambda > 0) {
      Var zt = forward_noise(ad::constant(z0), t, ad::constant(eps), s);
      Var diff = ad::sse(ad::constant(eps),
                         model.denoise(zt, static_cast<double>(t), slots_full));
      term = lambda == 1.0 ? diff : ad::scale(diff, lambda);
    }
    if (lambda < 1) {
      auto [recon, alphas] = model.decode_features(slots_full);
      (void)alphas;
      Var feat = ad::sse(ad::constant(features[m]->value.clone()), recon);
      Var weighted = lambda == 0.0 ? feat : ad::scale(feat, 1.0 - lambda);
      term = term ? ad::add(term, weighted) : weighted;
    }
    total = total ? ad::add(total, term) : term;
  }
  return total;
}

namespace {

std::vector<MultiViewScene> load_split(const DatasetIndex& data, const std::string& name) {
  std::vector<MultiViewScene> scenes;
  for (const std::string& id : data.split(name)) scenes.push_back(load_scene(data.root / id));
  return scenes;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Ordered sum of per-item gradients, scaled; ordering makes the reduction
// independent of worker count.
ad::GradStore reduce_grads(const ParamStore& ps, const std::vector<ad::GradStore>& stores,
                           double scale) {
  ad::GradStore total;
  for (const std::string& name : ps.names()) {
    const Var& p = ps.get(name);
    if (!p->requires_grad) continue;
    Tensor acc;
    bool any = false;
    for (const ad::GradStore& st : stores) {
      const Tensor* g = st.find(p.get());
      if (!g) continue;
      if (!any) {
        acc = g->clone();
        any = true;
      } else {
        for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += (*g)[i];
      }
    }
    if (!any) continue;
    for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] *= scale;
    total.add(p.get(), acc);
  }
  return total;
}

double validation_ari(const Model& model, const std::vector<MultiViewScene>& valid,
                      const TrainConfig& tc) {
  if (valid.empty()) return 0.0;
  ad::NoGradGuard ng;
  const int grid = model.config().patch_grid();
  double sum = 0.0;
  for (std::size_t idx = 0; idx < valid.size(); ++idx) {
    const MultiViewScene& scene = valid[idx];
    const int V = scene.num_views();
    Rng rng(mix_seed({tc.seed, stream_tag("validate"), static_cast<std::uint64_t>(idx)}));
    ViewPartition part = random_select(V, std::min(tc.budget, V), rng);
    std::vector<Var> features, reps;
    for (int v : part.observed) {
      features.push_back(model.extract_features(scene.images[static_cast<std::size_t>(v)]));
      reps.push_back(model.encode_viewpoint(scene.annotations[static_cast<std::size_t>(v)]));
    }
    SlotAttnResult res = multiview_slot_attention(model, features, reps, std::nullopt, &rng);
    std::vector<Tensor> attn;
    for (const Var& a : res.attn) attn.push_back(a->value.clone());
    MaskStack pred = masks_from_attention(attn, grid, scene.height, scene.width);
    std::vector<std::vector<std::uint8_t>> truth_masks;
    for (int v : part.observed) truth_masks.push_back(scene.masks[static_cast<std::size_t>(v)]);
    MaskStack truth = MaskStack::from_bytes(truth_masks, scene.height, scene.width);
    sum += ari(pred, truth, AriMode::Objects);
  }
  return sum / static_cast<double>(valid.size());
}

std::string loss_line(std::int64_t step, double loss, double lr, bool accepted,
                      const double* lambda) {
  nlohmann::json j;
  j["step"] = step;
  if (std::isfinite(loss))
    j["loss"] = loss;
  else
    j["loss"] = nullptr;
  j["lr"] = lr;
  j["accepted"] = accepted;
  if (lambda) j["lambda"] = *lambda;
  return j.dump();
}

}  // namespace

void write_manifest(const RunManifest& m, const fs::path& out_dir) {
  nlohmann::json j;
  j["config"] = m.config;
  j["model_config"] = m.model_config;
  j["dataset_hash"] = m.dataset_hash;
  j["loss_log"] = m.loss_log;
  j["checkpoints"] = m.checkpoints;
  j["final_checkpoint"] = m.final_checkpoint;
  j["steps_completed"] = m.steps_completed;
  j["diverged"] = m.diverged;
  atomic_write_file(out_dir / "manifest.json", j.dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& out_dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(out_dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run manifest: ") + e.what());
  }
  check_keys(j, "run manifest",
             {"config", "model_config", "dataset_hash", "loss_log", "checkpoints",
              "final_checkpoint", "steps_completed", "diverged"});
  RunManifest m;
  m.config = j.at("config");
  m.model_config = j.at("model_config");
  m.dataset_hash = j.at("dataset_hash").get<std::string>();
  m.loss_log = j.at("loss_log").get<std::string>();
  m.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
  m.final_checkpoint = j.at("final_checkpoint").get<std::string>();
  m.steps_completed = j.at("steps_completed").get<std::int64_t>();
  m.diverged = j.at("diverged").get<bool>();
  return m;
}

RunManifest pretrain_single_view(const DatasetIndex& data, const ModelConfig& mc,
                                 const TrainConfig& tc, const fs::path& out_dir,
                                 ThreadPool& pool) {
  tc.validate();
  mc.validate();
  if (tc.stage != "pretrain") throw ConfigError("pretrain_single_view: stage mismatch");
  fs::create_directories(out_dir);

  Model model(mc, mix_seed({tc.seed, stream_tag("model_init")}));
  NoiseSchedule schedule = NoiseSchedule::from_config(mc);
  auto codec = make_codec(mc);
  std::vector<MultiViewScene> train = load_split(data, "train");
  if (train.empty()) throw std::invalid_argument("pretrain: empty train split");

  OptimizerState opt;
  AdamConfig ac = adam_from(tc);

  RunManifest man;
  man.config = train_config_to_json(tc);
  man.model_config = model_config_to_json(mc);
  man.dataset_hash = hex64(hash_file(data.root / "manifest.json"));
  man.loss_log = "loss.jsonl";
  const fs::path log_path = out_dir / man.loss_log;
  atomic_write_file(log_path, "");

  const int B = tc.batch_size;
  struct Item {
    const MultiViewScene* scene;
    int view;
    std::uint64_t seed;
  };

  for (int step = 0; step < tc.max_steps; ++step) {
    Rng batch_rng(mix_seed({tc.seed, stream_tag("pretrain_batch"), static_cast<std::uint64_t>(step)}));
    std::vector<Item> items(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) {
      const auto& scene = train[static_cast<std::size_t>(
          batch_rng.uniform_int(static_cast<std::int64_t>(train.size())))];
      const int view = static_cast<int>(batch_rng.uniform_int(scene.num_views()));
      items[static_cast<std::size_t>(i)] = {
          &scene, view,
          mix_seed({tc.seed, stream_tag("pretrain_item"), static_cast<std::uint64_t>(step),
                    static_cast<std::uint64_t>(i)})};
    }

    std::vector<Var> losses(static_cast<std::size_t>(B));
    std::vector<ad::GradStore> stores(static_cast<std::size_t>(B));
    pool.parallel_for(B, [&](std::int64_t i) {
      const Item& it = items[static_cast<std::size_t>(i)];
      Rng rng(it.seed);
      losses[static_cast<std::size_t>(i)] =
          pretrain_loss(model, it.scene->images[static_cast<std::size_t>(it.view)],
                        it.scene->annotations[static_cast<std::size_t>(it.view)], schedule,
                        *codec, rng);
      ad::backward(losses[static_cast<std::size_t>(i)], stores[static_cast<std::size_t>(i)]);
    });

    double mean_loss = 0.0;
    for (const Var& l : losses) mean_loss += l->value[0];
    mean_loss /= B;

    if (!std::isfinite(mean_loss)) {
      append_line(log_path, loss_line(step, mean_loss, adam_rate(ac, opt.t + 1), false, nullptr));
      man.diverged = true;
      man.steps_completed = step;
      break;
    }

    ad::GradStore grads = reduce_grads(model.params(), stores, 1.0 / B);
    adam_step(model.params(), grads, opt, ac);
    model.pretrained = true;
    append_line(log_path, loss_line(step, mean_loss, adam_rate(ac, opt.t), true, nullptr));
    man.steps_completed = step + 1;

    if (tc.log_every > 0 && step % tc.log_every == 0)
      std::fprintf(stderr, "pretrain step %d loss %.4f\n", step, mean_loss);
    if (tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 &&
        step + 1 < tc.max_steps) {
      const std::string name = "ckpt_" + std::to_string(step + 1) + ".mvoc";
      save_checkpoint((out_dir / name).string(), model, &opt, step + 1);
      man.checkpoints.push_back(name);
    }
  }

  man.final_checkpoint = "ckpt_final.mvoc";
  save_checkpoint((out_dir / man.final_checkpoint).string(), model, &opt, man.steps_completed);
  man.checkpoints.push_back(man.final_checkpoint);
  write_manifest(man, out_dir);
  return man;
}

RunManifest train_multiview(const DatasetIndex& data, const TrainConfig& tc,
                            const fs::path& pretrain_checkpoint, const ModelConfig* scratch_config,
                            const fs::path& out_dir, ThreadPool& pool, const fs::path& resume) {
  tc.validate();
  if (tc.stage != "multiview") throw ConfigError("train_multiview: stage mismatch");
  const bool active = tc.strategy == "active";
  if (active && pretrain_checkpoint.empty())
    throw std::invalid_argument("train_multiview: active strategy needs a pretrain checkpoint");
  fs::create_directories(out_dir);

  std::unique_ptr<Model> model;
  OptimizerState opt;
  std::int64_t start_step = 0;
  if (!resume.empty()) {
    model = load_checkpoint(resume.string(), &opt, &start_step);
  } else if (!pretrain_checkpoint.empty()) {
    model = load_checkpoint(pretrain_checkpoint.string());
  } else {
    if (!scratch_config) throw std::invalid_argument("train_multiview: no model source");
    scratch_config->validate();
    model = std::make_unique<Model>(*scratch_config,
                                    mix_seed({tc.seed, stream_tag("model_init")}));
  }
  const ModelConfig& mc = model->config();
  NoiseSchedule schedule = NoiseSchedule::from_config(mc);
  auto codec = make_codec(mc);

  // The ablation selector keeps its own frozen copy of the pretrain weights.
  std::unique_ptr<Model> frozen;
  if (active && tc.frozen_selector) frozen = load_checkpoint(pretrain_checkpoint.string());
  const Model* selector = frozen ? frozen.get() : model.get();

  if (tc.freeze_encoder) model->params().set_trainable("enc.", false);

  std::vector<MultiViewScene> train = load_split(data, "train");
  std::vector<MultiViewScene> valid = load_split(data, "valid");
  if (train.empty()) throw std::invalid_argument("train_multiview: empty train split");

  AdamConfig ac = adam_from(tc);

  RunManifest man;
  man.config = train_config_to_json(tc);
  man.model_config = model_config_to_json(mc);
  man.dataset_hash = hex64(hash_file(data.root / "manifest.json"));
  man.loss_log = "loss.jsonl";
  const fs::path log_path = out_dir / man.loss_log;
  const fs::path trace_path = out_dir / "traces.jsonl";
  if (resume.empty()) {
    atomic_write_file(log_path, "");
    if (active) atomic_write_file(trace_path, "");
  }

  SelectionConfig sel_cfg;
  sel_cfg.sampler.num_steps = tc.sampler_steps;
  sel_cfg.samples_per_candidate = tc.selection_samples;

  const int B = tc.batch_size;
  man.steps_completed = start_step;

  for (std::int64_t step = start_step; step < tc.max_steps; ++step) {
    Rng batch_rng(
        mix_seed({tc.seed, stream_tag("mv_batch"), static_cast<std::uint64_t>(step)}));
    std::vector<const MultiViewScene*> batch(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i)
      batch[static_cast<std::size_t>(i)] = &train[static_cast<std::size_t>(
          batch_rng.uniform_int(static_cast<std::int64_t>(train.size())))];

    const double lambda = lambda_schedule(step, tc);
    std::vector<Var> losses(static_cast<std::size_t>(B));
    std::vector<ad::GradStore> stores(static_cast<std::size_t>(B));
    std::vector<std::string> trace_lines(static_cast<std::size_t>(B));

    pool.parallel_for(B, [&](std::int64_t i) {
      const MultiViewScene& scene = *batch[static_cast<std::size_t>(i)];
      const std::uint64_t observe_seed =
          mix_seed({tc.seed, stream_tag("observe"), static_cast<std::uint64_t>(step),
                    static_cast<std::uint64_t>(i)});
      std::vector<int> observed;
      if (active) {
        SelectionResult res = active_select(*selector, scene, tc.budget, sel_cfg, observe_seed);
        observed = res.partition.observed;
        nlohmann::json jt;
        jt["step"] = step;
        jt["scene"] = scene.id;
        jt["initial_view"] = res.trace.initial_view;
        jt["selected"] = nlohmann::json::array();
        jt["scores"] = nlohmann::json::array();
        for (const SelectionRound& r : res.trace.rounds) {
          jt["selected"].push_back(r.selected_view);
          nlohmann::json row = nlohmann::json::array();
          for (const CandidateScore& cs : r.candidates) row.push_back(cs.similarity);
          jt["scores"].push_back(std::move(row));
        }
        trace_lines[static_cast<std::size_t>(i)] = jt.dump();
      } else {
        Rng orng(observe_seed);
        observed = random_select(scene.num_views(), std::min(tc.budget, scene.num_views()), orng)
                       .observed;
      }
      Rng rng(mix_seed({tc.seed, stream_tag("mv_item"), static_cast<std::uint64_t>(step),
                        static_cast<std::uint64_t>(i)}));
      losses[static_cast<std::size_t>(i)] =
          multiview_loss(*model, scene, observed, lambda, schedule, *codec, rng);
      ad::backward(losses[static_cast<std::size_t>(i)], stores[static_cast<std::size_t>(i)]);
    });

    if (active)
      for (const std::string& line : trace_lines) append_line(trace_path, line);

    double mean_loss = 0.0;
    for (const Var& l : losses) mean_loss += l->value[0];
    mean_loss /= B;

    const bool accepted = std::isfinite(mean_loss);
    if (accepted) {
      ad::GradStore grads = reduce_grads(model->params(), stores, 1.0 / B);
      adam_step(model->params(), grads, opt, ac);
    }
    append_line(log_path,
                loss_line(step, mean_loss, adam_rate(ac, opt.t + (accepted ? 0 : 1)), accepted,
                          &lambda));
    man.steps_completed = step + 1;

    if (tc.log_every > 0 && step % tc.log_every == 0)
      std::fprintf(stderr, "multiview step %lld loss %.4f lambda %.3f\n",
                   static_cast<long long>(step), mean_loss, lambda);

    if (tc.validate_every > 0 && (step + 1) % tc.validate_every == 0) {
      const double val = validation_ari(*model, valid, tc);
      nlohmann::json jv;
      jv["step"] = step;
      jv["val_ari_o"] = val;
      append_line(log_path, jv.dump());
    }
    if (tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 &&
        step + 1 < tc.max_steps) {
      const std::string name = "ckpt_" + std::to_string(step + 1) + ".mvoc";
      save_checkpoint((out_dir / name).string(), *model, &opt, step + 1);
      man.checkpoints.push_back(name);
    }
  }

  man.final_checkpoint = "ckpt_final.mvoc";
  save_checkpoint((out_dir / man.final_checkpoint).string(), *model, &opt, man.steps_completed);
  man.checkpoints.push_back(man.final_checkpoint);
  write_manifest(man, out_dir);
  return man;
}

}  // namespace mvoc
