#include "mvoc/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "mvoc/json_util.hpp"
#include "mvoc/png_io.hpp"
#include "mvoc/synthesis.hpp"
#include "mvoc/util.hpp"

namespace fs = std::filesystem;

namespace mvoc::cli {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

fs::path resolve_data_root(const std::string& flag, const std::string& config_root) {
  if (!flag.empty()) return flag;
  if (!config_root.empty()) return config_root;
  if (const char* env = std::getenv("MVOC_DATA_ROOT"); env && *env) return env;
  throw ConfigError("no data root: pass --data, set paths.data_root, or set MVOC_DATA_ROOT");
}

std::string dataset_fingerprint(const fs::path& root) {
  const fs::path manifest = root / "manifest.json";
  if (!fs::exists(manifest)) throw ConfigError("not a dataset directory: " + root.string());
  return hex64(hash_file(manifest));
}

DatasetIndex open_dataset(const fs::path& root) {
  dataset_fingerprint(root);
  return load_dataset(root);
}

void write_json_file(const fs::path& p, const nlohmann::json& j) {
  if (!p.parent_path().empty()) fs::create_directories(p.parent_path());
  atomic_write_file(p, j.dump(2) + "\n");
}

nlohmann::json run_record(const std::string& command, std::uint64_t seed,
                          const nlohmann::json& config) {
  return nlohmann::json{
      {"command", command}, {"tool_version", kToolVersion}, {"seed", seed}, {"config", config}};
}

void check_model_matches_data(const ModelConfig& mc, const DatasetIndex& data) {
  if (mc.image_size != data.config.image_size)
    throw ConfigError("model.image_size does not match the dataset");
  if (mc.num_viewpoints != data.config.num_views)
    throw ConfigError("model.num_viewpoints does not match the dataset");
}

void adopt_data_stats(ModelConfig& mc, const DatasetIndex& data, bool explicit_stats) {
  if (explicit_stats) return;
  for (int c = 0; c < 3; ++c) {
    mc.data_mean[static_cast<std::size_t>(c)] = data.stats.channel_mean[static_cast<std::size_t>(c)];
    mc.data_std[static_cast<std::size_t>(c)] = data.stats.channel_std[static_cast<std::size_t>(c)];
  }
}

long long parse_int(const std::string& s) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("not an integer: '" + s + "'");
  }
  if (pos != s.size()) throw ConfigError("not an integer: '" + s + "'");
  return v;
}

double parse_number(const std::string& s) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("not a number: '" + s + "'");
  }
  if (pos != s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) out.push_back(tok);
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

std::string metric_row(const char* name, const MetricSummary& m) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-10s %9.4f +/- %.4f", name, m.mean, m.stddev);
  return buf;
}

void print_report_table(const EvalReport& r) {
  std::cout << "metric           mean +/- std\n";
  std::cout << metric_row("ari_a", r.ari_a) << "\n";
  std::cout << metric_row("ari_o", r.ari_o) << "\n";
  std::cout << metric_row("miou", r.miou) << "\n";
  std::cout << metric_row("recon_mse", r.recon_mse) << "\n";
}

void print_comparison_table(const StrategyComparison& c) {
  auto row = [](const char* name, const MetricSummary& r, const MetricSummary& a,
                const DeltaSummary& d) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %9.4f +/- %.4f %9.4f +/- %.4f %+9.4f +/- %.4f %7.4f",
                  name, r.mean, r.stddev, a.mean, a.stddev, d.mean, d.stddev, d.p_value);
    std::cout << buf << "\n";
  };
  std::cout << "metric           random               active                delta           "
               "p(sign)\n";
  row("ari_a", c.random.ari_a, c.active.ari_a, c.ari_a);
  row("ari_o", c.random.ari_o, c.active.ari_o, c.ari_o);
  row("miou", c.random.miou, c.active.miou, c.miou);
  row("recon_mse", c.random.recon_mse, c.active.recon_mse, c.recon_mse);
}

struct CommonEvalOpts {
  std::string checkpoint, data, config_file, split, strategy, out;
  int budget = 0, seeds = 0, sampler_steps = 0, samples = 0, threads = 1;
  bool default_three_seeds = false;
  CLI::Option *o_split = nullptr, *o_strategy = nullptr, *o_budget = nullptr, *o_seeds = nullptr,
              *o_sampler = nullptr, *o_samples = nullptr;
};

EvalConfig resolve_eval_config(const CommonEvalOpts& o, const ExperimentConfig& cfg) {
  EvalConfig ec = cfg.eval;
  if (o.o_split->count()) ec.split = o.split;
  if (o.o_strategy->count()) ec.strategy = o.strategy;
  if (o.o_budget->count()) ec.budget = o.budget;
  if (o.o_sampler->count()) ec.sampler.num_steps = o.sampler_steps;
  if (o.o_samples->count()) ec.selection_samples = o.samples;
  const bool seeds_from_flag = o.o_seeds->count() > 0;
  if (seeds_from_flag || (o.default_three_seeds && o.config_file.empty())) {
    if (o.seeds < 1) throw ConfigError("--seeds must be >= 1");
    ec.seeds.clear();
    for (int s = 1; s <= o.seeds; ++s) ec.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  ec.validate();
  return ec;
}

void add_eval_options(CLI::App* sub, CommonEvalOpts& o, bool default_three_seeds) {
  sub->add_option("--checkpoint", o.checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--data", o.data, "dataset directory (default MVOC_DATA_ROOT)")
      ->check(CLI::ExistingDirectory);
  sub->add_option("--config", o.config_file, "experiment config file")->check(CLI::ExistingFile);
  o.o_split = sub->add_option("--split", o.split, "dataset split (default test)");
  o.o_strategy = sub->add_option("--strategy", o.strategy, "random or active");
  o.o_budget = sub->add_option("--budget", o.budget, "views to observe per scene");
  o.o_seeds = sub->add_option("--seeds", o.seeds, "number of evaluation seeds, used as 1..N");
  o.o_sampler = sub->add_option("--sampler-steps", o.sampler_steps, "fast sampler steps");
  o.o_samples = sub->add_option("--samples", o.samples, "diffusion samples per candidate");
  sub->add_option("--out", o.out, "report JSON path")->required();
  sub->add_option("--threads", o.threads, "worker threads (1 reproduces any N)");
  if (default_three_seeds) {
    o.seeds = 3;
    o.default_three_seeds = true;
  }
}

ExperimentConfig load_config_or_default(const std::string& file) {
  if (file.empty()) return ExperimentConfig{};
  return load_experiment_config(file);
}

struct SceneRun {
  std::unique_ptr<Model> model;
  std::unique_ptr<LatentCodec> codec;
  MultiViewScene scene;
  SelectionResult selection;
};

SceneRun select_on_scene(const std::string& checkpoint, const std::string& scene_dir, int budget,
                         int sampler_steps, int samples, std::uint64_t seed) {
  SceneRun r;
  r.model = load_checkpoint(checkpoint);
  r.codec = make_codec(r.model->config());
  r.scene = load_scene(scene_dir);
  SelectionConfig sc;
  sc.sampler.num_steps = sampler_steps;
  sc.samples_per_candidate = samples;
  r.selection = active_select(*r.model, r.scene, budget, sc, seed);
  return r;
}

Tensor bank_row(const Tensor& attr, long long row, const std::string& what) {
  if (row < 0 || row >= attr.rows()) throw ConfigError(what + ": slot index out of range");
  Tensor slot = Tensor::zeros({attr.cols()});
  std::memcpy(slot.data(), attr.data() + row * attr.cols(),
              static_cast<std::size_t>(attr.cols()) * sizeof(double));
  return slot;
}

Tensor apply_edit(const std::string& op, const Tensor& attr, const SceneRun& run, int budget,
                  int sampler_steps, int samples, std::uint64_t seed) {
  const std::vector<std::string> parts = split_on(op, ':');
  if (parts.size() < 2) throw ConfigError("bad --op '" + op + "'");
  const std::string& kind = parts.front();
  if (kind == "remove") {
    if (parts.size() != 2) throw ConfigError("bad --op: expected remove:<k>");
    const long long k = parse_int(parts[1]);
    if (k < 0 || k >= attr.rows()) throw ConfigError("--op remove: slot index out of range");
    return remove_slot(attr, static_cast<int>(k));
  }
  if (kind == "insert") {
    long long row = 0;
    std::size_t path_end = parts.size();
    if (parts.size() >= 3 && !parts.back().empty() &&
        parts.back().find_first_not_of("0123456789") == std::string::npos) {
      row = parse_int(parts.back());
      --path_end;
    }
    std::string path = parts[1];
    for (std::size_t i = 2; i < path_end; ++i) path += ":" + parts[i];
    if (!fs::exists(path)) throw ConfigError("--op insert: no slot file at " + path);
    const SlotBank bank = load_slot_bank(path);
    if (bank.scenes.empty()) throw ConfigError("--op insert: empty slot file");
    return insert_slot(attr, bank_row(bank.scenes.front().attr, row, "--op insert"));
  }
  if (kind == "swap") {
    if (parts.size() < 4) throw ConfigError("bad --op: expected swap:<k>:<scene>:<j>");
    const long long k = parse_int(parts[1]);
    const long long jj = parse_int(parts.back());
    std::string donor_dir = parts[2];
    for (std::size_t i = 3; i + 1 < parts.size(); ++i) donor_dir += ":" + parts[i];
    if (!fs::is_directory(donor_dir)) throw ConfigError("--op swap: no scene at " + donor_dir);
    const MultiViewScene donor = load_scene(donor_dir);
    SelectionConfig sc;
    sc.sampler.num_steps = sampler_steps;
    sc.samples_per_candidate = samples;
    const SelectionResult donor_sel =
        active_select(*run.model, donor, budget, sc, mix_seed({seed, stream_tag("edit_donor")}));
    if (k < 0 || k >= attr.rows() || jj < 0 || jj >= donor_sel.slots.attr.rows())
      throw ConfigError("--op swap: slot index out of range");
    return swap_slot(attr, static_cast<int>(k), donor_sel.slots.attr, static_cast<int>(jj));
  }
  throw ConfigError("bad --op '" + op + "': expected remove:, insert: or swap:");
}

std::vector<Tensor> render_targets(const SceneRun& run, const Tensor& attr,
                                   const std::vector<double>& targets, int sampler_steps,
                                   std::uint64_t seed) {
  SamplerConfig sampler{sampler_steps};
  Rng rng(mix_seed({seed, stream_tag("synth_run")}));
  return synthesize_views(*run.model, *run.codec, attr, targets, sampler, rng);
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["dataset"] = nlohmann::json::parse(dataset_config_to_json(dataset));
  j["model"] = model_config_to_json(model);
  j["train"] = train_config_to_json(train);
  j["eval"] = eval_config_to_json(eval);
  j["paths"] = {{"data_root", data_root}};
  return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  check_keys(j, "experiment config", {"dataset", "model", "train", "eval", "paths"});
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = dataset_config_from_json(j.at("dataset").dump());
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.explicit_data_stats = m.contains("data_mean") || m.contains("data_std");
    c.model = model_config_from_json(m);
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("eval")) c.eval = eval_config_from_json(j.at("eval"));
  if (j.contains("paths")) {
    check_keys(j.at("paths"), "paths", {"data_root"});
    c.data_root = get_or(j.at("paths"), "data_root", std::string());
  }
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& file) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(file));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

std::vector<double> parse_targets(const std::string& text, int num_viewpoints) {
  std::vector<double> out;
  for (const std::string& tok : split_on(text, ',')) {
    if (tok.empty()) throw ConfigError("targets: empty entry in '" + text + "'");
    const std::size_t dots = tok.find("..");
    if (dots != std::string::npos) {
      const long long a = parse_int(tok.substr(0, dots));
      const long long b = parse_int(tok.substr(dots + 2));
      if (b < a) throw ConfigError("targets: bad range '" + tok + "'");
      for (long long t = a; t <= b; ++t) out.push_back(static_cast<double>(t));
    } else {
      out.push_back(parse_number(tok));
    }
  }
  if (out.empty()) throw ConfigError("targets: none given");
  for (double v : out)
    if (!(v > 0.0) || v > static_cast<double>(num_viewpoints))
      throw ConfigError("targets: values must lie in (0, " + std::to_string(num_viewpoints) +
                        "]");
  return out;
}

Tensor image_grid(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("image grid: no images");
  const Tensor& first = images.front();
  if (first.rank() != 3 || first.dim(2) != 3)
    throw std::invalid_argument("image grid: expected [H, W, 3] images");
  const std::int64_t h = first.dim(0), w = first.dim(1);
  const auto n = static_cast<std::int64_t>(images.size());
  Tensor grid = Tensor::zeros({h, w * n, 3});
  for (std::int64_t i = 0; i < n; ++i) {
    const Tensor& img = images[static_cast<std::size_t>(i)];
    if (!img.same_shape(first)) throw std::invalid_argument("image grid: mixed image shapes");
    for (std::int64_t r = 0; r < h; ++r)
      std::memcpy(grid.data() + (r * w * n + i * w) * 3, img.data() + r * w * 3,
                  static_cast<std::size_t>(w) * 3 * sizeof(double));
  }
  return grid;
}

namespace {

struct GenDataOpts {
  std::string config_file, out;
  std::uint64_t seed = 0;
  int threads = 1;
};

int cmd_gen_data(const GenDataOpts& o) {
  ExperimentConfig cfg = load_config_or_default(o.config_file);
  const fs::path out = o.out.empty() ? resolve_data_root("", cfg.data_root) : fs::path(o.out);
  ThreadPool pool(o.threads);
  const DatasetIndex idx = generate_dataset(cfg.dataset, out, o.seed, pool);
  nlohmann::json rec = run_record("gen-data", o.seed, cfg.to_json());
  rec["dataset_hash"] = dataset_fingerprint(out);
  write_json_file(out / "run.json", rec);
  std::cout << "dataset " << out.string() << ": " << idx.train.size() << " train, "
            << idx.valid.size() << " valid, " << idx.test.size() << " test scenes\n";
  return 0;
}

struct TrainOpts {
  std::string config_file, data, out, pretrained, resume, strategy;
  std::uint64_t seed = 0;
  int budget = 0, threads = 1;
  CLI::Option *o_seed = nullptr, *o_strategy = nullptr, *o_budget = nullptr;
};

int run_training(const TrainOpts& o, const std::string& stage) {
  ExperimentConfig cfg = load_config_or_default(o.config_file);
  TrainConfig tc = cfg.train;
  tc.stage = stage;
  if (o.o_seed->count()) tc.seed = o.seed;
  if (o.o_strategy && o.o_strategy->count()) tc.strategy = o.strategy;
  if (o.o_budget && o.o_budget->count()) tc.budget = o.budget;
  tc.validate();
  const DatasetIndex data = open_dataset(resolve_data_root(o.data, cfg.data_root));
  ModelConfig mc = cfg.model;
  adopt_data_stats(mc, data, cfg.explicit_data_stats);
  if (o.pretrained.empty()) check_model_matches_data(mc, data);
  ThreadPool pool(o.threads);
  fs::create_directories(o.out);

  RunManifest man;
  if (stage == "pretrain") {
    man = pretrain_single_view(data, mc, tc, o.out, pool);
  } else {
    if (tc.strategy == "active" && o.pretrained.empty())
      throw ConfigError("train --strategy active needs --pretrained");
    man = train_multiview(data, tc, o.pretrained, &mc, o.out, pool, o.resume);
  }

  ExperimentConfig resolved = cfg;
  resolved.train = tc;
  resolved.model = mc;
  nlohmann::json rec = run_record(stage == "pretrain" ? "pretrain" : "train", tc.seed,
                                  resolved.to_json());
  rec["dataset_hash"] = man.dataset_hash;
  write_json_file(fs::path(o.out) / "run.json", rec);

  std::cout << stage << ": " << man.steps_completed << " steps, final checkpoint "
            << (fs::path(o.out) / man.final_checkpoint).string() << "\n";
  if (man.diverged) {
    std::cerr << "training diverged; kept the last finite checkpoint\n";
    return 1;
  }
  return 0;
}

struct SelectOpts {
  std::string checkpoint, scene, trace;
  int budget = 4, sampler_steps = 8, samples = 1;
  std::uint64_t seed = 0;
};

int cmd_select(const SelectOpts& o) {
  SceneRun run =
      select_on_scene(o.checkpoint, o.scene, o.budget, o.sampler_steps, o.samples, o.seed);
  if (!fs::path(o.trace).parent_path().empty())
    fs::create_directories(fs::path(o.trace).parent_path());
  atomic_write_file(o.trace, trace_to_json(run.selection.trace));
  nlohmann::json rec = run_record("select", o.seed, nlohmann::json::object());
  rec["checkpoint"] = o.checkpoint;
  rec["scene"] = o.scene;
  rec["budget"] = o.budget;
  rec["sampler_steps"] = o.sampler_steps;
  rec["selection_samples"] = o.samples;
  rec["observed"] = run.selection.partition.observed;
  write_json_file(o.trace + ".run.json", rec);
  std::cout << "observed views:";
  for (int v : run.selection.partition.observed) std::cout << " " << v;
  std::cout << "\n";
  return 0;
}

int cmd_eval(const CommonEvalOpts& o) {
  ExperimentConfig cfg = load_config_or_default(o.config_file);
  EvalConfig ec = resolve_eval_config(o, cfg);
  const std::unique_ptr<Model> model = load_checkpoint(o.checkpoint);
  const DatasetIndex data = open_dataset(resolve_data_root(o.data, cfg.data_root));
  check_model_matches_data(model->config(), data);
  ThreadPool pool(o.threads);
  EvalReport report = evaluate(*model, data, ec, pool);
  report.config["checkpoint"] = o.checkpoint;
  report.config["dataset_hash"] = dataset_fingerprint(data.root);
  report.config["tool_version"] = kToolVersion;
  write_json_file(o.out, report_to_json(report));
  print_report_table(report);
  return 0;
}

int cmd_compare(const CommonEvalOpts& o) {
  ExperimentConfig cfg = load_config_or_default(o.config_file);
  EvalConfig ec = resolve_eval_config(o, cfg);
  const std::unique_ptr<Model> model = load_checkpoint(o.checkpoint);
  const DatasetIndex data = open_dataset(resolve_data_root(o.data, cfg.data_root));
  check_model_matches_data(model->config(), data);
  ThreadPool pool(o.threads);
  StrategyComparison comp = compare_strategies(*model, data, ec, pool);
  const std::string hash = dataset_fingerprint(data.root);
  for (EvalReport* r : {&comp.random, &comp.active}) {
    r->config["checkpoint"] = o.checkpoint;
    r->config["dataset_hash"] = hash;
    r->config["tool_version"] = kToolVersion;
  }
  write_json_file(o.out, comparison_to_json(comp));
  print_comparison_table(comp);
  return 0;
}

struct SynthOpts {
  std::string checkpoint, scene, targets, out, op, export_slots;
  int budget = 4, sampler_steps = 8, samples = 1;
  std::uint64_t seed = 0;
};

nlohmann::json synth_record(const char* command, const SynthOpts& o, const SceneRun& run,
                            const std::vector<double>& targets) {
  nlohmann::json rec = run_record(command, o.seed, nlohmann::json::object());
  rec["checkpoint"] = o.checkpoint;
  rec["scene"] = o.scene;
  rec["budget"] = o.budget;
  rec["sampler_steps"] = o.sampler_steps;
  rec["targets"] = targets;
  rec["observed"] = run.selection.partition.observed;
  return rec;
}

int cmd_synthesize(const SynthOpts& o) {
  SceneRun run =
      select_on_scene(o.checkpoint, o.scene, o.budget, o.sampler_steps, o.samples, o.seed);
  const std::vector<double> targets =
      parse_targets(o.targets, run.model->config().num_viewpoints);
  const std::vector<Tensor> images =
      render_targets(run, run.selection.slots.attr, targets, o.sampler_steps, o.seed);
  if (!fs::path(o.out).parent_path().empty())
    fs::create_directories(fs::path(o.out).parent_path());
  write_png_rgb(o.out, image_grid(images));
  write_json_file(o.out + ".run.json", synth_record("synthesize", o, run, targets));
  std::cout << "wrote " << o.out << " (" << images.size() << " views)\n";
  return 0;
}

int cmd_edit(const SynthOpts& o) {
  if (o.op.empty() && o.export_slots.empty())
    throw ConfigError("edit: pass --op and/or --export-slots");
  SceneRun run =
      select_on_scene(o.checkpoint, o.scene, o.budget, o.sampler_steps, o.samples, o.seed);
  if (!o.export_slots.empty()) {
    SlotBank bank;
    bank.checkpoint_id = hex64(hash_file(o.checkpoint));
    bank.scenes.push_back({run.scene.id, run.selection.slots.attr});
    if (!fs::path(o.export_slots).parent_path().empty())
      fs::create_directories(fs::path(o.export_slots).parent_path());
    save_slot_bank(bank, o.export_slots);
    std::cout << "exported " << bank.scenes.front().attr.rows() << " slots to " << o.export_slots
              << "\n";
  }
  if (o.op.empty()) return 0;
  if (o.out.empty()) throw ConfigError("edit --op needs --out");
  const Tensor edited = apply_edit(o.op, run.selection.slots.attr, run, o.budget,
                                   o.sampler_steps, o.samples, o.seed);
  const std::string target_spec =
      o.targets.empty() ? "1.." + std::to_string(run.model->config().num_viewpoints) : o.targets;
  const std::vector<double> targets =
      parse_targets(target_spec, run.model->config().num_viewpoints);
  const std::vector<Tensor> images =
      render_targets(run, edited, targets, o.sampler_steps, o.seed);
  if (!fs::path(o.out).parent_path().empty())
    fs::create_directories(fs::path(o.out).parent_path());
  write_png_rgb(o.out, image_grid(images));
  nlohmann::json rec = synth_record("edit", o, run, targets);
  rec["op"] = o.op;
  write_json_file(o.out + ".run.json", rec);
  std::cout << "wrote " << o.out << " (" << images.size() << " views)\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"multi-view object-centric scenes: data, training, selection, synthesis", "mvoc"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  GenDataOpts gen;
  auto* sub_gen = app.add_subcommand("gen-data", "render a synthetic multi-view dataset");
  sub_gen->add_option("--config", gen.config_file, "experiment config file")
      ->check(CLI::ExistingFile);
  sub_gen->add_option("--out", gen.out, "dataset directory (default MVOC_DATA_ROOT)");
  sub_gen->add_option("--seed", gen.seed, "dataset seed");
  sub_gen->add_option("--threads", gen.threads, "worker threads (1 reproduces any N)");

  TrainOpts pre;
  auto* sub_pre = app.add_subcommand("pretrain", "stage one: single-view denoising");
  sub_pre->add_option("--config", pre.config_file, "experiment config file")
      ->check(CLI::ExistingFile);
  sub_pre->add_option("--data", pre.data, "dataset directory (default MVOC_DATA_ROOT)")
      ->check(CLI::ExistingDirectory);
  sub_pre->add_option("--out", pre.out, "run directory")->required();
  pre.o_seed = sub_pre->add_option("--seed", pre.seed, "training seed");
  sub_pre->add_option("--threads", pre.threads, "worker threads (1 reproduces any N)");

  TrainOpts tr;
  auto* sub_tr = app.add_subcommand("train", "stage two: multi-view blended loss");
  sub_tr->add_option("--config", tr.config_file, "experiment config file")
      ->check(CLI::ExistingFile);
  sub_tr->add_option("--data", tr.data, "dataset directory (default MVOC_DATA_ROOT)")
      ->check(CLI::ExistingDirectory);
  sub_tr->add_option("--out", tr.out, "run directory")->required();
  sub_tr->add_option("--pretrained", tr.pretrained, "stage-one checkpoint")
      ->check(CLI::ExistingFile);
  sub_tr->add_option("--resume", tr.resume, "checkpoint from the same run to continue")
      ->check(CLI::ExistingFile);
  tr.o_strategy = sub_tr->add_option("--strategy", tr.strategy, "random or active");
  tr.o_budget = sub_tr->add_option("--budget", tr.budget, "views observed per scene");
  tr.o_seed = sub_tr->add_option("--seed", tr.seed, "training seed");
  sub_tr->add_option("--threads", tr.threads, "worker threads (1 reproduces any N)");

  SelectOpts sel;
  auto* sub_sel = app.add_subcommand("select", "active viewpoint selection on one scene");
  sub_sel->add_option("--checkpoint", sel.checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sub_sel->add_option("--scene", sel.scene, "scene directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  sub_sel->add_option("--budget", sel.budget, "views to observe");
  sub_sel->add_option("--seed", sel.seed, "selection seed");
  sub_sel->add_option("--sampler-steps", sel.sampler_steps, "fast sampler steps");
  sub_sel->add_option("--samples", sel.samples, "diffusion samples per candidate");
  sub_sel->add_option("--trace", sel.trace, "selection trace JSON path")->required();

  CommonEvalOpts ev;
  auto* sub_ev = app.add_subcommand("eval", "segmentation and reconstruction metrics");
  add_eval_options(sub_ev, ev, false);

  CommonEvalOpts cmp;
  auto* sub_cmp =
      app.add_subcommand("compare-strategies", "paired random vs active evaluation");
  add_eval_options(sub_cmp, cmp, true);

  SynthOpts sy;
  auto* sub_sy = app.add_subcommand("synthesize", "render chosen viewpoints from slots");
  sub_sy->add_option("--checkpoint", sy.checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sub_sy->add_option("--scene", sy.scene, "scene directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  sub_sy->add_option("--budget", sy.budget, "views to observe");
  sub_sy->add_option("--targets", sy.targets, "timesteps, e.g. 1..8 or 2,4.5,7")->required();
  sub_sy->add_option("--seed", sy.seed, "selection and sampling seed");
  sub_sy->add_option("--sampler-steps", sy.sampler_steps, "fast sampler steps");
  sub_sy->add_option("--out", sy.out, "output grid PNG")->required();

  SynthOpts ed;
  auto* sub_ed = app.add_subcommand("edit", "slot-level scene editing");
  sub_ed->add_option("--checkpoint", ed.checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sub_ed->add_option("--scene", ed.scene, "scene directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  sub_ed->add_option("--op", ed.op, "remove:<k> | insert:<slotfile>[:<row>] | swap:<k>:<scene>:<j>");
  sub_ed->add_option("--export-slots", ed.export_slots, "write the inferred slots to a file");
  sub_ed->add_option("--budget", ed.budget, "views to observe");
  sub_ed->add_option("--targets", ed.targets, "timesteps to render (default 1..V)");
  sub_ed->add_option("--seed", ed.seed, "selection and sampling seed");
  sub_ed->add_option("--sampler-steps", ed.sampler_steps, "fast sampler steps");
  sub_ed->add_option("--out", ed.out, "output grid PNG");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (sub_gen->parsed()) return cmd_gen_data(gen);
    if (sub_pre->parsed()) return run_training(pre, "pretrain");
    if (sub_tr->parsed()) return run_training(tr, "multiview");
    if (sub_sel->parsed()) return cmd_select(sel);
    if (sub_ev->parsed()) return cmd_eval(ev);
    if (sub_cmp->parsed()) return cmd_compare(cmp);
    if (sub_sy->parsed()) return cmd_synthesize(sy);
    if (sub_ed->parsed()) return cmd_edit(ed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace mvoc::cli
