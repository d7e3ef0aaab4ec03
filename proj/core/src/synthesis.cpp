#include "mvoc/synthesis.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "mvoc/json_util.hpp"
#include "mvoc/util.hpp"

namespace fs = std::filesystem;

namespace mvoc {

std::int64_t SlotBank::num_slots() const {
  if (scenes.empty()) throw std::invalid_argument("slot bank: empty");
  return scenes.front().attr.rows();
}

std::int64_t SlotBank::slot_width() const {
  if (scenes.empty()) throw std::invalid_argument("slot bank: empty");
  return scenes.front().attr.cols();
}

void SlotBank::validate() const {
  if (scenes.empty()) throw std::invalid_argument("slot bank: empty");
  const Tensor& first = scenes.front().attr;
  if (first.rank() != 2 || first.rows() < 1 || first.cols() < 1)
    throw std::invalid_argument("slot bank: entries must be [K, D] arrays");
  for (const SlotBankEntry& e : scenes)
    if (e.attr.rank() != 2 || e.attr.rows() != first.rows() || e.attr.cols() != first.cols())
      throw std::invalid_argument("slot bank: nonuniform slot array for scene " + e.scene_id);
}

void save_slot_bank(const SlotBank& bank, const fs::path& path) {
  bank.validate();
  nlohmann::json ids = nlohmann::json::array();
  for (const SlotBankEntry& e : bank.scenes) ids.push_back(e.scene_id);
  nlohmann::json header{{"format_version", 1},
                        {"checkpoint_id", bank.checkpoint_id},
                        {"num_slots", bank.num_slots()},
                        {"slot_width", bank.slot_width()},
                        {"scenes", ids}};
  std::string head = header.dump();
  std::string file = "MVOCSLOT";
  std::uint32_t len = static_cast<std::uint32_t>(head.size());
  file.append(reinterpret_cast<const char*>(&len), sizeof(len));
  file += head;
  for (const SlotBankEntry& e : bank.scenes)
    file.append(reinterpret_cast<const char*>(e.attr.data()),
                static_cast<std::size_t>(e.attr.numel()) * sizeof(double));
  atomic_write_file(path, file);
}

SlotBank load_slot_bank(const fs::path& path) {
  std::vector<unsigned char> raw = read_binary_file(path);
  if (raw.size() < 12 || std::memcmp(raw.data(), "MVOCSLOT", 8) != 0)
    throw std::runtime_error("not a slot bank file: " + path.string());
  std::uint32_t len;
  std::memcpy(&len, raw.data() + 8, sizeof(len));
  if (raw.size() < 12 + static_cast<std::size_t>(len))
    throw std::runtime_error("truncated slot bank header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.begin() + 12, raw.begin() + 12 + len);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad slot bank header: " + std::string(e.what()));
  }
  if (header.at("format_version").get<int>() != 1)
    throw std::runtime_error("unsupported slot bank version");
  const auto K = header.at("num_slots").get<std::int64_t>();
  const auto D = header.at("slot_width").get<std::int64_t>();
  if (K < 1 || D < 1) throw std::runtime_error("bad slot bank dimensions");
  const auto& ids = header.at("scenes");

  SlotBank bank;
  bank.checkpoint_id = header.at("checkpoint_id").get<std::string>();
  std::size_t off = 12 + len;
  const std::size_t entry_bytes = static_cast<std::size_t>(K * D) * sizeof(double);
  if (raw.size() - off != entry_bytes * ids.size())
    throw std::runtime_error("slot bank data size mismatch: " + path.string());
  for (const auto& id : ids) {
    SlotBankEntry e;
    e.scene_id = id.get<std::string>();
    e.attr = Tensor::zeros({K, D});
    std::memcpy(e.attr.data(), raw.data() + off, entry_bytes);
    off += entry_bytes;
    bank.scenes.push_back(std::move(e));
  }
  bank.validate();
  return bank;
}

std::vector<double> interpolate_timesteps(int v_src, int v_dst) {
  if (v_src < 1 || v_dst < 1)
    throw std::invalid_argument("interpolate_timesteps: viewpoint counts must be >= 1");
  const double ratio = static_cast<double>(v_src + 1) / static_cast<double>(v_dst + 1);
  std::vector<double> ts(static_cast<std::size_t>(v_dst));
  for (int t = 1; t <= v_dst; ++t) ts[static_cast<std::size_t>(t - 1)] = ratio * t;
  return ts;
}

std::vector<Tensor> synthesize_views(const Model& model, const LatentCodec& codec,
                                     const Tensor& attr_slots, const std::vector<double>& targets,
                                     const SamplerConfig& sampler, Rng& rng) {
  if (!model.pretrained)
    throw std::logic_error("synthesize_views: model has no trained denoiser");
  if (attr_slots.rank() != 2 || attr_slots.cols() != model.config().slot_attr_size)
    throw std::invalid_argument("synthesize_views: slot array shape");
  const std::uint64_t base = rng.next_u64();
  std::vector<Tensor> images(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Rng sub(mix_seed({base, stream_tag("synth_view"), static_cast<std::uint64_t>(i)}));
    images[i] = predict_view(model, codec, attr_slots, targets[i], sampler, sub);
  }
  return images;
}

namespace {

void check_slot_array(const Tensor& attr, const char* who) {
  if (attr.rank() != 2 || attr.rows() < 1 || attr.cols() < 1)
    throw std::invalid_argument(std::string(who) + ": slot array must be [K, D]");
}

}  // namespace

Tensor remove_slot(const Tensor& attr_slots, std::int64_t k) {
  check_slot_array(attr_slots, "remove_slot");
  const std::int64_t K = attr_slots.rows(), D = attr_slots.cols();
  if (K == 1) throw std::invalid_argument("remove_slot: cannot remove the only slot");
  if (k < 0 || k >= K) throw std::invalid_argument("remove_slot: slot index");
  Tensor out = Tensor::zeros({K - 1, D});
  std::int64_t r = 0;
  for (std::int64_t i = 0; i < K; ++i) {
    if (i == k) continue;
    for (std::int64_t c = 0; c < D; ++c) out.at(r, c) = attr_slots.at(i, c);
    ++r;
  }
  return out;
}

Tensor insert_slot(const Tensor& attr_slots, const Tensor& slot) {
  check_slot_array(attr_slots, "insert_slot");
  const std::int64_t K = attr_slots.rows(), D = attr_slots.cols();
  if (slot.rank() > 2 || slot.numel() != D || slot.rows() != 1)
    throw std::invalid_argument("insert_slot: slot must be a single row of matching width");
  Tensor out = Tensor::zeros({K + 1, D});
  for (std::int64_t i = 0; i < K; ++i)
    for (std::int64_t c = 0; c < D; ++c) out.at(i, c) = attr_slots.at(i, c);
  for (std::int64_t c = 0; c < D; ++c) out.at(K, c) = slot[c];
  return out;
}

Tensor swap_slot(const Tensor& attr_slots, std::int64_t k, const Tensor& donor_slots,
                 std::int64_t j) {
  check_slot_array(attr_slots, "swap_slot");
  check_slot_array(donor_slots, "swap_slot");
  const std::int64_t K = attr_slots.rows(), D = attr_slots.cols();
  if (donor_slots.cols() != D) throw std::invalid_argument("swap_slot: slot width mismatch");
  if (k < 0 || k >= K) throw std::invalid_argument("swap_slot: slot index");
  if (j < 0 || j >= donor_slots.rows()) throw std::invalid_argument("swap_slot: donor index");
  Tensor out = attr_slots.clone();
  for (std::int64_t c = 0; c < D; ++c) out.at(k, c) = donor_slots.at(j, c);
  return out;
}

std::vector<GeneratedScene> shuffle_generate(const Model& model, const LatentCodec& codec,
                                             const SlotBank& bank, int count,
                                             const SamplerConfig& sampler, std::uint64_t seed,
                                             ThreadPool& pool) {
  bank.validate();
  if (!model.pretrained)
    throw std::logic_error("shuffle_generate: model has no trained denoiser");
  if (count < 1) throw std::invalid_argument("shuffle_generate: count must be >= 1");
  const std::int64_t K = bank.num_slots(), D = bank.slot_width();
  if (D != model.config().slot_attr_size)
    throw std::invalid_argument("shuffle_generate: bank slot width does not match the model");
  const std::int64_t pool_size = static_cast<std::int64_t>(bank.scenes.size()) * K;
  if (pool_size < K) throw std::invalid_argument("shuffle_generate: bank smaller than one scene");

  std::vector<double> targets(static_cast<std::size_t>(model.config().num_viewpoints));
  for (std::size_t t = 0; t < targets.size(); ++t) targets[t] = static_cast<double>(t + 1);

  std::vector<GeneratedScene> out(static_cast<std::size_t>(count));
  pool.parallel_for(count, [&](std::int64_t i) {
    Rng rng(mix_seed({seed, stream_tag("shuffle_scene"), static_cast<std::uint64_t>(i)}));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(pool_size));
    std::iota(idx.begin(), idx.end(), std::int64_t{0});
    GeneratedScene g;
    g.attr = Tensor::zeros({K, D});
    for (std::int64_t r = 0; r < K; ++r) {
      const std::int64_t pick = r + rng.uniform_int(pool_size - r);
      std::swap(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(pick)]);
      const std::int64_t entry = idx[static_cast<std::size_t>(r)] / K;
      const std::int64_t row = idx[static_cast<std::size_t>(r)] % K;
      g.sources.emplace_back(entry, row);
      const Tensor& src = bank.scenes[static_cast<std::size_t>(entry)].attr;
      for (std::int64_t c = 0; c < D; ++c) g.attr.at(r, c) = src.at(row, c);
    }
    g.images = synthesize_views(model, codec, g.attr, targets, sampler, rng);
    out[static_cast<std::size_t>(i)] = std::move(g);
  });
  return out;
}

}  // namespace mvoc
