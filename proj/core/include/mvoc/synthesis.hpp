#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mvoc/avs.hpp"
#include "mvoc/threadpool.hpp"

namespace mvoc {

// Inferred attribute slot sets pooled across scenes, with provenance.
struct SlotBankEntry {
  std::string scene_id;
  Tensor attr;  // [K, D]
};

struct SlotBank {
  std::string checkpoint_id;
  std::vector<SlotBankEntry> scenes;

  // K and D, uniform across entries; checked by validate().
  std::int64_t num_slots() const;
  std::int64_t slot_width() const;
  void validate() const;
};

void save_slot_bank(const SlotBank& bank, const std::filesystem::path& path);
SlotBank load_slot_bank(const std::filesystem::path& path);

// Viewpoint interpolation: t' = (v_src + 1) / (v_dst + 1) * t for
// t = 1..v_dst, so the targets span the source range proportionally.
std::vector<double> interpolate_timesteps(int v_src, int v_dst);

// One generated image per target timestep, with the attribute slots held
// fixed across targets. Timesteps may be fractional.
std::vector<Tensor> synthesize_views(const Model& model, const LatentCodec& codec,
                                     const Tensor& attr_slots, const std::vector<double>& targets,
                                     const SamplerConfig& sampler, Rng& rng);

// Slot set edits. All pure: a new set is returned, inputs are untouched, and
// the downstream decoder accepts any slot count.
Tensor remove_slot(const Tensor& attr_slots, std::int64_t k);
Tensor insert_slot(const Tensor& attr_slots, const Tensor& slot);
Tensor swap_slot(const Tensor& attr_slots, std::int64_t k, const Tensor& donor_slots,
                 std::int64_t j);

struct GeneratedScene {
  Tensor attr;                                             // [K, D]
  std::vector<std::pair<std::int64_t, std::int64_t>> sources;  // (bank entry, slot row)
  std::vector<Tensor> images;                              // one per timestep 1..V
};

// New scenes assembled from slots drawn uniformly without replacement from
// the pooled bank, each rendered at every viewpoint timestep of the model.
std::vector<GeneratedScene> shuffle_generate(const Model& model, const LatentCodec& codec,
                                             const SlotBank& bank, int count,
                                             const SamplerConfig& sampler, std::uint64_t seed,
                                             ThreadPool& pool);

}  // namespace mvoc
