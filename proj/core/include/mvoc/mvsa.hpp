#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "mvoc/nets.hpp"

namespace mvoc {

// Canonical per-slot layout used everywhere a "full" slot appears:
// columns [0, D_view) hold the viewpoint part, [D_view, D_view + D) the
// attribute part.
ad::Var make_slots_full(const ad::Var& attr, const ad::Var& view_rep);

// Detached snapshot of a slot-attention pass.
struct SlotState {
  Tensor attr;  // [K, D]
  Tensor view;  // [M, D_view] (evolved per-view slots)
};

struct SlotAttnResult {
  ad::Var attr;                      // [K, D]
  std::vector<ad::Var> attn;         // per view [N, K], last iteration
  std::vector<ad::Var> view_state;   // per view [D_view]
  SlotState detached() const;
};

// Gaussian slot initialization, reparameterized so the learned mean and
// log-stddev receive gradients through the sample.
ad::Var init_slots(const Model& model, int K, Rng& rng);

// Single attention read for one view: A [N, K] (softmax over slots) and the
// inverted-attention weighted mean U [K, d_full].
std::pair<ad::Var, ad::Var> attention_step(const Model& model, const ad::Var& features_m,
                                           const ad::Var& slots_full_m);

// Algorithm: iteratively refine K shared attribute slots from M views. Each
// iteration processes every view with its own evolving view slot, updates via
// the GRU (plus optional residual MLP), then averages the attribute parts
// across views. With initial_attr set, runs warm-started from that state;
// otherwise samples from the learned prior using rng.
SlotAttnResult multiview_slot_attention(const Model& model, const std::vector<ad::Var>& features,
                                        const std::vector<ad::Var>& view_reps,
                                        const std::optional<Tensor>& initial_attr, Rng* rng);

}  // namespace mvoc
