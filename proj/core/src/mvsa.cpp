#include "mvoc/mvsa.hpp"

#include <cmath>
#include <stdexcept>

namespace mvoc {

using ad::Var;

Var make_slots_full(const Var& attr, const Var& view_rep) {
  const std::int64_t K = attr->value.rows();
  return ad::concat_lastdim({ad::repeat_rows(view_rep, K), attr});
}

SlotState SlotAttnResult::detached() const {
  SlotState s;
  s.attr = attr->value.clone();
  const std::int64_t M = static_cast<std::int64_t>(view_state.size());
  const std::int64_t Dv = M > 0 ? view_state[0]->value.numel() : 0;
  s.view = Tensor::zeros({M, Dv});
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t j = 0; j < Dv; ++j)
      s.view.at(m, j) = view_state[static_cast<std::size_t>(m)]->value[j];
  return s;
}

Var init_slots(const Model& model, int K, Rng& rng) {
  const auto& sa = model.slot_attn();
  Tensor eps = Tensor::randn({K, model.config().slot_attr_size}, rng);
  return ad::add(ad::mul(ad::constant(std::move(eps)), ad::exp_op(sa.logsigma)), sa.mu);
}

namespace {

struct ViewInputs {
  Var kh, vh;  // [N, d_full] projections of the normalized features
};

ViewInputs project_features(const Model& model, const Var& features) {
  const auto& sa = model.slot_attn();
  Var h = sa.ln_input(features);
  return {ad::matmul(h, sa.k), ad::matmul(h, sa.v)};
}

// A = softmax over slots of (kh . q(slots)^T / sqrt(d_full));
// U = (A / colsum)^T . vh with an epsilon against empty slots.
std::pair<Var, Var> attention_core(const Model& model, const ViewInputs& in,
                                   const Var& slots_full) {
  const auto& sa = model.slot_attn();
  const double scale = 1.0 / std::sqrt(static_cast<double>(model.config().d_full()));
  Var q = ad::matmul(sa.ln_slot(slots_full), sa.q);
  Var logits = ad::scale(ad::matmul_nt(in.kh, q), scale);  // [N, K]
  Var attn = ad::softmax_lastdim(logits);
  Var colsum = ad::add_scalar(ad::sum_axis0(attn), 1e-8);
  Var weights = ad::div(attn, colsum);
  Var updates = ad::matmul_tn(weights, in.vh);  // [K, d_full]
  return {attn, updates};
}

}  // namespace

std::pair<Var, Var> attention_step(const Model& model, const Var& features_m,
                                   const Var& slots_full_m) {
  return attention_core(model, project_features(model, features_m), slots_full_m);
}

SlotAttnResult multiview_slot_attention(const Model& model, const std::vector<Var>& features,
                                        const std::vector<Var>& view_reps,
                                        const std::optional<Tensor>& initial_attr, Rng* rng) {
  const std::size_t M = features.size();
  if (M == 0) throw std::invalid_argument("multiview_slot_attention: no views");
  if (view_reps.size() != M)
    throw std::invalid_argument("multiview_slot_attention: view_reps count mismatch");
  const auto& cfg = model.config();
  const auto& sa = model.slot_attn();
  const int Dv = cfg.slot_view_size;
  const int D = cfg.slot_attr_size;

  Var attr;
  if (initial_attr) {
    if (initial_attr->cols() != D)
      throw std::invalid_argument("multiview_slot_attention: initial attr width");
    attr = ad::constant(*initial_attr);
  } else {
    if (!rng) throw std::invalid_argument("multiview_slot_attention: rng required for cold start");
    attr = init_slots(model, cfg.num_slots, *rng);
  }
  const std::int64_t K = attr->value.rows();

  std::vector<ViewInputs> inputs;
  inputs.reserve(M);
  for (const auto& f : features) inputs.push_back(project_features(model, f));

  std::vector<Var> view_state(view_reps.begin(), view_reps.end());
  std::vector<Var> attn_last(M);
  for (int it = 0; it < cfg.num_iterations; ++it) {
    std::vector<Var> attr_parts(M);
    for (std::size_t m = 0; m < M; ++m) {
      Var full = make_slots_full(attr, view_state[m]);
      auto [attn, updates] = attention_core(model, inputs[m], full);
      Var g = sa.gru(updates, full);
      if (cfg.slot_mlp) g = ad::add(g, sa.mlp2(ad::relu(sa.mlp1(sa.ln_mlp(g)))));
      view_state[m] =
          ad::scale(ad::sum_axis0(ad::slice_lastdim(g, 0, Dv)), 1.0 / static_cast<double>(K));
      attr_parts[m] = ad::slice_lastdim(g, Dv, D);
      attn_last[m] = attn;
    }
    Var sum = attr_parts[0];
    for (std::size_t m = 1; m < M; ++m) sum = ad::add(sum, attr_parts[m]);
    attr = ad::scale(sum, 1.0 / static_cast<double>(M));
  }
  return {attr, std::move(attn_last), std::move(view_state)};
}

}  // namespace mvoc
