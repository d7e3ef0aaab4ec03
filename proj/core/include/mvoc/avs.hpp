#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mvoc/diffusion.hpp"
#include "mvoc/mvsa.hpp"
#include "mvoc/scenegen.hpp"

namespace mvoc {

// Observation bookkeeping for one scene. `observed` keeps selection order,
// `unknown` stays ascending.
struct ViewPartition {
  int num_views = 0;
  std::vector<int> observed;
  std::vector<int> unknown;
};

ViewPartition make_partition(int num_views, int first_view);
// Moves `view` from unknown to observed; throws if it is not unknown.
void observe(ViewPartition& p, int view);
bool partition_valid(const ViewPartition& p);

struct CandidateScore {
  int view = -1;
  double similarity = 0.0;
  std::uint64_t rng_seed = 0;  // sampler stream used for this candidate
  bool selected = false;
};

struct SelectionRound {
  std::vector<CandidateScore> candidates;  // ascending view order
  int selected_view = -1;
  Tensor s_prev;  // slot state the round started from, for replay
};

struct SelectionTrace {
  int initial_view = -1;
  int budget = 0;
  std::uint64_t seed = 0;
  std::vector<SelectionRound> rounds;
  Tensor warm_slots;   // slot state after the last update step
  Tensor final_slots;  // cold re-run over the final observation set
};

std::string trace_to_json(const SelectionTrace& t);
SelectionTrace trace_from_json(const std::string& text);

// Replaces the diffusion predictor when set; used for ablations and tests.
using PredictFn = std::function<Tensor(int view, const Tensor& s_prev, Rng& rng)>;

struct SelectionConfig {
  SamplerConfig sampler{8};
  // Scores may average over several diffusion samples per candidate; the
  // returned slot state comes from the first sample.
  int samples_per_candidate = 1;
  PredictFn predictor;  // empty -> predict_view with the model
};

// Eq. 3: sum over index-aligned slot pairs of their cosine similarity.
// A zero-norm slot contributes 0 to the sum.
double slot_similarity(const Tensor& s_prev, const Tensor& s_new);

// Samples a latent conditioned on [view | attr] slots and decodes it to an
// image. Requires a pretrained model.
Tensor predict_view(const Model& model, const LatentCodec& codec, const Tensor& slots_attr,
                    double annotation, const SamplerConfig& sampler, Rng& rng);

struct ScoredCandidate {
  double similarity = 0.0;
  Tensor slots_attr;  // warm-started attention result over O u {candidate}
};

// Predicts the candidate view, runs warm-started slot attention over the
// observed views plus the prediction, and scores the slot drift. Gradient
// free.
ScoredCandidate score_candidate(const Model& model, const LatentCodec& codec,
                                const MultiViewScene& scene, const ViewPartition& partition,
                                const Tensor& s_prev, int candidate, const SelectionConfig& cfg,
                                std::uint64_t rng_seed);

struct SelectionResult {
  ViewPartition partition;
  SlotState slots;  // from the final cold pass
  SelectionTrace trace;
};

// Grows the observation set to `budget` views: starts from one uniformly
// drawn view, then repeatedly admits the candidate whose predicted view
// moves the slots the most (minimum similarity, strict less-than keeps the
// first). The real image enters the observation set; the warm slot state
// follows the prediction-updated slots.
SelectionResult active_select(const Model& model, const MultiViewScene& scene, int budget,
                              const SelectionConfig& cfg, std::uint64_t seed);

// `budget` distinct views, uniform over subsets.
ViewPartition random_select(int num_views, int budget, Rng& rng);

}  // namespace mvoc
