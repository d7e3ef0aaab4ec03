#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mvoc/autodiff.hpp"
#include "mvoc/rng.hpp"
#include "mvoc/tensor.hpp"

namespace mvoc {

struct ModelConfig {
  int image_size = 32;
  int d_enc = 48;          // encoder feature width
  int slot_attr_size = 48; // D
  int slot_view_size = 12; // D_view
  int num_slots = 6;       // K
  int num_iterations = 3;
  int num_viewpoints = 8;  // V, sets the viewpoint embedding period
  int view_input_channels = 2;  // sinusoidal channels fed to the viewpoint MLP (2 or 5)
  int view_hidden = 64;
  int dec_hidden = 96;
  bool slot_mlp = true;  // residual MLP after the GRU update
  int unet_base = 24;
  std::vector<int> unet_mults{1, 2, 3};
  int timesteps = 1000;
  std::string beta_scheduler = "linear";
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  std::string codec = "identity";  // or "half" (2x downsampled latent)
  // Channel statistics of the training set, used to standardize latents.
  std::vector<double> data_mean{0.0, 0.0, 0.0};
  std::vector<double> data_std{1.0, 1.0, 1.0};

  int patch_grid() const { return image_size / 4; }
  int num_patches() const { return patch_grid() * patch_grid(); }
  int d_full() const { return slot_attr_size + slot_view_size; }
  int latent_size() const { return codec == "half" ? image_size / 2 : image_size; }
  int latent_channels() const { return 3; }
  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Named parameter registry. Iteration order is construction order, which is
// fixed by the model builder; serialization and hashing rely on it.
class ParamStore {
 public:
  ad::Var add(const std::string& name, Tensor init);
  const ad::Var& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::string>& names() const { return names_; }
  std::int64_t total_numel() const;
  // Flips requires_grad on every parameter whose name starts with prefix.
  // Returns the number of parameters affected.
  int set_trainable(const std::string& prefix, bool trainable);
  std::uint64_t content_hash() const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, ad::Var> index_;
};

Tensor truncated_normal(std::vector<std::int64_t> shape, double stddev, Rng& rng);

namespace detail {

struct LinearP {
  ad::Var w, b;
  LinearP() = default;
  LinearP(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng, bool zero = false);
  ad::Var operator()(const ad::Var& x) const;  // [*, in] -> [*, out]
};

struct LayerNormP {
  ad::Var g, b;
  LayerNormP() = default;
  LayerNormP(ParamStore& ps, const std::string& prefix, int dim);
  ad::Var operator()(const ad::Var& x) const;
};

struct ConvP {
  ad::Var w, b;
  int stride = 1, pad = 1;
  ConvP() = default;
  ConvP(ParamStore& ps, const std::string& prefix, int kh, int cin, int cout, int stride, int pad,
        Rng& rng, bool zero = false);
  ad::Var operator()(const ad::Var& x) const;
};

struct GruP {
  ad::Var wz, uz, bz, wr, ur, br, wn, un, bn;
  GruP() = default;
  GruP(ParamStore& ps, const std::string& prefix, int dim, Rng& rng);
  // inputs/state: [K, dim] -> new state [K, dim]
  ad::Var operator()(const ad::Var& input, const ad::Var& state) const;
};

struct ResBlockP {
  LayerNormP ln1, ln2;
  ConvP conv1, conv2, skip;
  LinearP temb;
  bool has_skip = false;
  int h = 0, w = 0, cin = 0, cout = 0;
  ResBlockP() = default;
  ResBlockP(ParamStore& ps, const std::string& prefix, int h, int w, int cin, int cout,
            int temb_dim, Rng& rng);
  ad::Var operator()(const ad::Var& x, const ad::Var& temb_vec) const;
};

struct CrossAttnP {
  LayerNormP ln;
  LinearP q, k, v, o;
  int h = 0, w = 0, c = 0;
  CrossAttnP() = default;
  CrossAttnP(ParamStore& ps, const std::string& prefix, int h, int w, int c, int d_slots,
             Rng& rng);
  ad::Var operator()(const ad::Var& x, const ad::Var& slots) const;
};

}  // namespace detail

// All trainable networks: image encoder, viewpoint encoder, feature decoder,
// slot-conditioned denoiser, plus the slot-attention parameters.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t init_seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  bool pretrained = false;

  // image [H, W, 3] -> features [N, d_enc]
  ad::Var extract_features(const Tensor& image) const;
  // viewpoint timestep (fractional allowed) -> [slot_view_size]
  ad::Var encode_viewpoint(double c) const;
  // slots_full [K', d_full] -> (reconstruction [N, d_enc], alphas [N, K'])
  std::pair<ad::Var, ad::Var> decode_features(const ad::Var& slots_full) const;
  // z_t [h, w, 3], t in [1, T], slots_full [K', d_full] -> epsilon_hat [h, w, 3]
  ad::Var denoise(const ad::Var& z_t, double t, const ad::Var& slots_full) const;

  // Slot attention pieces used by the mvsa module.
  struct SlotAttnParams {
    ad::Var mu, logsigma;         // [slot_attr_size]
    detail::LayerNormP ln_input;  // over d_enc
    detail::LayerNormP ln_slot;   // over d_full
    ad::Var k, q, v;              // projections into d_full
    detail::GruP gru;
    detail::LayerNormP ln_mlp;
    detail::LinearP mlp1, mlp2;
  };
  const SlotAttnParams& slot_attn() const { return sa_; }

 private:
  ModelConfig cfg_;
  ParamStore ps_;

  // encoder
  detail::ConvP ec1_, ec2_, ec3_, ec4_;
  ad::Var enc_pos_;
  detail::LayerNormP enc_ln_;
  detail::LinearP enc_fc1_, enc_fc2_;
  // viewpoint encoder
  detail::LinearP view_fc1_, view_fc2_, view_fc3_;
  // slot attention
  SlotAttnParams sa_;
  // feature decoder
  ad::Var dec_pos_;
  detail::LinearP dec_fc1_, dec_fc2_, dec_fc3_;
  // denoiser
  detail::LinearP temb_fc1_, temb_fc2_;
  detail::ConvP den_in_;
  struct Level {
    detail::ResBlockP rb0, rb1;
    detail::CrossAttnP attn;
  };
  std::vector<Level> den_down_;
  std::vector<detail::ConvP> den_downsample_;
  detail::ResBlockP mid_rb0_, mid_rb1_;
  detail::CrossAttnP mid_attn_;
  std::vector<detail::ConvP> den_upsample_;
  std::vector<Level> den_up_;
  detail::LayerNormP out_ln_;
  detail::ConvP out_conv_;

  ad::Var timestep_embedding(double t) const;
};

// Checkpoint archive: versioned JSON header plus raw little-endian doubles.
struct AdamSlot {
  Tensor m, v;
};
struct OptimizerState {
  std::unordered_map<std::string, AdamSlot> slots;
  std::int64_t t = 0;
};

void save_checkpoint(const std::string& path, const Model& model, const OptimizerState* opt,
                     std::int64_t step);
std::unique_ptr<Model> load_checkpoint(const std::string& path, OptimizerState* opt_out = nullptr,
                                       std::int64_t* step_out = nullptr);

}  // namespace mvoc
