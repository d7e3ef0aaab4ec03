#include "mvoc/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "mvoc/json_util.hpp"
#include "mvoc/util.hpp"

namespace mvoc {

using ad::Var;

void ModelConfig::validate() const {
  if (image_size < 16 || image_size % 4 != 0)
    throw ConfigError("model.image_size must be a multiple of 4, >= 16");
  if (d_enc < 4 || slot_attr_size < 2 || slot_view_size < 1)
    throw ConfigError("model feature sizes too small");
  if (num_slots < 1 || num_iterations < 1 || num_viewpoints < 1)
    throw ConfigError("model counts must be positive");
  if (view_input_channels != 2 && view_input_channels != 5)
    throw ConfigError("model.view_input_channels must be 2 or 5");
  if (unet_mults.empty() || unet_base < 4) throw ConfigError("model.unet config invalid");
  for (int m : unet_mults)
    if (m < 1) throw ConfigError("model.channel_multipliers must be positive");
  if (beta_scheduler != "linear") throw ConfigError("model.beta_scheduler unknown");
  if (codec != "identity" && codec != "half") throw ConfigError("model.codec unknown");
  int down = 1 << (static_cast<int>(unet_mults.size()) - 1);
  if (latent_size() % down != 0 || latent_size() / down < 2)
    throw ConfigError("model.unet depth incompatible with latent size");
  if (timesteps < 1 || beta_start <= 0 || beta_end <= beta_start || beta_end >= 1)
    throw ConfigError("model diffusion schedule invalid");
  if (data_mean.size() != 3 || data_std.size() != 3) throw ConfigError("model.data stats need 3 channels");
  for (double s : data_std)
    if (!(s > 0)) throw ConfigError("model.data_std must be positive");
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"image_size", c.image_size},
                        {"d_enc", c.d_enc},
                        {"slot_attr_size", c.slot_attr_size},
                        {"slot_view_size", c.slot_view_size},
                        {"num_slots", c.num_slots},
                        {"num_iterations", c.num_iterations},
                        {"num_viewpoints", c.num_viewpoints},
                        {"view_input_channels", c.view_input_channels},
                        {"view_hidden", c.view_hidden},
                        {"dec_hidden", c.dec_hidden},
                        {"slot_mlp", c.slot_mlp},
                        {"unet_base", c.unet_base},
                        {"channel_multipliers", c.unet_mults},
                        {"timesteps", c.timesteps},
                        {"beta_scheduler", c.beta_scheduler},
                        {"beta_start", c.beta_start},
                        {"beta_end", c.beta_end},
                        {"codec", c.codec},
                        {"data_mean", c.data_mean},
                        {"data_std", c.data_std}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  check_keys(j, "model",
             {"image_size", "d_enc", "slot_attr_size", "slot_view_size", "num_slots",
              "num_iterations", "num_viewpoints", "view_input_channels", "view_hidden",
              "dec_hidden", "slot_mlp", "unet_base", "channel_multipliers", "timesteps",
              "beta_scheduler", "beta_start", "beta_end", "codec", "data_mean", "data_std"});
  ModelConfig c;
  c.image_size = get_or(j, "image_size", c.image_size);
  c.d_enc = get_or(j, "d_enc", c.d_enc);
  c.slot_attr_size = get_or(j, "slot_attr_size", c.slot_attr_size);
  c.slot_view_size = get_or(j, "slot_view_size", c.slot_view_size);
  c.num_slots = get_or(j, "num_slots", c.num_slots);
  c.num_iterations = get_or(j, "num_iterations", c.num_iterations);
  c.num_viewpoints = get_or(j, "num_viewpoints", c.num_viewpoints);
  c.view_input_channels = get_or(j, "view_input_channels", c.view_input_channels);
  c.view_hidden = get_or(j, "view_hidden", c.view_hidden);
  c.dec_hidden = get_or(j, "dec_hidden", c.dec_hidden);
  c.slot_mlp = get_or(j, "slot_mlp", c.slot_mlp);
  c.unet_base = get_or(j, "unet_base", c.unet_base);
  c.unet_mults = get_or(j, "channel_multipliers", c.unet_mults);
  c.timesteps = get_or(j, "timesteps", c.timesteps);
  c.beta_scheduler = get_or(j, "beta_scheduler", c.beta_scheduler);
  c.beta_start = get_or(j, "beta_start", c.beta_start);
  c.beta_end = get_or(j, "beta_end", c.beta_end);
  c.codec = get_or(j, "codec", c.codec);
  c.data_mean = get_or(j, "data_mean", c.data_mean);
  c.data_std = get_or(j, "data_std", c.data_std);
  c.validate();
  return c;
}

Var ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter: " + name);
  Var v = ad::leaf(std::move(init));
  names_.push_back(name);
  index_.emplace(name, v);
  return v;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::int64_t ParamStore::total_numel() const {
  std::int64_t n = 0;
  for (const auto& name : names_) n += index_.at(name)->value.numel();
  return n;
}

int ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  int count = 0;
  for (const auto& name : names_) {
    if (name.rfind(prefix, 0) != 0) continue;
    index_.at(name)->requires_grad = trainable;
    ++count;
  }
  return count;
}

std::uint64_t ParamStore::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& name : names_) {
    h = fnv1a(name.data(), name.size(), h);
    const Tensor& t = index_.at(name)->value;
    h = fnv1a(reinterpret_cast<const char*>(t.data()),
              static_cast<std::size_t>(t.numel()) * sizeof(double), h);
  }
  return h;
}

Tensor truncated_normal(std::vector<std::int64_t> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    t[i] = stddev * z;
  }
  return t;
}

namespace detail {

LinearP::LinearP(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng, bool zero) {
  Tensor wt = zero ? Tensor::zeros({in, out})
                   : truncated_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  w = ps.add(prefix + ".w", std::move(wt));
  b = ps.add(prefix + ".b", Tensor::zeros({out}));
}

Var LinearP::operator()(const Var& x) const { return ad::add(ad::matmul(x, w), b); }

LayerNormP::LayerNormP(ParamStore& ps, const std::string& prefix, int dim) {
  g = ps.add(prefix + ".g", Tensor::full({dim}, 1.0));
  b = ps.add(prefix + ".b", Tensor::zeros({dim}));
}

Var LayerNormP::operator()(const Var& x) const { return ad::layer_norm(x, g, b); }

ConvP::ConvP(ParamStore& ps, const std::string& prefix, int kh, int cin, int cout, int stride_,
             int pad_, Rng& rng, bool zero) {
  stride = stride_;
  pad = pad_;
  double sd = 1.0 / std::sqrt(static_cast<double>(kh) * kh * cin);
  Tensor wt = zero ? Tensor::zeros({kh, kh, cin, cout}) : truncated_normal({kh, kh, cin, cout}, sd, rng);
  w = ps.add(prefix + ".w", std::move(wt));
  b = ps.add(prefix + ".b", Tensor::zeros({cout}));
}

Var ConvP::operator()(const Var& x) const { return ad::conv2d(x, w, b, stride, pad); }

GruP::GruP(ParamStore& ps, const std::string& prefix, int dim, Rng& rng) {
  double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  wz = ps.add(prefix + ".wz", truncated_normal({dim, dim}, sd, rng));
  uz = ps.add(prefix + ".uz", truncated_normal({dim, dim}, sd, rng));
  bz = ps.add(prefix + ".bz", Tensor::zeros({dim}));
  wr = ps.add(prefix + ".wr", truncated_normal({dim, dim}, sd, rng));
  ur = ps.add(prefix + ".ur", truncated_normal({dim, dim}, sd, rng));
  br = ps.add(prefix + ".br", Tensor::zeros({dim}));
  wn = ps.add(prefix + ".wn", truncated_normal({dim, dim}, sd, rng));
  un = ps.add(prefix + ".un", truncated_normal({dim, dim}, sd, rng));
  bn = ps.add(prefix + ".bn", Tensor::zeros({dim}));
}

Var GruP::operator()(const Var& input, const Var& state) const {
  Var z = ad::sigmoid(ad::add(ad::add(ad::matmul(input, wz), ad::matmul(state, uz)), bz));
  Var r = ad::sigmoid(ad::add(ad::add(ad::matmul(input, wr), ad::matmul(state, ur)), br));
  Var n = ad::tanh_op(ad::add(ad::add(ad::matmul(input, wn), ad::mul(r, ad::matmul(state, un))), bn));
  // h' = (1 - z) * n + z * h
  Var one_minus_z = ad::add_scalar(ad::neg(z), 1.0);
  return ad::add(ad::mul(one_minus_z, n), ad::mul(z, state));
}

ResBlockP::ResBlockP(ParamStore& ps, const std::string& prefix, int h_, int w_, int cin_, int cout_,
                     int temb_dim, Rng& rng)
    : ln1(ps, prefix + ".ln1", cin_),
      ln2(ps, prefix + ".ln2", cout_),
      conv1(ps, prefix + ".conv1", 3, cin_, cout_, 1, 1, rng),
      conv2(ps, prefix + ".conv2", 3, cout_, cout_, 1, 1, rng, /*zero=*/true),
      temb(ps, prefix + ".temb", temb_dim, cout_, rng),
      h(h_), w(w_), cin(cin_), cout(cout_) {
  if (cin_ != cout_) {
    skip = ConvP(ps, prefix + ".skip", 1, cin_, cout_, 1, 0, rng);
    has_skip = true;
  }
}

Var ResBlockP::operator()(const Var& x, const Var& temb_vec) const {
  Var y = conv1(ad::silu(ln1(x)));
  y = ad::add(y, temb(temb_vec));
  y = conv2(ad::silu(ln2(y)));
  Var s = has_skip ? skip(x) : x;
  return ad::add(s, y);
}

CrossAttnP::CrossAttnP(ParamStore& ps, const std::string& prefix, int h_, int w_, int c_,
                       int d_slots, Rng& rng)
    : ln(ps, prefix + ".ln", c_),
      q(ps, prefix + ".q", c_, c_, rng),
      k(ps, prefix + ".k", d_slots, c_, rng),
      v(ps, prefix + ".v", d_slots, c_, rng),
      o(ps, prefix + ".o", c_, c_, rng, /*zero=*/true),
      h(h_), w(w_), c(c_) {}

Var CrossAttnP::operator()(const Var& x, const Var& slots) const {
  Var flat = ad::reshape(x, {static_cast<std::int64_t>(h) * w, c});
  Var qs = q(ln(flat));
  Var ks = k(slots);
  Var vs = v(slots);
  Var attn = ad::softmax_lastdim(ad::scale(ad::matmul_nt(qs, ks), 1.0 / std::sqrt(static_cast<double>(c))));
  Var out = o(ad::matmul(attn, vs));
  return ad::add(x, ad::reshape(out, {h, w, c}));
}

}  // namespace detail

using detail::ConvP;
using detail::CrossAttnP;
using detail::GruP;
using detail::LayerNormP;
using detail::LinearP;
using detail::ResBlockP;

namespace {
constexpr int kTembIn = 24;
constexpr int kTembDim = 48;
constexpr double kPi = 3.14159265358979323846;
}  // namespace

Model::Model(ModelConfig config, std::uint64_t init_seed) : cfg_(std::move(config)) {
  cfg_.validate();
  Rng rng(mix_seed({init_seed, stream_tag("model-init")}));
  const int N = cfg_.num_patches();
  const int D = cfg_.slot_attr_size;
  const int Dv = cfg_.slot_view_size;
  const int Df = cfg_.d_full();
  const int De = cfg_.d_enc;

  const int c1 = std::max(4, De / 2);
  const int c2 = std::max(4, 2 * De / 3);
  ec1_ = ConvP(ps_, "enc.conv1", 3, 3, c1, 1, 1, rng);
  ec2_ = ConvP(ps_, "enc.conv2", 3, c1, c2, 2, 1, rng);
  ec3_ = ConvP(ps_, "enc.conv3", 3, c2, De, 2, 1, rng);
  ec4_ = ConvP(ps_, "enc.conv4", 3, De, De, 1, 1, rng);
  enc_pos_ = ps_.add("enc.pos", truncated_normal({N, De}, 0.02, rng));
  enc_ln_ = LayerNormP(ps_, "enc.ln", De);
  enc_fc1_ = LinearP(ps_, "enc.fc1", De, De, rng);
  enc_fc2_ = LinearP(ps_, "enc.fc2", De, De, rng);

  view_fc1_ = LinearP(ps_, "view.fc1", cfg_.view_input_channels, cfg_.view_hidden, rng);
  view_fc2_ = LinearP(ps_, "view.fc2", cfg_.view_hidden, cfg_.view_hidden, rng);
  view_fc3_ = LinearP(ps_, "view.fc3", cfg_.view_hidden, Dv, rng);

  sa_.mu = ps_.add("sa.mu", Tensor::zeros({D}));
  sa_.logsigma = ps_.add("sa.logsigma", Tensor::zeros({D}));
  sa_.ln_input = LayerNormP(ps_, "sa.ln_input", De);
  sa_.k = ps_.add("sa.k", truncated_normal({De, Df}, 1.0 / std::sqrt(static_cast<double>(De)), rng));
  sa_.q = ps_.add("sa.q", truncated_normal({Df, Df}, 1.0 / std::sqrt(static_cast<double>(Df)), rng));
  sa_.v = ps_.add("sa.v", truncated_normal({De, Df}, 1.0 / std::sqrt(static_cast<double>(De)), rng));
  sa_.ln_slot = LayerNormP(ps_, "sa.ln_slot", Df);
  sa_.gru = GruP(ps_, "sa.gru", Df, rng);
  sa_.ln_mlp = LayerNormP(ps_, "sa.ln_mlp", Df);
  sa_.mlp1 = LinearP(ps_, "sa.mlp1", Df, 2 * Df, rng);
  sa_.mlp2 = LinearP(ps_, "sa.mlp2", 2 * Df, Df, rng);

  dec_pos_ = ps_.add("dec.pos", truncated_normal({N, Df}, 0.02, rng));
  dec_fc1_ = LinearP(ps_, "dec.fc1", Df, cfg_.dec_hidden, rng);
  dec_fc2_ = LinearP(ps_, "dec.fc2", cfg_.dec_hidden, cfg_.dec_hidden, rng);
  dec_fc3_ = LinearP(ps_, "dec.fc3", cfg_.dec_hidden, De + 1, rng);

  temb_fc1_ = LinearP(ps_, "den.temb.fc1", kTembIn, kTembDim, rng);
  temb_fc2_ = LinearP(ps_, "den.temb.fc2", kTembDim, kTembDim, rng);
  const int levels = static_cast<int>(cfg_.unet_mults.size());
  std::vector<int> width(levels), res(levels);
  for (int i = 0; i < levels; ++i) {
    width[i] = cfg_.unet_base * cfg_.unet_mults[static_cast<std::size_t>(i)];
    res[i] = cfg_.latent_size() >> i;
  }
  den_in_ = ConvP(ps_, "den.in", 3, cfg_.latent_channels(), width[0], 1, 1, rng);
  den_down_.resize(static_cast<std::size_t>(levels));
  for (int i = 0; i < levels; ++i) {
    std::string p = "den.down" + std::to_string(i);
    den_down_[i].rb0 = ResBlockP(ps_, p + ".rb0", res[i], res[i], width[i], width[i], kTembDim, rng);
    den_down_[i].rb1 = ResBlockP(ps_, p + ".rb1", res[i], res[i], width[i], width[i], kTembDim, rng);
    den_down_[i].attn = CrossAttnP(ps_, p + ".attn", res[i], res[i], width[i], Df, rng);
    if (i + 1 < levels)
      den_downsample_.push_back(ConvP(ps_, p + ".down", 3, width[i], width[i + 1], 2, 1, rng));
  }
  mid_rb0_ = ResBlockP(ps_, "den.mid.rb0", res[levels - 1], res[levels - 1], width[levels - 1],
                       width[levels - 1], kTembDim, rng);
  mid_attn_ = CrossAttnP(ps_, "den.mid.attn", res[levels - 1], res[levels - 1], width[levels - 1],
                         Df, rng);
  mid_rb1_ = ResBlockP(ps_, "den.mid.rb1", res[levels - 1], res[levels - 1], width[levels - 1],
                       width[levels - 1], kTembDim, rng);
  den_up_.resize(static_cast<std::size_t>(levels - 1));
  for (int i = levels - 2; i >= 0; --i) {
    std::string p = "den.up" + std::to_string(i);
    den_upsample_.push_back(ConvP(ps_, p + ".up", 3, width[i + 1], width[i], 1, 1, rng));
    std::size_t s = static_cast<std::size_t>(i);
    den_up_[s].rb0 = ResBlockP(ps_, p + ".rb0", res[i], res[i], 2 * width[i], width[i], kTembDim, rng);
    den_up_[s].rb1 = ResBlockP(ps_, p + ".rb1", res[i], res[i], width[i], width[i], kTembDim, rng);
    den_up_[s].attn = CrossAttnP(ps_, p + ".attn", res[i], res[i], width[i], Df, rng);
  }
  out_ln_ = LayerNormP(ps_, "den.out.ln", width[0]);
  out_conv_ = ConvP(ps_, "den.out.conv", 3, width[0], cfg_.latent_channels(), 1, 1, rng, /*zero=*/true);
}

Var Model::extract_features(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != cfg_.image_size || image.dim(1) != cfg_.image_size ||
      image.dim(2) != 3)
    throw std::invalid_argument("extract_features: image shape " + image.shape_str());
  Var x = ad::constant(image);
  x = ad::relu(ec1_(x));
  x = ad::relu(ec2_(x));
  x = ad::relu(ec3_(x));
  x = ec4_(x);
  const int N = cfg_.num_patches();
  x = ad::reshape(x, {N, cfg_.d_enc});
  x = ad::add(x, enc_pos_);
  x = enc_ln_(x);
  return enc_fc2_(ad::relu(enc_fc1_(x)));
}

Var Model::encode_viewpoint(double c) const {
  const double omega = 2.0 * kPi / static_cast<double>(cfg_.num_viewpoints + 1);
  std::vector<double> feat;
  feat.push_back(std::sin(omega * c));
  feat.push_back(std::cos(omega * c));
  if (cfg_.view_input_channels == 5) {
    feat.push_back(std::sin(2.0 * omega * c));
    feat.push_back(std::cos(2.0 * omega * c));
    feat.push_back(c / static_cast<double>(cfg_.num_viewpoints + 1));
  }
  Var x = ad::constant(Tensor::from({1, static_cast<std::int64_t>(feat.size())}, feat));
  x = ad::relu(view_fc1_(x));
  x = ad::relu(view_fc2_(x));
  return ad::reshape(view_fc3_(x), {cfg_.slot_view_size});
}

std::pair<Var, Var> Model::decode_features(const ad::Var& slots_full) const {
  if (slots_full->value.cols() != cfg_.d_full())
    throw std::invalid_argument("decode_features: slot width " + slots_full->value.shape_str());
  const std::int64_t K = slots_full->value.rows();
  const int N = cfg_.num_patches();
  const int De = cfg_.d_enc;
  std::vector<Var> feats, alpha_logits;
  feats.reserve(static_cast<std::size_t>(K));
  for (std::int64_t k = 0; k < K; ++k) {
    Var slot = ad::slice_rows(slots_full, k, 1);
    Var x = ad::add(ad::repeat_rows(slot, N), dec_pos_);
    x = ad::relu(dec_fc1_(x));
    x = ad::relu(dec_fc2_(x));
    x = dec_fc3_(x);  // [N, De + 1]
    feats.push_back(ad::slice_lastdim(x, 0, De));
    alpha_logits.push_back(ad::slice_lastdim(x, De, 1));
  }
  Var alphas = ad::softmax_lastdim(ad::concat_lastdim(alpha_logits));  // [N, K]
  Var recon;
  for (std::int64_t k = 0; k < K; ++k) {
    Var term = ad::mul_colvec(feats[static_cast<std::size_t>(k)],
                              ad::slice_lastdim(alphas, k, 1));
    recon = k == 0 ? term : ad::add(recon, term);
  }
  return {recon, alphas};
}

Var Model::timestep_embedding(double t) const {
  const int half = kTembIn / 2;
  std::vector<double> emb(static_cast<std::size_t>(kTembIn));
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / (half - 1));
    emb[static_cast<std::size_t>(i)] = std::sin(t * freq);
    emb[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
  }
  return ad::constant(Tensor::from({1, kTembIn}, std::move(emb)));
}

Var Model::denoise(const ad::Var& z_t, double t, const ad::Var& slots_full) const {
  const int hs = cfg_.latent_size();
  if (z_t->value.rank() != 3 || z_t->value.dim(0) != hs || z_t->value.dim(1) != hs ||
      z_t->value.dim(2) != cfg_.latent_channels())
    throw std::invalid_argument("denoise: latent shape " + z_t->value.shape_str());
  if (slots_full->value.cols() != cfg_.d_full())
    throw std::invalid_argument("denoise: slot width");
  Var temb = temb_fc2_(ad::silu(temb_fc1_(timestep_embedding(t))));
  const int levels = static_cast<int>(cfg_.unet_mults.size());
  Var x = den_in_(z_t);
  std::vector<Var> skips;
  for (int i = 0; i < levels; ++i) {
    const Level& lv = den_down_[static_cast<std::size_t>(i)];
    x = lv.rb0(x, temb);
    x = lv.rb1(x, temb);
    x = lv.attn(x, slots_full);
    skips.push_back(x);
    if (i + 1 < levels) x = den_downsample_[static_cast<std::size_t>(i)](x);
  }
  x = mid_rb0_(x, temb);
  x = mid_attn_(x, slots_full);
  x = mid_rb1_(x, temb);
  for (int i = levels - 2; i >= 0; --i) {
    std::size_t us = static_cast<std::size_t>(levels - 2 - i);  // push order
    x = den_upsample_[us](ad::upsample2x_nearest(x));
    const Level& lv = den_up_[static_cast<std::size_t>(i)];
    Var cat = ad::concat_lastdim({x, skips[static_cast<std::size_t>(i)]});
    x = ad::reshape(cat, {lv.rb0.h, lv.rb0.w, lv.rb0.cin});
    x = lv.rb0(x, temb);
    x = lv.rb1(x, temb);
    x = lv.attn(x, slots_full);
  }
  return out_conv_(ad::silu(out_ln_(x)));
}

namespace {

void append_raw(std::string& buf, const Tensor& t) {
  const char* p = reinterpret_cast<const char*>(t.data());
  buf.append(p, static_cast<std::size_t>(t.numel()) * sizeof(double));
}

std::vector<std::int64_t> shape_from_json(const nlohmann::json& a) {
  std::vector<std::int64_t> s;
  for (const auto& d : a) s.push_back(d.get<std::int64_t>());
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const OptimizerState* opt,
                     std::int64_t step) {
  const ParamStore& ps = model.params();
  nlohmann::json params = nlohmann::json::array();
  for (const auto& name : ps.names()) {
    const Tensor& t = ps.get(name)->value;
    params.push_back({{"name", name}, {"shape", t.shape()}});
  }
  nlohmann::json header{{"format_version", 1},
                        {"config", model_config_to_json(model.config())},
                        {"step", step},
                        {"pretrained", model.pretrained},
                        {"params", params}};
  if (opt) {
    nlohmann::json names = nlohmann::json::array();
    for (const auto& name : ps.names())
      if (opt->slots.count(name)) names.push_back(name);
    header["optimizer"] = {{"t", opt->t}, {"names", names}};
  }
  std::string body;
  for (const auto& name : ps.names()) append_raw(body, ps.get(name)->value);
  if (opt) {
    for (const auto& name : ps.names()) {
      auto it = opt->slots.find(name);
      if (it == opt->slots.end()) continue;
      append_raw(body, it->second.m);
      append_raw(body, it->second.v);
    }
  }
  std::string head = header.dump();
  std::string file = "MVOCKPT1";
  std::uint32_t len = static_cast<std::uint32_t>(head.size());
  file.append(reinterpret_cast<const char*>(&len), sizeof(len));
  file += head;
  file += body;
  atomic_write_file(path, file);
}

std::unique_ptr<Model> load_checkpoint(const std::string& path, OptimizerState* opt_out,
                                       std::int64_t* step_out) {
  std::vector<unsigned char> raw = read_binary_file(path);
  if (raw.size() < 12 || std::memcmp(raw.data(), "MVOCKPT1", 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t len;
  std::memcpy(&len, raw.data() + 8, sizeof(len));
  if (raw.size() < 12 + static_cast<std::size_t>(len))
    throw std::runtime_error("truncated checkpoint header: " + path);
  nlohmann::json header = nlohmann::json::parse(raw.begin() + 12, raw.begin() + 12 + len);
  if (header.at("format_version").get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint version");
  ModelConfig cfg = model_config_from_json(header.at("config"));
  auto model = std::make_unique<Model>(cfg, 0);
  model->pretrained = header.value("pretrained", false);
  if (step_out) *step_out = header.value("step", std::int64_t{0});

  std::size_t off = 12 + len;
  auto read_into = [&](Tensor& t) {
    std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(double);
    if (off + bytes > raw.size()) throw std::runtime_error("truncated checkpoint data");
    std::memcpy(t.data(), raw.data() + off, bytes);
    off += bytes;
  };
  const auto& plist = header.at("params");
  const auto& names = model->params().names();
  if (plist.size() != names.size()) throw std::runtime_error("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& entry = plist[i];
    if (entry.at("name").get<std::string>() != names[i])
      throw std::runtime_error("checkpoint parameter order mismatch at " + names[i]);
    Tensor& t = model->params().get(names[i])->value;
    if (shape_from_json(entry.at("shape")) != t.shape())
      throw std::runtime_error("checkpoint shape mismatch at " + names[i]);
    read_into(t);
  }
  if (header.contains("optimizer") && opt_out) {
    opt_out->slots.clear();
    opt_out->t = header["optimizer"].at("t").get<std::int64_t>();
    for (const auto& n : header["optimizer"].at("names")) {
      std::string name = n.get<std::string>();
      const Tensor& p = model->params().get(name)->value;
      AdamSlot slot{Tensor::zeros(p.shape()), Tensor::zeros(p.shape())};
      read_into(slot.m);
      read_into(slot.v);
      opt_out->slots.emplace(std::move(name), std::move(slot));
    }
  }
  return model;
}

}  // namespace mvoc
