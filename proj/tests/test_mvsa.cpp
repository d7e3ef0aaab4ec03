#include "mvoc/mvsa.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "grad_check.hpp"
#include "mvoc/nets.hpp"

using namespace mvoc;
using ad::Var;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 16;
  c.d_enc = 8;
  c.slot_attr_size = 6;
  c.slot_view_size = 3;
  c.num_slots = 3;
  c.num_iterations = 3;
  c.num_viewpoints = 4;
  c.view_hidden = 8;
  c.dec_hidden = 10;
  c.unet_base = 4;
  c.unet_mults = {1, 2};
  c.timesteps = 50;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- plain-double reference implementation (no autodiff) --------------------

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(static_cast<std::size_t>(t.rows()), std::vector<double>(static_cast<std::size_t>(t.cols())));
  for (std::int64_t i = 0; i < t.rows(); ++i)
    for (std::int64_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

Mat pm_matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

Mat pm_ln(const Mat& x, const Tensor& g, const Tensor& b, double eps = 1e-6) {
  Mat out = x;
  for (auto& row : out) {
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = (row[j] - mean) * inv * g[static_cast<std::int64_t>(j)] + b[static_cast<std::int64_t>(j)];
  }
  return out;
}

// One full single-view pass written from the algorithm description.
Tensor oracle_single_view(const Model& model, const Tensor& features, const Tensor& view_rep,
                          const Tensor& attr0) {
  const auto& cfg = model.config();
  const auto& ps = model.params();
  const int Dv = cfg.slot_view_size, D = cfg.slot_attr_size, Df = cfg.d_full();
  const std::size_t K = static_cast<std::size_t>(attr0.rows());
  const std::size_t N = static_cast<std::size_t>(features.rows());

  Mat h = pm_ln(to_mat(features), ps.get("sa.ln_input.g")->value, ps.get("sa.ln_input.b")->value);
  Mat kh = pm_matmul(h, to_mat(ps.get("sa.k")->value));
  Mat vh = pm_matmul(h, to_mat(ps.get("sa.v")->value));

  Mat attr = to_mat(attr0);
  std::vector<double> view(static_cast<std::size_t>(Dv));
  for (int j = 0; j < Dv; ++j) view[static_cast<std::size_t>(j)] = view_rep[j];

  for (int it = 0; it < cfg.num_iterations; ++it) {
    Mat full(K, std::vector<double>(static_cast<std::size_t>(Df)));
    for (std::size_t k = 0; k < K; ++k) {
      for (int j = 0; j < Dv; ++j) full[k][static_cast<std::size_t>(j)] = view[static_cast<std::size_t>(j)];
      for (int j = 0; j < D; ++j) full[k][static_cast<std::size_t>(Dv + j)] = attr[k][static_cast<std::size_t>(j)];
    }
    Mat q = pm_matmul(pm_ln(full, ps.get("sa.ln_slot.g")->value, ps.get("sa.ln_slot.b")->value),
                      to_mat(ps.get("sa.q")->value));
    Mat A(N, std::vector<double>(K));
    for (std::size_t n = 0; n < N; ++n) {
      double mx = -1e300;
      for (std::size_t k = 0; k < K; ++k) {
        double dot = 0.0;
        for (int j = 0; j < Df; ++j) dot += kh[n][static_cast<std::size_t>(j)] * q[k][static_cast<std::size_t>(j)];
        A[n][k] = dot / std::sqrt(static_cast<double>(Df));
        mx = std::max(mx, A[n][k]);
      }
      double sum = 0.0;
      for (std::size_t k = 0; k < K; ++k) sum += A[n][k] = std::exp(A[n][k] - mx);
      for (std::size_t k = 0; k < K; ++k) A[n][k] /= sum;
    }
    Mat U(K, std::vector<double>(static_cast<std::size_t>(Df), 0.0));
    for (std::size_t k = 0; k < K; ++k) {
      double colsum = 1e-8;
      for (std::size_t n = 0; n < N; ++n) colsum += A[n][k];
      for (std::size_t n = 0; n < N; ++n)
        for (int j = 0; j < Df; ++j)
          U[k][static_cast<std::size_t>(j)] += A[n][k] / colsum * vh[n][static_cast<std::size_t>(j)];
    }
    auto gate = [&](const char* wn, const char* un, const char* bn) {
      Mat x = pm_matmul(U, to_mat(ps.get(wn)->value));
      Mat y = pm_matmul(full, to_mat(ps.get(un)->value));
      const Tensor& bias = ps.get(bn)->value;
      for (std::size_t k = 0; k < K; ++k)
        for (int j = 0; j < Df; ++j)
          x[k][static_cast<std::size_t>(j)] += y[k][static_cast<std::size_t>(j)] + bias[j];
      return x;
    };
    Mat z = gate("sa.gru.wz", "sa.gru.uz", "sa.gru.bz");
    Mat r = gate("sa.gru.wr", "sa.gru.ur", "sa.gru.br");
    for (auto& row : z)
      for (double& v : row) v = 1.0 / (1.0 + std::exp(-v));
    for (auto& row : r)
      for (double& v : row) v = 1.0 / (1.0 + std::exp(-v));
    Mat nx = pm_matmul(U, to_mat(ps.get("sa.gru.wn")->value));
    Mat nh = pm_matmul(full, to_mat(ps.get("sa.gru.un")->value));
    const Tensor& bn = ps.get("sa.gru.bn")->value;
    Mat g(K, std::vector<double>(static_cast<std::size_t>(Df)));
    for (std::size_t k = 0; k < K; ++k)
      for (int j = 0; j < Df; ++j) {
        std::size_t sj = static_cast<std::size_t>(j);
        double n_val = std::tanh(nx[k][sj] + r[k][sj] * nh[k][sj] + bn[j]);
        g[k][sj] = (1.0 - z[k][sj]) * n_val + z[k][sj] * full[k][sj];
      }
    if (cfg.slot_mlp) {
      Mat m1 = pm_matmul(pm_ln(g, ps.get("sa.ln_mlp.g")->value, ps.get("sa.ln_mlp.b")->value),
                         to_mat(ps.get("sa.mlp1.w")->value));
      const Tensor& b1 = ps.get("sa.mlp1.b")->value;
      for (auto& row : m1)
        for (std::size_t j = 0; j < row.size(); ++j)
          row[j] = std::max(0.0, row[j] + b1[static_cast<std::int64_t>(j)]);
      Mat m2 = pm_matmul(m1, to_mat(ps.get("sa.mlp2.w")->value));
      const Tensor& b2 = ps.get("sa.mlp2.b")->value;
      for (std::size_t k = 0; k < K; ++k)
        for (int j = 0; j < Df; ++j) g[k][static_cast<std::size_t>(j)] += m2[k][static_cast<std::size_t>(j)] + b2[j];
    }
    for (int j = 0; j < Dv; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += g[k][static_cast<std::size_t>(j)];
      view[static_cast<std::size_t>(j)] = s / static_cast<double>(K);
    }
    for (std::size_t k = 0; k < K; ++k)
      for (int j = 0; j < D; ++j) attr[k][static_cast<std::size_t>(j)] = g[k][static_cast<std::size_t>(Dv + j)];
  }
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(K), D});
  for (std::size_t k = 0; k < K; ++k)
    for (int j = 0; j < D; ++j) out.at(static_cast<std::int64_t>(k), j) = attr[k][static_cast<std::size_t>(j)];
  return out;
}

struct Setup {
  Model model;
  std::vector<Var> feats, reps;
  Setup(int views, std::uint64_t seed) : model(tiny_config(), 21) {
    Rng rng(seed);
    for (int m = 0; m < views; ++m) {
      feats.push_back(ad::constant(Tensor::randn({16, 8}, rng)));
      reps.push_back(model.encode_viewpoint(m + 1));
    }
  }
};

}  // namespace

TEST_CASE("init_slots: determinism, degenerate sigma, sample mean") {
  Model model(tiny_config(), 21);
  Rng r1(5), r2(5);
  Tensor a = init_slots(model, 3, r1)->value;
  Tensor b = init_slots(model, 3, r2)->value;
  CHECK(max_abs_diff(a, b) == 0.0);

  Tensor& mu = model.params().get("sa.mu")->value;
  Tensor& ls = model.params().get("sa.logsigma")->value;
  for (std::int64_t j = 0; j < mu.numel(); ++j) mu[j] = 0.5 * static_cast<double>(j);
  for (std::int64_t j = 0; j < ls.numel(); ++j) ls[j] = -40.0;  // sigma ~ 4e-18
  Rng r3(6);
  Tensor s = init_slots(model, 4, r3)->value;
  for (std::int64_t k = 0; k < 4; ++k)
    for (std::int64_t j = 0; j < 6; ++j) CHECK(std::abs(s.at(k, j) - mu[j]) < 1e-12);

  for (std::int64_t j = 0; j < ls.numel(); ++j) ls[j] = 0.0;  // sigma = 1
  Rng r4(7);
  const int draws = 10000;
  std::vector<double> mean(6, 0.0);
  for (int i = 0; i < draws; ++i) {
    Tensor one = init_slots(model, 1, r4)->value;
    for (int j = 0; j < 6; ++j) mean[static_cast<std::size_t>(j)] += one[j];
  }
  for (int j = 0; j < 6; ++j) {
    mean[static_cast<std::size_t>(j)] /= draws;
    CHECK(std::abs(mean[static_cast<std::size_t>(j)] - mu[j]) < 3.0 / 100.0);
  }
}

TEST_CASE("attention_step: normalization, uniform and single-slot cases") {
  Setup s(1, 31);
  Rng rng(9);
  Tensor slots = Tensor::randn({3, 9}, rng);
  auto [attn, updates] = attention_step(s.model, s.feats[0], ad::constant(slots));
  CHECK(attn->value.shape() == std::vector<std::int64_t>{16, 3});
  CHECK(updates->value.shape() == std::vector<std::int64_t>{3, 9});
  for (int n = 0; n < 16; ++n) {
    double sum = 0.0;
    for (int k = 0; k < 3; ++k) sum += attn->value.at(n, k);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }

  // identical slots -> uniform attention 1/K
  Tensor same = Tensor::zeros({3, 9});
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 9; ++j) same.at(k, j) = slots.at(0, j);
  auto [attn_u, upd_u] = attention_step(s.model, s.feats[0], ad::constant(same));
  for (int n = 0; n < 16; ++n)
    for (int k = 0; k < 3; ++k) CHECK(std::abs(attn_u->value.at(n, k) - 1.0 / 3.0) < 1e-12);

  // K = 1: attention all ones, update = plain mean of projected values
  Tensor one_slot = Tensor::randn({1, 9}, rng);
  auto [attn_1, upd_1] = attention_step(s.model, s.feats[0], ad::constant(one_slot));
  for (int n = 0; n < 16; ++n) CHECK(attn_1->value.at(n, 0) == 1.0);
  const auto& sa = s.model.slot_attn();
  Var h = sa.ln_input(s.feats[0]);
  Tensor vh = ad::matmul(h, sa.v)->value;
  for (int j = 0; j < 9; ++j) {
    double mean = 0.0;
    for (int n = 0; n < 16; ++n) mean += vh.at(n, j);
    mean /= 16.0;
    CHECK(std::abs(upd_1->value.at(0, j) - mean) < 1e-8);
  }
}

TEST_CASE("multiview m=1 matches a from-scratch reference implementation") {
  Setup s(1, 41);
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor attr0 = Tensor::randn({3, 6}, rng);
    auto res = multiview_slot_attention(s.model, s.feats, s.reps, attr0.clone(), nullptr);
    Tensor want = oracle_single_view(s.model, s.feats[0]->value, s.reps[0]->value, attr0);
    CHECK(max_abs_diff(res.attr->value, want) < 1e-9);
  }
}

TEST_CASE("multiview: duplicated identical views equal the single view result") {
  Setup s(1, 51);
  Rng rng(4);
  Tensor attr0 = Tensor::randn({3, 6}, rng);
  auto res1 = multiview_slot_attention(s.model, s.feats, s.reps, attr0.clone(), nullptr);
  std::vector<Var> feats2{s.feats[0], s.feats[0]};
  std::vector<Var> reps2{s.reps[0], s.reps[0]};
  auto res2 = multiview_slot_attention(s.model, feats2, reps2, attr0.clone(), nullptr);
  CHECK(max_abs_diff(res1.attr->value, res2.attr->value) < 1e-6);
}

TEST_CASE("multiview: view order does not change the result") {
  Setup s(3, 61);
  Rng rng(5);
  Tensor attr0 = Tensor::randn({3, 6}, rng);
  auto base = multiview_slot_attention(s.model, s.feats, s.reps, attr0.clone(), nullptr);
  std::vector<Var> pf{s.feats[2], s.feats[0], s.feats[1]};
  std::vector<Var> pr{s.reps[2], s.reps[0], s.reps[1]};
  auto perm = multiview_slot_attention(s.model, pf, pr, attr0.clone(), nullptr);
  CHECK(max_abs_diff(base.attr->value, perm.attr->value) < 1e-6);
  // attention maps travel with their views
  CHECK(max_abs_diff(base.attn[0]->value, perm.attn[1]->value) < 1e-6);
  CHECK(max_abs_diff(base.attn[2]->value, perm.attn[0]->value) < 1e-6);
}

TEST_CASE("multiview: permuting initial slots permutes outputs identically") {
  Setup s(2, 71);
  Rng rng(6);
  Tensor attr0 = Tensor::randn({3, 6}, rng);
  const int order[3] = {1, 2, 0};
  Tensor attr_p = Tensor::zeros({3, 6});
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 6; ++j) attr_p.at(k, j) = attr0.at(order[k], j);
  auto base = multiview_slot_attention(s.model, s.feats, s.reps, attr0.clone(), nullptr);
  auto perm = multiview_slot_attention(s.model, s.feats, s.reps, attr_p.clone(), nullptr);
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 6; ++j)
      CHECK(std::abs(perm.attr->value.at(k, j) - base.attr->value.at(order[k], j)) < 1e-12);
}

TEST_CASE("multiview: validation and warm-start determinism") {
  Setup s(2, 81);
  CHECK_THROWS_AS(multiview_slot_attention(s.model, {}, {}, std::nullopt, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(multiview_slot_attention(s.model, s.feats, {s.reps[0]}, std::nullopt, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(multiview_slot_attention(s.model, s.feats, s.reps, std::nullopt, nullptr),
                  std::invalid_argument);  // cold start needs an rng
  Rng rng(7);
  Tensor attr0 = Tensor::randn({2, 6}, rng);  // warm start with K != num_slots
  auto a = multiview_slot_attention(s.model, s.feats, s.reps, attr0.clone(), nullptr);
  auto b = multiview_slot_attention(s.model, s.feats, s.reps, attr0.clone(), nullptr);
  CHECK(max_abs_diff(a.attr->value, b.attr->value) == 0.0);
  CHECK(a.attr->value.rows() == 2);
  SlotState st = a.detached();
  CHECK(st.attr.shape() == std::vector<std::int64_t>{2, 6});
  CHECK(st.view.shape() == std::vector<std::int64_t>{2, 3});
}

TEST_CASE("multiview: gradients w.r.t. features match finite differences") {
  ModelConfig cfg = tiny_config();
  cfg.num_slots = 2;
  cfg.num_iterations = 2;
  Model model(cfg, 91);
  Rng rng(8);
  Tensor f0 = gradcheck::rand_t({16, 8}, 81, 0.5);
  Tensor f1 = gradcheck::rand_t({16, 8}, 82, 0.5);
  Tensor attr0 = gradcheck::rand_t({2, 6}, 83, 0.5);
  Tensor probe = gradcheck::rand_t({2, 6}, 84);
  Var rep0 = model.encode_viewpoint(1);
  Var rep1 = model.encode_viewpoint(2);
  double err = gradcheck::max_grad_err(
      {f0, f1},
      [&](const std::vector<Var>& in) {
        auto res = multiview_slot_attention(model, in, {rep0, rep1}, attr0.clone(), nullptr);
        return ad::sum_all(ad::mul(res.attr, ad::constant(probe)));
      },
      1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("multiview: gradients reach the slot prior parameters") {
  Model model(tiny_config(), 95);
  Rng rng(9);
  std::vector<Var> feats{ad::constant(Tensor::randn({16, 8}, rng))};
  std::vector<Var> reps{model.encode_viewpoint(1)};
  Tensor mu_saved = model.params().get("sa.mu")->value.clone();

  auto f = [&]() {
    Rng sample_rng(1234);
    auto res = multiview_slot_attention(model, feats, reps, std::nullopt, &sample_rng);
    return ad::sum_all(ad::mul(res.attr, res.attr));
  };
  double err = gradcheck::max_param_grad_err(
      {model.params().get("sa.mu"), model.params().get("sa.logsigma")}, f, 1e-5);
  CHECK(err < 1e-4);
  CHECK(max_abs_diff(model.params().get("sa.mu")->value, mu_saved) == 0.0);
}
