#include "mvoc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "mvoc/image.hpp"

namespace mvoc {

MaskStack MaskStack::from_bytes(const std::vector<std::vector<std::uint8_t>>& masks, int h, int w) {
  MaskStack s;
  s.V = static_cast<int>(masks.size());
  s.H = h;
  s.W = w;
  s.ids.reserve(static_cast<std::size_t>(s.V) * h * w);
  for (const auto& m : masks) {
    if (static_cast<int>(m.size()) != h * w) throw std::invalid_argument("mask size mismatch");
    for (std::uint8_t b : m) s.ids.push_back(static_cast<int>(b));
  }
  return s;
}

namespace {

std::int64_t pairs2(std::int64_t n) { return n * (n - 1) / 2; }

int dense_id(std::unordered_map<int, int>& remap, int raw) {
  auto it = remap.find(raw);
  if (it != remap.end()) return it->second;
  int id = static_cast<int>(remap.size());
  remap.emplace(raw, id);
  return id;
}

}  // namespace

double ari(const MaskStack& pred, const MaskStack& truth, AriMode mode) {
  if (pred.V != truth.V || pred.H != truth.H || pred.W != truth.W)
    throw std::invalid_argument("ari: stack shapes differ");
  std::unordered_map<int, int> remap_p, remap_t;
  std::unordered_map<std::int64_t, std::int64_t> table;  // (p_id<<32 | t_id) -> count
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    if (mode == AriMode::Objects && truth.ids[i] == 0) continue;
    int p = dense_id(remap_p, pred.ids[i]);
    int t = dense_id(remap_t, truth.ids[i]);
    ++table[(static_cast<std::int64_t>(p) << 32) | static_cast<std::int64_t>(t)];
    ++n;
  }
  if (n <= 1) return 1.0;  // zero or one pixel: partitions trivially agree

  std::vector<std::int64_t> row(remap_p.size(), 0), col(remap_t.size(), 0);
  std::int64_t sum_cells = 0;
  for (const auto& [key, cnt] : table) {
    row[static_cast<std::size_t>(key >> 32)] += cnt;
    col[static_cast<std::size_t>(key & 0xffffffff)] += cnt;
    sum_cells += pairs2(cnt);
  }
  std::int64_t sum_row = 0, sum_col = 0;
  for (std::int64_t a : row) sum_row += pairs2(a);
  for (std::int64_t b : col) sum_col += pairs2(b);
  const std::int64_t total = pairs2(n);

  // Scaled by 2*total to stay in exact integer arithmetic.
  const std::int64_t num = 2 * (sum_cells * total - sum_row * sum_col);
  const std::int64_t den = (sum_row + sum_col) * total - 2 * sum_row * sum_col;
  if (den == 0) {
    // Adjustment is degenerate; score by exact agreement up to relabeling,
    // i.e. the contingency table is one-nonzero-per-row-and-column.
    std::vector<int> row_nz(remap_p.size(), 0), col_nz(remap_t.size(), 0);
    for (const auto& [key, cnt] : table) {
      (void)cnt;
      ++row_nz[static_cast<std::size_t>(key >> 32)];
      ++col_nz[static_cast<std::size_t>(key & 0xffffffff)];
    }
    bool identical = true;
    for (int c : row_nz) identical = identical && c == 1;
    for (int c : col_nz) identical = identical && c == 1;
    return identical ? 1.0 : 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

namespace {

double assignment_exhaustive(const std::vector<std::vector<double>>& iou) {
  const int nt = static_cast<int>(iou.size());
  const int np = nt > 0 ? static_cast<int>(iou[0].size()) : 0;
  double best = 0.0;
  std::vector<char> used(np, 0);
  std::function<void(int, double)> rec = [&](int r, double acc) {
    if (r == nt) {
      best = std::max(best, acc);
      return;
    }
    rec(r + 1, acc);  // leave this segment unmatched
    for (int c = 0; c < np; ++c) {
      if (used[c]) continue;
      used[c] = 1;
      rec(r + 1, acc + iou[r][c]);
      used[c] = 0;
    }
  };
  rec(0, 0.0);
  return best;
}

// Minimum-cost perfect matching on a square matrix via shortest augmenting
// paths with potentials.
double hungarian_min(const std::vector<std::vector<double>>& a) {
  const int n = static_cast<int>(a.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += a[p[j] - 1][j - 1];
  return total;
}

double assignment_hungarian(const std::vector<std::vector<double>>& iou) {
  const int nt = static_cast<int>(iou.size());
  const int np = nt > 0 ? static_cast<int>(iou[0].size()) : 0;
  const int n = std::max(nt, np);
  if (n == 0) return 0.0;
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < np; ++j) cost[i][j] = -iou[i][j];
  return -hungarian_min(cost);
}

constexpr int kExhaustiveLimit = 7;

}  // namespace

double max_assignment_total(const std::vector<std::vector<double>>& iou, bool force_hungarian) {
  const int nt = static_cast<int>(iou.size());
  const int np = nt > 0 ? static_cast<int>(iou[0].size()) : 0;
  if (!force_hungarian && std::max(nt, np) <= kExhaustiveLimit) return assignment_exhaustive(iou);
  return assignment_hungarian(iou);
}

double miou(const MaskStack& pred, const MaskStack& truth) {
  if (pred.V != truth.V || pred.H != truth.H || pred.W != truth.W)
    throw std::invalid_argument("miou: stack shapes differ");
  std::unordered_map<int, int> remap_p, remap_t;
  std::unordered_map<std::int64_t, std::int64_t> table;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    int p = dense_id(remap_p, pred.ids[i]);
    int t = dense_id(remap_t, truth.ids[i]);
    ++table[(static_cast<std::int64_t>(p) << 32) | static_cast<std::int64_t>(t)];
  }
  const int np = static_cast<int>(remap_p.size());
  const int nt = static_cast<int>(remap_t.size());
  if (nt == 0) return 0.0;
  std::vector<std::int64_t> row(np, 0), col(nt, 0);
  std::vector<std::vector<std::int64_t>> inter(nt, std::vector<std::int64_t>(np, 0));
  for (const auto& [key, cnt] : table) {
    int p = static_cast<int>(key >> 32);
    int t = static_cast<int>(key & 0xffffffff);
    row[p] += cnt;
    col[t] += cnt;
    inter[t][p] = cnt;
  }
  std::vector<std::vector<double>> iou(nt, std::vector<double>(np, 0.0));
  for (int t = 0; t < nt; ++t)
    for (int p = 0; p < np; ++p) {
      std::int64_t un = row[p] + col[t] - inter[t][p];
      iou[t][p] = un > 0 ? static_cast<double>(inter[t][p]) / static_cast<double>(un) : 0.0;
    }
  return max_assignment_total(iou, false) / static_cast<double>(nt);
}

double recon_error(const std::vector<Tensor>& pred_images, const std::vector<Tensor>& true_images) {
  if (pred_images.size() != true_images.size())
    throw std::invalid_argument("recon_error: view count mismatch");
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::size_t v = 0; v < pred_images.size(); ++v) {
    const Tensor& a = pred_images[v];
    const Tensor& b = true_images[v];
    if (a.shape() != b.shape()) throw std::invalid_argument("recon_error: image shape mismatch");
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      double d = a[i] - b[i];
      sum += d * d;
    }
    count += a.numel();
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

MaskStack masks_from_attention(const std::vector<Tensor>& attention, int grid, int out_h,
                               int out_w) {
  if (attention.empty()) throw std::invalid_argument("masks_from_attention: no views");
  MaskStack stack;
  stack.V = static_cast<int>(attention.size());
  stack.H = out_h;
  stack.W = out_w;
  stack.ids.resize(static_cast<std::size_t>(stack.numel()));
  for (int v = 0; v < stack.V; ++v) {
    const Tensor& a = attention[static_cast<std::size_t>(v)];
    if (a.rank() != 2 || a.rows() != static_cast<std::int64_t>(grid) * grid)
      throw std::invalid_argument("masks_from_attention: attention shape");
    const std::int64_t K = a.cols();
    Tensor planes = a.reshaped({grid, grid, K});
    Tensor up = resize_bilinear(planes, out_h, out_w);
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(out_h) * out_w; ++p) {
      int best = 0;
      double best_val = up[p * K];
      for (std::int64_t k = 1; k < K; ++k)
        if (up[p * K + k] > best_val) {
          best_val = up[p * K + k];
          best = static_cast<int>(k);
        }
      stack.ids[static_cast<std::size_t>(v) * out_h * out_w + static_cast<std::size_t>(p)] = best;
    }
  }
  return stack;
}

}  // namespace mvoc
