#include "fewview/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "fewview/error.hpp"

namespace fewview {

double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

Mat3 quaternion_to_matrix(const Vec4& raw) {
  const Vec4 q = raw.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

double Gaussian3D::opacity() const { return sigmoid(opacity_logit); }

Vec3 Gaussian3D::scale() const { return log_scale.array().exp(); }

Mat3 Gaussian3D::rotation_matrix() const { return quaternion_to_matrix(rotation); }

int Gaussian3D::sh_degree() const {
  const int coeffs = static_cast<int>(sh.size() / 3);
  int degree = 0;
  while (sh_coeff_count(degree + 1) <= coeffs) ++degree;
  return degree;
}

Mat3 compose_covariance(const Gaussian3D& g) {
  const Mat3 m = g.rotation_matrix() * g.scale().asDiagonal();
  Mat3 cov = m * m.transpose();
  // Mirror the upper triangle so the result is bitwise symmetric.
  cov(1, 0) = cov(0, 1);
  cov(2, 0) = cov(0, 2);
  cov(2, 1) = cov(1, 2);
  return cov;
}

Vec3 eval_sh_color_unclamped(const Gaussian3D& g, const Vec3& view_dir,
                             int degree) {
  const int stored = g.sh_degree();
  const int d = degree < 0 ? stored : std::min(degree, stored);
  std::array<double, 16> basis{};
  sh_basis(d, view_dir, basis);
  Vec3 c = Vec3::Constant(0.5);
  for (int m = 0; m < sh_coeff_count(d); ++m) {
    for (int ch = 0; ch < 3; ++ch) c[ch] += basis[m] * g.sh[m * 3 + ch];
  }
  return c;
}

Vec3 eval_sh_color(const Gaussian3D& g, const Vec3& view_dir, int degree) {
  return eval_sh_color_unclamped(g, view_dir, degree).cwiseMax(0.0);
}

Vec3 dc_color(const Gaussian3D& g) {
  return eval_sh_color(g, Vec3::UnitZ(), 0);
}

void GaussianScene::reset_stats() {
  grad_accum.assign(gaussians.size(), 0.0);
  grad_count.assign(gaussians.size(), 0);
}

void GaussianScene::renormalize_rotations() {
  for (auto& g : gaussians) {
    const double n = g.rotation.norm();
    if (n > 0.0) {
      g.rotation /= n;
    } else {
      g.rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    }
  }
}

namespace {

struct Fnv {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  }
  void value(double v) { bytes(&v, sizeof v); }
};

}  // namespace

std::uint64_t GaussianScene::fingerprint() const {
  Fnv f;
  const std::uint64_t n = gaussians.size();
  f.bytes(&n, sizeof n);
  f.bytes(&active_sh_degree, sizeof active_sh_degree);
  for (const auto& g : gaussians) {
    f.bytes(g.mean.data(), sizeof(double) * 3);
    f.bytes(g.rotation.data(), sizeof(double) * 4);
    f.bytes(g.log_scale.data(), sizeof(double) * 3);
    f.value(g.opacity_logit);
    f.bytes(g.sh.data(), sizeof(double) * g.sh.size());
  }
  return f.h;
}

bool GaussianScene::consistent() const {
  const std::size_t coeffs = 3 * sh_coeff_count(sh_degree);
  for (const auto& g : gaussians) {
    if (g.sh.size() != coeffs) return false;
    if (std::abs(g.rotation.norm() - 1.0) > 1e-6) return false;
  }
  return active_sh_degree >= 0 && active_sh_degree <= sh_degree;
}

// ---------------------------------------------------------------------------
// Nearest neighbors

namespace {

struct Candidate {
  double dist2;
  int index;
  bool operator<(const Candidate& o) const {
    return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
  }
};

// Keeps the k best candidates in sorted order.
class TopK {
 public:
  explicit TopK(int k) : k_(k) { items_.reserve(k + 1); }

  void offer(const Candidate& c) {
    if (static_cast<int>(items_.size()) == k_ && !(c < items_.back())) return;
    items_.insert(std::upper_bound(items_.begin(), items_.end(), c), c);
    if (static_cast<int>(items_.size()) > k_) items_.pop_back();
  }
  bool full() const { return static_cast<int>(items_.size()) == k_; }
  double worst() const { return items_.back().dist2; }
  const std::vector<Candidate>& items() const { return items_; }

 private:
  int k_;
  std::vector<Candidate> items_;
};

void check_knn_args(const GaussianScene& scene, int k) {
  if (k <= 0 || scene.size() <= static_cast<std::size_t>(k)) {
    throw Error(ErrorCode::TooFewGaussians,
                "knn needs more Gaussians than neighbors");
  }
}

double dist2(const Vec3& a, const Vec3& b) { return (a - b).squaredNorm(); }

}  // namespace

Neighbors knn_brute_force(const GaussianScene& scene, int k) {
  check_knn_args(scene, k);
  const std::size_t n = scene.size();
  Neighbors out{k, n, std::vector<int>(n * k)};
  for (std::size_t i = 0; i < n; ++i) {
    TopK top(k);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      top.offer({dist2(scene.gaussians[i].mean, scene.gaussians[j].mean),
                 static_cast<int>(j)});
    }
    for (int m = 0; m < k; ++m) out.indices[i * k + m] = top.items()[m].index;
  }
  return out;
}

Neighbors knn_grid(const GaussianScene& scene, int k) {
  check_knn_args(scene, k);
  const std::size_t n = scene.size();
  const auto& gs = scene.gaussians;

  Vec3 lo = gs[0].mean, hi = gs[0].mean;
  for (const auto& g : gs) {
    lo = lo.cwiseMin(g.mean);
    hi = hi.cwiseMax(g.mean);
  }

  // Median nearest-neighbor distance over a strided sample.
  const std::size_t samples = std::min<std::size_t>(n, 64);
  std::vector<double> nn;
  nn.reserve(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t i = s * n / samples;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) best = std::min(best, dist2(gs[i].mean, gs[j].mean));
    }
    nn.push_back(std::sqrt(best));
  }
  std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
  double cell = nn[nn.size() / 2];
  const double span = (hi - lo).maxCoeff();
  if (!(cell > 0.0)) cell = span > 0.0 ? span / std::cbrt(double(n)) : 1.0;
  cell = std::max(cell, span / 1024.0);

  const Eigen::Array3i dims =
      (((hi - lo) / cell).array().floor().cast<int>() + 1).max(1);
  auto cell_of = [&](const Vec3& p) {
    Eigen::Array3i c = ((p - lo) / cell).array().floor().cast<int>();
    return c.max(0).min(dims - 1).eval();
  };
  auto key = [&](int x, int y, int z) {
    return (static_cast<std::int64_t>(z) * dims.y() + y) * dims.x() + x;
  };

  std::unordered_map<std::int64_t, std::vector<int>> cells;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of(gs[i].mean);
    cells[key(c.x(), c.y(), c.z())].push_back(static_cast<int>(i));
  }

  const int max_ring = dims.maxCoeff();
  Neighbors out{k, n, std::vector<int>(n * k)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of(gs[i].mean);
    TopK top(k);
    for (int r = 0; r <= max_ring; ++r) {
      for (int z = c.z() - r; z <= c.z() + r; ++z) {
        if (z < 0 || z >= dims.z()) continue;
        for (int y = c.y() - r; y <= c.y() + r; ++y) {
          if (y < 0 || y >= dims.y()) continue;
          for (int x = c.x() - r; x <= c.x() + r; ++x) {
            if (x < 0 || x >= dims.x()) continue;
            const int ring = std::max({std::abs(x - c.x()), std::abs(y - c.y()),
                                       std::abs(z - c.z())});
            if (ring != r) continue;
            const auto it = cells.find(key(x, y, z));
            if (it == cells.end()) continue;
            for (int j : it->second) {
              if (static_cast<std::size_t>(j) == i) continue;
              top.offer({dist2(gs[i].mean, gs[j].mean), j});
            }
          }
        }
      }
      // Anything outside ring r is at least r * cell away.
      if (top.full()) {
        const double reach = r * cell;
        if (top.worst() < reach * reach) break;
      }
    }
    for (int m = 0; m < k; ++m) out.indices[i * k + m] = top.items()[m].index;
  }
  return out;
}

Neighbors knn_neighbors(const GaussianScene& scene, int k) {
  if (scene.size() < 2000) return knn_brute_force(scene, k);
  return knn_grid(scene, k);
}

// ---------------------------------------------------------------------------
// Density control

DensityReport adaptive_density_control(GaussianScene& scene,
                                       const DensityThresholds& th,
                                       std::mt19937_64& rng) {
  const std::size_t n = scene.size();
  if (scene.grad_accum.size() != n) scene.reset_stats();

  DensityReport report;
  std::vector<Gaussian3D> next;
  std::vector<std::optional<std::size_t>> origin;
  std::vector<Gaussian3D> born;
  next.reserve(n);
  origin.reserve(n);

  const double split_limit = th.scale_fraction * th.scene_extent;
  std::normal_distribution<double> normal(0.0, 1.0);

  for (std::size_t i = 0; i < n; ++i) {
    const Gaussian3D& g = scene.gaussians[i];
    const double mean_grad =
        scene.grad_count[i] > 0 ? scene.grad_accum[i] / scene.grad_count[i] : 0.0;
    const bool grow = mean_grad > th.grad;
    const double max_scale = g.scale().maxCoeff();

    if (grow && max_scale > split_limit) {
      const Mat3 r = g.rotation_matrix();
      const Vec3 s = g.scale();
      for (int child = 0; child < 2; ++child) {
        Gaussian3D c = g;
        const Vec3 z(normal(rng), normal(rng), normal(rng));
        c.mean = g.mean + r * s.cwiseProduct(z);
        c.log_scale = g.log_scale.array() - std::log(th.split_divisor);
        born.push_back(std::move(c));
      }
      ++report.split;
      continue;
    }
    next.push_back(g);
    origin.emplace_back(i);
    if (grow) {
      born.push_back(g);
      ++report.cloned;
    }
  }
  for (auto& b : born) {
    next.push_back(std::move(b));
    origin.emplace_back(std::nullopt);
  }

  std::vector<Gaussian3D> kept;
  kept.reserve(next.size());
  for (std::size_t i = 0; i < next.size(); ++i) {
    if (next[i].opacity() < th.prune_opacity) {
      ++report.pruned;
      continue;
    }
    kept.push_back(std::move(next[i]));
    report.origin.push_back(origin[i]);
  }
  scene.gaussians = std::move(kept);
  scene.reset_stats();
  return report;
}

}  // namespace fewview
