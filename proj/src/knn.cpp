#include "surfreg/knn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

namespace surfreg {

namespace {

bool closer(const std::pair<double, int>& a, const std::pair<double, int>& b) {
  return a.first < b.first || (a.first == b.first && a.second < b.second);
}

}  // namespace

KnnIndex::KnnIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  for (const Vec3& p : points_)
    if (!is_finite(p)) throw std::invalid_argument("KnnIndex: non-finite point");
  use_grid_ = points_.size() > kBruteForceLimit;
  if (!use_grid_) return;

  Vec3 lo = points_[0], hi = points_[0];
  for (const Vec3& p : points_) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 ext = (hi - lo).cwiseMax(1e-9);
  // About two points per occupied cell for surface-like clouds.
  const double vol = ext.x() * ext.y() * ext.z();
  cell_ = std::cbrt(vol * 2.0 / static_cast<double>(points_.size()));
  cell_ = std::max(cell_, ext.maxCoeff() / 256.0);
  origin_ = lo;
  for (int i = 0; i < 3; ++i) dims_[i] = static_cast<long>(std::floor(ext[i] / cell_)) + 1;

  const std::size_t ncell = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
  std::vector<int> counts(ncell + 1, 0);
  std::vector<std::size_t> cell_of(points_.size());
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const Vec3 rel = (points_[i] - origin_) / cell_;
    long c[3];
    for (int d = 0; d < 3; ++d)
      c[d] = std::clamp(static_cast<long>(std::floor(rel[d])), 0L, dims_[d] - 1);
    cell_of[i] = static_cast<std::size_t>((c[0] * dims_[1] + c[1]) * dims_[2] + c[2]);
    counts[cell_of[i] + 1]++;
  }
  for (std::size_t c = 0; c < ncell; ++c) counts[c + 1] += counts[c];
  cell_start_ = counts;
  cell_items_.assign(points_.size(), 0);
  std::vector<int> fill(counts.begin(), counts.end() - 1);
  for (std::size_t i = 0; i < points_.size(); ++i) cell_items_[fill[cell_of[i]]++] = static_cast<int>(i);
}

void KnnIndex::scan_cell(long cx, long cy, long cz, const Vec3& q, int exclude,
                         std::vector<std::pair<double, int>>& out) const {
  if (cx < 0 || cy < 0 || cz < 0 || cx >= dims_[0] || cy >= dims_[1] || cz >= dims_[2]) return;
  const std::size_t c = static_cast<std::size_t>((cx * dims_[1] + cy) * dims_[2] + cz);
  for (int k = cell_start_[c]; k < cell_start_[c + 1]; ++k) {
    const int idx = cell_items_[k];
    if (idx == exclude) continue;
    out.emplace_back((points_[idx] - q).squaredNorm(), idx);
  }
}

std::vector<int> KnnIndex::query(const Vec3& q, std::size_t k, int exclude) const {
  const std::size_t avail = points_.size() - (exclude >= 0 && static_cast<std::size_t>(exclude) < points_.size() ? 1 : 0);
  if (k > avail)
    throw std::invalid_argument("KnnIndex: requested " + std::to_string(k) + " neighbours of " +
                                std::to_string(avail) + " candidates");
  std::vector<std::pair<double, int>> cand;
  if (!use_grid_) {
    cand.reserve(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i)
      if (static_cast<int>(i) != exclude) cand.emplace_back((points_[i] - q).squaredNorm(), static_cast<int>(i));
  } else {
    const Vec3 rel = (q - origin_) / cell_;
    long c[3];
    for (int d = 0; d < 3; ++d)
      c[d] = std::clamp(static_cast<long>(std::floor(rel[d])), 0L, dims_[d] - 1);
    // Distance from q to the boundary of its own cell bounds how far the
    // unexplored region is after ring r.
    double slack = std::numeric_limits<double>::infinity();
    for (int d = 0; d < 3; ++d) {
      const double lo = origin_[d] + static_cast<double>(c[d]) * cell_;
      slack = std::min({slack, std::max(0.0, q[d] - lo), std::max(0.0, lo + cell_ - q[d])});
    }
    const long max_r = std::max({dims_[0], dims_[1], dims_[2]});
    for (long r = 0; r <= max_r; ++r) {
      for (long x = c[0] - r; x <= c[0] + r; ++x)
        for (long y = c[1] - r; y <= c[1] + r; ++y)
          for (long z = c[2] - r; z <= c[2] + r; ++z) {
            if (std::max({std::labs(x - c[0]), std::labs(y - c[1]), std::labs(z - c[2])}) != r) continue;
            scan_cell(x, y, z, q, exclude, cand);
          }
      if (cand.size() >= k) {
        std::nth_element(cand.begin(), cand.begin() + static_cast<long>(k - 1), cand.end(), closer);
        const double reach = static_cast<double>(r) * cell_ + slack;
        if (cand[k - 1].first < reach * reach) break;
      }
    }
  }
  if (k < cand.size()) {
    std::nth_element(cand.begin(), cand.begin() + static_cast<long>(k), cand.end(), closer);
    cand.resize(k);
  }
  std::sort(cand.begin(), cand.end(), closer);
  std::vector<int> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = cand[i].second;
  return out;
}

int KnnIndex::nearest(const Vec3& q) const {
  if (points_.empty()) throw std::invalid_argument("KnnIndex: nearest on an empty index");
  if (!use_grid_) {
    int best = 0;
    double bd = (points_[0] - q).squaredNorm();
    for (std::size_t i = 1; i < points_.size(); ++i) {
      const double d = (points_[i] - q).squaredNorm();
      if (d < bd) {
        bd = d;
        best = static_cast<int>(i);
      }
    }
    return best;
  }
  return query(q, 1)[0];
}

std::vector<int> KnnIndex::all_neighbors(std::size_t k) const {
  std::vector<int> out(points_.size() * k);
  parallel_for(points_.size(), [&](std::size_t i) {
    const auto nb = query(points_[i], k, static_cast<int>(i));
    std::copy(nb.begin(), nb.end(), out.begin() + static_cast<long>(i * k));
  });
  return out;
}

unsigned worker_count() {
  if (const char* env = std::getenv("SURFREG_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1 || n < 256) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] {
      for (std::size_t i = b; i < e; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace surfreg
