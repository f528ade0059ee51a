#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "surfreg/geom.hpp"

namespace surfreg {

/// Exact k-nearest-neighbour search. Brute force up to kBruteForceLimit
/// points, a uniform grid with ring expansion above. Results are ordered by
/// (squared distance, index), so ties always resolve to the lower index.
class KnnIndex {
public:
  static constexpr std::size_t kBruteForceLimit = 2048;

  explicit KnnIndex(std::span<const Vec3> points);

  /// The k nearest points to q. `exclude` (if >= 0) is skipped, which is how
  /// a point's own entry is left out of its neighbourhood.
  std::vector<int> query(const Vec3& q, std::size_t k, int exclude = -1) const;

  /// Nearest point only.
  int nearest(const Vec3& q) const;

  /// Row-major [N x k] table of each point's k nearest other points.
  std::vector<int> all_neighbors(std::size_t k) const;

  std::size_t size() const { return points_.size(); }

private:
  void scan_cell(long cx, long cy, long cz, const Vec3& q, int exclude,
                 std::vector<std::pair<double, int>>& out) const;

  std::vector<Vec3> points_;
  bool use_grid_ = false;
  Vec3 origin_ = Vec3::Zero();
  double cell_ = 1.0;
  long dims_[3] = {1, 1, 1};
  std::vector<int> cell_start_;  // CSR layout over cells
  std::vector<int> cell_items_;
};

/// Worker count: SURFREG_THREADS if set, else hardware concurrency.
unsigned worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. fn must only
/// write state owned by index i, which keeps results independent of the
/// thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace surfreg
