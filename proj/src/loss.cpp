#include "surfreg/loss.hpp"

#include <cmath>
#include <stdexcept>

#include "surfreg/knn.hpp"

namespace surfreg {

CorrespondenceSet nearest_correspondences(std::span<const Vec3> transformed_src,
                                          std::span<const Vec3> tgt) {
  if (tgt.empty()) throw std::invalid_argument("nearest_correspondences: empty target");
  if (transformed_src.empty()) throw std::invalid_argument("nearest_correspondences: empty source");
  const KnnIndex index(tgt);
  CorrespondenceSet out;
  out.pairs.resize(transformed_src.size());
  out.residuals.resize(transformed_src.size());
  parallel_for(transformed_src.size(), [&](std::size_t i) {
    const int j = index.nearest(transformed_src[i]);
    out.pairs[i] = {static_cast<int>(i), j};
    out.residuals[i] = (transformed_src[i] - tgt[static_cast<std::size_t>(j)]).norm();
  });
  return out;
}

double huber(double e, double delta) {
  const double a = std::abs(e);
  return a <= delta ? 0.5 * a * a : delta * (a - 0.5 * delta);
}

double huber_loss(std::span<const double> residuals, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("huber threshold must be positive");
  if (residuals.empty()) return 0.0;
  double s = 0.0;
  for (double e : residuals) s += huber(e, delta);
  return s / static_cast<double>(residuals.size());
}

const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::huber: return "huber";
    case LossKind::l1: return "l1";
    case LossKind::l2: return "l2";
  }
  return "huber";
}

}  // namespace surfreg
