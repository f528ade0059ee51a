#pragma once

#include <span>
#include <utility>
#include <vector>

#include "surfreg/geom.hpp"
#include "surfreg/tensor.hpp"

namespace surfreg {

struct CorrespondenceSet {
  std::vector<std::pair<int, int>> pairs;  // (source index, target index)
  std::vector<double> residuals;           // meters
};

/// For each (already transformed) source point, its nearest target point;
/// ties go to the lowest target index. Throws std::invalid_argument for an
/// empty cloud.
CorrespondenceSet nearest_correspondences(std::span<const Vec3> transformed_src,
                                          std::span<const Vec3> tgt);

/// Per-pair term: 0.5 e^2 if |e| <= delta else delta (|e| - 0.5 delta).
double huber(double e, double delta);

/// Mean of huber() over residuals. Throws for delta <= 0; 0 for no residuals.
double huber_loss(std::span<const double> residuals, double delta);

enum class LossKind { huber, l1, l2 };

const char* to_string(LossKind k);

/// Mean per-pair loss of |R x_i + t - y_i| over rows of x and y, as a graph
/// node of rotation [3,3] and translation [3].
template <typename Real>
ad::Tensor<Real> transform_loss(const ad::Tensor<Real>& rotation, const ad::Tensor<Real>& translation,
                                std::span<const Vec3> x, std::span<const Vec3> y, LossKind kind,
                                double delta) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("transform_loss needs equal, nonempty point lists");
  std::vector<Real> xv, yv;
  xv.reserve(3 * x.size());
  yv.reserve(3 * y.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int d = 0; d < 3; ++d) {
      xv.push_back(static_cast<Real>(x[i][d]));
      yv.push_back(static_cast<Real>(y[i][d]));
    }
  const std::size_t m = x.size();
  auto xt = ad::Tensor<Real>::from({m, 3}, std::move(xv));
  auto yt = ad::Tensor<Real>::from({m, 3}, std::move(yv));
  auto moved = ad::add(ad::matmul(xt, ad::permute(rotation, {1, 0})), translation);
  const ad::RowLoss rk = kind == LossKind::huber ? ad::RowLoss::huber
                         : kind == LossKind::l1  ? ad::RowLoss::l1
                                                 : ad::RowLoss::l2;
  return ad::row_loss(ad::sub(moved, yt), rk, static_cast<Real>(delta));
}

}  // namespace surfreg
