#include "surfreg/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "surfreg/knn.hpp"

namespace surfreg {

void EncoderConfig::validate() const {
  if (channels < 8 || channels % 2 != 0)
    throw std::invalid_argument("encoder channels must be even and >= 8, got " +
                                std::to_string(channels));
  if (layers < 1) throw std::invalid_argument("encoder needs at least one layer");
  if (k_enc < 1) throw std::invalid_argument("encoder neighbourhood must be >= 1");
}

WeightedFeatures confidence_weight(const SurfelCloud& cloud, bool enabled) {
  if (cloud.empty()) throw EmptyCloudError("confidence_weight: empty cloud");
  WeightedFeatures out;
  for (const auto& s : cloud.surfels) out.centroid += s.position;
  out.centroid /= static_cast<double>(cloud.size());
  out.positions.reserve(cloud.size());
  out.normals.reserve(cloud.size());
  out.weights.reserve(cloud.size());
  for (const auto& s : cloud.surfels) {
    const double w = enabled ? 1.0 - s.radius : 1.0;
    out.weights.push_back(w);
    out.positions.push_back(w * (s.position - out.centroid));
    out.normals.push_back(w * s.normal);
  }
  return out;
}

CloudGeometry prepare_geometry(const SurfelCloud& cloud, const EncoderConfig& cfg,
                               const IcosaGroup& group) {
  cfg.validate();
  const std::size_t n = cloud.size();
  const std::size_t k = static_cast<std::size_t>(cfg.k_enc);
  if (n == 0 || k > n - 1)
    throw std::invalid_argument("encoder neighbourhood k_enc=" + std::to_string(k) +
                                " exceeds N-1 for a cloud of " + std::to_string(n));
  const WeightedFeatures wf = confidence_weight(cloud, cfg.radius_weighting);

  CloudGeometry g;
  g.n = n;
  g.k = k;
  g.centroid = wf.centroid;
  g.centered.reserve(n);
  for (const auto& s : cloud.surfels) g.centered.push_back(s.position - wf.centroid);

  // Neighbourhoods from the unweighted geometry.
  KnnIndex index(g.centered);
  g.nbr = index.all_neighbors(k);

  // Rotation-invariant length scales.
  double rel = 0.0, abs2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    abs2 += g.centered[i].squaredNorm();
    for (std::size_t j = 0; j < k; ++j)
      rel += (g.centered[static_cast<std::size_t>(g.nbr[i * k + j])] - g.centered[i]).norm();
  }
  double s_rel = rel / static_cast<double>(n * k);
  double s_abs = std::sqrt(abs2 / static_cast<double>(n));
  if (!(s_rel > 0.0)) s_rel = 1.0;
  if (!(s_abs > 0.0)) s_abs = 1.0;

  const auto& verts = group.vertices();
  const Vec3 zero = Vec3::Zero();
  auto normal_of = [&](std::size_t i) -> const Vec3& { return cfg.use_normals ? wf.normals[i] : zero; };

  g.x0.resize(n * kNumAnchors * 2);
  for (std::size_t i = 0; i < n; ++i)
    for (int a = 0; a < kNumAnchors; ++a) {
      g.x0[(i * kNumAnchors + a) * 2] = wf.positions[i].dot(verts[a]) / s_abs;
      g.x0[(i * kNumAnchors + a) * 2 + 1] = normal_of(i).dot(verts[a]);
    }

  g.s1.resize(n * k * kNumAnchors * 2);
  g.s2.resize(n * k * kNumAnchors * 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t nb = static_cast<std::size_t>(g.nbr[i * k + j]);
      const Vec3 d = (wf.positions[nb] - wf.positions[i]) / s_rel;
      const double dn = d.norm();
      for (int a = 0; a < kNumAnchors; ++a) {
        const std::size_t row = ((i * k + j) * kNumAnchors + a) * 2;
        g.s1[row] = d.dot(verts[a]);
        g.s1[row + 1] = dn;
        g.s2[row] = normal_of(i).dot(verts[a]);
        g.s2[row + 1] = normal_of(nb).dot(verts[a]);
      }
    }
  return g;
}

}  // namespace surfreg
