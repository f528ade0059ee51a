#pragma once

// Icosahedral anchor encoder. Every surfel carries one feature vector per
// icosahedron vertex (anchor). All learned maps are shared across anchors
// and the only geometric inputs are projections onto the anchor directions,
// so rotating the cloud by a group element permutes the anchor axis.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "surfreg/geom.hpp"
#include "surfreg/icosa.hpp"
#include "surfreg/params.hpp"
#include "surfreg/surfel.hpp"
#include "surfreg/tensor.hpp"

namespace surfreg {

struct EncoderConfig {
  int channels = 128;
  int layers = 3;
  int k_enc = 16;
  bool radius_weighting = true;
  bool use_normals = true;  // off for the point-only ablation

  void validate() const;
};

/// Centered, confidence-weighted surfel features.
struct WeightedFeatures {
  std::vector<Vec3> positions;  // (1 - eps_i) (x_i - centroid)
  std::vector<Vec3> normals;    // (1 - eps_i) n_i
  std::vector<double> weights;  // 1 - eps_i
  Vec3 centroid = Vec3::Zero();
};

WeightedFeatures confidence_weight(const SurfelCloud& cloud, bool enabled = true);

/// Geometry-only encoder input, independent of the weights. Built once per
/// cloud in double precision.
struct CloudGeometry {
  std::size_t n = 0, k = 0;
  std::vector<int> nbr;       // [n, k] neighbour indices
  std::vector<double> x0;     // [n, 12, 2]: <p_i, v_a> / s_abs, <m_i, v_a>
  std::vector<double> s1;     // [n, k, 12, 2]: <d_ij, v_a> / s_rel, |d_ij| / s_rel
  std::vector<double> s2;     // [n, k, 12, 2]: <m_i, v_a>, <m_j, v_a>
  Vec3 centroid = Vec3::Zero();
  std::vector<Vec3> centered;  // x_i - centroid, unweighted
};

/// Throws std::invalid_argument when k_enc > N - 1.
CloudGeometry prepare_geometry(const SurfelCloud& cloud, const EncoderConfig& cfg,
                               const IcosaGroup& group = IcosaGroup::instance());

template <typename Real>
struct KernelInput {
  std::size_t n = 0, k = 0;
  std::vector<int> nbr;
  std::vector<Real> s1, s2;
};

template <typename Real>
std::shared_ptr<const KernelInput<Real>> kernel_input(const CloudGeometry& g) {
  auto out = std::make_shared<KernelInput<Real>>();
  out->n = g.n;
  out->k = g.k;
  out->nbr = g.nbr;
  out->s1.assign(g.s1.begin(), g.s1.end());
  out->s2.assign(g.s2.begin(), g.s2.end());
  return out;
}

/// Fused two-branch neighbourhood kernel:
///   out[i,a,c] = 1/k sum_j relu(S_b[i,j,a,:] . w_b[:,c'] + b_b[c']) f[nbr(i,j), a, c]
/// Channels c < C/2 use branch 1 (S1, w1, b1, c' = c); the rest use branch 2
/// (S2, w2, b2, c' = c - C/2). w_b: [2, C/2], b_b: [C/2], f: [n, 12, C].
template <typename Real>
ad::Tensor<Real> anchor_kernel_conv(std::shared_ptr<const KernelInput<Real>> in,
                                    const ad::Tensor<Real>& w1, const ad::Tensor<Real>& b1,
                                    const ad::Tensor<Real>& w2, const ad::Tensor<Real>& b2,
                                    const ad::Tensor<Real>& f) {
  constexpr std::size_t A = kNumAnchors;
  const std::size_t n = in->n, k = in->k;
  if (f.rank() != 3 || f.dim(0) != n || f.dim(1) != A || f.dim(2) % 2 != 0)
    throw ad::shape_error("anchor_kernel_conv", f.shape(), {n, A, 0});
  const std::size_t C = f.dim(2), H = C / 2;
  if (w1.shape() != ad::Shape{2, H} || w2.shape() != ad::Shape{2, H} ||
      b1.shape() != ad::Shape{H} || b2.shape() != ad::Shape{H})
    throw ad::shape_error("anchor_kernel_conv", w1.shape(), {2, H});

  const Real inv_k = Real(1) / static_cast<Real>(k);
  std::vector<Real> out(n * A * C, Real(0));
  const Real* fv = f.data().data();
  const Real* W[2] = {w1.data().data(), w2.data().data()};
  const Real* B[2] = {b1.data().data(), b2.data().data()};
  const Real* S[2] = {in->s1.data(), in->s2.data()};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t nb = static_cast<std::size_t>(in->nbr[i * k + j]);
      for (std::size_t a = 0; a < A; ++a) {
        const std::size_t srow = ((i * k + j) * A + a) * 2;
        Real* o = out.data() + (i * A + a) * C;
        const Real* fr = fv + (nb * A + a) * C;
        for (int br = 0; br < 2; ++br) {
          const Real s0 = S[br][srow], s1 = S[br][srow + 1];
          const Real* w = W[br];
          const Real* b = B[br];
          Real* ob = o + br * H;
          const Real* fb = fr + br * H;
          for (std::size_t c = 0; c < H; ++c) {
            const Real pre = s0 * w[c] + s1 * w[H + c] + b[c];
            ob[c] += (pre > Real(0) ? pre : Real(0)) * fb[c] * inv_k;
          }
        }
      }
    }

  return ad::make_result<Real>(
      {n, A, C}, std::move(out), {w1.ptr(), b1.ptr(), w2.ptr(), b2.ptr(), f.ptr()},
      [in, n, k, C, H, inv_k](ad::Node<Real>& self) {
        auto& pw1 = *self.parents[0];
        auto& pb1 = *self.parents[1];
        auto& pw2 = *self.parents[2];
        auto& pb2 = *self.parents[3];
        auto& pf = *self.parents[4];
        const bool need_f = pf.requires_grad;
        // Local accumulators for the small kernel weights.
        std::vector<Real> gw[2] = {std::vector<Real>(2 * H, Real(0)), std::vector<Real>(2 * H, Real(0))};
        std::vector<Real> gb[2] = {std::vector<Real>(H, Real(0)), std::vector<Real>(H, Real(0))};
        Real* gf = need_f ? pf.grad_buffer().data() : nullptr;
        const Real* W[2] = {pw1.value.data(), pw2.value.data()};
        const Real* B[2] = {pb1.value.data(), pb2.value.data()};
        const Real* S[2] = {in->s1.data(), in->s2.data()};
        const Real* fv = pf.value.data();
        const Real* g = self.grad.data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t nb = static_cast<std::size_t>(in->nbr[i * k + j]);
            for (std::size_t a = 0; a < A; ++a) {
              const std::size_t srow = ((i * k + j) * A + a) * 2;
              const Real* go = g + (i * A + a) * C;
              const std::size_t frow = (nb * A + a) * C;
              for (int br = 0; br < 2; ++br) {
                const Real s0 = S[br][srow], s1 = S[br][srow + 1];
                const Real* w = W[br];
                const Real* b = B[br];
                const Real* gob = go + br * H;
                const Real* fb = fv + frow + br * H;
                Real* gfb = need_f ? gf + frow + br * H : nullptr;
                Real* gwb = gw[br].data();
                Real* gbb = gb[br].data();
                for (std::size_t c = 0; c < H; ++c) {
                  const Real pre = s0 * w[c] + s1 * w[H + c] + b[c];
                  const Real on = pre > Real(0) ? Real(1) : Real(0);
                  const Real gk = gob[c] * inv_k;
                  if (need_f) gfb[c] += on * pre * gk;
                  const Real d = on * gk * fb[c];
                  gwb[c] += d * s0;
                  gwb[H + c] += d * s1;
                  gbb[c] += d;
                }
              }
            }
          }
        ad::Node<Real>* pw[2] = {&pw1, &pw2};
        ad::Node<Real>* pb[2] = {&pb1, &pb2};
        for (int br = 0; br < 2; ++br) {
          if (pw[br]->requires_grad) {
            auto& d = pw[br]->grad_buffer();
            for (std::size_t c = 0; c < 2 * H; ++c) d[c] += gw[br][c];
          }
          if (pb[br]->requires_grad) {
            auto& d = pb[br]->grad_buffer();
            for (std::size_t c = 0; c < H; ++c) d[c] += gb[br][c];
          }
        }
      });
}

/// Tensor [n, 12, C] -> per anchor mean over its five adjacent anchors.
template <typename Real>
ad::Tensor<Real> adjacent_mean(const ad::Tensor<Real>& h, const IcosaGroup& group) {
  if (h.rank() != 3 || h.dim(1) != kNumAnchors)
    throw std::invalid_argument("adjacent_mean expects [n, 12, C], got " + ad::shape_str(h.shape()));
  std::array<std::array<int, 5>, kNumAnchors> adj;
  for (int a = 0; a < kNumAnchors; ++a) adj[a] = group.adjacent(a);
  const std::size_t n = h.dim(0), C = h.dim(2);
  const Real fifth = Real(1) / Real(5);
  std::vector<Real> out(h.size(), Real(0));
  const Real* hv = h.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (int a = 0; a < kNumAnchors; ++a) {
      Real* o = out.data() + (i * kNumAnchors + a) * C;
      for (int b : adj[a]) {
        const Real* src = hv + (i * kNumAnchors + b) * C;
        for (std::size_t c = 0; c < C; ++c) o[c] += src[c];
      }
      for (std::size_t c = 0; c < C; ++c) o[c] *= fifth;
    }
  return ad::make_result<Real>(h.shape(), std::move(out), {h.ptr()}, [adj, n, C, fifth](ad::Node<Real>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (int a = 0; a < kNumAnchors; ++a) {
        const Real* go = self.grad.data() + (i * kNumAnchors + a) * C;
        for (int b : adj[a]) {
          Real* dst = g.data() + (i * kNumAnchors + b) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += go[c] * fifth;
        }
      }
  });
}

/// x [n, 12, cin] times w [cin, cout] applied per (surfel, anchor).
template <typename Real>
ad::Tensor<Real> anchor_linear(const ad::Tensor<Real>& x, const ad::Tensor<Real>& w) {
  const std::size_t n = x.dim(0), A = x.dim(1), cin = x.dim(2);
  auto y = ad::matmul(ad::reshape(x, {n * A, cin}), w);
  return ad::reshape(y, {n, A, w.dim(1)});
}

template <typename Real>
struct AnchorLayerParams {
  ad::Tensor<Real> w_feat;          // [cin, C] values carried along neighbour edges
  ad::Tensor<Real> k1_w, k1_b;      // position kernel
  ad::Tensor<Real> k2_w, k2_b;      // normal kernel
  ad::Tensor<Real> w_self, w_adj;   // [cin, C]
  ad::Tensor<Real> bias;            // [C]
};

/// One anchor convolution layer: relu(kernel(h W_feat) + h W_self +
/// adjmean(h) W_adj + bias). Input h: [n, 12, cin], output [n, 12, C].
template <typename Real>
ad::Tensor<Real> anchor_conv_layer(const ad::Tensor<Real>& h,
                                   std::shared_ptr<const KernelInput<Real>> in,
                                   const AnchorLayerParams<Real>& p,
                                   const IcosaGroup& group = IcosaGroup::instance()) {
  auto f = anchor_linear(h, p.w_feat);
  auto conv = anchor_kernel_conv(in, p.k1_w, p.k1_b, p.k2_w, p.k2_b, f);
  auto self = anchor_linear(h, p.w_self);
  auto adj = anchor_linear(adjacent_mean(h, group), p.w_adj);
  return ad::relu(ad::add(ad::add(ad::add(conv, self), adj), p.bias));
}

/// Mean over the surfel axis: [n, 12, C] -> [12, C]. Each column is summed
/// in sorted order, so the result does not depend on surfel order bitwise.
template <typename Real>
ad::Tensor<Real> global_pool(const ad::Tensor<Real>& per_surfel) {
  if (per_surfel.rank() != 3 || per_surfel.dim(0) == 0)
    throw std::invalid_argument("global_pool expects [N>=1, 12, C], got " +
                                ad::shape_str(per_surfel.shape()));
  const std::size_t n = per_surfel.dim(0), m = per_surfel.dim(1) * per_surfel.dim(2);
  const auto v = per_surfel.data();
  std::vector<Real> out(m), col(n);
  for (std::size_t q = 0; q < m; ++q) {
    for (std::size_t i = 0; i < n; ++i) col[i] = v[i * m + q];
    std::sort(col.begin(), col.end());
    Real s = 0;
    for (const Real x : col) s += x;
    out[q] = s / static_cast<Real>(n);
  }
  return ad::make_result<Real>({per_surfel.dim(1), per_surfel.dim(2)}, std::move(out),
                               {per_surfel.ptr()}, [n, m](ad::Node<Real>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const Real inv = Real(1) / static_cast<Real>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t q = 0; q < m; ++q) g[i * m + q] += self.grad[q] * inv;
  });
}

/// Removes the per-channel mean over anchors and scales to unit RMS. The
/// anchor-mean part is identical for every rotation, and left in it dwarfs
/// the rotation-dependent part in the attention logits.
template <typename Real>
ad::Tensor<Real> standardize_anchors(const ad::Tensor<Real>& desc, Real eps = Real(1e-12)) {
  if (desc.rank() != 2 || desc.dim(0) != kNumAnchors)
    throw std::invalid_argument("standardize_anchors expects [12, C], got " + ad::shape_str(desc.shape()));
  const std::size_t C = desc.dim(1), n = kNumAnchors * C;
  const auto x = desc.data();
  std::vector<Real> y(n);
  Real ss = 0;
  for (std::size_t c = 0; c < C; ++c) {
    Real m = 0;
    for (std::size_t a = 0; a < kNumAnchors; ++a) m += x[a * C + c];
    m /= Real(kNumAnchors);
    for (std::size_t a = 0; a < kNumAnchors; ++a) {
      y[a * C + c] = x[a * C + c] - m;
      ss += y[a * C + c] * y[a * C + c];
    }
  }
  const Real s = std::sqrt(ss / static_cast<Real>(n) + eps);
  for (auto& v : y) v /= s;
  return ad::make_result<Real>(desc.shape(), std::move(y), {desc.ptr()}, [C, n, s](ad::Node<Real>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    Real gy = 0;
    for (std::size_t i = 0; i < n; ++i) gy += self.grad[i] * self.value[i];
    gy /= static_cast<Real>(n);
    for (std::size_t c = 0; c < C; ++c) {
      Real d[kNumAnchors];
      Real m = 0;
      for (std::size_t a = 0; a < kNumAnchors; ++a) {
        const std::size_t i = a * C + c;
        d[a] = (self.grad[i] - self.value[i] * gy) / s;
        m += d[a];
      }
      m /= Real(kNumAnchors);
      for (std::size_t a = 0; a < kNumAnchors; ++a) gx[a * C + c] += d[a] - m;
    }
  });
}

/// [12, C] -> [12, C, 60] with out[a, c, r] = desc[perm_r^-1(a), c].
template <typename Real>
ad::Tensor<Real> expand_orders(const ad::Tensor<Real>& desc,
                               const IcosaGroup& group = IcosaGroup::instance()) {
  if (desc.rank() != 2 || desc.dim(0) != kNumAnchors)
    throw std::invalid_argument("expand_orders expects [12, C], got " + ad::shape_str(desc.shape()));
  const std::size_t C = desc.dim(1);
  std::vector<std::size_t> idx;
  idx.reserve(kNumRotations * kNumAnchors);
  for (int r = 0; r < kNumRotations; ++r) {
    const auto& inv = group.inverse_vertex_permutation(r);
    for (int a = 0; a < kNumAnchors; ++a) idx.push_back(static_cast<std::size_t>(inv[a]));
  }
  auto g = ad::reshape(ad::gather(desc, 0, idx), {kNumRotations, kNumAnchors, C});
  return ad::permute(g, {1, 2, 0});
}

template <typename Real>
struct RotationSelection {
  int order = 0;
  std::vector<Real> scores;  // one per order
  ad::Tensor<Real> pooled;   // [12, C], slice `order`
};

/// score(r) = sum_{a,c} w[a,c] expanded[a,c,r]; argmax with the lowest index
/// winning ties.
template <typename Real>
RotationSelection<Real> rotation_select(const ad::Tensor<Real>& expanded, const ad::Tensor<Real>& w) {
  if (expanded.rank() != 3 || expanded.dim(0) != kNumAnchors || expanded.dim(2) != kNumRotations)
    throw std::invalid_argument("rotation_select expects [12, C, 60], got " +
                                ad::shape_str(expanded.shape()));
  const std::size_t C = expanded.dim(1);
  if (w.shape() != ad::Shape{kNumAnchors, C}) throw ad::shape_error("rotation_select", w.shape(), {kNumAnchors, C});
  RotationSelection<Real> out;
  out.scores.assign(kNumRotations, Real(0));
  const auto e = expanded.data();
  const auto wv = w.data();
  for (std::size_t ac = 0; ac < kNumAnchors * C; ++ac)
    for (std::size_t r = 0; r < kNumRotations; ++r) out.scores[r] += wv[ac] * e[ac * kNumRotations + r];
  for (int r = 1; r < kNumRotations; ++r)
    if (out.scores[r] > out.scores[out.order]) out.order = r;
  out.pooled = ad::reshape(ad::slice(expanded, 2, static_cast<std::size_t>(out.order), 1),
                           {kNumAnchors, C});
  return out;
}

/// Trainable encoder: `layers` anchor conv layers, global mean pool, order
/// expansion. Parameters live in the caller's ParamSet under `prefix`.
template <typename Real>
class Encoder {
public:
  Encoder() = default;

  Encoder(const EncoderConfig& cfg, ParamSet<Real>& ps, std::mt19937_64& rng,
          const std::string& prefix = "enc.")
      : cfg_(cfg) {
    cfg.validate();
    const std::size_t C = static_cast<std::size_t>(cfg.channels), H = C / 2;
    std::size_t cin = 2;
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = prefix + "l" + std::to_string(l) + ".";
      const double lim = std::sqrt(6.0 / static_cast<double>(cin));
      AnchorLayerParams<Real> lp;
      lp.w_feat = ps.add_uniform(p + "w_feat", {cin, C}, lim, rng);
      lp.k1_w = ps.add_uniform(p + "k1_w", {2, H}, 1.0, rng);
      lp.k1_b = ps.add_uniform(p + "k1_b", {H}, 1.0, rng);
      lp.k2_w = ps.add_uniform(p + "k2_w", {2, H}, 1.0, rng);
      lp.k2_b = ps.add_uniform(p + "k2_b", {H}, 1.0, rng);
      lp.w_self = ps.add_uniform(p + "w_self", {cin, C}, lim / std::sqrt(3.0), rng);
      lp.w_adj = ps.add_uniform(p + "w_adj", {cin, C}, lim / std::sqrt(3.0), rng);
      lp.bias = ps.add_constant(p + "bias", {C}, 0.0);
      layers_.push_back(lp);
      cin = C;
    }
    score_ = ps.add_uniform(prefix + "score", {kNumAnchors, C}, 1.0, rng);
  }

  const EncoderConfig& config() const { return cfg_; }
  const ad::Tensor<Real>& score_weights() const { return score_; }

  /// Per-surfel features [n, 12, C] after the last layer.
  ad::Tensor<Real> per_surfel(const CloudGeometry& geo) const {
    auto in = kernel_input<Real>(geo);
    std::vector<Real> x0(geo.x0.begin(), geo.x0.end());
    auto h = ad::Tensor<Real>::from({geo.n, kNumAnchors, 2}, std::move(x0));
    for (const auto& lp : layers_) h = anchor_conv_layer(h, in, lp);
    return h;
  }

  /// Pooled descriptor [12, C].
  ad::Tensor<Real> descriptor(const CloudGeometry& geo) const { return global_pool(per_surfel(geo)); }

  /// Standardized descriptor expanded to the quotient feature [12, C, 60].
  ad::Tensor<Real> encode(const CloudGeometry& geo) const {
    return expand_orders(standardize_anchors(descriptor(geo)));
  }

private:
  EncoderConfig cfg_;
  std::vector<AnchorLayerParams<Real>> layers_;
  ad::Tensor<Real> score_;
};

}  // namespace surfreg
