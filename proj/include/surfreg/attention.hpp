#pragma once

// Cross-attention between source and target anchor tokens and the fully
// connected pose head.

#include <cmath>
#include <random>
#include <string>

#include "surfreg/icosa.hpp"
#include "surfreg/params.hpp"
#include "surfreg/tensor.hpp"

namespace surfreg {

template <typename Real>
struct AttentionParams {
  ad::Tensor<Real> wq, bq, wk, bk, wv, bv;  // w*: [d_token, d_model], b*: [d_model]

  static AttentionParams create(ParamSet<Real>& ps, std::size_t d_token, std::size_t d_model,
                                std::mt19937_64& rng, const std::string& prefix = "att.") {
    const double lim = std::sqrt(6.0 / static_cast<double>(d_token + d_model));
    AttentionParams p;
    p.wq = ps.add_uniform(prefix + "wq", {d_token, d_model}, lim, rng);
    p.bq = ps.add_constant(prefix + "bq", {d_model}, 0.0);
    p.wk = ps.add_uniform(prefix + "wk", {d_token, d_model}, lim, rng);
    p.bk = ps.add_constant(prefix + "bk", {d_model}, 0.0);
    p.wv = ps.add_uniform(prefix + "wv", {d_token, d_model}, lim, rng);
    p.bv = ps.add_constant(prefix + "bv", {d_model}, 0.0);
    return p;
  }
};

/// Flatten [12, C, 60] to per-anchor tokens [12, C*60], channel-major then
/// rotation order.
template <typename Real>
ad::Tensor<Real> anchor_tokens(const ad::Tensor<Real>& expanded) {
  if (expanded.rank() != 3 || expanded.dim(0) != kNumAnchors || expanded.dim(2) != kNumRotations)
    throw std::invalid_argument("anchor_tokens expects [12, C, 60], got " +
                                ad::shape_str(expanded.shape()));
  return ad::reshape(expanded, {kNumAnchors, expanded.dim(1) * kNumRotations});
}

enum class Fusion { attention, mean };

template <typename Real>
struct AttentionResult {
  ad::Tensor<Real> fused;  // [12, d_model]
  ad::Tensor<Real> map;    // [12, 12], rows sum to 1
};

/// Q from source tokens, K and V from target tokens, A = softmax(Q K^T /
/// sqrt(d)). fused = (Q + A V) / 2 with the query residual, A V without it.
/// Fusion::mean skips the map: fused = (Q + V) / 2 and the reported map is
/// uniform.
///
/// Without the residual the head sees source geometry only through A, which
/// is uniform at initialization, and training stalls.
template <typename Real>
AttentionResult<Real> cross_attention_tokens(const ad::Tensor<Real>& src_tokens,
                                             const ad::Tensor<Real>& tgt_tokens,
                                             const AttentionParams<Real>& p,
                                             Fusion fusion = Fusion::attention,
                                             bool query_residual = true) {
  if (src_tokens.shape() != tgt_tokens.shape() || src_tokens.rank() != 2)
    throw ad::shape_error("cross_attention", src_tokens.shape(), tgt_tokens.shape());
  if (src_tokens.dim(1) != p.wq.dim(0))
    throw ad::shape_error("cross_attention", src_tokens.shape(), p.wq.shape());
  const std::size_t rows = src_tokens.dim(0);
  const std::size_t d = p.wq.dim(1);
  auto q = ad::add(ad::matmul(src_tokens, p.wq), p.bq);
  auto v = ad::add(ad::matmul(tgt_tokens, p.wv), p.bv);
  AttentionResult<Real> out;
  if (fusion == Fusion::mean) {
    out.fused = ad::scale(ad::add(q, v), Real(0.5));
    out.map = ad::Tensor<Real>::full({rows, rows}, Real(1) / static_cast<Real>(rows));
    return out;
  }
  auto k = ad::add(ad::matmul(tgt_tokens, p.wk), p.bk);
  auto logits = ad::scale(ad::matmul(q, ad::permute(k, {1, 0})),
                          Real(1) / std::sqrt(static_cast<Real>(d)));
  out.map = ad::softmax(logits, 1);
  out.fused = ad::matmul(out.map, v);
  if (query_residual) out.fused = ad::scale(ad::add(q, out.fused), Real(0.5));
  return out;
}

template <typename Real>
AttentionResult<Real> cross_attention(const ad::Tensor<Real>& d_src, const ad::Tensor<Real>& d_tgt,
                                      const AttentionParams<Real>& p,
                                      Fusion fusion = Fusion::attention, bool query_residual = true) {
  if (d_src.shape() != d_tgt.shape()) throw ad::shape_error("cross_attention", d_src.shape(), d_tgt.shape());
  return cross_attention_tokens(anchor_tokens(d_src), anchor_tokens(d_tgt), p, fusion, query_residual);
}

template <typename Real>
struct DecoderParams {
  ad::Tensor<Real> w1, b1, w2, b2, w3, b3;

  /// Hidden layers use He-uniform init; the output layer starts small with
  /// the quaternion bias at (1, 0, 0, 0) so the initial pose is near identity.
  static DecoderParams create(ParamSet<Real>& ps, std::size_t in, std::size_t h1, std::size_t h2,
                              std::mt19937_64& rng, const std::string& prefix = "dec.") {
    DecoderParams p;
    p.w1 = ps.add_uniform(prefix + "w1", {in, h1}, std::sqrt(6.0 / static_cast<double>(in)), rng);
    p.b1 = ps.add_constant(prefix + "b1", {h1}, 0.0);
    p.w2 = ps.add_uniform(prefix + "w2", {h1, h2}, std::sqrt(6.0 / static_cast<double>(h1)), rng);
    p.b2 = ps.add_constant(prefix + "b2", {h2}, 0.0);
    p.w3 = ps.add_uniform(prefix + "w3", {h2, 7}, 0.01 * std::sqrt(6.0 / static_cast<double>(h2)), rng);
    p.b3 = ps.add(prefix + "b3", {7}, {1, 0, 0, 0, 0, 0, 0});
    return p;
  }
};

template <typename Real>
struct PoseTensors {
  ad::Tensor<Real> q;  // [4] unit, w >= 0
  ad::Tensor<Real> t;  // [3]
};

/// fused [12, d] -> flatten -> relu FC -> relu FC -> 7 outputs.
template <typename Real>
PoseTensors<Real> decode_pose(const ad::Tensor<Real>& fused, const DecoderParams<Real>& p) {
  auto x = ad::reshape(fused, {1, fused.size()});
  if (x.dim(1) != p.w1.dim(0)) throw ad::shape_error("decode_pose", fused.shape(), p.w1.shape());
  auto h = ad::relu(ad::add(ad::matmul(x, p.w1), p.b1));
  h = ad::relu(ad::add(ad::matmul(h, p.w2), p.b2));
  auto o = ad::reshape(ad::add(ad::matmul(h, p.w3), p.b3), {7});
  PoseTensors<Real> out;
  out.q = ad::l2_normalize(ad::slice(o, 0, 0, 4), 0);
  if (out.q[0] < Real(0)) out.q = ad::scale(out.q, Real(-1));
  out.t = ad::slice(o, 0, 4, 3);
  return out;
}

}  // namespace surfreg
