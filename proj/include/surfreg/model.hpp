#pragma once

#include <cstdint>
#include <memory>
#include <random>

#include "surfreg/attention.hpp"
#include "surfreg/encoder.hpp"
#include "surfreg/geom.hpp"

namespace surfreg {

struct ModelConfig {
  EncoderConfig encoder;
  int d_model = 128;
  int hidden1 = 512;
  int hidden2 = 128;
  Fusion fusion = Fusion::attention;
  bool query_residual = true;
  std::uint64_t seed = 1;  // weight init

  void validate() const;
};

template <typename Real>
struct ModelOutput {
  PoseTensors<Real> pose;        // q and the residual translation t
  ad::Tensor<Real> rotation;     // [3, 3] from q
  ad::Tensor<Real> translation;  // [3] full translation, c_tgt - R c_src + t
  ad::Tensor<Real> map;          // [12, 12]
  RigidTransform transform;      // source -> target
};

/// Shared encoder, cross-attention and pose head. The head predicts the
/// rotation and a residual translation about the cloud centroids:
///   T(x) = R (x - c_src) + c_tgt + t
template <typename Real>
class RegistrationModel {
public:
  explicit RegistrationModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    encoder_ = Encoder<Real>(cfg.encoder, params_, rng);
    const std::size_t d_token = static_cast<std::size_t>(cfg.encoder.channels) * kNumRotations;
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    attention_ = AttentionParams<Real>::create(params_, d_token, d, rng);
    decoder_ = DecoderParams<Real>::create(params_, kNumAnchors * d, static_cast<std::size_t>(cfg.hidden1),
                                           static_cast<std::size_t>(cfg.hidden2), rng);
  }

  RegistrationModel(const RegistrationModel&) = delete;
  RegistrationModel& operator=(const RegistrationModel&) = delete;

  /// Deep copy of weights into a fresh model.
  std::unique_ptr<RegistrationModel> clone() const {
    auto m = std::make_unique<RegistrationModel>(cfg_);
    m->params_.assign(params_);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamSet<Real>& params() { return params_; }
  const ParamSet<Real>& params() const { return params_; }
  const Encoder<Real>& encoder() const { return encoder_; }
  const AttentionParams<Real>& attention() const { return attention_; }
  const DecoderParams<Real>& decoder() const { return decoder_; }

  ModelOutput<Real> forward(const CloudGeometry& src, const CloudGeometry& tgt) const {
    const auto ds = encoder_.encode(src);
    const auto dt = encoder_.encode(tgt);
    const auto att = cross_attention(ds, dt, attention_, cfg_.fusion, cfg_.query_residual);
    ModelOutput<Real> out;
    out.pose = decode_pose(att.fused, decoder_);
    out.map = att.map;
    out.rotation = ad::quat_to_rotation(out.pose.q);
    // c_tgt - R c_src + t as a differentiable expression of (q, t)
    auto cs = ad::Tensor<Real>::from({1, 3}, {static_cast<Real>(src.centroid.x()),
                                              static_cast<Real>(src.centroid.y()),
                                              static_cast<Real>(src.centroid.z())});
    auto ct = ad::Tensor<Real>::from({3}, {static_cast<Real>(tgt.centroid.x()),
                                           static_cast<Real>(tgt.centroid.y()),
                                           static_cast<Real>(tgt.centroid.z())});
    auto rc = ad::reshape(ad::matmul(cs, ad::permute(out.rotation, {1, 0})), {3});
    out.translation = ad::add(ad::sub(ct, rc), out.pose.t);

    const auto q = out.pose.q.data();
    const auto t = out.translation.data();
    out.transform = {UnitQuaternion(static_cast<double>(q[0]), static_cast<double>(q[1]),
                                    static_cast<double>(q[2]), static_cast<double>(q[3])),
                     Vec3(static_cast<double>(t[0]), static_cast<double>(t[1]),
                          static_cast<double>(t[2]))};
    return out;
  }

private:
  ModelConfig cfg_;
  ParamSet<Real> params_;
  Encoder<Real> encoder_;
  AttentionParams<Real> attention_;
  DecoderParams<Real> decoder_;
};

}  // namespace surfreg
