#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "surfreg/attention.hpp"
#include "surfreg/encoder.hpp"
#include "surfreg/model.hpp"
#include "test_util.hpp"

using namespace surfreg;
using T = ad::Tensor<double>;
using testing::random_tensor;

namespace {

AttentionParams<double> random_attention(ParamSet<double>& ps, std::size_t d_token, std::size_t d,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto p = AttentionParams<double>::create(ps, d_token, d, rng);
  // Nonzero biases so they take part in the checks.
  for (auto* b : {&p.bq, &p.bk, &p.bv}) {
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& v : b->mutable_data()) v = n(rng);
  }
  return p;
}

void set_identity(T& w) {
  auto d = w.mutable_data();
  std::fill(d.begin(), d.end(), 0.0);
  for (std::size_t i = 0; i < std::min(w.dim(0), w.dim(1)); ++i) d[i * w.dim(1) + i] = 1.0;
}

T permute_rows(const T& x, const VertexPerm& perm) {
  // out[perm[i]] = x[i]
  const std::size_t cols = x.dim(1);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t c = 0; c < cols; ++c) out[static_cast<std::size_t>(perm[i]) * cols + c] = x[i * cols + c];
  return T::from(x.shape(), std::move(out));
}

}  // namespace

TEST_CASE("all-equal tokens give a uniform map") {
  ParamSet<double> ps;
  const auto p = random_attention(ps, 10, 6, 1);
  const T tok = T::full({12, 10}, 0.7);
  const auto r = cross_attention_tokens(tok, tok, p);
  for (double a : r.map.data()) CHECK(std::abs(a - 1.0 / 12.0) < 1e-15);
}

TEST_CASE("orthogonal identical tokens give a diagonal map") {
  ParamSet<double> ps;
  auto p = random_attention(ps, 12, 12, 2);
  set_identity(p.wq);
  set_identity(p.wk);
  for (auto* b : {&p.bq, &p.bk}) std::fill(b->mutable_data().begin(), b->mutable_data().end(), 0.0);
  std::vector<double> v(144, 0.0);
  for (std::size_t a = 0; a < 12; ++a) v[a * 12 + a] = 4.0;
  const T tok = T::from({12, 12}, v);
  const auto r = cross_attention_tokens(tok, tok, p);
  for (std::size_t i = 0; i < 12; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < 12; ++j)
      if (r.map[i * 12 + j] > r.map[i * 12 + best]) best = j;
    CHECK(best == i);
  }
}

TEST_CASE("attention map is row-stochastic and finite for large inputs") {
  ParamSet<double> ps;
  const auto p = random_attention(ps, 16, 8, 3);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    T a = random_tensor({12, 16}, rng, 1.0, false);
    T b = random_tensor({12, 16}, rng, 1.0, false);
    // Scale every token to norm 1e3.
    for (T* t : {&a, &b}) {
      auto d = t->mutable_data();
      for (std::size_t i = 0; i < 12; ++i) {
        double n = 0;
        for (std::size_t c = 0; c < 16; ++c) n += d[i * 16 + c] * d[i * 16 + c];
        for (std::size_t c = 0; c < 16; ++c) d[i * 16 + c] *= 1e3 / std::sqrt(n);
      }
    }
    const auto r = cross_attention_tokens(a, b, p);
    for (std::size_t i = 0; i < 12; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 12; ++j) {
        const double x = r.map[i * 12 + j];
        REQUIRE(std::isfinite(x));
        CHECK(x >= 0.0);
        s += x;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    for (double f : r.fused.data()) CHECK(std::isfinite(f));
  }
}

TEST_CASE("joint anchor permutation permutes map and fused rows") {
  const auto& g = IcosaGroup::instance();
  ParamSet<double> ps;
  const auto p = random_attention(ps, 24, 8, 4);
  std::mt19937_64 rng(4);
  const T src = random_tensor({12, 24}, rng, 1.0, false);
  const T tgt = random_tensor({12, 24}, rng, 1.0, false);
  for (bool residual : {true, false}) {
    const auto base = cross_attention_tokens(src, tgt, p, Fusion::attention, residual);
    double worst = 0.0;
    for (int r = 0; r < kNumRotations; ++r) {
      const auto& pi = g.vertex_permutation(r);
      const auto moved = cross_attention_tokens(permute_rows(src, pi), permute_rows(tgt, pi), p,
                                                Fusion::attention, residual);
      for (std::size_t i = 0; i < 12; ++i) {
        const auto pi_i = static_cast<std::size_t>(pi[i]);
        for (std::size_t j = 0; j < 12; ++j) {
          const auto pi_j = static_cast<std::size_t>(pi[j]);
          worst = std::max(worst, std::abs(moved.map[pi_i * 12 + pi_j] - base.map[i * 12 + j]));
        }
        for (std::size_t c = 0; c < 8; ++c)
          worst = std::max(worst, std::abs(moved.fused[pi_i * 8 + c] - base.fused[i * 8 + c]));
      }
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("fusion variants follow their definitions") {
  ParamSet<double> ps;
  const auto p = random_attention(ps, 10, 6, 5);
  std::mt19937_64 rng(5);
  const T src = random_tensor({12, 10}, rng, 1.0, false);
  const T tgt = random_tensor({12, 10}, rng, 1.0, false);
  const T q = ad::add(ad::matmul(src, p.wq), p.bq);
  const T v = ad::add(ad::matmul(tgt, p.wv), p.bv);

  const auto plain = cross_attention_tokens(src, tgt, p, Fusion::attention, false);
  const T av = ad::matmul(plain.map, v);
  for (std::size_t i = 0; i < av.size(); ++i) CHECK(std::abs(plain.fused[i] - av[i]) < 1e-14);

  const auto res = cross_attention_tokens(src, tgt, p, Fusion::attention, true);
  for (std::size_t i = 0; i < av.size(); ++i) CHECK(std::abs(res.fused[i] - 0.5 * (q[i] + av[i])) < 1e-14);

  const auto mean = cross_attention_tokens(src, tgt, p, Fusion::mean);
  for (std::size_t i = 0; i < av.size(); ++i) CHECK(std::abs(mean.fused[i] - 0.5 * (q[i] + v[i])) < 1e-14);
  for (double a : mean.map.data()) CHECK(a == doctest::Approx(1.0 / 12.0));

  CHECK_THROWS_AS(cross_attention_tokens(src, random_tensor({12, 9}, rng, 1.0, false), p),
                  std::invalid_argument);
}

TEST_CASE("attention gradient check at 10 random points") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ParamSet<double> ps;
    const auto p = random_attention(ps, 12, 6, 100 + seed);
    std::mt19937_64 rng(200 + seed);
    T src = random_tensor({12, 12}, rng);
    T tgt = random_tensor({12, 12}, rng);
    const T proj = random_tensor({12, 6}, rng, 1.0, false);
    auto loss = [&] {
      const auto r = cross_attention_tokens(src, tgt, p);
      return ad::sum_all(ad::mul(r.fused, proj));
    };
    auto params = ps.tensors();
    params.push_back(src);
    params.push_back(tgt);
    const auto rep = testing::grad_check(loss, params, seed, 8);
    INFO("seed " << seed << ": " << rep.where);
    CHECK(rep.ok);
  }
}

TEST_CASE("constructed head decodes the identity pose") {
  ParamSet<double> ps;
  std::mt19937_64 rng(6);
  auto d = DecoderParams<double>::create(ps, 12 * 4, 16, 8, rng);
  ps.fill(0.0);
  d.b3.mutable_data()[0] = 1.0;
  const T fused = random_tensor({12, 4}, rng, 1.0, false);
  const auto pose = decode_pose(fused, d);
  CHECK(pose.q[0] == 1.0);
  for (std::size_t i = 1; i < 4; ++i) CHECK(pose.q[i] == 0.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(pose.t[i] == 0.0);
}

TEST_CASE("decoded quaternion is unit with w >= 0 and differentiable") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ParamSet<double> ps;
    std::mt19937_64 rng(300 + seed);
    auto d = DecoderParams<double>::create(ps, 12 * 4, 16, 8, rng);
    // A large output layer so the normalization is far from trivial.
    for (auto& v : d.w3.mutable_data()) v *= 100.0;
    T fused = random_tensor({12, 4}, rng);
    const auto pose = decode_pose(fused, d);
    double n = 0;
    for (double v : pose.q.data()) n += v * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
    CHECK(pose.q[0] >= 0.0);

    const T wq = random_tensor({4}, rng, 1.0, false);
    const T wt = random_tensor({3}, rng, 1.0, false);
    auto loss = [&] {
      const auto p = decode_pose(fused, d);
      return ad::add(ad::sum_all(ad::mul(p.q, wq)), ad::sum_all(ad::mul(p.t, wt)));
    };
    auto params = ps.tensors();
    params.push_back(fused);
    const auto rep = testing::grad_check(loss, params, seed, 8, 1e-6);
    INFO("seed " << seed << ": " << rep.where);
    CHECK(rep.ok);
  }
}

TEST_CASE("standardize_anchors centers per channel, has unit RMS and a correct gradient") {
  std::mt19937_64 rng(7);
  T x = random_tensor({12, 5}, rng, 2.0);
  for (auto& v : x.mutable_data()) v += 3.0;
  const T y = standardize_anchors(x);
  double ss = 0;
  for (std::size_t c = 0; c < 5; ++c) {
    double m = 0;
    for (std::size_t a = 0; a < 12; ++a) m += y[a * 5 + c];
    CHECK(std::abs(m) < 1e-12);
  }
  for (double v : y.data()) ss += v * v;
  CHECK(std::abs(ss / 60.0 - 1.0) < 1e-9);

  const T zero = standardize_anchors(T::full({12, 5}, 2.5));
  for (double v : zero.data()) CHECK(v == 0.0);

  const T proj = random_tensor({12, 5}, rng, 1.0, false);
  const auto rep = testing::grad_check([&] { return ad::sum_all(ad::mul(standardize_anchors(x), proj)); }, {x});
  INFO(rep.where);
  CHECK(rep.ok);
}

TEST_CASE("model forward is a pure function and composes the centroid translation") {
  ModelConfig cfg;
  cfg.encoder.channels = 8;
  cfg.encoder.layers = 1;
  cfg.encoder.k_enc = 4;
  cfg.d_model = 16;
  cfg.hidden1 = 32;
  cfg.hidden2 = 16;
  RegistrationModel<double> m(cfg);
  std::mt19937_64 rng(8);
  const auto a = testing::random_cloud(40, rng);
  const auto b = testing::random_cloud(40, rng);
  const auto ga = prepare_geometry(a, cfg.encoder);
  const auto gb = prepare_geometry(b, cfg.encoder);
  const auto o1 = m.forward(ga, gb);
  const auto o2 = m.forward(ga, gb);
  for (std::size_t i = 0; i < 4; ++i) CHECK(o1.pose.q[i] == o2.pose.q[i]);
  for (std::size_t i = 0; i < 3; ++i) CHECK(o1.translation[i] == o2.translation[i]);

  const Mat3 r = o1.transform.rotation_matrix();
  const Vec3 t_res(o1.pose.t[0], o1.pose.t[1], o1.pose.t[2]);
  const Vec3 want = gb.centroid - r * ga.centroid + t_res;
  CHECK((o1.transform.translation - want).norm() < 1e-12);

  // A clone predicts the same pose.
  const auto c = m.clone();
  const auto o3 = c->forward(ga, gb);
  for (std::size_t i = 0; i < 3; ++i) CHECK(o3.translation[i] == o1.translation[i]);
}

TEST_CASE("decoder head gradient check through the model translation") {
  ModelConfig cfg;
  cfg.encoder.channels = 8;
  cfg.encoder.layers = 1;
  cfg.encoder.k_enc = 4;
  cfg.d_model = 8;
  cfg.hidden1 = 16;
  cfg.hidden2 = 8;
  RegistrationModel<double> m(cfg);
  std::mt19937_64 rng(9);
  const auto ga = prepare_geometry(testing::random_cloud(24, rng), cfg.encoder);
  const auto gb = prepare_geometry(testing::random_cloud(24, rng), cfg.encoder);
  const T wr = random_tensor({3, 3}, rng, 1.0, false);
  const T wt = random_tensor({3}, rng, 1.0, false);
  auto loss = [&] {
    const auto o = m.forward(ga, gb);
    return ad::add(ad::sum_all(ad::mul(o.rotation, wr)), ad::sum_all(ad::mul(o.translation, wt)));
  };
  std::vector<T> head;
  for (const auto& e : m.params().entries())
    if (e.name.rfind("dec.", 0) == 0 || e.name.rfind("att.", 0) == 0) head.push_back(e.value);
  const auto rep = testing::grad_check(loss, head, 10, 10, 1e-6);
  INFO(rep.where);
  CHECK(rep.ok);
}
