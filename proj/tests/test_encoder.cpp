#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "surfreg/encoder.hpp"
#include "test_util.hpp"

using namespace surfreg;
using surfreg::ad::Tensor;

namespace {

SurfelCloud rotate_cloud(const SurfelCloud& c, const Mat3& r) {
  SurfelCloud out = c;
  for (auto& s : out.surfels) {
    s.position = r * s.position;
    s.normal = r * s.normal;
  }
  return out;
}

EncoderConfig small_config(int channels = 16, int layers = 2, int k = 8) {
  EncoderConfig cfg;
  cfg.channels = channels;
  cfg.layers = layers;
  cfg.k_enc = k;
  return cfg;
}

// Largest |a[i, perm_inv(a'), c] - b[i, a', c]| over a per-anchor tensor
// whose anchor axis is at position 1 (or 0 when lead == 1).
template <typename Real>
double anchor_perm_error(const Tensor<Real>& base, const Tensor<Real>& rotated,
                         const VertexPerm& inv, std::size_t lead) {
  const std::size_t C = base.size() / (lead * kNumAnchors);
  double worst = 0.0;
  for (std::size_t i = 0; i < lead; ++i)
    for (int a = 0; a < kNumAnchors; ++a)
      for (std::size_t c = 0; c < C; ++c) {
        const double want = static_cast<double>(base[(i * kNumAnchors + static_cast<std::size_t>(inv[a])) * C + c]);
        const double got = static_cast<double>(rotated[(i * kNumAnchors + static_cast<std::size_t>(a)) * C + c]);
        worst = std::max(worst, std::abs(want - got));
      }
  return worst;
}

}  // namespace

TEST_CASE("confidence_weight scales centered features by 1 - eps") {
  SurfelCloud c;
  Surfel a, b;
  a.position = Vec3(1, 2, 3);
  a.normal = Vec3(0, 0, 1);
  a.radius = 0.0;
  b = a;
  b.position = Vec3(-1, -2, -3);
  b.radius = 0.95;
  c.surfels = {a, b};
  const auto wf = confidence_weight(c);
  CHECK(wf.centroid.norm() == 0.0);
  CHECK((wf.positions[0] - Vec3(1, 2, 3)).norm() == 0.0);
  CHECK((wf.normals[0] - Vec3(0, 0, 1)).norm() == 0.0);
  CHECK((wf.positions[1] - 0.05 * Vec3(-1, -2, -3)).norm() < 1e-15);
  CHECK(std::abs(wf.normals[1].norm() - 0.05) < 1e-15);

  SurfelCloud d;
  a.position = b.position = Vec3(0.5, 0.5, 0.5);
  a.radius = 0.1;
  b.radius = 0.9;
  Surfel o;
  o.position = Vec3(-0.5, -0.5, -0.5);
  o.radius = 0.0;
  d.surfels = {a, b, o};
  const auto wd = confidence_weight(d);
  CHECK(std::abs(wd.normals[0].norm() / wd.normals[1].norm() - 9.0) < 1e-12);
  CHECK(std::abs(wd.positions[0].norm() / wd.positions[1].norm() - 9.0) < 1e-12);

  const auto off = confidence_weight(d, false);
  CHECK(off.normals[1].norm() == doctest::Approx(1.0));
}

TEST_CASE("prepare_geometry rejects k_enc > N - 1") {
  std::mt19937_64 rng(3);
  auto c = testing::random_cloud(8, rng);
  CHECK_NOTHROW(prepare_geometry(c, small_config(16, 1, 7)));
  CHECK_THROWS_AS(prepare_geometry(c, small_config(16, 1, 8)), std::invalid_argument);
  EncoderConfig bad = small_config(6, 1, 4);
  CHECK_THROWS_AS(prepare_geometry(c, bad), std::invalid_argument);
}

TEST_CASE("encoder layers are exactly anchor-permutation equivariant over all 60 rotations") {
  const auto& g = IcosaGroup::instance();
  for (std::size_t n : {64u, 256u}) {
    std::mt19937_64 rng(100 + n);
    ParamSet<double> ps;
    Encoder<double> enc(small_config(16, 3, 16), ps, rng);
    const auto cloud = testing::random_cloud(n, rng);
    const auto base = enc.per_surfel(prepare_geometry(cloud, enc.config()));
    const auto base_desc = global_pool(base);
    double worst = 0.0, worst_desc = 0.0, worst_sum = 0.0;
    double base_sum = std::accumulate(base_desc.data().begin(), base_desc.data().end(), 0.0);
    for (int r = 0; r < kNumRotations; ++r) {
      const auto rc = rotate_cloud(cloud, g.element(r));
      const auto out = enc.per_surfel(prepare_geometry(rc, enc.config()));
      const auto& inv = g.inverse_vertex_permutation(r);
      worst = std::max(worst, anchor_perm_error(base, out, inv, n));
      const auto desc = global_pool(out);
      worst_desc = std::max(worst_desc, anchor_perm_error(base_desc, desc, inv, 1));
      const double s = std::accumulate(desc.data().begin(), desc.data().end(), 0.0);
      worst_sum = std::max(worst_sum, std::abs(s - base_sum));
    }
    INFO("n=" << n << " per-surfel " << worst << " desc " << worst_desc);
    CHECK(worst < 1e-9);
    CHECK(worst_desc < 1e-9);
    CHECK(worst_sum < 1e-9);
  }
}

TEST_CASE("float32 encoder is equivariant within 1e-4") {
  const auto& g = IcosaGroup::instance();
  std::mt19937_64 rng(9);
  ParamSet<float> ps;
  Encoder<float> enc(small_config(16, 2, 8), ps, rng);
  const auto cloud = testing::random_cloud(64, rng);
  const auto base = enc.descriptor(prepare_geometry(cloud, enc.config()));
  double worst = 0.0;
  for (int r = 0; r < kNumRotations; ++r) {
    const auto out = enc.descriptor(prepare_geometry(rotate_cloud(cloud, g.element(r)), enc.config()));
    worst = std::max(worst, anchor_perm_error(base, out, g.inverse_vertex_permutation(r), 1));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("encoder output is translation invariant") {
  std::mt19937_64 rng(11);
  ParamSet<double> ps;
  Encoder<double> enc(small_config(), ps, rng);
  const auto cloud = testing::random_cloud(64, rng);
  const auto base = enc.per_surfel(prepare_geometry(cloud, enc.config()));
  RigidTransform shift{UnitQuaternion(), Vec3(3.0, -7.5, 12.25)};
  const auto moved = enc.per_surfel(prepare_geometry(transformed(cloud, shift), enc.config()));
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) worst = std::max(worst, std::abs(base[i] - moved[i]));
  CHECK(worst < 1e-9);
}

TEST_CASE("zero weights give zero features") {
  std::mt19937_64 rng(12);
  ParamSet<double> ps;
  Encoder<double> enc(small_config(), ps, rng);
  ps.fill(0.0);
  const auto cloud = testing::random_cloud(40, rng);
  const auto out = enc.encode(prepare_geometry(cloud, enc.config()));
  for (double v : out.data()) REQUIRE(v == 0.0);
}

TEST_CASE("global_pool: single surfel, order and duplication") {
  std::mt19937_64 rng(13);
  auto x = testing::random_tensor({1, 12, 4}, rng, 1.0, false);
  auto p1 = global_pool(x);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == x[i]);

  auto y = testing::random_tensor({30, 12, 5}, rng, 1.0, false);
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto py = global_pool(y);
  const auto pp = global_pool(ad::gather(y, 0, perm));
  for (std::size_t i = 0; i < py.size(); ++i) CHECK(py[i] == pp[i]);

  std::vector<std::size_t> dup;
  for (std::size_t i = 0; i < 30; ++i) dup.insert(dup.end(), {i, i});
  const auto pd = global_pool(ad::gather(y, 0, dup));
  for (std::size_t i = 0; i < py.size(); ++i) CHECK(std::abs(py[i] - pd[i]) <= 1e-15 * (1 + std::abs(py[i])));

  CHECK_THROWS_AS(global_pool(Tensor<double>::zeros({0, 12, 4})), std::invalid_argument);
}

TEST_CASE("expand_orders: identity slice, permuted slices, equal anchor sums") {
  const auto& g = IcosaGroup::instance();
  std::mt19937_64 rng(14);
  const std::size_t C = 6;
  auto d = testing::random_tensor({12, C}, rng, 1.0, false);
  auto e = expand_orders(d);
  REQUIRE(e.shape() == ad::Shape{12, C, 60});
  for (std::size_t a = 0; a < 12; ++a)
    for (std::size_t c = 0; c < C; ++c) CHECK(e[(a * C + c) * 60] == d[a * C + c]);
  for (int r = 0; r < 60; ++r) {
    const auto& inv = g.inverse_vertex_permutation(r);
    std::vector<bool> seen(12, false);
    for (int a = 0; a < 12; ++a) {
      seen[inv[a]] = true;
      for (std::size_t c = 0; c < C; ++c)
        CHECK(e[(a * C + c) * 60 + r] == d[static_cast<std::size_t>(inv[a]) * C + c]);
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
    for (std::size_t c = 0; c < C; ++c) {
      double s0 = 0, sr = 0;
      for (std::size_t a = 0; a < 12; ++a) {
        s0 += e[(a * C + c) * 60];
        sr += e[(a * C + c) * 60 + r];
      }
      CHECK(std::abs(s0 - sr) < 1e-12);
    }
  }
}

TEST_CASE("rotation_select: brute-force argmax and tie rule") {
  std::mt19937_64 rng(15);
  const std::size_t C = 5;
  auto e = expand_orders(testing::random_tensor({12, C}, rng, 1.0, false));
  std::vector<double> w(12 * C, 0.0);
  w[0] = 1.0;  // anchor 0, channel 0
  auto sel = rotation_select(e, Tensor<double>::from({12, C}, w));
  int best = 0;
  for (int r = 1; r < 60; ++r)
    if (e[r] > e[best]) best = r;
  CHECK(sel.order == best);
  for (std::size_t a = 0; a < 12; ++a)
    for (std::size_t c = 0; c < C; ++c) CHECK(sel.pooled[a * C + c] == e[(a * C + c) * 60 + best]);

  auto flat = Tensor<double>::full({12, C, 60}, 0.25);
  CHECK(rotation_select(flat, testing::random_tensor({12, C}, rng, 1.0, false)).order == 0);
}

TEST_CASE("rotation_select is equivariant: r* becomes g_r* o g^-1") {
  const auto& g = IcosaGroup::instance();
  std::mt19937_64 rng(16);
  ParamSet<double> ps;
  Encoder<double> enc(small_config(), ps, rng);
  const auto cloud = testing::random_cloud(64, rng);
  const int r0 = rotation_select(enc.encode(prepare_geometry(cloud, enc.config())), enc.score_weights()).order;
  for (int r = 0; r < kNumRotations; ++r) {
    const auto e = enc.encode(prepare_geometry(rotate_cloud(cloud, g.element(r)), enc.config()));
    CHECK(rotation_select(e, enc.score_weights()).order == g.compose(r0, g.inverse(r)));
  }
}

TEST_CASE("descriptor changes smoothly off the group") {
  const auto& g = IcosaGroup::instance();
  std::mt19937_64 rng(17);
  ParamSet<double> ps;
  Encoder<double> enc(small_config(), ps, rng);
  const auto cloud = testing::random_cloud(64, rng);
  const Mat3 tilt = quat_to_matrix(UnitQuaternion::from_axis_angle(Vec3(0.3, -0.2, 0.9), deg2rad(1.0)));
  for (int r : {0, 7, 33}) {
    const auto a = enc.descriptor(prepare_geometry(rotate_cloud(cloud, g.element(r)), enc.config()));
    const auto b = enc.descriptor(prepare_geometry(rotate_cloud(cloud, tilt * g.element(r)), enc.config()));
    double na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(std::isfinite(b[i]));
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    const double ratio = std::sqrt(nb / na);
    CHECK(ratio > 0.5);
    CHECK(ratio < 2.0);
  }
}

TEST_CASE("fused kernel matches the unfused composition") {
  std::mt19937_64 rng(18);
  const auto cloud = testing::random_cloud(20, rng);
  const auto geo = prepare_geometry(cloud, small_config(8, 1, 5));
  const auto in = kernel_input<double>(geo);
  const std::size_t n = geo.n, k = geo.k, C = 8, H = 4;
  auto w1 = testing::random_tensor({2, H}, rng, 1.0, true);
  auto b1 = testing::random_tensor({H}, rng, 0.5, true);
  auto w2 = testing::random_tensor({2, H}, rng, 1.0, true);
  auto b2 = testing::random_tensor({H}, rng, 0.5, true);
  auto f = testing::random_tensor({n, 12, C}, rng, 1.0, true);
  auto proj = testing::random_tensor({n, 12, C}, rng, 1.0, false);

  auto fused = [&] { return ad::sum_all(ad::mul(anchor_kernel_conv(in, w1, b1, w2, b2, f), proj)); };
  auto unfused = [&] {
    std::vector<std::size_t> flat(geo.nbr.begin(), geo.nbr.end());
    auto fg = ad::reshape(ad::gather(f, 0, flat), {n, k, 12, C});
    auto branch = [&](const std::vector<double>& s, const Tensor<double>& w, const Tensor<double>& b,
                      std::size_t off) {
      auto st = Tensor<double>::from({n * k * 12, 2}, s);
      auto kern = ad::reshape(ad::relu(ad::add(ad::matmul(st, w), b)), {n, k, 12, H});
      return ad::mean(ad::mul(kern, ad::slice(fg, 3, off, H)), 1);
    };
    auto out = ad::concat<double>({branch(geo.s1, w1, b1, 0), branch(geo.s2, w2, b2, H)}, 2);
    return ad::sum_all(ad::mul(out, proj));
  };
  const auto a = fused();
  const auto b = unfused();
  CHECK(std::abs(a.item() - b.item()) < 1e-12 * (1 + std::abs(b.item())));

  std::vector<Tensor<double>> params = {w1, b1, w2, b2, f};
  for (auto& p : params) p.zero_grad();
  a.backward();
  std::vector<std::vector<double>> ga;
  for (auto& p : params) ga.emplace_back(p.grad().begin(), p.grad().end());
  for (auto& p : params) p.zero_grad();
  b.backward();
  for (std::size_t q = 0; q < params.size(); ++q)
    for (std::size_t i = 0; i < ga[q].size(); ++i)
      CHECK(std::abs(ga[q][i] - params[q].grad()[i]) < 1e-12);

  const auto rep = testing::grad_check(fused, params, 5, 0, 1e-6);
  INFO(rep.where << " rel " << rep.worst_rel);
  CHECK(rep.ok);
}

TEST_CASE("whole-encoder gradient check") {
  std::mt19937_64 rng(19);
  ParamSet<double> ps;
  Encoder<double> enc(small_config(8, 2, 4), ps, rng);
  const auto cloud = testing::random_cloud(16, rng);
  const auto geo = prepare_geometry(cloud, enc.config());
  auto proj = testing::random_tensor({12, 8, 60}, rng, 1.0, false);
  auto loss = [&] { return ad::sum_all(ad::mul(enc.encode(geo), proj)); };
  const auto rep = testing::grad_check(loss, ps.tensors(), 6, 10, 1e-6);
  INFO(rep.where << " rel " << rep.worst_rel << " abs " << rep.worst_abs);
  CHECK(rep.ok);
  CHECK(rep.checked > 50);
}

TEST_CASE("adjacent_mean matches a gather reference and its gradient") {
  const auto& g = IcosaGroup::instance();
  std::mt19937_64 rng(20);
  auto h = testing::random_tensor({3, 12, 4}, rng, 1.0, true);
  auto proj = testing::random_tensor({3, 12, 4}, rng, 1.0, false);
  const auto out = adjacent_mean(h, g);
  for (std::size_t i = 0; i < 3; ++i)
    for (int a = 0; a < 12; ++a)
      for (std::size_t c = 0; c < 4; ++c) {
        double want = 0;
        for (int b : g.adjacent(a)) want += h[(i * 12 + static_cast<std::size_t>(b)) * 4 + c];
        CHECK(std::abs(out[(i * 12 + static_cast<std::size_t>(a)) * 4 + c] - want / 5) < 1e-15);
      }
  const auto rep = testing::grad_check([&] { return ad::sum_all(ad::mul(adjacent_mean(h, g), proj)); }, {h});
  CHECK(rep.ok);
}
