#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "surfreg/dataset.hpp"
#include "surfreg/io.hpp"
#include "surfreg/loss.hpp"

using namespace surfreg;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.n_pairs = 4;
  s.n_surfels = 128;
  return s;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("surfreg_test_dataset_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("same seed writes bitwise-identical files") {
  const auto a = fresh_dir("a"), b = fresh_dir("b");
  for (const auto& p : synthesize(small_spec())) write_pair(a.string(), p);
  for (const auto& p : synthesize(small_spec())) write_pair(b.string(), p);
  int files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    CHECK(read_file(e.path().string()) == read_file((b / e.path().filename()).string()));
  }
  CHECK(files == 12);
}

TEST_CASE("pairs depend only on (seed, index)") {
  SynthSpec s = small_spec();
  const auto four = synthesize(s);
  s.n_pairs = 2;
  const auto two = synthesize(s);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(two[k].id == four[k].id);
    CHECK(two[k].source.surfels[7].position == four[k].source.surfels[7].position);
  }
  s.seed = 8;
  CHECK(synthesize(s)[0].source.surfels[7].position != four[0].source.surfels[7].position);
}

TEST_CASE("ground-truth file round trip") {
  const auto d = fresh_dir("gt");
  for (const auto& p : synthesize(small_spec())) {
    write_pair(d.string(), p);
    const auto back = read_transform((d / (p.id + "_gt.txt")).string());
    CHECK((back.rotation_matrix() - p.gt->rotation_matrix()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((back.translation - p.gt->translation).norm() < 1e-9);
  }
}

TEST_CASE("noise-free full-overlap pairs align exactly under the ground truth") {
  SynthSpec s = small_spec();
  s.noise_sigma_m = 0.0;
  s.overlap = 1.0;
  for (SceneType t : {SceneType::planes, SceneType::boxes, SceneType::quadrics, SceneType::mixed}) {
    s.scene = t;
    for (const auto& p : synthesize(s)) {
      REQUIRE(p.source.size() == 128);
      REQUIRE(p.target.size() == 128);
      std::vector<Vec3> moved;
      for (const auto& x : p.source.positions()) moved.push_back(p.gt->apply(x));
      double worst = 0.0;
      for (double r : nearest_correspondences(moved, p.target.positions()).residuals) worst = std::max(worst, r);
      INFO(to_string(t) << " " << p.id);
      CHECK(worst < 1e-9);
    }
  }
}

TEST_CASE("sampled poses respect the caps") {
  SynthSpec s = small_spec();
  s.n_pairs = 40;
  s.max_rot_deg = 12.0;
  s.max_trans_m = 0.5;
  for (const auto& p : synthesize(s)) {
    CHECK(rotation_geodesic_deg(p.gt->rotation_matrix(), Mat3::Identity()) <= 12.0 + 1e-9);
    CHECK(p.gt->translation.norm() <= 0.5 + 1e-12);
  }
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    CHECK(rotation_geodesic_deg(quat_to_matrix(random_rotation_capped(rng, 30.0)), Mat3::Identity()) <= 30.0 + 1e-9);
    CHECK(random_translation_capped(rng, 2.0).norm() <= 2.0 + 1e-12);
  }
}

TEST_CASE("partial overlap shrinks the shared region") {
  SynthSpec s = small_spec();
  s.noise_sigma_m = 0.0;
  s.overlap = 0.5;
  const auto p = synthesize(s).front();
  std::vector<Vec3> moved;
  for (const auto& x : p.source.positions()) moved.push_back(p.gt->apply(x));
  const auto r = nearest_correspondences(moved, p.target.positions()).residuals;
  const auto close = std::count_if(r.begin(), r.end(), [](double v) { return v < 1e-9; });
  CHECK(close > 0);
  CHECK(close < static_cast<long>(r.size()));
}

TEST_CASE("spec validation") {
  SynthSpec s = small_spec();
  s.overlap = 0.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = small_spec();
  s.noise_sigma_m = -0.1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS_AS(scene_type_from_string("forest"), std::invalid_argument);
}
