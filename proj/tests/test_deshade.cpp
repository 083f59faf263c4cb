#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "dis/deshade.hpp"
#include "dis/metrics.hpp"

using namespace dis;

TEST_CASE("analytic de-shading inverts the multiplicative model exactly") {
  int n = 16;
  Image albedo(n, n, 3), shading(n, n, 3);
  Mask mask(n, n, true);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> da(0.05, 0.95), ds(0.2, 2.0);
  for (auto& v : albedo.data) v = da(rng);
  for (auto& v : shading.data) v = ds(rng);
  Image shaded = albedo;
  for (size_t i = 0; i < shaded.data.size(); ++i) shaded.data[i] *= shading.data[i];

  DeshadeResult r = deshade_analytic(shaded, shading, mask);
  double worst = 0;
  for (size_t i = 0; i < albedo.data.size(); ++i)
    worst = std::max(worst, std::abs(r.albedo.data[i] - albedo.data[i]));
  CHECK(worst <= 1e-5);
  CHECK(r.confidence.count() == mask.count());
}

TEST_CASE("pixels below the shading floor pass through with zero confidence") {
  Image shaded(2, 1, 3), shading(2, 1, 3);
  Mask mask(2, 1, true);
  shaded.set_rgb(0, 0, {0.02, 0.02, 0.02});
  shading.set_rgb(0, 0, {0.01, 0.5, 0.5});  // min channel below the 0.05 floor
  shaded.set_rgb(1, 0, {0.3, 0.3, 0.3});
  shading.set_rgb(1, 0, {0.6, 0.6, 0.6});
  DeshadeResult r = deshade_analytic(shaded, shading, mask);
  CHECK(length(r.albedo.rgb(0, 0) - shaded.rgb(0, 0)) == 0.0);
  CHECK(!r.confidence.at(0, 0));
  CHECK(length(r.albedo.rgb(1, 0) - Vec3{0.5, 0.5, 0.5}) < 1e-12);
  CHECK(r.confidence.at(1, 0));
}

TEST_CASE("de-shaded output clamps to [0,1]") {
  Image shaded(1, 1, 3, 0.9), shading(1, 1, 3, 0.3);  // ratio 3.0
  Mask mask(1, 1, true);
  DeshadeResult r = deshade_analytic(shaded, shading, mask);
  CHECK(r.albedo.at(0, 0, 0) == 1.0);
  CHECK_THROWS_AS(deshade_analytic(shaded, Image(2, 2, 3), mask), ArgumentError);
}

TEST_CASE("external provider reads {frame:06}.pfm from a directory") {
  auto dir = std::filesystem::temp_directory_path() / "dis_deshade_test";
  std::filesystem::create_directories(dir);
  Image ref(6, 4, 3);
  for (size_t i = 0; i < ref.data.size(); ++i) ref.data[i] = static_cast<float>(0.01 * i);
  save_pfm((dir / "000042.pfm").string(), ref);

  Image got = deshade_external(dir.string(), 42, 6, 4);
  CHECK(got.data == ref.data);
  CHECK_THROWS_WITH(deshade_external(dir.string(), 7, 6, 4),
                    Catch::Matchers::ContainsSubstring("frame 7"));
  CHECK_THROWS_WITH(deshade_external(dir.string(), 42, 8, 8),
                    Catch::Matchers::ContainsSubstring("resolution"));
}

TEST_CASE("identity normal prior returns the input") {
  Image n_surf(3, 3, 3, 0.5);
  Mask mask(3, 3, true);
  NormalPriorConfig cfg;  // identity
  Image out = normal_prior(n_surf, mask, 0, cfg);
  CHECK(out.data == n_surf.data);
}

TEST_CASE("gt_noisy prior: mean deviation tracks sigma, deterministic per (seed, frame)") {
  int n = 64;
  Image gt(n, n, 3);
  Mask mask(n, n, true);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> d(-1, 1);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      gt.set_rgb(x, y, normalize(Vec3{d(rng), d(rng), d(rng) + 2.0}));

  NormalPriorConfig cfg;
  cfg.kind = NormalPriorKind::kGtNoisy;
  cfg.noise_sigma_deg = 10.0;
  cfg.seed = 1234;
  Image noisy = normal_prior(gt, mask, 0, cfg, &gt);
  // E|angle| for half-normal with sigma=10deg is ~7.98deg; generous MC band
  double mean_dev = metric_normal_degree(noisy, gt, mask);
  INFO("mean deviation " << mean_dev);
  CHECK(mean_dev >= 7.0);
  CHECK(mean_dev <= 13.0);

  Image again = normal_prior(gt, mask, 0, cfg, &gt);
  CHECK(again.data == noisy.data);
  Image other_frame = normal_prior(gt, mask, 1, cfg, &gt);
  CHECK(other_frame.data != noisy.data);  // temporally unstable by design

  CHECK_THROWS_AS(normal_prior(gt, mask, 0, cfg, nullptr), ConfigurationError);
}

TEST_CASE("gt_noisy outputs stay unit length") {
  Image gt(8, 8, 3);
  Mask mask(8, 8, true);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) gt.set_rgb(x, y, {0, 0, 1});
  NormalPriorConfig cfg;
  cfg.kind = NormalPriorKind::kGtNoisy;
  cfg.noise_sigma_deg = 25.0;
  Image noisy = normal_prior(gt, mask, 3, cfg, &gt);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) CHECK(std::abs(length(noisy.rgb(x, y)) - 1.0) < 1e-12);
}
