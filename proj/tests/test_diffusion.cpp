#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "denseprior/diffusion.hpp"

using namespace dp;

TEST_CASE("linear-beta schedule endpoints and examples") {
  auto s = make_schedule("linear-beta", 1000);
  REQUIRE(s.T == 1000);
  CHECK(s.alpha_bar[0] == Catch::Approx(0.9999).epsilon(1e-12));

  auto s2 = make_schedule("linear-beta", 2);
  CHECK(s2.alpha_bar[0] == Catch::Approx(0.9999).epsilon(1e-12));
  CHECK(s2.alpha_bar[1] == Catch::Approx(0.979902).epsilon(1e-12));
}

TEST_CASE("schedule construction rejects bad configs") {
  CHECK_THROWS_AS(make_schedule("linear-beta", 1), config_error);
  CHECK_THROWS_AS(make_schedule("linear-beta", 0), config_error);
  CHECK_THROWS_AS(make_schedule("cosine", 100), config_error);
  CHECK_THROWS_AS(make_schedule("linear-beta", 10, 0.0, 0.02), config_error);
  CHECK_THROWS_AS(make_schedule("linear-beta", 10, 0.5, 0.1), config_error);
}

TEST_CASE("default schedule invariants") {
  auto s = make_schedule("linear-beta", 1000);
  CHECK(s.alpha_bar[0] > 0.99);
  CHECK(s.alpha_bar[999] < 0.05);
  for (int t = 0; t < s.T; ++t) {
    CHECK(s.alpha_bar[size_t(t)] > 0.0);
    CHECK(s.alpha_bar[size_t(t)] <= 1.0);
    if (t > 0) CHECK(s.alpha_bar[size_t(t)] < s.alpha_bar[size_t(t) - 1]);
  }
  // Signal-to-noise ratio strictly decreasing.
  for (int t = 1; t < s.T; ++t) {
    const double prev = s.alpha_bar[size_t(t) - 1] / (1.0 - s.alpha_bar[size_t(t) - 1]);
    const double cur = s.alpha_bar[size_t(t)] / (1.0 - s.alpha_bar[size_t(t)]);
    CHECK(cur < prev);
  }
}

TEST_CASE("forward_noise hand examples") {
  NoiseSchedule clean{1, {1.0}};
  NoiseSchedule noise{1, {1e-300}};  // effectively zero signal
  NoiseSchedule quarter{1, {0.25}};

  TensorD z({2}, {1.0, 1.0});
  TensorD eps({2}, {0.0, 2.0});

  auto a = forward_noise(z, 0, eps, clean);
  CHECK(a.v[0] == Catch::Approx(1.0).margin(1e-12));
  CHECK(a.v[1] == Catch::Approx(1.0).margin(1e-12));

  auto b = forward_noise(z, 0, eps, noise);
  CHECK(b.v[0] == Catch::Approx(0.0).margin(1e-9));
  CHECK(b.v[1] == Catch::Approx(2.0).margin(1e-9));

  auto c = forward_noise(z, 0, eps, quarter);
  CHECK(c.v[0] == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(c.v[1] == Catch::Approx(2.2320508075688772).epsilon(1e-12));
}

TEST_CASE("forward_noise errors") {
  auto s = make_schedule("linear-beta", 10);
  TensorD z({2}, {1.0, 1.0});
  TensorD eps3({3}, {0.0, 0.0, 0.0});
  TensorD eps({2}, {0.0, 0.0});
  CHECK_THROWS_AS(forward_noise(z, 0, eps3, s), shape_error);
  CHECK_THROWS_AS(forward_noise(z, -1, eps, s), range_error);
  CHECK_THROWS_AS(forward_noise(z, 10, eps, s), range_error);
}

TEST_CASE("forward_noise is linear in (z, eps)") {
  auto s = make_schedule("linear-beta", 50);
  Rng rng(3);
  TensorD z({4, 4}), eps({4, 4});
  for (auto& x : z.v) x = rng.normal();
  for (auto& x : eps.v) x = rng.normal();
  const double a = 2.75;
  TensorD za = z, ea = eps;
  for (auto& x : za.v) x *= a;
  for (auto& x : ea.v) x *= a;
  auto lhs = forward_noise(za, 17, ea, s);
  auto rhs = forward_noise(z, 17, eps, s);
  for (size_t i = 0; i < lhs.size(); ++i)
    CHECK(lhs.v[i] == Catch::Approx(a * rhs.v[i]).epsilon(1e-12));
}

TEST_CASE("timestep sampling is uniform and seeded") {
  auto s = make_schedule("linear-beta", 100);
  Rng rng(0);
  auto ts = sample_timestep(rng, s, 100000);
  std::vector<int> hist(100, 0);
  for (int t : ts) {
    REQUIRE(t >= 0);
    REQUIRE(t < 100);
    hist[size_t(t)]++;
  }
  for (int h : hist)
    CHECK(std::abs(h / 100000.0 - 0.01) < 0.003);

  NoiseSchedule single{1, {0.5}};
  Rng rng2(9);
  auto one = sample_timestep(rng2, single, 3);
  CHECK(one == std::vector<int>{0, 0, 0});

  Rng a(42), b(42);
  CHECK(sample_timestep(a, s, 16) == sample_timestep(b, s, 16));

  Rng c(1);
  CHECK_THROWS_AS(sample_timestep(c, s, 0), usage_error);
}

TEST_CASE("forward-process variance tracks the schedule") {
  auto s = make_schedule("linear-beta", 100);
  // Clean signal with exactly unit empirical variance.
  TensorD z({4});
  {
    Rng zr(11);
    for (auto& x : z.v) x = zr.normal();
    double mean = 0, var = 0;
    for (double x : z.v) mean += x;
    mean /= double(z.size());
    for (double x : z.v) var += (x - mean) * (x - mean);
    var /= double(z.size());
    for (auto& x : z.v) x = (x - mean) / std::sqrt(var);
  }
  Rng rng(123);
  for (int t : {0, 25, 50, 75, 99}) {
    const int draws = 100000;
    double sum = 0, sum2 = 0;
    size_t n = 0;
    TensorD eps({4});
    for (int i = 0; i < draws; ++i) {
      for (auto& x : eps.v) x = rng.normal();
      auto zt = forward_noise(z, t, eps, s);
      for (double x : zt.v) {
        sum += x;
        sum2 += x * x;
        ++n;
      }
    }
    const double mean = sum / double(n);
    const double var = sum2 / double(n) - mean * mean;
    const double ab = s.alpha_bar[size_t(t)];
    const double expect = ab * 1.0 + (1.0 - ab);
    CHECK(std::abs(var - expect) / expect < 0.03);
  }
}

TEST_CASE("denoise loss examples and errors") {
  TensorD a({2}, {3.0, 4.0});
  CHECK(teacher_denoise_loss(a, a) == 0.0);

  TensorD b = a;
  for (auto& x : b.v) x += 1.0;
  CHECK(teacher_denoise_loss(b, a) == Catch::Approx(1.0).epsilon(1e-15));

  TensorD zero({2}, {0.0, 0.0});
  CHECK(teacher_denoise_loss(zero, a) == Catch::Approx(12.5).epsilon(1e-15));

  TensorD c({3});
  CHECK_THROWS_AS(teacher_denoise_loss(zero, c), shape_error);
  CHECK(teacher_denoise_loss(b, a) >= 0.0);
}
