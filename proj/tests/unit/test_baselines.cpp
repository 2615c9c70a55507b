#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "atseg/baselines.hpp"
#include "atseg/errors.hpp"
#include "atseg/rng.hpp"
#include "gradcheck.hpp"
#include "local_stat_oracle.hpp"

using namespace atseg;

namespace {

Tensor uniform_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  return testkit::random_tensor({h, w}, rng, 0.0f, 1.0f);
}

// Pixel values on a 1/8 grid: every window sum is exact, so ties land exactly.
Tensor dyadic_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({h, w});
  for (float& v : t.data()) v = static_cast<float>(rng.index(9)) / 8.0f;
  return t;
}

}  // namespace

TEST(FixedThreshold, Examples) {
  const Tensor out = fixed_threshold(Tensor({4}, {0.49f, 0.5f, 0.0f, 1.0f}));
  EXPECT_EQ(out.storage(), (std::vector<float>{0, 1, 0, 1}));
}

TEST(FixedThreshold, MatchesBruteForceAndIsIdempotent) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Tensor prob = uniform_image(17, 23, seed);
    const Tensor once = fixed_threshold(prob);
    for (std::size_t i = 0; i < prob.numel(); ++i) ASSERT_EQ(once[i], prob[i] >= 0.5f ? 1.0f : 0.0f);
    EXPECT_TRUE(bitwise_equal(fixed_threshold(once), once));
  }
}

TEST(IntegralImage, Examples) {
  EXPECT_EQ(integral_image(Tensor({2, 2}, {1, 2, 3, 4})), (std::vector<double>{1, 3, 4, 10}));
  const std::vector<double> zeros = integral_image(Tensor({3, 5}));
  EXPECT_TRUE(std::all_of(zeros.begin(), zeros.end(), [](double v) { return v == 0.0; }));
}

TEST(IntegralImage, FullWindowIsLastEntry) {
  const Tensor img = uniform_image(9, 13, 4);
  const IntegralImage table(img);
  EXPECT_EQ(table.window_sum(0, 0, 8, 12), table.sum_at(8, 12));
  EXPECT_EQ(integral_image(img).back(), table.sum_at(8, 12));
}

TEST(IntegralImage, AcceptsSingletonLeadingAxes) {
  const Tensor img = uniform_image(4, 6, 2);
  const IntegralImage flat(img), batched(img.reshaped({1, 1, 4, 6}));
  EXPECT_EQ(flat.sum_at(3, 5), batched.sum_at(3, 5));
  EXPECT_THROW(IntegralImage(Tensor({2, 4, 6})), ShapeError);
  EXPECT_THROW(IntegralImage(Tensor({6})), ShapeError);
}

TEST(IntegralImage, ExhaustiveWindowSweepMatchesNaiveSums) {
  const Tensor img = uniform_image(8, 8, 9);
  const IntegralImage table(img);
  for (std::size_t r0 = 0; r0 < 8; ++r0) {
    for (std::size_t r1 = r0; r1 < 8; ++r1) {
      for (std::size_t c0 = 0; c0 < 8; ++c0) {
        for (std::size_t c1 = c0; c1 < 8; ++c1) {
          double sum = 0, sq = 0;
          for (std::size_t y = r0; y <= r1; ++y) {
            for (std::size_t x = c0; x <= c1; ++x) {
              sum += img[y * 8 + x];
              sq += static_cast<double>(img[y * 8 + x]) * img[y * 8 + x];
            }
          }
          ASSERT_NEAR(table.window_sum(r0, c0, r1, c1), sum, 1e-6);
          ASSERT_NEAR(table.window_sq_sum(r0, c0, r1, c1), sq, 1e-6);
        }
      }
    }
  }
}

TEST(LocalStat, DefaultConstants) {
  LocalStatConfig cfg;
  EXPECT_EQ(cfg.window, 15u);
  EXPECT_EQ(cfg.effective_k(), 0.0);
  cfg.method = LocalMethod::Niblack;
  EXPECT_EQ(cfg.effective_k(), -0.2);
  cfg.method = LocalMethod::Sauvola;
  EXPECT_EQ(cfg.effective_k(), 0.5);
  EXPECT_EQ(cfg.r, 0.5);
  cfg.k = 0.3;
  EXPECT_EQ(cfg.effective_k(), 0.3);
}

TEST(LocalStat, ConstantImageIsAllOnes) {
  for (float c : {0.0f, 0.25f, 0.5f, 1.0f}) {
    LocalStatConfig cfg;
    cfg.window = 5;
    const Tensor out = local_stat_threshold(Tensor({8, 8}, c), cfg);
    for (float v : out.data()) ASSERT_EQ(v, 1.0f) << "c = " << c;
  }
}

TEST(LocalStat, TwoRegionImageWithWindowThree) {
  Tensor img({8, 8});
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) img[y * 8 + x] = x < 4 ? 0.25f : 0.75f;
  }
  LocalStatConfig cfg;
  cfg.window = 3;
  const Tensor out = local_stat_threshold(img, cfg);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      // The dark column touching the bright half sits below its local mean.
      EXPECT_EQ(out[y * 8 + x], x == 3 ? 0.0f : 1.0f) << y << "," << x;
    }
  }
}

class LocalStatOracle : public ::testing::TestWithParam<LocalMethod> {};

TEST_P(LocalStatOracle, MatchesNaiveSlidingWindow) {
  for (std::size_t window : {1u, 3u, 5u, 7u}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      LocalStatConfig cfg;
      cfg.method = GetParam();
      cfg.window = window;
      for (const Tensor& img : {uniform_image(8, 8, seed), dyadic_image(8, 8, seed)}) {
        const Tensor fast = local_stat_threshold(img, cfg);
        const Tensor naive = testkit::naive_local_threshold(img, cfg);
        ASSERT_EQ(fast.storage(), naive.storage()) << "window " << window << " seed " << seed;
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Methods, LocalStatOracle,
                         ::testing::Values(LocalMethod::Mean, LocalMethod::Niblack, LocalMethod::Sauvola));

TEST(LocalStat, RejectsBadWindows) {
  const Tensor img = uniform_image(8, 10, 1);
  LocalStatConfig cfg;
  cfg.window = 4;
  EXPECT_THROW(local_stat_threshold(img, cfg), ContractError);
  cfg.window = 0;
  EXPECT_THROW(local_stat_threshold(img, cfg), ContractError);
  cfg.window = 9;
  EXPECT_THROW(local_stat_threshold(img, cfg), ContractError);
  cfg.window = 7;
  EXPECT_NO_THROW(local_stat_threshold(img, cfg));
  cfg.method = LocalMethod::Sauvola;
  cfg.r = 0;
  EXPECT_THROW(local_stat_threshold(img, cfg), ContractError);
}

TEST(LocalStat, RuntimeScalesLinearlyInPixels) {
  LocalStatConfig cfg;
  cfg.method = LocalMethod::Sauvola;
  volatile float sink = 0;
  auto per_pixel_ns = [&](std::size_t side) {
    const Tensor img = uniform_image(side, side, side);
    const std::size_t reps = (256 * 256 * 4) / (side * side);
    double best = 1e300;
    for (int trial = 0; trial < 5; ++trial) {
      const auto start = std::chrono::steady_clock::now();
      for (std::size_t r = 0; r < reps; ++r) {
        sink = sink + local_stat_threshold(img, cfg)[side];
      }
      const std::chrono::duration<double, std::nano> took = std::chrono::steady_clock::now() - start;
      best = std::min(best, took.count() / static_cast<double>(reps * side * side));
    }
    return best;
  };
  const double small = per_pixel_ns(64), mid = per_pixel_ns(128), large = per_pixel_ns(256);
  for (double t : {mid, large}) {
    EXPECT_LT(t / small, 2.0) << small << " " << mid << " " << large;
    EXPECT_GT(t / small, 0.5) << small << " " << mid << " " << large;
  }
}
