#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "atseg/errors.hpp"
#include "atseg/rng.hpp"
#include "atseg/tensor.hpp"

using namespace atseg;

TEST(Tensor, ElementCountMatchesShape) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Tensor, ZeroExtentIsEmpty) {
  Tensor t({1, 0, 4, 4});
  EXPECT_TRUE(t.empty());
  EXPECT_EQ(shape_numel(t.shape()), 0u);
}

TEST(Tensor, ReshapeKeepsDataAndRejectsCountChange) {
  Tensor t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[5], 6.0f);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, CheckFiniteNamesTheOffendingIndex) {
  Tensor t({3});
  t[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  try {
    t.check_finite("probe");
    FAIL() << "expected domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("flat index 1"), std::string::npos);
  }
}

TEST(Tensor, SplitInvertsStackOfChannels) {
  Rng rng(3);
  Tensor x({2, 5, 3, 3});
  for (float& v : x.data()) v = static_cast<float>(rng.uniform());
  auto [a, b] = split_channels(x, 2);
  EXPECT_EQ(a.shape(), (Shape{2, 2, 3, 3}));
  EXPECT_EQ(b.shape(), (Shape{2, 3, 3, 3}));
  EXPECT_EQ(a.at(1, 1, 2, 2), x.at(1, 1, 2, 2));
  EXPECT_EQ(b.at(1, 0, 0, 0), x.at(1, 2, 0, 0));
}

TEST(Tensor, StackAddsLeadingAxis) {
  std::vector<Tensor> items{Tensor({1, 2}, 1.0f), Tensor({1, 2}, 2.0f)};
  Tensor s = stack(items);
  EXPECT_EQ(s.shape(), (Shape{2, 1, 2}));
  EXPECT_EQ(s[3], 2.0f);
  items.push_back(Tensor({2, 1}));
  EXPECT_THROW(stack(items), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    ASSERT_EQ(a.next_u64(), b.next_u64());
  }
  Rng c(42), d(42);
  for (int i = 0; i < 50; ++i) {
    ASSERT_EQ(c.normal(), d.normal());
    ASSERT_EQ(c.uniform(), d.uniform());
  }
}

TEST(Rng, IndexStaysInRange) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_LT(rng.index(7), 7u);
  }
}
