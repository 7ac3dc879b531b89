// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/tensor.hpp"

#include <gtest/gtest.h>

#include <limits>

namespace mdmoe {
namespace {

TEST(Tensor, StoresProductOfExtents) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 12u);
  for (float v : t.values()) EXPECT_EQ(v, 0.f);
}

TEST(Tensor, RejectsZeroExtent) { EXPECT_THROW(Tensor<double>({2, 0}), ShapeError); }

TEST(Tensor, RejectsValueCountMismatch) {
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, RowAccess) {
  Tensor<double> t({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.at(1, 0), 3);
  EXPECT_EQ(t.row(1)[1], 4);
}

TEST(Tensor, DetectsNonFinite) {
  Tensor<float> t({3}, {1.f, 2.f, 3.f});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  t[1] = std::numeric_limits<float>::infinity();
  EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, CastIsExactForFloatValues) {
  Tensor<float> t({2}, {0.1f, -3.25f});
  EXPECT_EQ(t.cast<double>().cast<float>(), t);
}

TEST(Parameter, GradMatchesValueShape) {
  Parameter<double> p("w", Tensor<double>({3, 2}, 1.0));
  EXPECT_EQ(p.grad.shape(), p.value.shape());
  p.grad[0] = 5;
  p.zero_grad();
  EXPECT_EQ(p.grad[0], 0);
}

}  // namespace
}  // namespace mdmoe
