#include <gtest/gtest.h>

#include <vector>

#include "gbpse/gaussian.hpp"

using gbpse::Gaussian1D;
using gbpse::gaussian_product;
using gbpse::kInf;

TEST(GaussianProduct, EqualVarianceMidpoint) {
    const auto g = gaussian_product(Gaussian1D{1.0, 1.0}, Gaussian1D{3.0, 1.0});
    EXPECT_DOUBLE_EQ(g.mean, 2.0);
    EXPECT_DOUBLE_EQ(g.variance, 0.5);
}

TEST(GaussianProduct, UninformativeIsIdentity) {
    const Gaussian1D a{0.7, 2e-4};
    EXPECT_EQ(gaussian_product(a, Gaussian1D::uninformative()), a);
    EXPECT_EQ(gaussian_product(Gaussian1D::uninformative(), a), a);
}

TEST(GaussianProduct, EmptyListIsUninformative) {
    const auto g = gaussian_product(std::span<const Gaussian1D>{});
    EXPECT_FALSE(g.informative());
    EXPECT_EQ(g.variance, kInf);
}

TEST(GaussianProduct, SingleMessagePassesThrough) {
    const std::vector<Gaussian1D> one{{4.2, 1e-4}};
    EXPECT_EQ(gaussian_product(one), one[0]);
}

TEST(GaussianProduct, CommutativeAndAssociative) {
    const Gaussian1D a{1.0, 0.5}, b{-2.0, 3.0}, c{0.25, 1e-2};
    const auto ab = gaussian_product(a, b);
    const auto ba = gaussian_product(b, a);
    EXPECT_DOUBLE_EQ(ab.mean, ba.mean);
    EXPECT_DOUBLE_EQ(ab.variance, ba.variance);
    const auto left = gaussian_product(ab, c);
    const auto right = gaussian_product(a, gaussian_product(b, c));
    EXPECT_NEAR(left.mean, right.mean, 1e-14);
    EXPECT_NEAR(left.variance, right.variance, 1e-16);
}

TEST(GaussianProduct, InfiniteStaysInfiniteWithoutFiniteInput) {
    const std::vector<Gaussian1D> all_inf(5, Gaussian1D::uninformative());
    EXPECT_FALSE(gaussian_product(all_inf).informative());
}

TEST(GaussianProduct, PrecisionsAdd) {
    const std::vector<Gaussian1D> msgs{{1.0, 2.0}, {2.0, 4.0}, {0.0, kInf}, {3.0, 4.0}};
    const auto g = gaussian_product(msgs);
    EXPECT_DOUBLE_EQ(g.precision(), 0.5 + 0.25 + 0.25);
    EXPECT_DOUBLE_EQ(g.mean, (1.0 / 2.0 + 2.0 / 4.0 + 3.0 / 4.0) / 1.0);
}
