// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vgloss/geometry.hpp"

using namespace vgloss;

TEST(BoxConversion, CornersToNormalizedCenter) {
    const auto c = corners_to_center(CornerBoxd{10, 20, 50, 60}, 100.0, 100.0);
    EXPECT_DOUBLE_EQ(c.cx, 0.30);
    EXPECT_DOUBLE_EQ(c.cy, 0.40);
    EXPECT_DOUBLE_EQ(c.w, 0.40);
    EXPECT_DOUBLE_EQ(c.h, 0.40);
}

TEST(BoxConversion, CenterToCorners) {
    const auto b = center_to_corners(CenterBoxd{0.3, 0.4, 0.4, 0.4});
    EXPECT_NEAR(b.x1, 0.1, 1e-15);
    EXPECT_NEAR(b.y1, 0.2, 1e-15);
    EXPECT_NEAR(b.x2, 0.5, 1e-15);
    EXPECT_NEAR(b.y2, 0.6, 1e-15);
}

TEST(BoxConversion, RejectsInvertedBoxAndBadImage) {
    EXPECT_THROW(corners_to_center(CornerBoxd{5, 0, 1, 1}, 10.0, 10.0), InvalidInput);
    EXPECT_THROW(corners_to_center(CornerBoxd{0, 0, 1, 1}, 0.0, 10.0), InvalidInput);
}

TEST(BoxConversion, RoundTrip) {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const double x1 = u(gen) * 300, y1 = u(gen) * 200;
        const CornerBoxd b{x1, y1, x1 + 1 + u(gen) * 100, y1 + 1 + u(gen) * 100};
        const auto back = scale_box(center_to_corners(corners_to_center(b, 400.0, 300.0)), 400.0, 300.0);
        EXPECT_NEAR(back.x1, b.x1, 1e-9);
        EXPECT_NEAR(back.y2, b.y2, 1e-9);
    }
}

TEST(Iou, ExactCases) {
    EXPECT_NEAR(iou(CornerBoxd{0, 0, 2, 2}, CornerBoxd{1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
    EXPECT_DOUBLE_EQ(iou(CornerBoxd{0, 0, 2, 2}, CornerBoxd{0, 0, 2, 2}), 1.0);
    EXPECT_DOUBLE_EQ(iou(CornerBoxd{0, 0, 1, 1}, CornerBoxd{2, 2, 3, 3}), 0.0);
    EXPECT_DOUBLE_EQ(iou(CornerBoxd{0, 0, 1, 1}, CornerBoxd{1, 0, 2, 1}), 0.0); // touching edge
    EXPECT_DOUBLE_EQ(iou(CornerBoxd{1, 1, 1, 1}, CornerBoxd{1, 1, 1, 1}), 0.0); // two points
}

TEST(Iou, SymmetricAndAgreesWithRaster) {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
        auto box = [&] {
            const double w = 0.05 + 0.6 * u(gen), h = 0.05 + 0.6 * u(gen);
            const double x = u(gen) * (1 - w), y = u(gen) * (1 - h);
            return CornerBoxd{x, y, x + w, y + h};
        };
        const auto a = box(), b = box();
        const double v = iou(a, b);
        EXPECT_DOUBLE_EQ(v, iou(b, a));
        const double r = oracle::raster_iou({a.x1, a.y1, a.x2, a.y2}, {b.x1, b.y1, b.x2, b.y2});
        worst = std::max(worst, std::abs(v - r));
    }
    EXPECT_LT(worst, 3e-3);
}

TEST(Enclosure, DiagonalOfDisjointPair) {
    const auto a = CenterBoxd{0.25, 0.25, 0.1, 0.1};
    const auto b = CenterBoxd{0.75, 0.75, 0.1, 0.1};
    EXPECT_NEAR(enclosing_diagonal_sq(a, b), 0.72, 1e-12);
}

TEST(Ciou, DisjointEqualAspect) {
    const auto r = ciou_loss(CenterBoxd{0.25, 0.25, 0.1, 0.1}, CenterBoxd{0.75, 0.75, 0.1, 0.1});
    EXPECT_NEAR(r.s, 1.0, 1e-12);
    EXPECT_NEAR(r.d, 0.5 / 0.72, 1e-9);
    EXPECT_NEAR(r.v, 0.0, 1e-15);
    EXPECT_NEAR(r.total, 1.694444444, 1e-6);
    EXPECT_NEAR(diou_loss(CenterBoxd{0.25, 0.25, 0.1, 0.1}, CenterBoxd{0.75, 0.75, 0.1, 0.1}), r.total, 1e-12);
}

TEST(Ciou, IdenticalBoxesGiveZero) {
    const auto r = ciou_loss(CenterBoxd{0.4, 0.6, 0.2, 0.3}, CenterBoxd{0.4, 0.6, 0.2, 0.3});
    EXPECT_NEAR(r.total, 0.0, 1e-12);
}

TEST(Ciou, SameCenterDifferentAspect) {
    const auto r = ciou_loss(CenterBoxd{0.5, 0.5, 0.2, 0.2}, CenterBoxd{0.5, 0.5, 0.4, 0.2});
    EXPECT_DOUBLE_EQ(r.d, 0.0);
    EXPECT_GT(r.v, 0.0);
    // Hand value: IoU = 0.5, delta = atan(2) - atan(1).
    const double delta = std::atan(2.0) - std::atan(1.0);
    const double v_raw = 4.0 / (std::numbers::pi * std::numbers::pi) * delta * delta;
    const double alpha = v_raw / (0.5 + v_raw);
    EXPECT_NEAR(r.iou, 0.5, 1e-12);
    EXPECT_NEAR(r.v, alpha * v_raw, 1e-12);
}

TEST(Ciou, DegenerateGroundTruthRejected) {
    EXPECT_THROW(ciou_loss(CenterBoxd{0.5, 0.5, 0.2, 0.2}, CenterBoxd{0.5, 0.5, 0.0, 0.2}), InvalidTarget);
}

TEST(Ciou, DegeneratePredictionStaysFinite) {
    const auto r = ciou_loss(CenterBoxd{0.5, 0.5, 0.0, -0.1}, CenterBoxd{0.5, 0.5, 0.2, 0.2});
    EXPECT_TRUE(std::isfinite(r.total));
    const auto g = ciou_grad(CenterBoxd{0.5, 0.5, 0.0, -0.1}, CenterBoxd{0.5, 0.5, 0.2, 0.2});
    EXPECT_EQ(g[2], 0.0);
    EXPECT_EQ(g[3], 0.0);
}

TEST(Ciou, TranslationInvariant) {
    const CenterBoxd p{0.3, 0.35, 0.2, 0.1}, g{0.4, 0.3, 0.15, 0.25};
    const double base = ciou_loss(p, g).total;
    for (double t : {0.05, 0.1, -0.2}) {
        const CenterBoxd p2{p.cx + t, p.cy - t, p.w, p.h}, g2{g.cx + t, g.cy - t, g.w, g.h};
        EXPECT_NEAR(ciou_loss(p2, g2).total, base, 1e-12);
    }
}

TEST(Ciou, GradientMatchesCentralDifferences) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const CenterBoxd p{0.2 + 0.6 * u(gen), 0.2 + 0.6 * u(gen), 0.05 + 0.4 * u(gen), 0.05 + 0.4 * u(gen)};
        const CenterBoxd g{0.2 + 0.6 * u(gen), 0.2 + 0.6 * u(gen), 0.05 + 0.4 * u(gen), 0.05 + 0.4 * u(gen)};
        CiouOptions frozen;
        frozen.alpha = ciou_loss(p, g).alpha;
        const auto analytic = ciou_grad(p, g);
        const auto numeric = oracle::central_diff(
            [&](const std::vector<double>& x) {
                return ciou_loss(CenterBoxd{x[0], x[1], x[2], x[3]}, g, frozen).total;
            },
            {p.cx, p.cy, p.w, p.h});
        EXPECT_LE(oracle::max_rel_error({analytic.begin(), analytic.end()}, numeric), 1e-4) << "trial " << i;
    }
}

TEST(Ciou, UnsquaredAspectVariant) {
    CiouOptions o;
    o.v_unsquared = true;
    const CenterBoxd p{0.5, 0.5, 0.2, 0.2}, g{0.5, 0.5, 0.4, 0.2};
    const auto sq = ciou_loss(p, g);
    const auto un = ciou_loss(p, g, o);
    const double delta = std::atan(2.0) - std::atan(1.0);
    EXPECT_NEAR(un.v, sq.alpha * 4.0 / (std::numbers::pi * std::numbers::pi) * std::abs(delta), 1e-12);
}

TEST(SmoothL1, Branches) {
    const CenterBoxd g{0.5, 0.5, 0.2, 0.2};
    EXPECT_DOUBLE_EQ(smooth_l1(CenterBoxd{1.0, 0.5, 0.2, 0.2}, g).value, 0.125);
    EXPECT_DOUBLE_EQ(smooth_l1(CenterBoxd{2.5, 0.5, 0.2, 0.2}, g).value, 1.5);
    EXPECT_DOUBLE_EQ(smooth_l1(g, g).value, 0.0);
    EXPECT_DOUBLE_EQ(smooth_l1(CenterBoxd{2.5, 0.5, 0.2, 0.2}, g).grad[0], 1.0);
    EXPECT_DOUBLE_EQ(smooth_l1(CenterBoxd{1.0, 0.5, 0.2, 0.2}, g).grad[0], 0.5);
}

TEST(PointInBox, InclusiveEdges) {
    const CornerBoxd b{0, 0, 10, 10};
    EXPECT_TRUE(point_in_box(10.0, 5.0, b));
    EXPECT_TRUE(point_in_box(0.0, 0.0, b));
    EXPECT_FALSE(point_in_box(10.0001, 5.0, b));
}
