// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vgloss/losses.hpp"

using namespace vgloss;

namespace {

Matrix row_matrix(std::initializer_list<std::vector<double>> rows) {
    const std::size_t cols = rows.begin()->size();
    Matrix m(rows.size(), cols);
    std::size_t r = 0;
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < cols; ++c)
            m(r, c) = row[c];
        ++r;
    }
    return m;
}

TargetBundle bundle_with(std::vector<std::size_t> support, std::vector<double> u_hat) {
    TargetBundle b;
    b.support = std::move(support);
    b.u_hat_row = std::move(u_hat);
    return b;
}

} // namespace

TEST(Softmax, HandValueAndStability) {
    const auto p = softmax(std::vector<double>{0.0, std::log(3.0)});
    EXPECT_NEAR(p[0], 0.25, 1e-12);
    EXPECT_NEAR(p[1], 0.75, 1e-12);
    const auto big = softmax(std::vector<double>{1000.0, 1000.0, -1000.0});
    EXPECT_NEAR(big[0], 0.5, 1e-12);
    EXPECT_EQ(big[2], 0.0);
}

TEST(KlGrounding, HandValue) {
    const auto r = kl_grounding_loss(row_matrix({{0.5, 0.5}}), row_matrix({{0.75, 0.25}}));
    EXPECT_NEAR(r.value, 0.143841, 1e-6);
}

TEST(KlGrounding, ZeroWhenPredictionMatchesTarget) {
    const auto r = kl_grounding_loss(row_matrix({{0.2, 0.3, 0.5}}), row_matrix({{0.2, 0.3, 0.5}}));
    EXPECT_NEAR(r.value, 0.0, 1e-12);
    for (double g : r.grad_logits.values())
        EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(KlGrounding, GradientThroughSoftmax) {
    std::mt19937_64 gen(9);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 2, k = 5;
        std::vector<double> logits(m * k);
        for (double& x : logits)
            x = n(gen);
        Matrix target(m, k);
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0;
            for (std::size_t z = 0; z < k; ++z)
                s += (target(j, z) = z == 1 ? 0.0 : u(gen));
            for (std::size_t z = 0; z < k; ++z)
                target(j, z) /= s;
        }
        auto loss_of = [&](const std::vector<double>& x) {
            Matrix lg(m, k, x);
            return kl_grounding_loss(softmax_rows(lg), target).value;
        };
        const auto analytic = kl_grounding_loss(softmax_rows(Matrix(m, k, logits)), target).grad_logits.values();
        const auto numeric = oracle::central_diff(loss_of, logits);
        EXPECT_LE(oracle::max_rel_error(analytic, numeric), 1e-5) << "trial " << trial;
        for (std::size_t j = 0; j < m; ++j) {
            double row = 0;
            for (std::size_t z = 0; z < k; ++z)
                row += analytic[j * k + z];
            EXPECT_NEAR(row, 0.0, 1e-12);
        }
    }
}

TEST(CeGrounding, UniformRow) {
    const std::vector<std::size_t> jstar{2};
    const auto r = ce_grounding_loss(row_matrix({{0.25, 0.25, 0.25, 0.25}}), jstar);
    EXPECT_NEAR(r.value, std::log(4.0), 1e-9);
    const std::vector<double> want{0.25, 0.25, -0.75, 0.25};
    for (std::size_t z = 0; z < 4; ++z)
        EXPECT_NEAR(r.grad_logits(0, z), want[z], 1e-12);
}

TEST(CeGrounding, GradientScaledByQueryCount) {
    const std::vector<std::size_t> jstar{2, 0};
    const auto r = ce_grounding_loss(row_matrix({{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}}), jstar);
    EXPECT_NEAR(r.value, std::log(4.0), 1e-9);
    EXPECT_NEAR(r.grad_logits(0, 2), -0.375, 1e-12);
    EXPECT_NEAR(r.grad_logits(1, 0), -0.375, 1e-12);
    EXPECT_NEAR(r.grad_logits(1, 3), 0.125, 1e-12);
}

TEST(CiouSemRefinement, WeightedSumOverSupport) {
    // Totals 0.2 and 0.4 are realized by two same-centre square pairs; check the weighting.
    const CenterBoxd gt{0.5, 0.5, 0.2, 0.2};
    Table<CenterBoxd> refined(1, 3, gt);
    refined(0, 0) = CenterBoxd{0.5, 0.5, 0.2 * std::sqrt(0.8), 0.2 * std::sqrt(0.8)}; // IoU 0.8
    refined(0, 1) = CenterBoxd{0.5, 0.5, 0.2 * std::sqrt(0.6), 0.2 * std::sqrt(0.6)}; // IoU 0.6
    refined(0, 2) = CenterBoxd{0.1, 0.1, 0.05, 0.4};
    const std::vector<CenterBoxd> gts{gt};
    const std::vector<TargetBundle> bundles{bundle_with({0, 1}, {1.0, 0.5, 0.0})};
    const auto r = ciou_sem_refinement_loss(refined, gts, bundles);
    EXPECT_NEAR(r.value, 0.2 + 0.5 * 0.4, 1e-9);
    for (double g : r.grad_boxes(0, 2))
        EXPECT_EQ(g, 0.0);
}

TEST(CiouSemRefinement, ZeroWhenSupportedBoxesMatch) {
    const CenterBoxd gt{0.4, 0.5, 0.3, 0.2};
    Table<CenterBoxd> refined(1, 2, gt);
    const std::vector<CenterBoxd> gts{gt};
    const std::vector<TargetBundle> bundles{bundle_with({0, 1}, {1.0, 0.7})};
    EXPECT_NEAR(ciou_sem_refinement_loss(refined, gts, bundles).value, 0.0, 1e-12);
}

TEST(CiouSemRefinement, DegenerateGroundTruth) {
    Table<CenterBoxd> refined(1, 1, CenterBoxd{0.5, 0.5, 0.1, 0.1});
    const std::vector<CenterBoxd> gts{{0.5, 0.5, 0.0, 0.1}};
    const std::vector<TargetBundle> bundles{bundle_with({0}, {1.0})};
    EXPECT_THROW(ciou_sem_refinement_loss(refined, gts, bundles), InvalidTarget);
}

TEST(SmoothL1Refinement, OnlyBestProposal) {
    const CenterBoxd gt{0.5, 0.5, 0.2, 0.2};
    Table<CenterBoxd> refined(2, 3, CenterBoxd{0.9, 0.1, 0.3, 0.3});
    refined(0, 1) = CenterBoxd{1.0, 0.5, 0.2, 0.2};
    refined(1, 0) = gt;
    const std::vector<CenterBoxd> gts{gt, gt};
    const std::vector<std::size_t> jstar{1, 0};
    const auto r = smooth_l1_refinement_loss(refined, gts, jstar);
    EXPECT_NEAR(r.value, 0.125 / 2.0, 1e-12);
    for (std::size_t z : {0u, 2u})
        for (double g : r.grad_boxes(0, z))
            EXPECT_EQ(g, 0.0);
    EXPECT_NEAR(r.grad_boxes(0, 1)[0], 0.25, 1e-12);
}

TEST(TotalLoss, LambdaWeighting) {
    LossConfig cfg;
    cfg.lambda = 1.4;
    GroundingPart g{0.14, Matrix(1, 1)};
    RefinementPart r{0.4, Table<BoxGrad<double>>(1, 1, BoxGrad<double>{1, 2, 3, 4}), Matrix(1, 1)};
    const auto out = total_loss(cfg, g, r);
    EXPECT_NEAR(out.total, 0.70, 1e-12);
    EXPECT_NEAR(out.grad_boxes(0, 0)[3], 5.6, 1e-12);

    cfg.lambda = 0.0;
    const auto zero = total_loss(cfg, GroundingPart{0.3, Matrix(1, 1)}, r);
    EXPECT_DOUBLE_EQ(zero.total, 0.3);
    EXPECT_EQ(zero.grad_boxes(0, 0)[0], 0.0);
}

TEST(LossConfig, NamesRoundTrip) {
    for (auto g : {GroundingKind::ce, GroundingKind::kl, GroundingKind::kl_sem})
        EXPECT_EQ(parse_grounding_kind(to_string(g)), g);
    for (auto r : {RefinementKind::smooth_l1, RefinementKind::ciou_sem})
        EXPECT_EQ(parse_refinement_kind(to_string(r)), r);
    EXPECT_THROW(parse_grounding_kind("mse"), InvalidInput);
}
