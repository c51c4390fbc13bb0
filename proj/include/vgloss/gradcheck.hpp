// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks of every analytic gradient in the library.
// CIoU gradients hold the trade-off weight alpha constant, so the numeric side
// evaluates the loss with alpha frozen at the unperturbed point.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vgloss/geometry.hpp"
#include "vgloss/losses.hpp"
#include "vgloss/model.hpp"
#include "vgloss/optim.hpp"
#include "vgloss/rng.hpp"
#include "vgloss/targets.hpp"
#include "vgloss/trainer.hpp"

namespace vgloss {

struct GradcheckOptions {
    std::uint64_t seed = 7;
    std::size_t trials = 100;
    double step = 1e-5;
    double tolerance = 1e-4;
};

struct SuiteResult {
    std::string name;
    std::size_t trials = 0;
    double max_rel_error = 0.0;
    bool passed = true;
};

/// ||a - n||_inf / max(||a||_inf, ||n||_inf, 1e-8)
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
    double diff = 0.0, scale = 1e-8;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return diff / scale;
}

/// Central differences of f at x.
inline std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                            std::vector<double> x, double step) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double fp = f(x);
        x[i] = orig - step;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

namespace detail {

inline CenterBoxd random_center_box(Rng& rng) {
    return {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)};
}

inline std::vector<double> random_distribution(Rng& rng, std::size_t n) {
    std::vector<double> logits(n);
    for (double& x : logits)
        x = 2.0 * rng.normal();
    return softmax(logits);
}

inline SuiteResult suite_ciou(const GradcheckOptions& o) {
    SuiteResult r{"ciou"};
    Rng rng(splitmix64(o.seed ^ 0xc1ULL));
    for (std::size_t t = 0; t < o.trials; ++t) {
        const auto pred = random_center_box(rng);
        const auto gt = random_center_box(rng);
        CiouOptions opt;
        opt.alpha = ciou_loss(pred, gt).alpha;
        const auto analytic = ciou_grad(pred, gt);
        const auto numeric = numeric_gradient(
            [&](std::span<const double> x) {
                return ciou_loss(CenterBoxd{x[0], x[1], x[2], x[3]}, gt, opt).total;
            },
            {pred.cx, pred.cy, pred.w, pred.h}, o.step);
        r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
        ++r.trials;
    }
    return r;
}

inline SuiteResult suite_smooth_l1(const GradcheckOptions& o) {
    SuiteResult r{"smooth_l1"};
    Rng rng(splitmix64(o.seed ^ 0x51ULL));
    auto coord = [&] {
        // Stay clear of the |x| = 1 kink by more than the step.
        double d;
        do {
            d = rng.uniform(-2.5, 2.5);
        } while (std::abs(std::abs(d) - 1.0) < 1e-3);
        return d;
    };
    for (std::size_t t = 0; t < o.trials; ++t) {
        const auto gt = random_center_box(rng);
        const CenterBoxd pred{gt.cx + coord(), gt.cy + coord(), gt.w + coord(), gt.h + coord()};
        const auto analytic = smooth_l1(pred, gt).grad;
        const auto numeric = numeric_gradient(
            [&](std::span<const double> x) { return smooth_l1(CenterBoxd{x[0], x[1], x[2], x[3]}, gt).value; },
            {pred.cx, pred.cy, pred.w, pred.h}, o.step);
        r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
        ++r.trials;
    }
    return r;
}

// Gradient through softmax of a grounding loss given as a function of probabilities.
inline double logits_check(Rng& rng, std::size_t m, std::size_t k, double step,
                           const std::function<GroundingPart(const Matrix&)>& loss) {
    Matrix logits(m, k);
    for (double& x : logits.values())
        x = 2.0 * rng.normal();
    const auto analytic = loss(softmax_rows(logits)).grad_logits;
    const auto numeric = numeric_gradient(
        [&](std::span<const double> x) {
            return loss(softmax_rows(Matrix(m, k, std::vector<double>(x.begin(), x.end())))).value;
        },
        logits.values(), step);
    return relative_error(analytic.values(), numeric);
}

inline SuiteResult suite_kl(const GradcheckOptions& o) {
    SuiteResult r{"kl"};
    Rng rng(splitmix64(o.seed ^ 0x6bULL));
    for (std::size_t t = 0; t < o.trials; ++t) {
        const std::size_t m = 1 + rng.index(3), k = 2 + rng.index(6);
        Matrix target(m, k);
        for (std::size_t j = 0; j < m; ++j) {
            auto row = random_distribution(rng, k);
            row[rng.index(k)] = 0.0; // exercise the eps_kl floor
            double s = 0.0;
            for (double x : row)
                s += x;
            for (std::size_t z = 0; z < k; ++z)
                target(j, z) = row[z] / s;
        }
        const double e = logits_check(rng, m, k, o.step,
                                      [&](const Matrix& p) { return kl_grounding_loss(p, target); });
        r.max_rel_error = std::max(r.max_rel_error, e);
        ++r.trials;
    }
    return r;
}

inline SuiteResult suite_kl_sem(const GradcheckOptions& o) {
    SuiteResult r{"kl_sem"};
    Rng rng(splitmix64(o.seed ^ 0x5eULL));
    for (std::size_t t = 0; t < o.trials; ++t) {
        const std::size_t m = 1 + rng.index(3), k = 2 + rng.index(6), classes = 5;
        std::vector<CornerBoxd> props, gts;
        std::vector<ClassDistribution> probs;
        for (std::size_t z = 0; z < k; ++z) {
            props.push_back(center_to_corners(random_center_box(rng)));
            probs.push_back(random_distribution(rng, classes));
        }
        for (std::size_t j = 0; j < m; ++j)
            gts.push_back(center_to_corners(random_center_box(rng)));
        const Matrix u = iou_matrix(gts, props);
        Matrix target(m, k);
        for (std::size_t j = 0; j < m; ++j) {
            const auto b = build_target(u.row(j), probs, 0.3, 1e-8);
            std::copy(b.p_target_row.begin(), b.p_target_row.end(), target.row(j).begin());
        }
        const double e = logits_check(rng, m, k, o.step,
                                      [&](const Matrix& p) { return kl_grounding_loss(p, target); });
        r.max_rel_error = std::max(r.max_rel_error, e);
        ++r.trials;
    }
    return r;
}

inline SuiteResult suite_ce(const GradcheckOptions& o) {
    SuiteResult r{"ce"};
    Rng rng(splitmix64(o.seed ^ 0xceULL));
    for (std::size_t t = 0; t < o.trials; ++t) {
        const std::size_t m = 1 + rng.index(3), k = 2 + rng.index(6);
        std::vector<std::size_t> stars(m);
        for (auto& s : stars)
            s = rng.index(k);
        const double e = logits_check(rng, m, k, o.step,
                                      [&](const Matrix& p) { return ce_grounding_loss(p, stars); });
        r.max_rel_error = std::max(r.max_rel_error, e);
        ++r.trials;
    }
    return r;
}

inline SuiteResult suite_ciou_sem(const GradcheckOptions& o) {
    SuiteResult r{"ciou_sem"};
    Rng rng(splitmix64(o.seed ^ 0xc5ULL));
    for (std::size_t t = 0; t < o.trials; ++t) {
        const std::size_t m = 1 + rng.index(3), k = 2 + rng.index(5);
        Table<CenterBoxd> refined(m, k);
        for (auto& b : refined.values())
            b = random_center_box(rng);
        std::vector<CenterBoxd> gts;
        std::vector<TargetBundle> bundles;
        for (std::size_t j = 0; j < m; ++j) {
            gts.push_back(random_center_box(rng));
            std::vector<double> u(k), c(k);
            for (std::size_t z = 0; z < k; ++z) {
                u[z] = rng.uniform();
                c[z] = rng.uniform();
            }
            c[best_proposal(u)] = 1.0;
            bundles.push_back(build_target_from_similarity(u, c, 0.3, 1e-8));
        }
        const auto base = ciou_sem_refinement_loss(refined, gts, bundles);
        std::vector<double> analytic, x0;
        for (std::size_t i = 0; i < refined.size(); ++i) {
            const auto& b = refined.values()[i];
            x0.insert(x0.end(), {b.cx, b.cy, b.w, b.h});
            const auto& g = base.grad_boxes.values()[i];
            analytic.insert(analytic.end(), g.begin(), g.end());
        }
        const auto numeric = numeric_gradient(
            [&](std::span<const double> x) {
                Table<CenterBoxd> tb(m, k);
                for (std::size_t i = 0; i < tb.size(); ++i)
                    tb.values()[i] = {x[4 * i], x[4 * i + 1], x[4 * i + 2], x[4 * i + 3]};
                return ciou_sem_refinement_loss(tb, gts, bundles, {}, &base.alphas).value;
            },
            x0, o.step);
        r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
        ++r.trials;
    }
    return r;
}

/// Random example for a tiny head: k proposals near a few ground truths.
inline GroundingExample tiny_example(Rng& rng, const HeadConfig& cfg, std::size_t k, std::size_t m) {
    GroundingExample ex;
    ex.image_id = "gradcheck";
    ex.image_w = 100.0;
    ex.image_h = 80.0;
    std::vector<CornerBoxd> gts;
    for (std::size_t j = 0; j < m; ++j) {
        const double w = rng.uniform(20, 50), h = rng.uniform(20, 40);
        const double x = rng.uniform(0, 100 - w), y = rng.uniform(0, 80 - h);
        gts.push_back({x, y, x + w, y + h});
        Query q;
        for (std::size_t i = 0; i < cfg.text_dim; ++i)
            q.text_feat.push_back(rng.normal());
        q.gt_boxes = {gts.back()};
        ex.queries.push_back(std::move(q));
    }
    for (std::size_t z = 0; z < k; ++z) {
        const auto& g = gts[z % m];
        auto jit = [&](double v, double lim) { return std::clamp(v + rng.normal(0.0, 4.0), 0.0, lim); };
        double x1 = jit(g.x1, 100), x2 = jit(g.x2, 100), y1 = jit(g.y1, 80), y2 = jit(g.y2, 80);
        if (x1 > x2)
            std::swap(x1, x2);
        if (y1 > y2)
            std::swap(y1, y2);
        Proposal p;
        p.box = {x1, y1, x2, y2};
        p.class_probs = random_distribution(rng, 4);
        for (std::size_t i = 0; i < cfg.visual_dim; ++i)
            p.visual_feat.push_back(std::abs(rng.normal()));
        ex.proposals.push_back(std::move(p));
    }
    return ex;
}

/// Flattened parameter vector in for_each order, and its inverse.
inline std::vector<double> flatten(const HeadParameters& p) {
    std::vector<double> out;
    p.for_each([&](const char*, const Matrix& m) { out.insert(out.end(), m.values().begin(), m.values().end()); });
    return out;
}

inline HeadParameters unflatten(const HeadConfig& cfg, std::span<const double> x) {
    auto p = HeadParameters::zeros(cfg);
    std::size_t off = 0;
    p.for_each([&](const char*, Matrix& m) {
        std::copy(x.begin() + off, x.begin() + off + m.size(), m.values().begin());
        off += m.size();
    });
    return p;
}

inline SuiteResult suite_head(const GradcheckOptions& o, GroundingKind g, RefinementKind rk) {
    SuiteResult r{std::string("head_") + std::string(to_string(g)) + "_" + std::string(to_string(rk))};
    Rng rng(splitmix64(o.seed ^ (0x4eadULL + static_cast<unsigned>(g) * 7 + static_cast<unsigned>(rk))));
    const HeadConfig cfg{4, 6, 8, 0.01};
    LossConfig lc;
    lc.grounding = g;
    lc.refinement = rk;
    lc.eta = 0.3;
    lc.lambda = 1.0;
    for (std::size_t t = 0; t < o.trials; ++t) {
        const auto ex = tiny_example(rng, cfg, 3, 2);
        auto params = init_head(cfg, rng.index(UINT32_MAX));
        // Nonzero biases so every term is exercised.
        for (double& b : params.b_fuse.values())
            b = 0.1 * rng.normal();
        for (double& b : params.b_box.values())
            b = 0.02 * rng.normal();
        const auto prep = prepare(ex, cfg);
        const auto sup = supervise(prep, lc);
        const auto pass = forward(prep, params);
        const auto loss = example_loss(lc, prep, sup, pass);
        const auto grads = backward(prep, params, pass, loss.out.grad_logits, loss.out.grad_boxes);
        const auto numeric = numeric_gradient(
            [&](std::span<const double> x) {
                return example_loss_value(unflatten(cfg, x), prep, sup, lc, &loss.alphas);
            },
            flatten(params), o.step);
        r.max_rel_error = std::max(r.max_rel_error, relative_error(flatten(grads), numeric));
        ++r.trials;
    }
    return r;
}

} // namespace detail

/// Every suite; each passes when its worst trial is within tolerance.
inline std::vector<SuiteResult> run_gradcheck(const GradcheckOptions& o) {
    std::vector<SuiteResult> out{
        detail::suite_ciou(o),
        detail::suite_smooth_l1(o),
        detail::suite_kl(o),
        detail::suite_kl_sem(o),
        detail::suite_ce(o),
        detail::suite_ciou_sem(o),
        detail::suite_head(o, GroundingKind::kl_sem, RefinementKind::ciou_sem),
        detail::suite_head(o, GroundingKind::ce, RefinementKind::smooth_l1),
        detail::suite_head(o, GroundingKind::kl, RefinementKind::ciou_sem),
    };
    for (auto& s : out)
        s.passed = s.max_rel_error <= o.tolerance;
    return out;
}

} // namespace vgloss
