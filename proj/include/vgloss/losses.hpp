// SPDX-License-Identifier: Apache-2.0
//
// Grounding losses over proposal distributions and refinement losses over
// regressed boxes, with gradients with respect to grounding logits and refined
// box parameters.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vgloss/errors.hpp"
#include "vgloss/geometry.hpp"
#include "vgloss/table.hpp"
#include "vgloss/targets.hpp"

namespace vgloss {

enum class GroundingKind { ce, kl, kl_sem };
enum class RefinementKind { smooth_l1, ciou_sem };

inline std::string_view to_string(GroundingKind g) {
    switch (g) {
    case GroundingKind::ce: return "ce";
    case GroundingKind::kl: return "kl";
    case GroundingKind::kl_sem: return "klsem";
    }
    return "?";
}

inline std::string_view to_string(RefinementKind r) {
    switch (r) {
    case RefinementKind::smooth_l1: return "smoothl1";
    case RefinementKind::ciou_sem: return "ciousem";
    }
    return "?";
}

inline GroundingKind parse_grounding_kind(std::string_view s) {
    if (s == "ce") return GroundingKind::ce;
    if (s == "kl") return GroundingKind::kl;
    if (s == "klsem") return GroundingKind::kl_sem;
    throw InvalidInput("unknown grounding loss '" + std::string(s) + "'");
}

inline RefinementKind parse_refinement_kind(std::string_view s) {
    if (s == "smoothl1") return RefinementKind::smooth_l1;
    if (s == "ciousem") return RefinementKind::ciou_sem;
    throw InvalidInput("unknown refinement loss '" + std::string(s) + "'");
}

struct LossConfig {
    GroundingKind grounding = GroundingKind::kl_sem;
    RefinementKind refinement = RefinementKind::ciou_sem;
    double eta = 0.3;
    double lambda = 1.0;
    double eps = 1e-8;    // refinement-weight denominator guard
    double eps_kl = 1e-8; // floor on target probabilities inside the log
    CiouOptions ciou;

    void validate() const {
        if (!(eta >= 0.0 && eta <= 1.0))
            throw InvalidInput("LossConfig: eta must lie in [0, 1]");
        if (!(lambda >= 0.0))
            throw InvalidInput("LossConfig: lambda must be nonnegative");
        if (!(eps > 0.0) || !(eps_kl > 0.0))
            throw InvalidInput("LossConfig: eps and eps_kl must be positive");
    }
};

struct GroundingPart {
    double value = 0.0;
    Matrix grad_logits; // m x k
};

struct RefinementPart {
    double value = 0.0;
    Table<BoxGrad<double>> grad_boxes; // m x k, zero outside the refined pairs
    Matrix alphas;                     // CIoU trade-off weight per (query, proposal); 0 if unused
};

struct LossOutput {
    double grounding_value = 0.0;
    double refinement_value = 0.0;
    double total = 0.0;
    Matrix grad_logits;
    Table<BoxGrad<double>> grad_boxes; // already scaled by lambda
};

/// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty())
        return {};
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& x : p)
        x /= sum;
    return p;
}

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto row = softmax(logits.row(r));
        std::copy(row.begin(), row.end(), p.row(r).begin());
    }
    return p;
}

namespace detail {

// Chain dL/dP through the softmax of each row: g_logit = P * (g - <P, g>).
inline void softmax_backward_row(std::span<const double> p, std::span<double> g) {
    double dot = 0.0;
    for (std::size_t z = 0; z < p.size(); ++z)
        dot += p[z] * g[z];
    for (std::size_t z = 0; z < p.size(); ++z)
        g[z] = p[z] * (g[z] - dot);
}

} // namespace detail

/// (1/m) sum_j KL(P_j || T_j), T floored at eps_kl inside the log. Gradient is with
/// respect to the logits that produced P.
inline GroundingPart kl_grounding_loss(const Matrix& probs, const Matrix& targets, double eps_kl = 1e-8) {
    if (!probs.same_shape(targets) || probs.rows() == 0)
        throw InvalidInput("kl_grounding_loss: prediction and target shapes differ");
    const std::size_t m = probs.rows();
    const std::size_t k = probs.cols();
    const double inv_m = 1.0 / static_cast<double>(m);
    GroundingPart out{0.0, Matrix(m, k)};
    for (std::size_t j = 0; j < m; ++j) {
        auto g = out.grad_logits.row(j);
        for (std::size_t z = 0; z < k; ++z) {
            const double p = probs(j, z);
            const double log_t = std::log(std::max(targets(j, z), eps_kl));
            const double log_p = p > 0.0 ? std::log(p) : 0.0;
            if (p > 0.0)
                out.value += inv_m * p * (log_p - log_t);
            // The +1 of d(p log p)/dp vanishes through the softmax.
            g[z] = inv_m * (log_p - log_t);
        }
        detail::softmax_backward_row(probs.row(j), g);
    }
    return out;
}

/// -(1/m) sum_j log P_j[j*_j] with the standard softmax cross-entropy gradient.
inline GroundingPart ce_grounding_loss(const Matrix& probs, std::span<const std::size_t> j_stars,
                                       double eps_kl = 1e-8) {
    if (probs.rows() == 0 || j_stars.size() != probs.rows())
        throw InvalidInput("ce_grounding_loss: one target index per query required");
    const std::size_t m = probs.rows();
    const std::size_t k = probs.cols();
    const double inv_m = 1.0 / static_cast<double>(m);
    GroundingPart out{0.0, Matrix(m, k)};
    for (std::size_t j = 0; j < m; ++j) {
        if (j_stars[j] >= k)
            throw InvalidInput("ce_grounding_loss: target index " + std::to_string(j_stars[j]) +
                               " out of range");
        out.value -= inv_m * std::log(std::max(probs(j, j_stars[j]), eps_kl));
        for (std::size_t z = 0; z < k; ++z)
            out.grad_logits(j, z) = inv_m * (probs(j, z) - (z == j_stars[j] ? 1.0 : 0.0));
    }
    return out;
}

/// (1/m) sum_j sum_{z in S_j} U^_jz * CIoU(refined_jz, gt_j).
/// frozen_alphas, when given (m x k), replaces the computed CIoU trade-off weights.
inline RefinementPart ciou_sem_refinement_loss(const Table<CenterBoxd>& refined,
                                               std::span<const CenterBoxd> gts,
                                               std::span<const TargetBundle> bundles,
                                               const CiouOptions& opt = {},
                                               const Matrix* frozen_alphas = nullptr) {
    const std::size_t m = refined.rows();
    const std::size_t k = refined.cols();
    if (m == 0 || gts.size() != m || bundles.size() != m)
        throw InvalidInput("ciou_sem_refinement_loss: one ground truth and bundle per query required");
    if (frozen_alphas && (frozen_alphas->rows() != m || frozen_alphas->cols() != k))
        throw InvalidInput("ciou_sem_refinement_loss: frozen alpha table has the wrong shape");
    const double inv_m = 1.0 / static_cast<double>(m);
    RefinementPart out{0.0, Table<BoxGrad<double>>(m, k, BoxGrad<double>{}), Matrix(m, k)};
    for (std::size_t j = 0; j < m; ++j) {
        const auto& b = bundles[j];
        if (b.u_hat_row.size() != k)
            throw InvalidInput("ciou_sem_refinement_loss: bundle width does not match proposals");
        for (std::size_t z : b.support) {
            CiouOptions o = opt;
            if (frozen_alphas)
                o.alpha = (*frozen_alphas)(j, z);
            const auto e = detail::ciou_eval(refined(j, z), gts[j], o);
            const double w = b.u_hat_row[z] * inv_m;
            out.value += w * e.parts.total;
            out.alphas(j, z) = e.parts.alpha;
            for (int i = 0; i < 4; ++i)
                out.grad_boxes(j, z)[i] = w * e.grad[i];
        }
    }
    return out;
}

/// (1/m) sum_j SmoothL1(refined_{j, j*_j}, gt_j); only the best proposal is refined.
inline RefinementPart smooth_l1_refinement_loss(const Table<CenterBoxd>& refined,
                                                std::span<const CenterBoxd> gts,
                                                std::span<const std::size_t> j_stars) {
    const std::size_t m = refined.rows();
    const std::size_t k = refined.cols();
    if (m == 0 || gts.size() != m || j_stars.size() != m)
        throw InvalidInput("smooth_l1_refinement_loss: one ground truth and index per query required");
    const double inv_m = 1.0 / static_cast<double>(m);
    RefinementPart out{0.0, Table<BoxGrad<double>>(m, k, BoxGrad<double>{}), Matrix(m, k)};
    for (std::size_t j = 0; j < m; ++j) {
        const std::size_t z = j_stars[j];
        if (z >= k)
            throw InvalidInput("smooth_l1_refinement_loss: best index out of range");
        const auto r = smooth_l1(refined(j, z), gts[j]);
        out.value += inv_m * r.value;
        for (int i = 0; i < 4; ++i)
            out.grad_boxes(j, z)[i] = inv_m * r.grad[i];
    }
    return out;
}

/// L = L_g + lambda * L_c.
inline LossOutput total_loss(const LossConfig& config, GroundingPart grounding, RefinementPart refinement) {
    LossOutput out;
    out.grounding_value = grounding.value;
    out.refinement_value = refinement.value;
    out.total = grounding.value + config.lambda * refinement.value;
    out.grad_logits = std::move(grounding.grad_logits);
    out.grad_boxes = std::move(refinement.grad_boxes);
    for (auto& g : out.grad_boxes.values())
        for (double& x : g)
            x *= config.lambda;
    return out;
}

} // namespace vgloss
