// SPDX-License-Identifier: Apache-2.0
//
// Per-query supervision: IoU scores against every proposal, the best proposal,
// class-similarity masking and the derived grounding target and refinement weights.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "vgloss/errors.hpp"
#include "vgloss/geometry.hpp"
#include "vgloss/table.hpp"

namespace vgloss {

/// Class probabilities of one proposal.
using ClassDistribution = std::vector<double>;

inline bool is_class_distribution(std::span<const double> p, double tol = 1e-6) {
    if (p.empty())
        return false;
    double sum = 0.0;
    for (double x : p) {
        if (!(x >= 0.0) || !std::isfinite(x))
            return false;
        sum += x;
    }
    return std::abs(sum - 1.0) <= tol;
}

struct TargetBundle {
    std::vector<double> u_row;        // IoU with every proposal
    std::size_t j_star = 0;           // best proposal
    std::vector<double> c_row;        // class similarity to the best proposal
    std::vector<double> u_star_row;   // thresholded, similarity-weighted IoU
    std::vector<double> p_target_row; // grounding target distribution
    std::vector<std::size_t> support; // proposals with u_star > 0
    std::vector<double> u_hat_row;    // refinement weights
    bool fallback_used = false;       // no proposal reached the threshold
};

/// U[j][z] = iou(gt_j, proposal_z).
inline Matrix iou_matrix(std::span<const CornerBoxd> gt_boxes, std::span<const CornerBoxd> proposals) {
    if (gt_boxes.empty() || proposals.empty())
        throw InvalidInput("iou_matrix: need at least one ground truth and one proposal");
    Matrix u(gt_boxes.size(), proposals.size());
    for (std::size_t j = 0; j < gt_boxes.size(); ++j)
        for (std::size_t z = 0; z < proposals.size(); ++z)
            u(j, z) = iou(gt_boxes[j], proposals[z]);
    return u;
}

/// Argmax, lowest index on ties.
inline std::size_t best_proposal(std::span<const double> u_row) {
    if (u_row.empty())
        throw InvalidInput("best_proposal: empty row");
    std::size_t best = 0;
    for (std::size_t z = 1; z < u_row.size(); ++z)
        if (u_row[z] > u_row[best])
            best = z;
    return best;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw InvalidInput("cosine_similarity: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (!(na > 0.0) || !(nb > 0.0))
        throw InvalidInput("cosine_similarity: zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Build the bundle from an IoU row and an explicit similarity row.
inline TargetBundle build_target_from_similarity(std::span<const double> u_row,
                                                 std::span<const double> c_row, double eta,
                                                 double eps) {
    if (u_row.empty() || u_row.size() != c_row.size())
        throw InvalidInput("build_target: IoU and similarity rows must be nonempty and equal length");
    if (!(eta >= 0.0 && eta <= 1.0))
        throw InvalidInput("build_target: eta must lie in [0, 1]");
    if (!(eps > 0.0))
        throw InvalidInput("build_target: eps must be positive");

    const std::size_t k = u_row.size();
    TargetBundle t;
    t.u_row.assign(u_row.begin(), u_row.end());
    t.c_row.assign(c_row.begin(), c_row.end());
    t.j_star = best_proposal(u_row);

    t.u_star_row.assign(k, 0.0);
    for (std::size_t z = 0; z < k; ++z)
        if (u_row[z] >= eta)
            t.u_star_row[z] = u_row[z] * c_row[z];

    const double sum = std::accumulate(t.u_star_row.begin(), t.u_star_row.end(), 0.0);
    t.p_target_row.assign(k, 0.0);
    if (sum > 0.0) {
        for (std::size_t z = 0; z < k; ++z)
            t.p_target_row[z] = t.u_star_row[z] / sum;
    } else {
        t.p_target_row[t.j_star] = 1.0;
        t.fallback_used = true;
    }

    const double max_star = *std::max_element(t.u_star_row.begin(), t.u_star_row.end());
    t.u_hat_row.resize(k);
    for (std::size_t z = 0; z < k; ++z) {
        t.u_hat_row[z] = t.u_star_row[z] / (max_star + eps);
        if (t.u_star_row[z] > 0.0)
            t.support.push_back(z);
    }
    return t;
}

/// Build the bundle for one query: similarity is taken between the best proposal's
/// class distribution and every other proposal's.
inline TargetBundle build_target(std::span<const double> u_row,
                                 std::span<const ClassDistribution> class_probs, double eta,
                                 double eps) {
    if (u_row.size() != class_probs.size())
        throw InvalidInput("build_target: one class distribution per proposal required");
    if (u_row.empty())
        throw InvalidInput("build_target: no proposals");
    const std::size_t best = best_proposal(u_row);
    std::vector<double> c_row(u_row.size());
    for (std::size_t z = 0; z < u_row.size(); ++z)
        c_row[z] = z == best ? 1.0 : cosine_similarity(class_probs[best], class_probs[z]);
    return build_target_from_similarity(u_row, c_row, eta, eps);
}

/// Same thresholding and normalization with all similarities equal to 1.
inline TargetBundle build_plain_target(std::span<const double> u_row, double eta, double eps) {
    const std::vector<double> ones(u_row.size(), 1.0);
    return build_target_from_similarity(u_row, ones, eta, eps);
}

} // namespace vgloss
