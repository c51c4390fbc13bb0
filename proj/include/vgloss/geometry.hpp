// SPDX-License-Identifier: Apache-2.0
//
// Axis-aligned box geometry: corner/center conversions, IoU, and the
// Complete-IoU (CIoU) regression loss with its analytic gradient.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <numbers>
#include <optional>
#include <span>

#include "vgloss/errors.hpp"

namespace vgloss {

/// Corner form (x1, y1, x2, y2). All four coordinates share one unit (pixels or
/// normalized image units).
template <std::floating_point T>
struct CornerBox {
    T x1{};
    T y1{};
    T x2{};
    T y2{};

    constexpr T width() const noexcept { return x2 - x1; }
    constexpr T height() const noexcept { return y2 - y1; }
    constexpr T area() const noexcept { return width() * height(); }
    constexpr bool valid() const noexcept { return x1 <= x2 && y1 <= y2; }

    friend constexpr bool operator==(const CornerBox&, const CornerBox&) = default;
};

/// Normalized center-size form (cx, cy, w, h).
template <std::floating_point T>
struct CenterBox {
    T cx{};
    T cy{};
    T w{};
    T h{};

    constexpr bool valid() const noexcept { return w >= T(0) && h >= T(0); }

    friend constexpr bool operator==(const CenterBox&, const CenterBox&) = default;
};

using CornerBoxd = CornerBox<double>;
using CenterBoxd = CenterBox<double>;

/// Gradient with respect to (cx, cy, w, h).
template <std::floating_point T>
using BoxGrad = std::array<T, 4>;

template <std::floating_point T>
struct CiouBreakdown {
    T s{};     // 1 - IoU
    T d{};     // normalized squared center distance
    T v{};     // weighted aspect-ratio term
    T iou{};
    T alpha{};
    T total{}; // s + d + v
};

struct CiouOptions {
    /// Use the arctan difference without squaring it in the aspect term.
    bool v_unsquared = false;
    /// Floor applied to predicted width/height before evaluation.
    double eps_wh = 1e-4;
    /// Added to the squared enclosing diagonal.
    double eps_geo = 1e-10;
    /// When set, replaces the computed trade-off weight. Used to evaluate the loss
    /// with alpha frozen, which is the function ciou_grad differentiates.
    std::optional<double> alpha;
};

template <std::floating_point T>
CenterBox<T> corners_to_center(const CornerBox<T>& b, T image_w, T image_h) {
    if (!(image_w > T(0)) || !(image_h > T(0)))
        throw InvalidInput("corners_to_center: image dimensions must be positive");
    if (!b.valid())
        throw InvalidInput("corners_to_center: box has x1 > x2 or y1 > y2");
    return {(b.x1 + b.x2) / (T(2) * image_w), (b.y1 + b.y2) / (T(2) * image_h),
            (b.x2 - b.x1) / image_w, (b.y2 - b.y1) / image_h};
}

template <std::floating_point T>
constexpr CornerBox<T> center_to_corners(const CenterBox<T>& b) noexcept {
    return {b.cx - b.w / T(2), b.cy - b.h / T(2), b.cx + b.w / T(2), b.cy + b.h / T(2)};
}

/// Rescale a normalized corner box to pixels.
template <std::floating_point T>
constexpr CornerBox<T> scale_box(const CornerBox<T>& b, T sx, T sy) noexcept {
    return {b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy};
}

/// Jaccard index. Two zero-area boxes give 0.
template <std::floating_point T>
T iou(const CornerBox<T>& a, const CornerBox<T>& b) noexcept {
    const T iw = std::max(T(0), std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const T ih = std::max(T(0), std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const T inter = iw * ih;
    const T uni = a.area() + b.area() - inter;
    if (!(uni > T(0)))
        return T(0);
    return std::clamp(inter / uni, T(0), T(1));
}

/// Minimal axis-aligned box containing both inputs.
template <std::floating_point T>
constexpr CornerBox<T> enclose(const CornerBox<T>& a, const CornerBox<T>& b) noexcept {
    return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

/// Squared diagonal of the enclosing box of a and b.
template <std::floating_point T>
T enclosing_diagonal_sq(const CenterBox<T>& a, const CenterBox<T>& b) noexcept {
    const auto e = enclose(center_to_corners(a), center_to_corners(b));
    return e.width() * e.width() + e.height() * e.height();
}

namespace detail {

template <std::floating_point T>
struct CiouEval {
    CiouBreakdown<T> parts;
    BoxGrad<T> grad{};
};

// One-dimensional overlap and enclosure of the predicted interval [pc - pw/2, pc + pw/2]
// with the target interval [g1, g2], together with their derivatives in (pc, pw).
template <std::floating_point T>
struct Axis {
    T overlap;    // max(0, min(p2, g2) - max(p1, g1))
    T d_overlap_c;
    T d_overlap_w;
    T extent;     // max(p2, g2) - min(p1, g1)
    T d_extent_c;
    T d_extent_w;
};

template <std::floating_point T>
Axis<T> axis(T pc, T pw, T g1, T g2) noexcept {
    const T p1 = pc - pw / T(2);
    const T p2 = pc + pw / T(2);
    Axis<T> a{};

    // Ties pick the prediction: the derivative is taken from the side that shrinks
    // the overlap.
    const bool p_right_inner = p2 <= g2;
    const bool p_left_inner = p1 >= g1;
    const T raw = (p_right_inner ? p2 : g2) - (p_left_inner ? p1 : g1);
    if (raw > T(0)) {
        a.overlap = raw;
        a.d_overlap_c = T(p_right_inner) - T(p_left_inner);
        a.d_overlap_w = T(0.5) * (T(p_right_inner) + T(p_left_inner));
    }

    const bool p_right_outer = p2 > g2;
    const bool p_left_outer = p1 < g1;
    a.extent = (p_right_outer ? p2 : g2) - (p_left_outer ? p1 : g1);
    a.d_extent_c = T(p_right_outer) - T(p_left_outer);
    a.d_extent_w = T(0.5) * (T(p_right_outer) + T(p_left_outer));
    return a;
}

template <std::floating_point T>
CiouEval<T> ciou_eval(const CenterBox<T>& pred, const CenterBox<T>& gt, const CiouOptions& opt) {
    if (!(gt.w > T(0)) || !(gt.h > T(0)))
        throw InvalidTarget("ciou: ground-truth box has zero width or height");

    const T eps_wh = static_cast<T>(opt.eps_wh);
    const bool w_clamped = pred.w < eps_wh;
    const bool h_clamped = pred.h < eps_wh;
    const T pw = w_clamped ? eps_wh : pred.w;
    const T ph = h_clamped ? eps_wh : pred.h;

    const auto ax = axis(pred.cx, pw, gt.cx - gt.w / T(2), gt.cx + gt.w / T(2));
    const auto ay = axis(pred.cy, ph, gt.cy - gt.h / T(2), gt.cy + gt.h / T(2));

    // IoU
    const T inter = ax.overlap * ay.overlap;
    const T uni = pw * ph + gt.w * gt.h - inter;
    const T iou_v = inter / uni;
    const std::array<T, 4> d_inter{ax.d_overlap_c * ay.overlap, ay.d_overlap_c * ax.overlap,
                                   ax.d_overlap_w * ay.overlap, ay.d_overlap_w * ax.overlap};
    const std::array<T, 4> d_area{T(0), T(0), ph, pw};
    std::array<T, 4> d_iou{};
    for (int i = 0; i < 4; ++i) {
        const T d_uni = d_area[i] - d_inter[i];
        d_iou[i] = (d_inter[i] * uni - inter * d_uni) / (uni * uni);
    }

    // Center distance over enclosing diagonal
    const T dx = pred.cx - gt.cx;
    const T dy = pred.cy - gt.cy;
    const T rho2 = dx * dx + dy * dy;
    const T c2 = ax.extent * ax.extent + ay.extent * ay.extent + static_cast<T>(opt.eps_geo);
    const std::array<T, 4> d_rho2{T(2) * dx, T(2) * dy, T(0), T(0)};
    const std::array<T, 4> d_c2{T(2) * ax.extent * ax.d_extent_c, T(2) * ay.extent * ay.d_extent_c,
                                T(2) * ax.extent * ax.d_extent_w, T(2) * ay.extent * ay.d_extent_w};
    std::array<T, 4> d_dist{};
    for (int i = 0; i < 4; ++i)
        d_dist[i] = (d_rho2[i] * c2 - rho2 * d_c2[i]) / (c2 * c2);

    // Aspect-ratio consistency
    constexpr T k4 = T(4) / (std::numbers::pi_v<T> * std::numbers::pi_v<T>);
    const T delta = std::atan(gt.w / gt.h) - std::atan(pw / ph);
    const T v_sq = k4 * delta * delta;
    T alpha;
    if (opt.alpha) {
        alpha = static_cast<T>(*opt.alpha);
    } else {
        const T denom = (T(1) - iou_v) + v_sq;
        alpha = denom > T(0) ? v_sq / denom : T(0);
    }
    const T aspect = opt.v_unsquared ? k4 * delta : v_sq;
    const T d_aspect_d_delta = opt.v_unsquared ? k4 : T(2) * k4 * delta;
    const T r2 = pw * pw + ph * ph;
    const std::array<T, 4> d_delta{T(0), T(0), -ph / r2, pw / r2};

    CiouEval<T> out;
    out.parts.iou = iou_v;
    out.parts.s = T(1) - iou_v;
    out.parts.d = rho2 / c2;
    out.parts.alpha = alpha;
    out.parts.v = alpha * aspect;
    out.parts.total = out.parts.s + out.parts.d + out.parts.v;

    for (int i = 0; i < 4; ++i)
        out.grad[i] = -d_iou[i] + d_dist[i] + alpha * d_aspect_d_delta * d_delta[i];
    if (w_clamped)
        out.grad[2] = T(0);
    if (h_clamped)
        out.grad[3] = T(0);
#ifdef VGLOSS_INJECT_GRADIENT_BUG
    // Negative control for the gradient checker; never defined in normal builds.
    out.grad[2] = -out.grad[2];
#endif
    return out;
}

} // namespace detail

/// CIoU loss of pred against gt with its three components.
/// Throws InvalidTarget when gt has zero width or height.
template <std::floating_point T>
CiouBreakdown<T> ciou_loss(const CenterBox<T>& pred, const CenterBox<T>& gt,
                           const CiouOptions& opt = {}) {
    return detail::ciou_eval(pred, gt, opt).parts;
}

/// d(total)/d(cx, cy, w, h) of the prediction, with alpha held constant.
template <std::floating_point T>
BoxGrad<T> ciou_grad(const CenterBox<T>& pred, const CenterBox<T>& gt, const CiouOptions& opt = {}) {
    return detail::ciou_eval(pred, gt, opt).grad;
}

/// DIoU: the CIoU loss without the aspect term.
template <std::floating_point T>
T diou_loss(const CenterBox<T>& pred, const CenterBox<T>& gt, const CiouOptions& opt = {}) {
    const auto b = ciou_loss(pred, gt, opt);
    return b.s + b.d;
}

template <std::floating_point T>
struct SmoothL1Result {
    T value{};
    BoxGrad<T> grad{};
};

/// Huber loss summed over (cx, cy, w, h), transition at |x| = 1.
template <std::floating_point T>
SmoothL1Result<T> smooth_l1(const CenterBox<T>& pred, const CenterBox<T>& gt) noexcept {
    const std::array<T, 4> diff{pred.cx - gt.cx, pred.cy - gt.cy, pred.w - gt.w, pred.h - gt.h};
    SmoothL1Result<T> r;
    for (int i = 0; i < 4; ++i) {
        const T x = diff[i];
        if (std::abs(x) < T(1)) {
            r.value += T(0.5) * x * x;
            r.grad[i] = x;
        } else {
            r.value += std::abs(x) - T(0.5);
            r.grad[i] = x > T(0) ? T(1) : T(-1);
        }
    }
    return r;
}

/// Boundary-inclusive containment test.
template <std::floating_point T>
constexpr bool point_in_box(T x, T y, const CornerBox<T>& box) noexcept {
    return box.x1 <= x && x <= box.x2 && box.y1 <= y && y <= box.y2;
}

} // namespace vgloss
