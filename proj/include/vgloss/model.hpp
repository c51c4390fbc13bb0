// SPDX-License-Identifier: Apache-2.0
//
// Two-stage grounding head. Each (query, proposal) pair is fused by
//
//   h = LeakyReLU(W_fuse [text ; spatial ; L1(visual)] + b_fuse)
//
// and scored by a linear grounding head (softmax over proposals) and a linear
// offset head whose output is added to the proposal's normalized center-size box.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vgloss/dataset.hpp"
#include "vgloss/errors.hpp"
#include "vgloss/geometry.hpp"
#include "vgloss/losses.hpp"
#include "vgloss/metrics.hpp"
#include "vgloss/table.hpp"

namespace vgloss {

inline constexpr std::size_t kSpatialDim = 5;

struct HeadConfig {
    std::size_t text_dim = 0;
    std::size_t visual_dim = 0;
    std::size_t hidden = 0;
    double leaky_slope = 0.01;

    std::size_t input_dim() const noexcept { return text_dim + kSpatialDim + visual_dim; }

    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct HeadParameters {
    HeadConfig config;
    Matrix w_fuse; // hidden x input_dim
    Matrix b_fuse; // hidden x 1
    Matrix w_g;    // 1 x hidden
    Matrix b_g;    // 1 x 1
    Matrix w_box;  // 4 x hidden
    Matrix b_box;  // 4 x 1

    static HeadParameters zeros(const HeadConfig& c) {
        return {c,
                Matrix(c.hidden, c.input_dim()),
                Matrix(c.hidden, 1),
                Matrix(1, c.hidden),
                Matrix(1, 1),
                Matrix(4, c.hidden),
                Matrix(4, 1)};
    }

    /// Visit every tensor with its name, in a fixed order.
    template <typename F>
    void for_each(F&& f) {
        f("W_fuse", w_fuse);
        f("b_fuse", b_fuse);
        f("W_g", w_g);
        f("b_g", b_g);
        f("W_B", w_box);
        f("b_B", b_box);
    }
    template <typename F>
    void for_each(F&& f) const {
        f("W_fuse", w_fuse);
        f("b_fuse", b_fuse);
        f("W_g", w_g);
        f("b_g", b_g);
        f("W_B", w_box);
        f("b_B", b_box);
    }

    /// this += scale * other, tensor by tensor.
    void add(const HeadParameters& other, double scale = 1.0) {
        const Matrix* src[] = {&other.w_fuse, &other.b_fuse, &other.w_g, &other.b_g, &other.w_box, &other.b_box};
        Matrix* dst[] = {&w_fuse, &b_fuse, &w_g, &b_g, &w_box, &b_box};
        for (int t = 0; t < 6; ++t) {
            if (!dst[t]->same_shape(*src[t]))
                throw InvalidInput("HeadParameters::add: shape mismatch");
            auto& d = dst[t]->values();
            const auto& s = src[t]->values();
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += scale * s[i];
        }
    }

    std::size_t count() const noexcept {
        return w_fuse.size() + b_fuse.size() + w_g.size() + b_g.size() + w_box.size() + b_box.size();
    }

    friend bool operator==(const HeadParameters&, const HeadParameters&) = default;
};

/// [x1/W, y1/H, x2/W, y2/H, area/(W*H)]
inline std::array<double, kSpatialDim> spatial_features(const CornerBoxd& box, double image_w, double image_h) {
    if (!(image_w > 0.0) || !(image_h > 0.0))
        throw InvalidInput("spatial_features: image dimensions must be positive");
    return {box.x1 / image_w, box.y1 / image_h, box.x2 / image_w, box.y2 / image_h,
            box.area() / (image_w * image_h)};
}

inline constexpr double kL1Guard = 1e-12;

inline std::vector<double> l1_normalize(std::span<const double> v) {
    double norm = 0.0;
    for (double x : v)
        norm += std::abs(x);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = v[i] / (norm + kL1Guard);
    return out;
}

inline double leaky_relu(double x, double slope) noexcept { return x > 0.0 ? x : slope * x; }

/// Fused representation of one (query, proposal) pair.
inline std::vector<double> fuse(std::span<const double> text_feat, std::span<const double> spatial_feat,
                                std::span<const double> visual_feat, const HeadParameters& params) {
    const auto& c = params.config;
    if (text_feat.size() != c.text_dim || spatial_feat.size() != kSpatialDim ||
        visual_feat.size() != c.visual_dim)
        throw InvalidInput("fuse: feature dimensions do not match the head configuration");
    std::vector<double> input;
    input.reserve(c.input_dim());
    input.insert(input.end(), text_feat.begin(), text_feat.end());
    input.insert(input.end(), spatial_feat.begin(), spatial_feat.end());
    const auto vis = l1_normalize(visual_feat);
    input.insert(input.end(), vis.begin(), vis.end());

    std::vector<double> h(c.hidden);
    for (std::size_t r = 0; r < c.hidden; ++r) {
        double a = params.b_fuse(r, 0);
        const auto w = params.w_fuse.row(r);
        for (std::size_t i = 0; i < input.size(); ++i)
            a += w[i] * input[i];
        h[r] = leaky_relu(a, c.leaky_slope);
    }
    return h;
}

inline double grounding_logit(std::span<const double> fused, const HeadParameters& params) {
    double s = params.b_g(0, 0);
    for (std::size_t i = 0; i < fused.size(); ++i)
        s += params.w_g(0, i) * fused[i];
    return s;
}

/// Softmax over the k proposals of one query. Rows of `fused` are proposals.
inline std::vector<double> grounding_probs(const Matrix& fused, const HeadParameters& params) {
    if (fused.cols() != params.config.hidden)
        throw InvalidInput("grounding_probs: fused width does not match the head");
    std::vector<double> logits(fused.rows());
    for (std::size_t z = 0; z < fused.rows(); ++z)
        logits[z] = grounding_logit(fused.row(z), params);
    return softmax(logits);
}

inline std::array<double, 4> offset(std::span<const double> fused, const HeadParameters& params) {
    std::array<double, 4> o{};
    for (std::size_t r = 0; r < 4; ++r) {
        double s = params.b_box(r, 0);
        const auto w = params.w_box.row(r);
        for (std::size_t i = 0; i < fused.size(); ++i)
            s += w[i] * fused[i];
        o[r] = s;
    }
    return o;
}

/// Linear offsets (dcx, dcy, dw, dh) for each row of `fused`.
inline std::vector<std::array<double, 4>> offsets(const Matrix& fused, const HeadParameters& params) {
    if (fused.cols() != params.config.hidden)
        throw InvalidInput("offsets: fused width does not match the head");
    std::vector<std::array<double, 4>> out(fused.rows());
    for (std::size_t z = 0; z < fused.rows(); ++z)
        out[z] = offset(fused.row(z), params);
    return out;
}

inline CenterBoxd refine(const CenterBoxd& proposal, const std::array<double, 4>& o) noexcept {
    return {proposal.cx + o[0], proposal.cy + o[1], proposal.w + o[2], proposal.h + o[3]};
}

/// Normalized center box back to pixel corners, with negative sizes clamped to 0.
inline CornerBoxd to_pixels(const CenterBoxd& b, double image_w, double image_h) {
    const CenterBoxd c{b.cx, b.cy, std::max(b.w, 0.0), std::max(b.h, 0.0)};
    return scale_box(center_to_corners(c), image_w, image_h);
}

/// Example with per-proposal inputs precomputed; the model's working form.
struct PreparedExample {
    const GroundingExample* source = nullptr;
    double image_w = 0.0;
    double image_h = 0.0;
    std::vector<CornerBoxd> proposal_boxes;         // pixels
    std::vector<CenterBoxd> proposal_centers;       // normalized
    Matrix proposal_inputs;                         // k x (5 + visual): spatial ; L1(visual)
    Matrix text;                                    // m x text
    std::vector<CornerBoxd> gt_boxes;               // merged, pixels
    std::vector<CenterBoxd> gt_centers;             // merged, normalized

    std::size_t num_queries() const noexcept { return gt_boxes.size(); }
    std::size_t num_proposals() const noexcept { return proposal_boxes.size(); }
};

inline PreparedExample prepare(const GroundingExample& ex, const HeadConfig& config) {
    PreparedExample p;
    p.source = &ex;
    p.image_w = ex.image_w;
    p.image_h = ex.image_h;
    const std::size_t k = ex.proposals.size();
    if (k == 0)
        throw InvalidInput("example " + ex.image_id + " has no proposals");
    const std::size_t width = kSpatialDim + config.visual_dim;
    p.proposal_inputs = Matrix(k, width);
    for (std::size_t z = 0; z < k; ++z) {
        const auto& prop = ex.proposals[z];
        if (prop.visual_feat.size() != config.visual_dim)
            throw SchemaError("example " + ex.image_id + ": visual feature length " +
                              std::to_string(prop.visual_feat.size()) + ", head expects " +
                              std::to_string(config.visual_dim));
        p.proposal_boxes.push_back(prop.box);
        p.proposal_centers.push_back(corners_to_center(prop.box, ex.image_w, ex.image_h));
        const auto sp = spatial_features(prop.box, ex.image_w, ex.image_h);
        const auto vis = l1_normalize(prop.visual_feat);
        auto row = p.proposal_inputs.row(z);
        std::copy(sp.begin(), sp.end(), row.begin());
        std::copy(vis.begin(), vis.end(), row.begin() + kSpatialDim);
    }
    const std::size_t m = ex.queries.size();
    p.text = Matrix(m, config.text_dim);
    for (std::size_t j = 0; j < m; ++j) {
        const auto& q = ex.queries[j];
        if (q.text_feat.size() != config.text_dim)
            throw SchemaError("example " + ex.image_id + ": text feature length " +
                              std::to_string(q.text_feat.size()) + ", head expects " +
                              std::to_string(config.text_dim));
        std::copy(q.text_feat.begin(), q.text_feat.end(), p.text.row(j).begin());
        const auto gt = merge_gt_boxes(q.gt_boxes);
        p.gt_boxes.push_back(gt);
        p.gt_centers.push_back(corners_to_center(gt, ex.image_w, ex.image_h));
    }
    return p;
}

struct ForwardPass {
    Matrix logits;                          // m x k
    Matrix probs;                           // m x k
    Table<CenterBoxd> refined;              // m x k, normalized
    std::vector<std::size_t> best;          // argmax proposal per query
    std::vector<CornerBoxd> predicted;      // refined box at argmax, pixels

    // Cached activations for backward: row j*k + z.
    Matrix pre_activation;
    Matrix hidden;

    bool has_cache() const noexcept { return !hidden.empty(); }
};

inline ForwardPass forward(const PreparedExample& ex, const HeadParameters& params) {
    const auto& cfg = params.config;
    const std::size_t m = ex.num_queries();
    const std::size_t k = ex.num_proposals();
    const std::size_t c = cfg.hidden;
    if (ex.text.cols() != cfg.text_dim || ex.proposal_inputs.cols() != kSpatialDim + cfg.visual_dim)
        throw SchemaError("forward: example features do not match the head configuration");

    // The fused pre-activation splits into a per-query and a per-proposal part.
    Matrix text_part(m, c);
    for (std::size_t j = 0; j < m; ++j) {
        const auto t = ex.text.row(j);
        for (std::size_t r = 0; r < c; ++r) {
            const auto w = params.w_fuse.row(r);
            double s = 0.0;
            for (std::size_t i = 0; i < cfg.text_dim; ++i)
                s += w[i] * t[i];
            text_part(j, r) = s;
        }
    }
    Matrix prop_part(k, c);
    for (std::size_t z = 0; z < k; ++z) {
        const auto x = ex.proposal_inputs.row(z);
        for (std::size_t r = 0; r < c; ++r) {
            const auto w = params.w_fuse.row(r).subspan(cfg.text_dim);
            double s = params.b_fuse(r, 0);
            for (std::size_t i = 0; i < x.size(); ++i)
                s += w[i] * x[i];
            prop_part(z, r) = s;
        }
    }

    ForwardPass out;
    out.logits = Matrix(m, k);
    out.refined = Table<CenterBoxd>(m, k);
    out.pre_activation = Matrix(m * k, c);
    out.hidden = Matrix(m * k, c);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t z = 0; z < k; ++z) {
            const std::size_t row = j * k + z;
            auto a = out.pre_activation.row(row);
            auto h = out.hidden.row(row);
            for (std::size_t r = 0; r < c; ++r) {
                a[r] = text_part(j, r) + prop_part(z, r);
                h[r] = leaky_relu(a[r], cfg.leaky_slope);
            }
            out.logits(j, z) = grounding_logit(h, params);
            out.refined(j, z) = refine(ex.proposal_centers[z], offset(h, params));
        }
    }
    out.probs = softmax_rows(out.logits);
    for (std::size_t j = 0; j < m; ++j) {
        const std::size_t b = best_proposal(out.probs.row(j));
        out.best.push_back(b);
        out.predicted.push_back(to_pixels(out.refined(j, b), ex.image_w, ex.image_h));
    }
    return out;
}

inline ForwardPass forward(const GroundingExample& ex, const HeadParameters& params) {
    return forward(prepare(ex, params.config), params);
}

/// Parameter gradients given dL/dlogits (m x k) and dL/d(refined box) (m x k).
inline HeadParameters backward(const PreparedExample& ex, const HeadParameters& params,
                               const ForwardPass& pass, const Matrix& grad_logits,
                               const Table<BoxGrad<double>>& grad_boxes) {
    if (!pass.has_cache())
        throw UsageError("backward: no cached forward pass");
    const auto& cfg = params.config;
    const std::size_t m = ex.num_queries();
    const std::size_t k = ex.num_proposals();
    const std::size_t c = cfg.hidden;
    if (pass.hidden.rows() != m * k || grad_logits.rows() != m || grad_logits.cols() != k ||
        grad_boxes.rows() != m || grad_boxes.cols() != k)
        throw InvalidInput("backward: gradient shapes do not match the forward pass");

    HeadParameters g = HeadParameters::zeros(cfg);
    Matrix delta_query(m, c); // sum over proposals of dL/d(pre-activation)
    Matrix delta_prop(k, c);  // sum over queries
    std::vector<double> gh(c);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t z = 0; z < k; ++z) {
            const std::size_t row = j * k + z;
            const auto h = pass.hidden.row(row);
            const auto a = pass.pre_activation.row(row);
            const double gl = grad_logits(j, z);
            const auto& gb = grad_boxes(j, z);

            g.b_g(0, 0) += gl;
            for (std::size_t r = 0; r < c; ++r)
                g.w_g(0, r) += gl * h[r];
            for (std::size_t q = 0; q < 4; ++q) {
                if (gb[q] == 0.0)
                    continue;
                g.b_box(q, 0) += gb[q];
                auto wrow = g.w_box.row(q);
                for (std::size_t r = 0; r < c; ++r)
                    wrow[r] += gb[q] * h[r];
            }
            for (std::size_t r = 0; r < c; ++r) {
                double s = gl * params.w_g(0, r);
                for (std::size_t q = 0; q < 4; ++q)
                    s += gb[q] * params.w_box(q, r);
                gh[r] = s * (a[r] > 0.0 ? 1.0 : cfg.leaky_slope);
                delta_query(j, r) += gh[r];
                delta_prop(z, r) += gh[r];
            }
        }
    }
    for (std::size_t r = 0; r < c; ++r) {
        auto wrow = g.w_fuse.row(r);
        for (std::size_t j = 0; j < m; ++j) {
            const double d = delta_query(j, r);
            const auto t = ex.text.row(j);
            for (std::size_t i = 0; i < cfg.text_dim; ++i)
                wrow[i] += d * t[i];
        }
        for (std::size_t z = 0; z < k; ++z) {
            const double d = delta_prop(z, r);
            g.b_fuse(r, 0) += d;
            const auto x = ex.proposal_inputs.row(z);
            for (std::size_t i = 0; i < x.size(); ++i)
                wrow[cfg.text_dim + i] += d * x[i];
        }
    }
    return g;
}

} // namespace vgloss
