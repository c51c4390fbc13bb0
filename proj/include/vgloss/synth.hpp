// SPDX-License-Identifier: Apache-2.0
//
// Synthetic grounding data. Each image holds a few objects of distinct classes;
// proposals are jittered copies of the objects plus random distractors, and each
// query's text feature is its object's class embedding plus noise. Class
// distributions and visual features follow the proposal's class, so proposals on
// the same object agree semantically.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <vector>

#include "vgloss/dataset.hpp"
#include "vgloss/errors.hpp"
#include "vgloss/geometry.hpp"
#include "vgloss/losses.hpp"
#include "vgloss/rng.hpp"

namespace vgloss {

struct SynthConfig {
    std::size_t n_examples = 2000;
    std::size_t k = 16;              // proposals per image
    std::size_t n_classes = 8;
    std::size_t text_dim = 12;
    std::size_t visual_dim = 24;
    std::size_t n_distractors = 4;
    std::size_t min_objects = 2;
    std::size_t max_objects = 4;
    double box_noise = 0.1;          // corner jitter, fraction of box size
    double class_temperature = 0.5;
    double class_jitter = 0.2;       // logit noise before the tempered softmax
    double text_noise = 0.3;
    double visual_noise = 0.3;
    double split_gt_prob = 0.1;      // chance a phrase is annotated by two part boxes
    std::uint64_t seed = 7;

    void validate() const {
        if (k < 1)
            throw InvalidInput("SynthConfig: k must be at least 1");
        if (n_classes < 2)
            throw InvalidInput("SynthConfig: need at least two object classes");
        if (text_dim < 1 || visual_dim < 1)
            throw InvalidInput("SynthConfig: feature dimensions must be at least 1");
        if (min_objects < 1 || min_objects > max_objects)
            throw InvalidInput("SynthConfig: need 1 <= min_objects <= max_objects");
        if (!(box_noise >= 0.0) || !(class_temperature > 0.0))
            throw InvalidInput("SynthConfig: box_noise must be >= 0 and temperature > 0");
    }
};

namespace detail {

inline CornerBoxd random_box(Rng& rng, double image_w, double image_h) {
    const double w = rng.uniform(0.15, 0.5) * image_w;
    const double h = rng.uniform(0.15, 0.5) * image_h;
    const double x1 = rng.uniform(0.0, image_w - w);
    const double y1 = rng.uniform(0.0, image_h - h);
    return {x1, y1, x1 + w, y1 + h};
}

inline CornerBoxd jitter_box(Rng& rng, const CornerBoxd& b, double noise, double image_w, double image_h) {
    if (noise == 0.0)
        return b;
    const double sx = noise * b.width();
    const double sy = noise * b.height();
    double x1 = b.x1 + rng.normal(0.0, sx);
    double x2 = b.x2 + rng.normal(0.0, sx);
    double y1 = b.y1 + rng.normal(0.0, sy);
    double y2 = b.y2 + rng.normal(0.0, sy);
    if (x1 > x2)
        std::swap(x1, x2);
    if (y1 > y2)
        std::swap(y1, y2);
    x1 = std::clamp(x1, 0.0, image_w);
    x2 = std::clamp(x2, 0.0, image_w);
    y1 = std::clamp(y1, 0.0, image_h);
    y2 = std::clamp(y2, 0.0, image_h);
    return {x1, y1, x2, y2};
}

inline std::vector<double> tempered_one_hot(Rng& rng, std::size_t cls, const SynthConfig& cfg) {
    std::vector<double> logits(cfg.n_classes);
    for (std::size_t c = 0; c < cfg.n_classes; ++c)
        logits[c] = ((c == cls ? 1.0 : 0.0) + rng.normal(0.0, cfg.class_jitter)) / cfg.class_temperature;
    return softmax(logits);
}

struct ClassEmbeddings {
    std::vector<std::vector<double>> text;
    std::vector<std::vector<double>> visual;
};

inline ClassEmbeddings class_embeddings(const SynthConfig& cfg) {
    Rng rng(splitmix64(cfg.seed ^ 0x5eedc1a55ULL));
    ClassEmbeddings e;
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        std::vector<double> t(cfg.text_dim), v(cfg.visual_dim);
        for (double& x : t)
            x = rng.normal();
        for (double& x : v)
            x = std::abs(rng.normal());
        e.text.push_back(std::move(t));
        e.visual.push_back(std::move(v));
    }
    return e;
}

} // namespace detail

inline GroundingExample gen_example(const SynthConfig& cfg, const detail::ClassEmbeddings& emb,
                                    std::size_t index) {
    Rng rng(splitmix64(cfg.seed) ^ splitmix64(index + 1));
    GroundingExample ex;
    char id[32];
    std::snprintf(id, sizeof id, "synth-%06zu", index);
    ex.image_id = id;
    ex.image_w = std::round(rng.uniform(320.0, 640.0));
    ex.image_h = std::round(rng.uniform(240.0, 480.0));

    const std::size_t max_obj = std::min(cfg.max_objects, cfg.n_classes);
    const std::size_t min_obj = std::min(cfg.min_objects, max_obj);
    const std::size_t n_obj = min_obj + rng.index(max_obj - min_obj + 1);
    std::vector<std::size_t> classes(cfg.n_classes);
    std::iota(classes.begin(), classes.end(), 0);
    rng.shuffle(classes.begin(), classes.end());
    classes.resize(n_obj);

    std::vector<CornerBoxd> objects;
    for (std::size_t o = 0; o < n_obj; ++o)
        objects.push_back(detail::random_box(rng, ex.image_w, ex.image_h));

    const std::size_t n_dist = cfg.k > n_obj ? std::min(cfg.n_distractors, cfg.k - n_obj) : 0;
    const std::size_t n_copies = cfg.k - n_dist;

    auto visual_of = [&](std::size_t cls) {
        std::vector<double> v = emb.visual[cls];
        for (double& x : v)
            x += rng.normal(0.0, cfg.visual_noise);
        return v;
    };

    for (std::size_t c = 0; c < n_copies; ++c) {
        const std::size_t src = c % n_obj;
        Proposal p;
        p.box = detail::jitter_box(rng, objects[src], cfg.box_noise, ex.image_w, ex.image_h);
        // Label by the best-overlapping object; the source wins ties.
        std::size_t nearest = src;
        double best = iou(p.box, objects[src]);
        for (std::size_t o = 0; o < n_obj; ++o) {
            const double u = iou(p.box, objects[o]);
            if (u > best) {
                best = u;
                nearest = o;
            }
        }
        p.class_probs = detail::tempered_one_hot(rng, classes[nearest], cfg);
        p.visual_feat = visual_of(classes[nearest]);
        ex.proposals.push_back(std::move(p));
    }
    for (std::size_t d = 0; d < n_dist; ++d) {
        Proposal p;
        p.box = detail::random_box(rng, ex.image_w, ex.image_h);
        const std::size_t cls = rng.index(cfg.n_classes);
        p.class_probs = detail::tempered_one_hot(rng, cls, cfg);
        p.visual_feat = visual_of(cls);
        ex.proposals.push_back(std::move(p));
    }
    rng.shuffle(ex.proposals.begin(), ex.proposals.end());

    for (std::size_t o = 0; o < n_obj; ++o) {
        Query q;
        q.text_feat = emb.text[classes[o]];
        for (double& x : q.text_feat)
            x += rng.normal(0.0, cfg.text_noise);
        const auto& b = objects[o];
        if (rng.uniform() < cfg.split_gt_prob) {
            const double mid = (b.x1 + b.x2) / 2.0;
            q.gt_boxes = {{b.x1, b.y1, mid, b.y2}, {mid, b.y1, b.x2, b.y2}};
        } else {
            q.gt_boxes = {b};
        }
        ex.queries.push_back(std::move(q));
    }
    return ex;
}

inline Dataset gen_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    const auto emb = detail::class_embeddings(cfg);
    Dataset data;
    data.reserve(cfg.n_examples);
    for (std::size_t i = 0; i < cfg.n_examples; ++i)
        data.push_back(gen_example(cfg, emb, i));
    return data;
}

} // namespace vgloss
