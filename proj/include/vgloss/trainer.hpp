// SPDX-License-Identifier: Apache-2.0
//
// Training loop, evaluation and the loss-variant ablation grid.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "vgloss/dataset.hpp"
#include "vgloss/errors.hpp"
#include "vgloss/losses.hpp"
#include "vgloss/metrics.hpp"
#include "vgloss/model.hpp"
#include "vgloss/optim.hpp"
#include "vgloss/rng.hpp"
#include "vgloss/targets.hpp"

namespace vgloss {

struct TrainConfig {
    LossConfig loss;
    std::size_t epochs = 9;
    double lr0 = 1e-3;
    double decay = 0.9;
    std::size_t batch_size = 1;
    std::uint64_t seed = 7;
    double eval_fraction = 0.1; // validation share; the same share again is held out as test
    std::size_t hidden = 64;
    double leaky_slope = 0.01;

    void validate() const {
        loss.validate();
        if (!(lr0 >= 0.0))
            throw InvalidInput("TrainConfig: learning rate must be nonnegative");
        if (!(decay > 0.0 && decay <= 1.0))
            throw InvalidInput("TrainConfig: decay must lie in (0, 1]");
        if (batch_size < 1 || hidden < 1)
            throw InvalidInput("TrainConfig: batch size and hidden width must be at least 1");
        if (!(eval_fraction >= 0.0 && eval_fraction <= 0.5))
            throw InvalidInput("TrainConfig: eval fraction must lie in [0, 0.5]");
    }
};

enum class Split { train, val, test };

/// Deterministic split by a hash of the example index.
inline Split split_of(std::size_t index, double fraction) {
    const double u = static_cast<double>(splitmix64(index) >> 11) * 0x1.0p-53;
    if (u < fraction)
        return Split::val;
    if (u < 2.0 * fraction)
        return Split::test;
    return Split::train;
}

/// Loss-independent supervision for one example.
struct Supervision {
    std::vector<TargetBundle> semantic; // similarity-weighted targets
    std::vector<TargetBundle> plain;    // similarity fixed to 1 (plain KL); empty unless needed
    std::vector<std::size_t> j_star;
};

inline Supervision supervise(const PreparedExample& ex, const LossConfig& cfg) {
    Supervision s;
    const auto& src = *ex.source;
    std::vector<ClassDistribution> probs;
    probs.reserve(src.proposals.size());
    for (const auto& p : src.proposals)
        probs.push_back(p.class_probs);
    const Matrix u = iou_matrix(ex.gt_boxes, ex.proposal_boxes);
    for (std::size_t j = 0; j < ex.num_queries(); ++j) {
        s.semantic.push_back(build_target(u.row(j), probs, cfg.eta, cfg.eps));
        if (cfg.grounding == GroundingKind::kl)
            s.plain.push_back(build_plain_target(u.row(j), cfg.eta, cfg.eps));
        s.j_star.push_back(s.semantic.back().j_star);
    }
    return s;
}

struct ExampleLoss {
    LossOutput out;
    Matrix alphas;
};

inline Matrix target_rows(const std::vector<TargetBundle>& bundles, std::size_t k) {
    Matrix t(bundles.size(), k);
    for (std::size_t j = 0; j < bundles.size(); ++j)
        std::copy(bundles[j].p_target_row.begin(), bundles[j].p_target_row.end(), t.row(j).begin());
    return t;
}

/// Loss of one forward pass under the configured grounding/refinement pair.
inline ExampleLoss example_loss(const LossConfig& cfg, const PreparedExample& ex, const Supervision& sup,
                                const ForwardPass& pass, const Matrix* frozen_alphas = nullptr) {
    const std::size_t k = ex.num_proposals();
    GroundingPart g;
    switch (cfg.grounding) {
    case GroundingKind::ce: g = ce_grounding_loss(pass.probs, sup.j_star, cfg.eps_kl); break;
    case GroundingKind::kl: g = kl_grounding_loss(pass.probs, target_rows(sup.plain, k), cfg.eps_kl); break;
    case GroundingKind::kl_sem:
        g = kl_grounding_loss(pass.probs, target_rows(sup.semantic, k), cfg.eps_kl);
        break;
    }
    RefinementPart r;
    switch (cfg.refinement) {
    case RefinementKind::smooth_l1: r = smooth_l1_refinement_loss(pass.refined, ex.gt_centers, sup.j_star); break;
    case RefinementKind::ciou_sem:
        r = ciou_sem_refinement_loss(pass.refined, ex.gt_centers, sup.semantic, cfg.ciou, frozen_alphas);
        break;
    }
    Matrix alphas = std::move(r.alphas);
    return {total_loss(cfg, std::move(g), std::move(r)), std::move(alphas)};
}

/// Scalar loss of `params` on one example; the function the head gradient differentiates
/// when the CIoU trade-off weights are frozen.
inline double example_loss_value(const HeadParameters& params, const PreparedExample& ex,
                                 const Supervision& sup, const LossConfig& cfg,
                                 const Matrix* frozen_alphas = nullptr) {
    return example_loss(cfg, ex, sup, forward(ex, params), frozen_alphas).out.total;
}

inline std::size_t evaluation_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("GROUNDING_LOSS_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end != env && cap >= 1)
            n = std::min(n, static_cast<std::size_t>(cap));
    }
    return n;
}

struct EvalResult {
    double accuracy = 0.0;
    double point_game_accuracy = 0.0;
    std::size_t n_queries = 0;
};

/// Accuracy and point game over the listed examples. Fans out over examples and
/// reduces in index order.
inline EvalResult evaluate(const std::vector<PreparedExample>& data, const std::vector<std::size_t>& indices,
                           const HeadParameters& params, std::size_t threads = evaluation_threads()) {
    std::vector<std::size_t> hits(indices.size()), points(indices.size()), queries(indices.size());
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t n = lo; n < hi; ++n) {
            const auto& ex = data[indices[n]];
            if (ex.num_queries() == 0)
                continue;
            const auto pass = forward(ex, params);
            for (std::size_t j = 0; j < ex.num_queries(); ++j) {
                hits[n] += is_hit(pass.predicted[j], ex.gt_boxes[j]);
                points[n] += is_point_hit(pass.predicted[j], ex.gt_boxes[j]);
            }
            queries[n] = ex.num_queries();
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, indices.size()));
    if (threads == 1) {
        work(0, indices.size());
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (indices.size() + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t lo = t * chunk;
            const std::size_t hi = std::min(indices.size(), lo + chunk);
            if (lo < hi)
                pool.emplace_back(work, lo, hi);
        }
    }
    EvalResult r;
    std::size_t h = 0, p = 0;
    for (std::size_t n = 0; n < indices.size(); ++n) {
        h += hits[n];
        p += points[n];
        r.n_queries += queries[n];
    }
    if (r.n_queries > 0) {
        r.accuracy = static_cast<double>(h) / static_cast<double>(r.n_queries);
        r.point_game_accuracy = static_cast<double>(p) / static_cast<double>(r.n_queries);
    }
    return r;
}

/// Predicted box for every query of every example.
inline std::vector<PredictionRecord> predict(const Dataset& data, const HeadParameters& params) {
    std::vector<PredictionRecord> out;
    for (const auto& ex : data) {
        if (ex.queries.empty())
            continue;
        const auto pass = forward(ex, params);
        for (std::size_t j = 0; j < ex.queries.size(); ++j)
            out.push_back({ex.image_id, j, pass.predicted[j]});
    }
    return out;
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    double val_pointgame = 0.0;
    double test_accuracy = 0.0;
    double test_pointgame = 0.0;
};

struct TrainResult {
    HeadParameters params;
    std::vector<EpochMetrics> history;
};

inline HeadConfig head_config_for(const Dataset& data, const TrainConfig& cfg) {
    const auto dims = dataset_dims(data);
    return {dims.text, dims.visual, cfg.hidden, cfg.leaky_slope};
}

/// Train a freshly initialized head. Per-epoch callback is optional.
inline TrainResult train(const Dataset& data, const TrainConfig& cfg,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    cfg.validate();
    if (data.empty())
        throw InvalidInput("train: empty dataset");
    const HeadConfig head = head_config_for(data, cfg);
    TrainResult result{init_head(head, cfg.seed), {}};

    std::vector<PreparedExample> prepared;
    prepared.reserve(data.size());
    for (const auto& ex : data)
        prepared.push_back(prepare(ex, head));

    std::vector<std::size_t> train_idx, val_idx, test_idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
        switch (split_of(i, cfg.eval_fraction)) {
        case Split::train:
            if (!data[i].queries.empty())
                train_idx.push_back(i);
            break;
        case Split::val: val_idx.push_back(i); break;
        case Split::test: test_idx.push_back(i); break;
        }
    }
    std::vector<Supervision> sup(data.size());
    for (std::size_t i : train_idx)
        sup[i] = supervise(prepared[i], cfg.loss);

    Adam adam;
    Rng order_rng(splitmix64(cfg.seed ^ 0x0bde5ULL));
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = exponential_lr(cfg.lr0, cfg.decay, epoch);
        std::vector<std::size_t> order = train_idx;
        order_rng.shuffle(order.begin(), order.end());

        double loss_sum = 0.0;
        HeadParameters acc = HeadParameters::zeros(head);
        std::size_t in_batch = 0;
        auto flush = [&] {
            if (in_batch == 0)
                return;
            if (in_batch > 1) {
                HeadParameters mean = HeadParameters::zeros(head);
                mean.add(acc, 1.0 / static_cast<double>(in_batch));
                acc = std::move(mean);
            }
            adam.step(result.params, acc, lr);
            acc = HeadParameters::zeros(head);
            in_batch = 0;
        };

        for (std::size_t i : order) {
            const auto& ex = prepared[i];
            const auto pass = forward(ex, result.params);
            const auto loss = example_loss(cfg.loss, ex, sup[i], pass);
            if (!std::isfinite(loss.out.grounding_value))
                throw NumericalAbort("non-finite grounding loss on example " + data[i].image_id +
                                     " in epoch " + std::to_string(epoch));
            if (!std::isfinite(loss.out.refinement_value))
                throw NumericalAbort("non-finite refinement loss on example " + data[i].image_id +
                                     " in epoch " + std::to_string(epoch));
            loss_sum += loss.out.total;
            acc.add(backward(ex, result.params, pass, loss.out.grad_logits, loss.out.grad_boxes));
            if (++in_batch == cfg.batch_size)
                flush();
        }
        flush();

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = train_idx.empty() ? 0.0 : loss_sum / static_cast<double>(train_idx.size());
        const auto val = evaluate(prepared, val_idx, result.params);
        em.val_accuracy = val.accuracy;
        em.val_pointgame = val.point_game_accuracy;
        if (!test_idx.empty()) {
            const auto test = evaluate(prepared, test_idx, result.params);
            em.test_accuracy = test.accuracy;
            em.test_pointgame = test.point_game_accuracy;
        }
        if (!std::isfinite(em.train_loss))
            throw NumericalAbort("non-finite mean training loss in epoch " + std::to_string(epoch));
        result.history.push_back(em);
        if (on_epoch)
            on_epoch(em);
    }
    return result;
}

inline std::string format_number(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

inline void write_metrics_csv(const std::vector<EpochMetrics>& history, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "epoch,train_loss,val_accuracy,val_pointgame\n";
    for (const auto& m : history)
        out << m.epoch << ',' << format_number(m.train_loss) << ',' << format_number(m.val_accuracy) << ','
            << format_number(m.val_pointgame) << '\n';
    if (!out)
        throw std::runtime_error("write to '" + path + "' failed");
}

struct AblationGrid {
    std::vector<GroundingKind> groundings{GroundingKind::ce, GroundingKind::kl, GroundingKind::kl_sem};
    std::vector<RefinementKind> refinements{RefinementKind::smooth_l1, RefinementKind::ciou_sem};
    std::vector<double> etas{0.3, 0.4, 0.5};
    std::vector<double> lambdas{0.8, 1.0, 1.4};

    std::size_t cells() const noexcept {
        return groundings.size() * refinements.size() * etas.size() * lambdas.size();
    }
};

struct AblationRow {
    GroundingKind grounding;
    RefinementKind refinement;
    double eta;
    double lambda;
    double val_acc; // best validation accuracy over epochs
    double test_acc; // test accuracy at that epoch
};

/// One training run per grid cell with shared seeds. Model selection follows the
/// best validation epoch.
inline std::vector<AblationRow> ablate(const Dataset& data, const TrainConfig& base, const AblationGrid& grid,
                                       const std::function<void(const AblationRow&)>& on_row = {}) {
    std::vector<AblationRow> rows;
    for (auto g : grid.groundings)
        for (auto r : grid.refinements)
            for (double eta : grid.etas)
                for (double lambda : grid.lambdas) {
                    TrainConfig cfg = base;
                    cfg.loss.grounding = g;
                    cfg.loss.refinement = r;
                    cfg.loss.eta = eta;
                    cfg.loss.lambda = lambda;
                    const auto res = train(data, cfg);
                    AblationRow row{g, r, eta, lambda, 0.0, 0.0};
                    bool first = true;
                    for (const auto& m : res.history) {
                        if (first || m.val_accuracy > row.val_acc) {
                            row.val_acc = m.val_accuracy;
                            row.test_acc = m.test_accuracy;
                            first = false;
                        }
                    }
                    rows.push_back(row);
                    if (on_row)
                        on_row(row);
                }
    return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "grounding,refinement,eta,lambda,val_acc,test_acc\n";
    for (const auto& r : rows)
        out << to_string(r.grounding) << ',' << to_string(r.refinement) << ',' << format_number(r.eta) << ','
            << format_number(r.lambda) << ',' << format_number(r.val_acc) << ',' << format_number(r.test_acc)
            << '\n';
    if (!out)
        throw std::runtime_error("write to '" + path + "' failed");
}

} // namespace vgloss
