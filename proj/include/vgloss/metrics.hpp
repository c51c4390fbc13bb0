// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vgloss/dataset.hpp"
#include "vgloss/errors.hpp"
#include "vgloss/geometry.hpp"

namespace vgloss {

/// Minimal enclosing box of all ground truths of a phrase.
inline CornerBoxd merge_gt_boxes(std::span<const CornerBoxd> boxes) {
    if (boxes.empty())
        throw InvalidInput("merge_gt_boxes: no boxes");
    CornerBoxd out = boxes.front();
    for (const auto& b : boxes.subspan(1))
        out = enclose(out, b);
    return out;
}

/// A prediction is correct when its IoU with the merged ground truth is at least 0.5.
inline constexpr double kAccuracyIouThreshold = 0.5;

inline bool is_hit(const CornerBoxd& pred, const CornerBoxd& gt) {
    return iou(pred, gt) >= kAccuracyIouThreshold;
}

inline bool is_point_hit(const CornerBoxd& pred, const CornerBoxd& gt) {
    return point_in_box((pred.x1 + pred.x2) / 2.0, (pred.y1 + pred.y2) / 2.0, gt);
}

inline double accuracy(std::span<const CornerBoxd> preds, std::span<const CornerBoxd> gts) {
    if (preds.size() != gts.size())
        throw InvalidInput("accuracy: predictions and ground truths are not aligned");
    if (preds.empty())
        return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        hits += is_hit(preds[i], gts[i]);
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

inline double point_game_accuracy(std::span<const CornerBoxd> preds, std::span<const CornerBoxd> gts) {
    if (preds.size() != gts.size())
        throw InvalidInput("point_game_accuracy: predictions and ground truths are not aligned");
    if (preds.empty())
        return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        hits += is_point_hit(preds[i], gts[i]);
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

struct MetricReport {
    double accuracy = 0.0;
    double point_game_accuracy = 0.0;
    std::size_t n_queries = 0;
};

/// Align prediction records with the dataset's queries by (image_id, query_index)
/// and score them. Missing, duplicate or unmatched records raise InvalidInput.
inline MetricReport evaluate_predictions(const Dataset& data, const std::vector<PredictionRecord>& preds) {
    std::map<std::pair<std::string, std::size_t>, CornerBoxd> by_key;
    for (const auto& p : preds) {
        if (!by_key.emplace(std::pair{p.image_id, p.query_index}, p.box).second)
            throw InvalidInput("duplicate prediction for image " + p.image_id + " query " +
                               std::to_string(p.query_index));
    }
    std::vector<CornerBoxd> aligned_pred, aligned_gt;
    for (const auto& ex : data) {
        for (std::size_t j = 0; j < ex.queries.size(); ++j) {
            auto it = by_key.find({ex.image_id, j});
            if (it == by_key.end())
                throw InvalidInput("missing prediction for image " + ex.image_id + " query " +
                                   std::to_string(j));
            aligned_pred.push_back(it->second);
            aligned_gt.push_back(merge_gt_boxes(ex.queries[j].gt_boxes));
            by_key.erase(it);
        }
    }
    if (!by_key.empty()) {
        const auto& [key, box] = *by_key.begin();
        throw InvalidInput("prediction for image " + key.first + " query " + std::to_string(key.second) +
                           " matches no query in the dataset");
    }
    return {accuracy(aligned_pred, aligned_gt), point_game_accuracy(aligned_pred, aligned_gt),
            aligned_pred.size()};
}

} // namespace vgloss
