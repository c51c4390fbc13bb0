// SPDX-License-Identifier: Apache-2.0
//
// Grounding examples and prediction records, and their line-delimited JSON files.
//
// Example line:
//   {"image_id": "...", "width": W, "height": H,
//    "proposals": [{"box": [x1,y1,x2,y2], "class_probs": [...], "visual_feat": [...]}, ...],
//    "queries":   [{"text_feat": [...], "gt_boxes": [[x1,y1,x2,y2], ...]}, ...]}
// Prediction line:
//   {"image_id": "...", "query_index": j, "box": [x1,y1,x2,y2]}
#pragma once

#include <cstddef>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgloss/errors.hpp"
#include "vgloss/geometry.hpp"

namespace vgloss {

struct Proposal {
    CornerBoxd box; // pixels
    std::vector<double> class_probs;
    std::vector<double> visual_feat;

    friend bool operator==(const Proposal&, const Proposal&) = default;
};

struct Query {
    std::vector<double> text_feat;
    std::vector<CornerBoxd> gt_boxes; // pixels, at least one

    friend bool operator==(const Query&, const Query&) = default;
};

struct GroundingExample {
    std::string image_id;
    double image_w = 0.0;
    double image_h = 0.0;
    std::vector<Proposal> proposals;
    std::vector<Query> queries;

    friend bool operator==(const GroundingExample&, const GroundingExample&) = default;
};

using Dataset = std::vector<GroundingExample>;

struct PredictionRecord {
    std::string image_id;
    std::size_t query_index = 0;
    CornerBoxd box;

    friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// Feature widths shared by every example of a dataset.
struct FeatureDims {
    std::size_t classes = 0;
    std::size_t visual = 0;
    std::size_t text = 0;

    friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

namespace detail {

using nlohmann::json;

inline json box_to_json(const CornerBoxd& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline CornerBoxd box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4)
        throw std::invalid_argument("box must be an array of four numbers");
    for (const auto& v : j)
        if (!v.is_number())
            throw std::invalid_argument("box must be an array of four numbers");
    CornerBoxd b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (!b.valid())
        throw std::invalid_argument("box has x1 > x2 or y1 > y2");
    return b;
}

inline std::vector<double> vec_from_json(const json& j, const char* name) {
    if (!j.is_array())
        throw std::invalid_argument(std::string(name) + " must be an array of numbers");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_number())
            throw std::invalid_argument(std::string(name) + " must be an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

inline const json& field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end())
        throw std::invalid_argument(std::string("missing field '") + name + "'");
    return *it;
}

inline std::string id_from_json(const json& j) {
    if (j.is_string())
        return j.get<std::string>();
    if (j.is_number_integer())
        return std::to_string(j.get<long long>());
    throw std::invalid_argument("image_id must be a string or integer");
}

inline bool within(const CornerBoxd& b, double w, double h) {
    return b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w && b.y2 <= h;
}

} // namespace detail

inline nlohmann::json to_json(const GroundingExample& ex) {
    using nlohmann::json;
    json props = json::array();
    for (const auto& p : ex.proposals)
        props.push_back({{"box", detail::box_to_json(p.box)},
                         {"class_probs", p.class_probs},
                         {"visual_feat", p.visual_feat}});
    json queries = json::array();
    for (const auto& q : ex.queries) {
        json gts = json::array();
        for (const auto& b : q.gt_boxes)
            gts.push_back(detail::box_to_json(b));
        queries.push_back({{"text_feat", q.text_feat}, {"gt_boxes", std::move(gts)}});
    }
    return {{"image_id", ex.image_id},
            {"width", ex.image_w},
            {"height", ex.image_h},
            {"proposals", std::move(props)},
            {"queries", std::move(queries)}};
}

/// Parse and validate one example. Structural problems raise ParseError(line);
/// out-of-bounds boxes raise SchemaError.
inline GroundingExample example_from_json(const nlohmann::json& j, std::size_t line) {
    GroundingExample ex;
    try {
        if (!j.is_object())
            throw std::invalid_argument("expected a JSON object");
        ex.image_id = detail::id_from_json(detail::field(j, "image_id"));
        const auto& w = detail::field(j, "width");
        const auto& h = detail::field(j, "height");
        if (!w.is_number() || !h.is_number())
            throw std::invalid_argument("width and height must be numbers");
        ex.image_w = w.get<double>();
        ex.image_h = h.get<double>();
        const auto& props = detail::field(j, "proposals");
        const auto& queries = detail::field(j, "queries");
        if (!props.is_array() || !queries.is_array())
            throw std::invalid_argument("proposals and queries must be arrays");
        for (const auto& p : props) {
            if (!p.is_object())
                throw std::invalid_argument("proposal must be an object");
            ex.proposals.push_back({detail::box_from_json(detail::field(p, "box")),
                                    detail::vec_from_json(detail::field(p, "class_probs"), "class_probs"),
                                    detail::vec_from_json(detail::field(p, "visual_feat"), "visual_feat")});
        }
        for (const auto& q : queries) {
            if (!q.is_object())
                throw std::invalid_argument("query must be an object");
            Query query;
            query.text_feat = detail::vec_from_json(detail::field(q, "text_feat"), "text_feat");
            const auto& gts = detail::field(q, "gt_boxes");
            if (!gts.is_array())
                throw std::invalid_argument("gt_boxes must be an array");
            for (const auto& b : gts)
                query.gt_boxes.push_back(detail::box_from_json(b));
            ex.queries.push_back(std::move(query));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(line, e.what());
    } catch (const std::invalid_argument& e) {
        throw ParseError(line, e.what());
    }

    const std::string where = "line " + std::to_string(line) + ": ";
    if (!(ex.image_w > 0.0) || !(ex.image_h > 0.0))
        throw SchemaError(where + "image dimensions must be positive");
    if (ex.proposals.empty())
        throw SchemaError(where + "example has no proposals");
    for (const auto& p : ex.proposals)
        if (!detail::within(p.box, ex.image_w, ex.image_h))
            throw SchemaError(where + "proposal box outside the image");
    for (const auto& q : ex.queries) {
        if (q.gt_boxes.empty())
            throw SchemaError(where + "query without ground-truth boxes");
        for (const auto& b : q.gt_boxes)
            if (!detail::within(b, ex.image_w, ex.image_h))
                throw SchemaError(where + "ground-truth box outside the image");
    }
    return ex;
}

/// Feature widths of one example; throws SchemaError if they vary inside it.
inline FeatureDims feature_dims(const GroundingExample& ex) {
    FeatureDims d;
    bool first = true;
    for (const auto& p : ex.proposals) {
        if (first) {
            d.classes = p.class_probs.size();
            d.visual = p.visual_feat.size();
            first = false;
        } else if (p.class_probs.size() != d.classes || p.visual_feat.size() != d.visual) {
            throw SchemaError("image " + ex.image_id + ": proposal feature lengths differ");
        }
    }
    for (std::size_t j = 0; j < ex.queries.size(); ++j) {
        if (j == 0)
            d.text = ex.queries[j].text_feat.size();
        else if (ex.queries[j].text_feat.size() != d.text)
            throw SchemaError("image " + ex.image_id + ": text feature lengths differ");
    }
    return d;
}

/// Feature widths shared by the dataset; throws SchemaError if any example disagrees.
inline FeatureDims dataset_dims(const Dataset& data) {
    FeatureDims d;
    bool have_text = false;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto e = feature_dims(data[i]);
        if (i == 0) {
            d.classes = e.classes;
            d.visual = e.visual;
        } else if (e.classes != d.classes || e.visual != d.visual) {
            throw SchemaError("example " + std::to_string(i + 1) + " (" + data[i].image_id +
                              "): proposal feature lengths differ from the first example");
        }
        if (data[i].queries.empty())
            continue;
        if (!have_text) {
            d.text = e.text;
            have_text = true;
        } else if (e.text != d.text) {
            throw SchemaError("example " + std::to_string(i + 1) + " (" + data[i].image_id +
                              "): text feature length differs");
        }
    }
    return d;
}

inline void write_examples(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& ex : data)
        out << to_json(ex).dump() << '\n';
    if (!out)
        throw std::runtime_error("write to '" + path + "' failed");
}

inline Dataset read_examples(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open '" + path + "'");
    Dataset data;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line, e.what());
        }
        data.push_back(example_from_json(j, line));
    }
    dataset_dims(data);
    return data;
}

inline void write_predictions(const std::vector<PredictionRecord>& preds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& p : preds) {
        const nlohmann::json j{{"image_id", p.image_id},
                               {"query_index", p.query_index},
                               {"box", detail::box_to_json(p.box)}};
        out << j.dump() << '\n';
    }
    if (!out)
        throw std::runtime_error("write to '" + path + "' failed");
}

inline std::vector<PredictionRecord> read_predictions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open '" + path + "'");
    std::vector<PredictionRecord> preds;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            const auto j = nlohmann::json::parse(text);
            if (!j.is_object())
                throw std::invalid_argument("expected a JSON object");
            const auto& qi = detail::field(j, "query_index");
            if (!qi.is_number_unsigned() && !(qi.is_number_integer() && qi.get<long long>() >= 0))
                throw std::invalid_argument("query_index must be a nonnegative integer");
            preds.push_back({detail::id_from_json(detail::field(j, "image_id")),
                             qi.get<std::size_t>(), detail::box_from_json(detail::field(j, "box"))});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line, e.what());
        } catch (const std::invalid_argument& e) {
            throw ParseError(line, e.what());
        }
    }
    return preds;
}

} // namespace vgloss
