// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file: a JSON object
//   {"format": "vgloss-head", "version": 1,
//    "config": {"text_dim": t, "visual_dim": v, "hidden": c, "leaky_slope": s},
//    "params": {"W_fuse": {"shape": [r, c], "values": [...row-major...]}, ...}}
#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "vgloss/errors.hpp"
#include "vgloss/model.hpp"

namespace vgloss {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const HeadParameters& p) {
    nlohmann::json params = nlohmann::json::object();
    p.for_each([&](const char* name, const Matrix& m) {
        params[name] = {{"shape", {m.rows(), m.cols()}}, {"values", m.values()}};
    });
    return {{"format", "vgloss-head"},
            {"version", kCheckpointVersion},
            {"config",
             {{"text_dim", p.config.text_dim},
              {"visual_dim", p.config.visual_dim},
              {"hidden", p.config.hidden},
              {"leaky_slope", p.config.leaky_slope}}},
            {"params", std::move(params)}};
}

inline HeadParameters checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "vgloss-head")
            throw SchemaError("checkpoint: unknown format");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw SchemaError("checkpoint: unsupported version");
        const auto& c = j.at("config");
        HeadConfig cfg{c.at("text_dim").get<std::size_t>(), c.at("visual_dim").get<std::size_t>(),
                       c.at("hidden").get<std::size_t>(), c.at("leaky_slope").get<double>()};
        auto p = HeadParameters::zeros(cfg);
        const auto& params = j.at("params");
        p.for_each([&](const char* name, Matrix& m) {
            const auto& t = params.at(name);
            const auto shape = t.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
                throw SchemaError(std::string("checkpoint: tensor ") + name + " has the wrong shape");
            auto values = t.at("values").get<std::vector<double>>();
            m = Matrix(shape[0], shape[1], std::move(values));
        });
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("checkpoint: ") + e.what());
    } catch (const InvalidInput& e) {
        throw SchemaError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const HeadParameters& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out << checkpoint_to_json(p).dump() << '\n';
    if (!out)
        throw std::runtime_error("write to '" + path + "' failed");
}

inline HeadParameters load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("checkpoint: ") + e.what());
    }
    return checkpoint_from_json(j);
}

} // namespace vgloss
