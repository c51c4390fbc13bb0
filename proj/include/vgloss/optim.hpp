// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "vgloss/model.hpp"
#include "vgloss/rng.hpp"
#include "vgloss/table.hpp"

namespace vgloss {

/// Glorot/Xavier uniform: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
inline Matrix xavier_uniform(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    for (double& x : w.values())
        x = rng.uniform(-a, a);
    return w;
}

/// Xavier weights, zero biases.
inline HeadParameters init_head(const HeadConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    auto p = HeadParameters::zeros(config);
    p.w_fuse = xavier_uniform(config.hidden, config.input_dim(), rng);
    p.w_g = xavier_uniform(1, config.hidden, rng);
    p.w_box = xavier_uniform(4, config.hidden, rng);
    return p;
}

/// lr0 * decay^epoch
inline double exponential_lr(double lr0, double decay, std::size_t epoch) {
    return lr0 * std::pow(decay, static_cast<double>(epoch));
}

class Adam {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void step(HeadParameters& params, const HeadParameters& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        params.for_each([&](const char* name, Matrix& p) {
            const Matrix& g = tensor(grads, name);
            auto& [m, v] = moments(name, p);
            auto& pv = p.values();
            const auto& gv = g.values();
            for (std::size_t i = 0; i < pv.size(); ++i) {
                m.values()[i] = beta1 * m.values()[i] + (1.0 - beta1) * gv[i];
                v.values()[i] = beta2 * v.values()[i] + (1.0 - beta2) * gv[i] * gv[i];
                const double mhat = m.values()[i] / c1;
                const double vhat = v.values()[i] / c2;
                pv[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        });
    }

    std::size_t steps() const noexcept { return t_; }

private:
    static const Matrix& tensor(const HeadParameters& p, const std::string& name) {
        const Matrix* out = nullptr;
        p.for_each([&](const char* n, const Matrix& m) {
            if (name == n)
                out = &m;
        });
        return *out;
    }

    std::pair<Matrix, Matrix>& moments(const std::string& name, const Matrix& like) {
        auto it = state_.find(name);
        if (it == state_.end())
            it = state_.emplace(name, std::pair{Matrix(like.rows(), like.cols()),
                                                Matrix(like.rows(), like.cols())}).first;
        return it->second;
    }

    std::size_t t_ = 0;
    std::map<std::string, std::pair<Matrix, Matrix>> state_;
};

} // namespace vgloss
