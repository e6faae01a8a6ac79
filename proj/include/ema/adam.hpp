#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ema/tensor.hpp"

namespace ema {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::int64_t t = 0;
};

inline AdamState make_adam_state(const std::vector<Tensor>& params, AdamConfig cfg = {}) {
    AdamState st;
    st.cfg = cfg;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
        st.m.emplace_back(p.size(), 0.0);
        st.v.emplace_back(p.size(), 0.0);
    }
    return st;
}

// Canonical Adam update with bias correction; reads each parameter's grad.
inline void adam_step(std::vector<Tensor>& params, AdamState& st) {
    if (params.size() != st.m.size())
        throw ShapeError("adam_step: state tracks " + std::to_string(st.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = params[k];
        if (p.size() != st.m[k].size())
            throw ShapeError("adam_step: parameter " + std::to_string(k) + " has " +
                             std::to_string(p.size()) + " elements, state has " +
                             std::to_string(st.m[k].size()));
        const std::vector<double>& g = p.grad();
        for (std::size_t i = 0; i < p.size(); ++i) {
            st.m[k][i] = st.cfg.beta1 * st.m[k][i] + (1.0 - st.cfg.beta1) * g[i];
            st.v[k][i] = st.cfg.beta2 * st.v[k][i] + (1.0 - st.cfg.beta2) * g[i] * g[i];
            const double mhat = st.m[k][i] / bc1;
            const double vhat = st.v[k][i] / bc2;
            p.data()[i] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
        }
    }
}

class Adam {
public:
    explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {})
        : params_(std::move(params)), state_(make_adam_state(params_, cfg)) {}

    void step() { adam_step(params_, state_); }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::int64_t t() const { return state_.t; }
    const AdamState& state() const { return state_; }

private:
    std::vector<Tensor> params_;
    AdamState state_;
};

}  // namespace ema
