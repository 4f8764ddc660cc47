#pragma once

// Bias-corrected Adam over a fixed parameter list.

#include <vector>

#include "volshift/tensor.hpp"

namespace volshift {

struct AdamConfig {
    double lr = 0.0002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct AdamStateT {
    AdamConfig cfg;
    std::vector<std::vector<T>> m;  // first moments, one buffer per parameter
    std::vector<std::vector<T>> v;  // second moments
    int64_t step = 0;
};

using AdamState = AdamStateT<float>;

template <typename T>
AdamStateT<T> make_adam_state(const std::vector<TensorT<T>>& params, AdamConfig cfg = {}) {
    if (cfg.lr <= 0) throw ConfigError(strf("adam: lr must be > 0, got ", cfg.lr));
    AdamStateT<T> st;
    st.cfg = cfg;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
        st.m.emplace_back(size_t(p.numel()), T(0));
        st.v.emplace_back(size_t(p.numel()), T(0));
    }
    return st;
}

// One update over all parameters. Parameters with no accumulated gradient
// are treated as zero-gradient (moments decay).
template <typename T>
void adam_step(std::vector<TensorT<T>>& params, AdamStateT<T>& state) {
    if (params.size() != state.m.size())
        throw ShapeError(strf("adam: ", params.size(), " params vs state for ", state.m.size()));
    state.step += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, double(state.step));
    const double bc2 = 1.0 - std::pow(b2, double(state.step));
    const double lr = state.cfg.lr, eps = state.cfg.epsilon;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        if (int64_t(state.m[pi].size()) != p.numel())
            throw ShapeError(strf("adam: state size ", state.m[pi].size(), " vs param ", p.numel(),
                                  " at index ", pi));
        T* pv = p.data();
        T* m = state.m[pi].data();
        T* v = state.v[pi].data();
        const bool hasg = p.has_grad();
        const T* g = hasg ? p.grad_ref().data() : nullptr;
        const int64_t n = p.numel();
        for (int64_t i = 0; i < n; ++i) {
            double gi = hasg ? double(g[i]) : 0.0;
            double mi = b1 * double(m[i]) + (1 - b1) * gi;
            double vi = b2 * double(v[i]) + (1 - b2) * gi * gi;
            m[i] = T(mi);
            v[i] = T(vi);
            pv[i] = T(double(pv[i]) - lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
        }
    }
}

}  // namespace volshift
