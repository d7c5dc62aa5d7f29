#ifndef NOF1_ADAM_HPP
#define NOF1_ADAM_HPP

#include <cstdint>
#include <vector>

#include "nof1/common.hpp"
#include "nof1/tensor.hpp"

namespace nof1 {

/// Adam with bias correction. Moment buffers are allocated lazily to match
/// the parameter list on the first step and stay congruent afterwards.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), 0.0);
            state.v[i].assign(params[i].size(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw UsageError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad())
            throw UsageError("adam_step: parameter " + std::to_string(i) + " has no gradient");
        if (state.m[i].size() != params[i].size())
            throw UsageError("adam_step: moment buffer " + std::to_string(i) + " not shape-congruent");
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i].data().data();
        const double* g = params[i].grad().data();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        const std::size_t n = params[i].size();
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

inline void zero_grads(std::vector<Tensor>& params) {
    for (Tensor& p : params) p.zero_grad();
}

}  // namespace nof1

#endif
