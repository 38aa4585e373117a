#include "milfcn/optim.hpp"

#include <stdexcept>
#include <string>

namespace milfcn {

void OptimHyper::validate() const {
    if (!(learning_rate > 0.0)) {
        throw std::invalid_argument("hyper: learning rate must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("hyper: momentum must lie in [0,1)");
    }
    if (!(weight_decay >= 0.0)) {
        throw std::invalid_argument("hyper: weight decay must be non-negative");
    }
    if (iterations < 0) {
        throw std::invalid_argument("hyper: iteration count must be non-negative");
    }
}

OptimState OptimState::for_params(const std::vector<Tensor>& params) {
    OptimState state;
    for (const Tensor& p : params) {
        state.velocities.push_back(Tensor::zeros(p.shape()));
    }
    return state;
}

OptimState OptimState::clone() const {
    OptimState c;
    c.iteration = iteration;
    for (const Tensor& v : velocities) {
        c.velocities.push_back(v.detached_copy());
    }
    return c;
}

void sgd_step(const std::vector<Tensor>& params, OptimState& state, const OptimHyper& hyper) {
    if (params.size() != state.velocities.size()) {
        throw std::invalid_argument("sgd_step: " + std::to_string(params.size()) + " parameters vs " +
                                    std::to_string(state.velocities.size()) + " velocity buffers");
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor p = params[t];
        Tensor& vel = state.velocities[t];
        if (vel.shape() != p.shape()) {
            throw std::invalid_argument("sgd_step: velocity shape " + shape_str(vel.shape()) +
                                        " does not match parameter shape " + shape_str(p.shape()));
        }
        const bool has_grad = p.has_grad();
        const double* g = has_grad ? p.grad().data() : nullptr;
        double* w = p.data();
        double* v = vel.data();
        const int n = p.size();
        for (int i = 0; i < n; ++i) {
            const double grad = (has_grad ? g[i] : 0.0) + hyper.weight_decay * w[i];
            v[i] = hyper.momentum * v[i] + grad;
            w[i] -= hyper.learning_rate * v[i];
        }
    }
    ++state.iteration;
}

}  // namespace milfcn
