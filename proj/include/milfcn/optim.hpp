#pragma once

#include <cstdint>
#include <vector>

#include "milfcn/tensor.hpp"

namespace milfcn {

struct OptimHyper {
    double learning_rate = 0.0001;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    long long iterations = 0;

    void validate() const;
};

struct OptimState {
    std::vector<Tensor> velocities;  // shapes mirror the parameters
    std::uint64_t iteration = 0;

    static OptimState for_params(const std::vector<Tensor>& params);
    OptimState clone() const;
};

// v <- mu*v + (g + lambda*w);  w <- w - eta*v. Gradients are read from each
// parameter's grad buffer; a parameter without one contributes g = 0.
void sgd_step(const std::vector<Tensor>& params, OptimState& state, const OptimHyper& hyper);

}  // namespace milfcn
