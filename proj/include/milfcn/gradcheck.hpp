#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "milfcn/tensor.hpp"

namespace milfcn {

struct GradCheckReport {
    double max_rel_error = 0.0;
    bool pass = false;
    double step = 0.0;
    double tolerance = 0.0;
    // flat index into the concatenated parameter vector where the worst
    // relative error (or the first non-finite evaluation) occurred
    long long worst_index = -1;
    bool finite = true;
    long long nonfinite_index = -1;
};

// Central differences (f(p+h) - f(p-h)) / 2h for every entry of every
// parameter tensor, compared against the supplied backward-mode gradients.
// Relative error uses a max(|a|,|b|,1e-12) denominator. `f` must evaluate the
// scalar objective at the parameters' current values; entries are perturbed in
// place and restored.
GradCheckReport finite_diff_check(const std::function<double()>& f, const std::vector<Tensor>& params,
                                  const std::vector<std::vector<double>>& analytic_grads, double step,
                                  double tolerance);

struct NetworkConfig;

enum class GradCheckLoss { kMil, kImageLabel };

struct NetGradCheckSummary {
    int instances = 0;
    double max_rel_error = 0.0;
    bool pass = false;
    double seconds = 0.0;
};

// Runs the finite-difference sweep over all parameters of a network composed
// with the chosen loss on `instances` random instances. Instances are
// resampled until every selected argmax is unique by a probability margin
// > 1e-3 and the evaluation point sits away from relu/maxpool kinks. Entries
// whose relative error exceeds the tolerance at the base step are
// re-certified at 2x and 4x the step (rounding noise dominates central
// differences of near-zero gradients; a wrong gradient fails at every step).
// Instances are independent, so they are distributed over `threads` workers;
// the result does not depend on the thread count.
NetGradCheckSummary check_network_gradients(const NetworkConfig& config, GradCheckLoss loss, int instances,
                                            std::uint64_t seed, double step, double tolerance, int threads = 0);

}  // namespace milfcn
