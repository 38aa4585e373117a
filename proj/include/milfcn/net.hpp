#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "milfcn/tensor.hpp"

namespace milfcn {

// Toy fully convolutional stack: conv(k)-relu per stage, a maxpool2 after each
// of the first log2(downsample) stages, then a 1x1 score convolution with
// num_fg_classes + 1 outputs. Channel 0 of the scores is background.
struct NetworkConfig {
    int num_fg_classes = 4;
    std::vector<int> stage_widths = {16, 32, 64};
    int kernel_size = 3;
    int downsample = 4;
    int input_channels = 3;

    int num_classes() const { return num_fg_classes + 1; }
    int num_stages() const { return static_cast<int>(stage_widths.size()); }
    int pool_stages() const;
    void validate() const;

    bool operator==(const NetworkConfig&) const = default;
};

// Intermediate activations of one forward pass, for kink inspection.
struct ForwardTrace {
    std::vector<Tensor> conv_outputs;  // pre-relu, one per stage
    std::vector<Tensor> pool_inputs;   // relu outputs that feed a maxpool2
};

struct Network {
    NetworkConfig config;
    std::vector<Tensor> stage_kernels;
    std::vector<Tensor> stage_biases;
    Tensor score_kernel;  // [classes, last_width, 1, 1]
    Tensor score_bias;    // [classes]

    // stable order: stage kernels/biases in stage order, then score layer
    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    long long parameter_count() const;

    Network clone() const;
    void zero_grads() const;

    // Any-size forward pass: image [input_channels,H,W] with H, W multiples
    // of the downsample factor -> raw class scores [classes, H/d, W/d].
    Tensor forward(Graph& g, const Tensor& image) const;
    Tensor forward(Graph& g, const Tensor& image, ForwardTrace* trace) const;
};

// Fan-in-scaled uniform weights, zero biases, deterministic in the seed.
Network build_network(const NetworkConfig& config, std::uint64_t seed);

// All feature-stage and foreground score parameters come from `pretrained`;
// the background score channel is zero-initialized. Configs must match.
Network transfer_classifier_weights(const Network& net, const Network& pretrained);

}  // namespace milfcn
