#include "milfcn/net.hpp"

#include <cmath>
#include <stdexcept>

#include "milfcn/rng.hpp"

namespace milfcn {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) {
        throw std::invalid_argument(msg);
    }
}

}  // namespace

int NetworkConfig::pool_stages() const {
    int n = 0;
    int d = downsample;
    while (d > 1) {
        d /= 2;
        ++n;
    }
    return n;
}

void NetworkConfig::validate() const {
    require(num_fg_classes > 0, "config: num_fg_classes must be positive");
    require(!stage_widths.empty(), "config: at least one stage is required");
    for (int w : stage_widths) {
        require(w > 0, "config: stage widths must be positive");
    }
    require(kernel_size > 0 && kernel_size % 2 == 1, "config: kernel size must be odd and positive");
    require(input_channels > 0, "config: input channels must be positive");
    require(downsample >= 1 && (downsample & (downsample - 1)) == 0,
            "config: downsample must be a power of two, got " + std::to_string(downsample));
    require(pool_stages() <= num_stages(),
            "config: downsample " + std::to_string(downsample) + " needs " + std::to_string(pool_stages()) +
                " pooling stages but only " + std::to_string(num_stages()) + " stages exist");
}

std::vector<Tensor> Network::parameters() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < stage_kernels.size(); ++i) {
        out.push_back(stage_kernels[i]);
        out.push_back(stage_biases[i]);
    }
    out.push_back(score_kernel);
    out.push_back(score_bias);
    return out;
}

std::vector<std::pair<std::string, Tensor>> Network::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < stage_kernels.size(); ++i) {
        const std::string stage = "stage" + std::to_string(i);
        out.emplace_back(stage + ".kernel", stage_kernels[i]);
        out.emplace_back(stage + ".bias", stage_biases[i]);
    }
    out.emplace_back("score.kernel", score_kernel);
    out.emplace_back("score.bias", score_bias);
    return out;
}

long long Network::parameter_count() const {
    long long n = 0;
    for (const Tensor& t : parameters()) {
        n += t.size();
    }
    return n;
}

Network Network::clone() const {
    Network c;
    c.config = config;
    for (const Tensor& k : stage_kernels) {
        c.stage_kernels.push_back(k.detached_copy());
    }
    for (const Tensor& b : stage_biases) {
        c.stage_biases.push_back(b.detached_copy());
    }
    c.score_kernel = score_kernel.detached_copy();
    c.score_bias = score_bias.detached_copy();
    return c;
}

void Network::zero_grads() const {
    for (const Tensor& t : parameters()) {
        Tensor(t).zero_grad();
    }
}

Tensor Network::forward(Graph& g, const Tensor& image) const {
    return forward(g, image, nullptr);
}

Tensor Network::forward(Graph& g, const Tensor& image, ForwardTrace* trace) const {
    require(image.defined() && image.rank() == 3, "forward: image must be [C,H,W]");
    require(image.shape()[0] == config.input_channels,
            "forward: image has " + std::to_string(image.shape()[0]) + " channels, network expects " +
                std::to_string(config.input_channels));
    const int h = image.shape()[1];
    const int w = image.shape()[2];
    const int d = config.downsample;
    if (h % d != 0 || w % d != 0 || h < d || w < d) {
        const int ph = (h + d - 1) / d * d;
        const int pw = (w + d - 1) / d * d;
        throw std::invalid_argument("forward: input " + std::to_string(h) + "x" + std::to_string(w) +
                                    " is not a positive multiple of the downsample factor " + std::to_string(d) +
                                    "; pad to " + std::to_string(ph) + "x" + std::to_string(pw));
    }

    const int pools = config.pool_stages();
    Tensor x = image;
    for (int s = 0; s < config.num_stages(); ++s) {
        x = g.conv2d(x, stage_kernels[s], stage_biases[s], 1, config.kernel_size / 2);
        if (trace) {
            trace->conv_outputs.push_back(x);
        }
        x = g.relu(x);
        if (s < pools) {
            if (trace) {
                trace->pool_inputs.push_back(x);
            }
            x = g.maxpool2(x);
        }
    }
    return g.conv2d(x, score_kernel, score_bias, 1, 0);
}

Network build_network(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);

    auto init_kernel = [&rng](std::vector<int> shape) {
        const int fan_in = shape[1] * shape[2] * shape[3];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.values()) {
            v = rng.uniform(-bound, bound);
        }
        return t;
    };

    Network net;
    net.config = config;
    int prev = config.input_channels;
    for (int width : config.stage_widths) {
        net.stage_kernels.push_back(init_kernel({width, prev, config.kernel_size, config.kernel_size}));
        net.stage_biases.push_back(Tensor::zeros({width}));
        prev = width;
    }
    net.score_kernel = init_kernel({config.num_classes(), prev, 1, 1});
    net.score_bias = Tensor::zeros({config.num_classes()});
    return net;
}

Network transfer_classifier_weights(const Network& net, const Network& pretrained) {
    require(net.config == pretrained.config, "transfer: network configs differ");
    Network out = pretrained.clone();

    // background channel: zero kernel row and bias
    const int classes = out.config.num_classes();
    const int row = out.score_kernel.size() / classes;
    double* k = out.score_kernel.data();
    for (int i = 0; i < row; ++i) {
        k[i] = 0.0;
    }
    out.score_bias.data()[0] = 0.0;
    return out;
}

}  // namespace milfcn
