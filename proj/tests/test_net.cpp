#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "milfcn/net.hpp"
#include "milfcn/rng.hpp"

using namespace milfcn;

TEST_CASE("config validation and derived quantities") {
    NetworkConfig config;
    CHECK(config.num_classes() == 5);
    CHECK(config.pool_stages() == 2);
    CHECK_NOTHROW(config.validate());

    NetworkConfig bad = config;
    bad.downsample = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = config;
    bad.downsample = 16;  // would need 4 pooling stages, only 3 exist
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = config;
    bad.kernel_size = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = config;
    bad.num_fg_classes = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("score layer always has one channel per class plus background") {
    NetworkConfig config;
    config.num_fg_classes = 4;
    Network net = build_network(config, 1);
    CHECK(net.score_kernel.shape()[0] == 5);
    CHECK(net.score_bias.shape()[0] == 5);
}

TEST_CASE("parameter count matches the hand formula for the default config") {
    Network net = build_network(NetworkConfig{}, 1);
    // stage0 16*3*9+16, stage1 32*16*9+32, stage2 64*32*9+64, score 5*64+5
    const long long expected = (16 * 3 * 9 + 16) + (32 * 16 * 9 + 32) + (64 * 32 * 9 + 64) + (5 * 64 + 5);
    CHECK(expected == 23909);
    CHECK(net.parameter_count() == expected);
    CHECK(net.parameters().size() == 8);
    CHECK(net.named_parameters()[0].first == "stage0.kernel");
    CHECK(net.named_parameters()[7].first == "score.bias");
}

TEST_CASE("initialization is deterministic in the seed") {
    Network a = build_network(NetworkConfig{}, 42);
    Network b = build_network(NetworkConfig{}, 42);
    Network c = build_network(NetworkConfig{}, 43);
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    const auto pc = c.parameters();
    bool all_equal = true;
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        all_equal = all_equal && pa[i].values() == pb[i].values();
        any_diff = any_diff || pa[i].values() != pc[i].values();
    }
    CHECK(all_equal);
    CHECK(any_diff);

    // biases start at zero, kernels within the fan-in bound
    for (double v : a.stage_biases[0].values()) {
        CHECK(v == 0.0);
    }
    const double bound = 1.0 / std::sqrt(3.0 * 9.0);
    for (double v : a.stage_kernels[0].values()) {
        CHECK(std::abs(v) <= bound);
    }
}

namespace {

Tensor random_image(Rng& rng, int h, int w) {
    Tensor t = Tensor::zeros({3, h, w});
    for (double& v : t.values()) {
        v = rng.uniform();
    }
    return t;
}

}  // namespace

TEST_CASE("forward produces coarse heatmaps at exactly H/d x W/d") {
    Network net = build_network(NetworkConfig{}, 5);
    Rng rng(6);

    struct Case {
        int h, w;
    };
    for (const Case c : {Case{64, 64}, Case{96, 64}, Case{128, 128}, Case{4, 4}, Case{16, 48}}) {
        Graph g;
        Tensor scores = net.forward(g, random_image(rng, c.h, c.w));
        CHECK(scores.shape() == std::vector<int>{5, c.h / 4, c.w / 4});
    }
}

TEST_CASE("forward is deterministic and rejects incompatible inputs") {
    Network net = build_network(NetworkConfig{}, 5);
    Rng rng(6);
    Tensor img = random_image(rng, 16, 16);

    Graph g1;
    Graph g2;
    CHECK(net.forward(g1, img).values() == net.forward(g2, img).values());

    Graph g3;
    try {
        net.forward(g3, random_image(rng, 66, 64));
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("pad to 68x64") != std::string::npos);
    }
    CHECK_THROWS_AS(net.forward(g3, Tensor::zeros({1, 16, 16})), std::invalid_argument);
    CHECK_THROWS_AS(net.forward(g3, Tensor::zeros({3, 2, 4})), std::invalid_argument);  // smaller than d
}

TEST_CASE("all-zero parameters give all-zero scores") {
    Network net = build_network(NetworkConfig{}, 5);
    for (Tensor& t : net.stage_kernels) {
        std::fill(t.values().begin(), t.values().end(), 0.0);
    }
    std::fill(net.score_kernel.values().begin(), net.score_kernel.values().end(), 0.0);
    Rng rng(1);
    Graph g;
    Tensor scores = net.forward(g, random_image(rng, 16, 16));
    for (double v : scores.values()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("classifier weight transfer") {
    Network target = build_network(NetworkConfig{}, 1);
    Network pretrained = build_network(NetworkConfig{}, 2);
    // make the pretrained background channel visibly non-zero first
    const int classes = pretrained.config.num_classes();
    const int row = pretrained.score_kernel.size() / classes;
    for (int i = 0; i < row; ++i) {
        pretrained.score_kernel.data()[i] = 0.5;
    }
    pretrained.score_bias.data()[0] = -0.25;

    Network moved = transfer_classifier_weights(target, pretrained);

    // background channel exactly zero
    for (int i = 0; i < row; ++i) {
        CHECK(moved.score_kernel.data()[i] == 0.0);
    }
    CHECK(moved.score_bias.data()[0] == 0.0);

    // foreground channels and feature stages bitwise from the pretrained net
    for (int i = row; i < moved.score_kernel.size(); ++i) {
        CHECK(moved.score_kernel.data()[i] == pretrained.score_kernel.data()[i]);
    }
    for (int c = 1; c < classes; ++c) {
        CHECK(moved.score_bias.data()[c] == pretrained.score_bias.data()[c]);
    }
    for (std::size_t s = 0; s < moved.stage_kernels.size(); ++s) {
        CHECK(moved.stage_kernels[s].values() == pretrained.stage_kernels[s].values());
        CHECK(moved.stage_biases[s].values() == pretrained.stage_biases[s].values());
    }

    // transfer is idempotent
    Network twice = transfer_classifier_weights(target, pretrained);
    const auto pa = twice.parameters();
    const auto pb = moved.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].values() == pb[i].values());
    }

    // config mismatch rejected
    NetworkConfig other;
    other.num_fg_classes = 2;
    CHECK_THROWS_AS(transfer_classifier_weights(build_network(other, 1), pretrained), std::invalid_argument);
}

TEST_CASE("transferred network has identically zero background scores") {
    Network pretrained = build_network(NetworkConfig{}, 9);
    Rng rng(10);
    for (Tensor& b : pretrained.stage_biases) {
        for (double& v : b.values()) {
            v = rng.uniform(-0.2, 0.2);
        }
    }
    Network net = transfer_classifier_weights(pretrained, pretrained);

    Graph g;
    Tensor scores = net.forward(g, random_image(rng, 24, 16));
    const int hw = scores.shape()[1] * scores.shape()[2];
    for (int i = 0; i < hw; ++i) {
        CHECK(scores.data()[i] == 0.0);  // channel 0
    }

    // background softmax probability equals 1 / sum_k exp(s_k) with s_0 = 0
    Tensor probs = g.softmax_channels(scores);
    for (int px = 0; px < hw; ++px) {
        double denom = 0.0;
        for (int c = 0; c < 5; ++c) {
            denom += std::exp(scores.data()[c * hw + px]);
        }
        CHECK(std::abs(probs.data()[px] - 1.0 / denom) <= 1e-12);
    }
}

TEST_CASE("clone is deep and zero_grads clears buffers") {
    Network net = build_network(NetworkConfig{}, 3);
    Network copy = net.clone();
    copy.stage_kernels[0].data()[0] += 1.0;
    CHECK(net.stage_kernels[0].data()[0] != copy.stage_kernels[0].data()[0]);

    Tensor p = net.stage_biases[0];
    p.grad()[0] = 5.0;
    net.zero_grads();
    CHECK(net.stage_biases[0].grad()[0] == 0.0);
}
