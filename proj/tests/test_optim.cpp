#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "milfcn/optim.hpp"

using namespace milfcn;

TEST_CASE("hyperparameter defaults follow the training recipe") {
    OptimHyper hyper;
    CHECK(hyper.learning_rate == 0.0001);
    CHECK(hyper.momentum == 0.9);
    CHECK(hyper.weight_decay == 0.0005);
    CHECK_NOTHROW(hyper.validate());

    OptimHyper bad = hyper;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = hyper;
    bad.momentum = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = hyper;
    bad.weight_decay = -0.1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("zero gradient, zero decay and zero velocity is a fixed point") {
    Tensor w = Tensor::from_values({3}, {1.0, -2.0, 0.5});
    const std::vector<double> before = w.values();
    std::vector<Tensor> params = {w};
    OptimState state = OptimState::for_params(params);
    for (const Tensor& v : state.velocities) {
        for (double x : v.values()) {
            CHECK(x == 0.0);
        }
    }

    OptimHyper hyper;
    hyper.weight_decay = 0.0;
    w.zero_grad();
    sgd_step(params, state, hyper);
    CHECK(w.values() == before);
    CHECK(state.iteration == 1);
}

TEST_CASE("hand-applied update: w=1, g=0.5, eta=0.1, mu=0.9") {
    Tensor w = Tensor::from_values({1}, {1.0});
    std::vector<Tensor> params = {w};
    OptimState state = OptimState::for_params(params);
    OptimHyper hyper;
    hyper.learning_rate = 0.1;
    hyper.momentum = 0.9;
    hyper.weight_decay = 0.0;

    w.grad()[0] = 0.5;
    sgd_step(params, state, hyper);
    CHECK(state.velocities[0].data()[0] == 0.5);
    CHECK(w.data()[0] == 0.95);

    // second step with the same gradient: v = 0.9*0.5 + 0.5 = 0.95, w -= 0.095
    w.grad()[0] = 0.5;
    sgd_step(params, state, hyper);
    CHECK(state.velocities[0].data()[0] == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(w.data()[0] == doctest::Approx(0.95 - 0.095).epsilon(1e-15));
    CHECK(state.iteration == 2);
}

TEST_CASE("weight decay folds into the gradient") {
    Tensor w = Tensor::from_values({1}, {2.0});
    std::vector<Tensor> params = {w};
    OptimState state = OptimState::for_params(params);
    OptimHyper hyper;
    hyper.learning_rate = 0.5;
    hyper.momentum = 0.0;
    hyper.weight_decay = 0.1;

    w.zero_grad();
    sgd_step(params, state, hyper);
    // v = 0 + (0 + 0.1*2) = 0.2; w = 2 - 0.5*0.2 = 1.9
    CHECK(w.data()[0] == 1.9);
}

TEST_CASE("state shape mismatches are rejected") {
    Tensor w = Tensor::zeros({2, 2});
    std::vector<Tensor> params = {w};
    OptimState state = OptimState::for_params({Tensor::zeros({3})});
    OptimHyper hyper;
    CHECK_THROWS_AS(sgd_step(params, state, hyper), std::invalid_argument);

    OptimState empty;
    CHECK_THROWS_AS(sgd_step(params, empty, hyper), std::invalid_argument);
}
