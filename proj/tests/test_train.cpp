#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "milfcn/netpbm.hpp"
#include "milfcn/rng.hpp"
#include "milfcn/train.hpp"

using namespace milfcn;
namespace fs = std::filesystem;

namespace {

// independent per-class set counting, one class at a time
IuReport brute_force_iu(const std::vector<Mask>& preds, const std::vector<Mask>& gts, int num_classes) {
    IuReport r;
    r.per_class_iu.assign(num_classes, 0.0);
    r.intersections.assign(num_classes, 0);
    r.unions.assign(num_classes, 0);
    for (int c = 0; c < num_classes; ++c) {
        std::uint64_t inter = 0;
        std::uint64_t uni = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            for (std::size_t k = 0; k < preds[i].ids.size(); ++k) {
                const bool in_pred = preds[i].ids[k] == c;
                const bool in_gt = gts[i].ids[k] == c;
                inter += in_pred && in_gt;
                uni += in_pred || in_gt;
            }
        }
        r.intersections[c] = inter;
        r.unions[c] = uni;
        if (uni > 0) {
            r.per_class_iu[c] = static_cast<double>(inter) / static_cast<double>(uni);
            r.mean_iu += r.per_class_iu[c];
            r.classes_in_mean++;
        }
    }
    r.mean_iu = r.classes_in_mean ? r.mean_iu / r.classes_in_mean : 0.0;
    return r;
}

Mask random_mask(Rng& rng, int h, int w, int num_classes) {
    Mask m(h, w);
    for (auto& id : m.ids) {
        id = static_cast<std::uint8_t>(rng.uniform_int(0, num_classes - 1));
    }
    return m;
}

LoadedDataset tiny_dataset(int count, int side, std::uint64_t seed) {
    DatasetSpec spec;
    spec.height = side;
    spec.width = side;
    spec.min_scale = 0.3;
    spec.max_scale = 0.45;
    Rng rng(seed);
    LoadedDataset ds;
    for (int i = 0; i < count; ++i) {
        ds.samples.push_back(generate_sample(spec, rng));
    }
    return ds;
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    return lines;
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "milfcn_train_test";
    fs::create_directories(dir);
    return dir;
}

bool same_params(const Network& a, const Network& b) {
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].values() != pb[i].values()) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("mean_iu: identity, the hand case, and disjoint foreground") {
    Rng rng(1);
    std::vector<Mask> masks = {random_mask(rng, 4, 4, 3), random_mask(rng, 2, 6, 3)};
    IuReport same = mean_iu(masks, masks, 3);
    CHECK(same.mean_iu == 1.0);
    for (int c = 0; c < 3; ++c) {
        if (same.unions[c] > 0) {
            CHECK(same.per_class_iu[c] == 1.0);
        }
    }

    // gt [[0,1],[0,1]] vs pred [[0,0],[1,1]]: class IUs 1/3 and 1/3, mean 1/3
    Mask gt(2, 2);
    gt.ids = {0, 1, 0, 1};
    Mask pred(2, 2);
    pred.ids = {0, 0, 1, 1};
    IuReport hand = mean_iu({pred}, {gt}, 2);
    CHECK(hand.intersections[0] == 1);
    CHECK(hand.unions[0] == 3);
    CHECK(hand.intersections[1] == 1);
    CHECK(hand.unions[1] == 3);
    CHECK(hand.per_class_iu[0] == 1.0 / 3.0);
    CHECK(hand.per_class_iu[1] == 1.0 / 3.0);
    CHECK(hand.mean_iu == 1.0 / 3.0);

    // completely disjoint foreground: both foreground IUs are zero
    Mask g2(1, 4);
    g2.ids = {1, 1, 0, 0};
    Mask p2(1, 4);
    p2.ids = {0, 0, 2, 2};
    IuReport disjoint = mean_iu({p2}, {g2}, 3);
    CHECK(disjoint.per_class_iu[1] == 0.0);
    CHECK(disjoint.per_class_iu[2] == 0.0);
}

TEST_CASE("mean_iu matches brute-force set counting on random pairs") {
    Rng rng(33);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(1, 3);
        const int h = rng.uniform_int(1, 8);
        const int w = rng.uniform_int(1, 8);
        const int classes = rng.uniform_int(2, 6);
        std::vector<Mask> preds;
        std::vector<Mask> gts;
        for (int i = 0; i < n; ++i) {
            preds.push_back(random_mask(rng, h, w, classes));
            gts.push_back(random_mask(rng, h, w, classes));
        }
        const IuReport a = mean_iu(preds, gts, classes);
        const IuReport b = brute_force_iu(preds, gts, classes);
        CHECK(a.intersections == b.intersections);
        CHECK(a.unions == b.unions);
        CHECK(a.per_class_iu == b.per_class_iu);
        CHECK(a.mean_iu == b.mean_iu);
        CHECK(a.classes_in_mean == b.classes_in_mean);
    }
}

TEST_CASE("mean_iu excludes classes with empty unions and validates shapes") {
    Mask a(2, 2);
    a.ids = {0, 0, 1, 1};
    IuReport r = mean_iu({a}, {a}, 5);  // classes 2..4 appear nowhere
    CHECK(r.classes_in_mean == 2);
    CHECK(r.mean_iu == 1.0);

    Mask b(2, 3);
    try {
        mean_iu({a}, {b}, 5);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("pair 0") != std::string::npos);
    }
    CHECK_THROWS_AS(mean_iu({a, a}, {a}, 5), std::invalid_argument);
}

TEST_CASE("one loop iteration is exactly the manual step composition") {
    LoadedDataset ds = tiny_dataset(1, 16, 5);
    OptimHyper hyper;
    hyper.learning_rate = 0.01;
    hyper.iterations = 1;

    for (TrainMode mode : {TrainMode::kMil, TrainMode::kSupervised}) {
        Network loop_net = build_network(NetworkConfig{}, 11);
        OptimState loop_state = OptimState::for_params(loop_net.parameters());
        TrainOptions options;
        options.hyper = hyper;
        options.seed = 3;
        options.mode = mode;
        train_network(loop_net, loop_state, ds, nullptr, options, nullptr);

        Network manual_net = build_network(NetworkConfig{}, 11);
        OptimState manual_state = OptimState::for_params(manual_net.parameters());
        train_step(manual_net, manual_state, ds.samples[0], hyper, mode);

        CHECK(same_params(loop_net, manual_net));
        for (std::size_t i = 0; i < loop_state.velocities.size(); ++i) {
            CHECK(loop_state.velocities[i].values() == manual_state.velocities[i].values());
        }
        CHECK(loop_state.iteration == manual_state.iteration);
    }

    // pretraining follows the same composition
    Network loop_net = build_network(NetworkConfig{}, 11);
    OptimState loop_state = OptimState::for_params(loop_net.parameters());
    pretrain_classifier(loop_net, loop_state, ds, hyper, 3, nullptr);

    Network manual_net = build_network(NetworkConfig{}, 11);
    OptimState manual_state = OptimState::for_params(manual_net.parameters());
    pretrain_step(manual_net, manual_state, ds.samples[0], hyper);
    CHECK(same_params(loop_net, manual_net));
}

TEST_CASE("zero iterations leave parameters untouched and only the CSV header behind") {
    LoadedDataset ds = tiny_dataset(3, 16, 6);
    Network net = build_network(NetworkConfig{}, 2);
    Network before = net.clone();
    OptimState state = OptimState::for_params(net.parameters());

    const fs::path csv = work_dir() / "zero_iters.csv";
    {
        MetricsWriter metrics(csv);
        OptimHyper hyper;
        hyper.iterations = 0;
        pretrain_classifier(net, state, ds, hyper, 1, &metrics);
        TrainOptions options;
        options.hyper = hyper;
        train_network(net, state, ds, nullptr, options, &metrics);
    }
    CHECK(same_params(net, before));
    const auto lines = read_lines(csv);
    REQUIRE(lines.size() == 1);
    CHECK(lines[0] == "iter,phase,loss,mean_iu");
}

TEST_CASE("training rejects an empty dataset") {
    LoadedDataset empty;
    Network net = build_network(NetworkConfig{}, 2);
    OptimState state = OptimState::for_params(net.parameters());
    OptimHyper hyper;
    hyper.iterations = 5;
    TrainOptions options;
    options.hyper = hyper;
    CHECK_THROWS_AS(train_network(net, state, empty, nullptr, options, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(pretrain_classifier(net, state, empty, hyper, 0, nullptr), std::invalid_argument);
}

TEST_CASE("MIL loss trends down over 200 iterations on a 20-image set") {
    LoadedDataset ds = tiny_dataset(20, 32, 7);
    Network net = build_network(NetworkConfig{}, 1);
    OptimState state = OptimState::for_params(net.parameters());

    OptimHyper hyper;
    hyper.learning_rate = 0.01;
    hyper.iterations = 200;
    TrainOptions options;
    options.hyper = hyper;
    options.seed = 9;

    const fs::path csv = work_dir() / "decrease.csv";
    {
        MetricsWriter metrics(csv);
        train_network(net, state, ds, nullptr, options, &metrics);
    }
    const auto lines = read_lines(csv);
    REQUIRE(lines.size() == 201);
    auto loss_of = [&](std::size_t row) {
        std::istringstream ss(lines[row]);
        std::string iter, phase, loss;
        std::getline(ss, iter, ',');
        std::getline(ss, phase, ',');
        std::getline(ss, loss, ',');
        return std::stod(loss);
    };
    double first = 0.0;
    double last = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
        first += loss_of(1 + i);
        last += loss_of(151 + i);
    }
    CHECK(last / 50.0 < first / 50.0);
}

TEST_CASE("metrics rows are ordered, typed and flushed") {
    LoadedDataset train = tiny_dataset(4, 16, 8);
    LoadedDataset val = tiny_dataset(2, 16, 9);
    Network net = build_network(NetworkConfig{}, 3);
    OptimState state = OptimState::for_params(net.parameters());

    TrainOptions options;
    options.hyper.learning_rate = 0.001;
    options.hyper.iterations = 12;
    options.seed = 4;
    options.val_interval = 5;

    const fs::path csv = work_dir() / "metrics.csv";
    {
        MetricsWriter metrics(csv);
        train_network(net, state, train, &val, options, &metrics);
    }
    const auto lines = read_lines(csv);
    REQUIRE(lines.size() == 1 + 12 + 2);  // header + train rows + val rows at 5 and 10
    CHECK(lines[0] == "iter,phase,loss,mean_iu");

    std::uint64_t prev_iter = 0;
    int val_rows = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::istringstream ss(lines[i]);
        std::string iter, phase, loss, iu;
        std::getline(ss, iter, ',');
        std::getline(ss, phase, ',');
        std::getline(ss, loss, ',');
        std::getline(ss, iu, ',');
        const std::uint64_t it = std::stoull(iter);
        CHECK(it >= prev_iter);  // monotonically increasing iteration column
        prev_iter = it;
        if (phase == "train") {
            CHECK(!loss.empty());
            CHECK(iu.empty());
        } else {
            CHECK(phase == "val");
            CHECK(loss.empty());
            CHECK(!iu.empty());
            ++val_rows;
        }
    }
    CHECK(val_rows == 2);
}

TEST_CASE("identical seeds give identical runs") {
    LoadedDataset train = tiny_dataset(5, 16, 10);
    const fs::path a = work_dir() / "rep_a.csv";
    const fs::path b = work_dir() / "rep_b.csv";

    auto run = [&](const fs::path& csv) {
        Network net = build_network(NetworkConfig{}, 2);
        OptimState state = OptimState::for_params(net.parameters());
        TrainOptions options;
        options.hyper.iterations = 10;
        options.hyper.learning_rate = 0.01;
        options.seed = 12;
        MetricsWriter metrics(csv);
        train_network(net, state, train, nullptr, options, &metrics);
        return net;
    };
    Network na = run(a);
    Network nb = run(b);
    CHECK(same_params(na, nb));
    CHECK(read_file(a) == read_file(b));
}

TEST_CASE("image-level pretraining beats the uninformed ln 2 baseline") {
    LoadedDataset ds = tiny_dataset(20, 32, 11);
    Network net = build_network(NetworkConfig{}, 5);
    OptimState state = OptimState::for_params(net.parameters());

    OptimHyper hyper;
    hyper.learning_rate = 0.01;
    hyper.iterations = 300;

    const fs::path csv = work_dir() / "pretrain.csv";
    {
        MetricsWriter metrics(csv);
        pretrain_classifier(net, state, ds, hyper, 13, &metrics);
    }
    const auto lines = read_lines(csv);
    REQUIRE(lines.size() == 301);
    double tail = 0.0;
    for (std::size_t i = lines.size() - 50; i < lines.size(); ++i) {
        std::istringstream ss(lines[i]);
        std::string iter, phase, loss;
        std::getline(ss, iter, ',');
        std::getline(ss, phase, ',');
        std::getline(ss, loss, ',');
        tail += std::stod(loss);
    }
    CHECK(tail / 50.0 < std::log(2.0));
}
