#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "milfcn/checkpoint.hpp"
#include "milfcn/errors.hpp"
#include "milfcn/gradcheck.hpp"
#include "milfcn/mil.hpp"
#include "milfcn/net.hpp"
#include "milfcn/netpbm.hpp"
#include "milfcn/synthdata.hpp"
#include "milfcn/train.hpp"

namespace fs = std::filesystem;
using namespace milfcn;

namespace {

// background is black; foreground classes cycle a fixed 12-color palette
const unsigned char kPalette[13][3] = {
    {0, 0, 0},      {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
    {245, 130, 48}, {145, 30, 180}, {70, 240, 240},  {240, 50, 230}, {210, 245, 60},
    {250, 190, 212}, {0, 128, 128}, {220, 190, 255},
};

Tensor colorize(const Mask& mask) {
    Tensor image = Tensor::zeros({3, mask.h, mask.w});
    double* v = image.data();
    const std::size_t plane = mask.pixels();
    for (std::size_t i = 0; i < plane; ++i) {
        const int id = mask.ids[i];
        const int p = id == 0 ? 0 : (id - 1) % 12 + 1;
        v[i] = kPalette[p][0] / 255.0;
        v[plane + i] = kPalette[p][1] / 255.0;
        v[2 * plane + i] = kPalette[p][2] / 255.0;
    }
    return image;
}

struct CommonFlags {
    std::string data;
    std::string out;
    std::string spec;
    std::string init;
    long long iters = 0;
    std::uint64_t seed = 0;
    OptimHyper hyper;
    bool supervised = false;
};

void add_hyper_flags(CLI::App* cmd, CommonFlags& f, long long default_iters) {
    f.iters = default_iters;
    cmd->add_option("--iters", f.iters, "optimization steps")->capture_default_str();
    cmd->add_option("--lr", f.hyper.learning_rate, "learning rate")->capture_default_str();
    cmd->add_option("--momentum", f.hyper.momentum, "SGD momentum")->capture_default_str();
    cmd->add_option("--weight-decay", f.hyper.weight_decay, "L2 weight decay")->capture_default_str();
}

Network initialized_network(const CommonFlags& f, NetworkConfig* config_out) {
    if (!f.init.empty()) {
        const Checkpoint ckpt = load_checkpoint(f.init);
        *config_out = ckpt.net.config;
        // transfer: feature and foreground classifier weights, background zeroed
        return transfer_classifier_weights(build_network(ckpt.net.config, f.seed), ckpt.net);
    }
    NetworkConfig config;
    *config_out = config;
    return build_network(config, f.seed);
}

int run_gen_data(const CommonFlags& f) {
    DatasetSpec spec;
    if (!f.spec.empty()) {
        spec = load_dataset_spec(f.spec);
    }
    if (f.seed != 0) {
        spec.seed = f.seed;
    }
    generate_dataset(spec, f.out);
    std::cout << "wrote " << spec.train_images << " train / " << spec.val_images << " val samples to " << f.out
              << "\n";
    return 0;
}

int run_pretrain(const CommonFlags& f) {
    NetworkConfig config;
    LoadedDataset train = load_split(fs::path(f.data) / "train", config.num_fg_classes);

    Network net = build_network(config, f.seed);
    OptimState state = OptimState::for_params(net.parameters());
    OptimHyper hyper = f.hyper;
    hyper.iterations = f.iters;

    fs::create_directories(f.out);
    MetricsWriter metrics(fs::path(f.out) / "metrics.csv");
    pretrain_classifier(net, state, train, hyper, f.seed, &metrics);
    save_checkpoint(net, state, fs::path(f.out) / "final.ckpt");
    std::cout << "wrote " << (fs::path(f.out) / "final.ckpt").string() << "\n";
    return 0;
}

int run_train(const CommonFlags& f) {
    NetworkConfig config;
    Network net = initialized_network(f, &config);
    LoadedDataset train = load_split(fs::path(f.data) / "train", config.num_fg_classes);
    LoadedDataset val = load_split(fs::path(f.data) / "val", config.num_fg_classes);

    OptimState state = OptimState::for_params(net.parameters());
    TrainOptions options;
    options.hyper = f.hyper;
    options.hyper.iterations = f.iters;
    options.seed = f.seed;
    options.mode = f.supervised ? TrainMode::kSupervised : TrainMode::kMil;

    fs::create_directories(f.out);
    MetricsWriter metrics(fs::path(f.out) / "metrics.csv");
    train_network(net, state, train, &val, options, &metrics);
    save_checkpoint(net, state, fs::path(f.out) / "final.ckpt");
    std::cout << "wrote " << (fs::path(f.out) / "final.ckpt").string() << "\n";
    return 0;
}

int run_eval(const CommonFlags& f) {
    const Checkpoint ckpt = load_checkpoint(f.init);
    LoadedDataset val = load_split(fs::path(f.data) / "val", ckpt.net.config.num_fg_classes);
    const IuReport report = evaluate(ckpt.net, val);
    for (std::size_t c = 0; c < report.per_class_iu.size(); ++c) {
        std::printf("class %zu iu %.6f (intersection %llu union %llu)\n", c, report.per_class_iu[c],
                    static_cast<unsigned long long>(report.intersections[c]),
                    static_cast<unsigned long long>(report.unions[c]));
    }
    std::printf("mean iu %.6f over %d classes\n", report.mean_iu, report.classes_in_mean);
    return 0;
}

int run_infer(const CommonFlags& f, const std::string& image_path) {
    const Checkpoint ckpt = load_checkpoint(f.init);
    const Tensor image = decode_ppm(read_file(image_path));

    const auto t0 = std::chrono::steady_clock::now();
    const Mask mask = infer_sample(ckpt.net, image);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const fs::path prefix(f.out);
    if (prefix.has_parent_path()) {
        fs::create_directories(prefix.parent_path());
    }
    write_file(prefix.string() + ".pgm", encode_pgm(mask));
    write_file(prefix.string() + "_color.ppm", encode_ppm(colorize(mask)));
    std::fprintf(stderr, "inference %.4f s\n", seconds);
    return 0;
}

int run_gradcheck(const CommonFlags& f) {
    NetworkConfig config;
    const auto mil = check_network_gradients(config, GradCheckLoss::kMil, 3, f.seed, 2.5e-4, 1e-5);
    const auto label = check_network_gradients(config, GradCheckLoss::kImageLabel, 3, f.seed, 2.5e-4, 1e-5);
    const bool pass = mil.pass && label.pass;
    std::printf("mil loss: max relative error %.3e over %d instances\n", mil.max_rel_error, mil.instances);
    std::printf("image-label loss: max relative error %.3e over %d instances\n", label.max_rel_error,
                label.instances);
    std::printf("%s\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weakly supervised semantic segmentation by multi-class multiple instance learning"};
    app.require_subcommand(1);

    CommonFlags f;
    std::string image_path;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic shape dataset");
    gen->add_option("--spec", f.spec, "dataset spec file (key=value lines)");
    gen->add_option("--out", f.out, "output dataset directory")->required();
    gen->add_option("--seed", f.seed, "overrides the spec seed when non-zero");

    CLI::App* pre = app.add_subcommand("pretrain", "train the image-level label classifier");
    pre->add_option("--data", f.data, "dataset root (train/ and val/)")->required();
    pre->add_option("--out", f.out, "run directory for final.ckpt and metrics.csv")->required();
    pre->add_option("--seed", f.seed, "initialization and shuffle seed");
    add_hyper_flags(pre, f, 2000);

    CLI::App* train = app.add_subcommand("train", "MIL fine-tuning (or the supervised oracle)");
    train->add_option("--data", f.data, "dataset root (train/ and val/)")->required();
    train->add_option("--out", f.out, "run directory for final.ckpt and metrics.csv")->required();
    train->add_option("--init", f.init, "pretraining checkpoint; transfers weights, zeroes background");
    train->add_option("--seed", f.seed, "initialization and shuffle seed");
    train->add_flag("--supervised", f.supervised, "train with full per-pixel cross-entropy");
    add_hyper_flags(train, f, 3000);

    CLI::App* eval = app.add_subcommand("eval", "report mean IU on the validation split");
    eval->add_option("--data", f.data, "dataset root")->required();
    eval->add_option("--init", f.init, "checkpoint to evaluate")->required();

    CLI::App* infer = app.add_subcommand("infer", "segment one PPM image");
    infer->add_option("--init", f.init, "checkpoint")->required();
    infer->add_option("--out", f.out, "output prefix for <out>.pgm and <out>_color.ppm")->required();
    infer->add_option("image", image_path, "input PPM image")->required();

    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference check of the network gradients");
    grad->add_option("--seed", f.seed, "instance seed");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) {
            return run_gen_data(f);
        }
        if (pre->parsed()) {
            return run_pretrain(f);
        }
        if (train->parsed()) {
            return run_train(f);
        }
        if (eval->parsed()) {
            return run_eval(f);
        }
        if (infer->parsed()) {
            return run_infer(f, image_path);
        }
        if (grad->parsed()) {
            return run_gradcheck(f);
        }
        return 1;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
