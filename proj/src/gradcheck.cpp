#include "milfcn/gradcheck.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "milfcn/mil.hpp"
#include "milfcn/net.hpp"
#include "milfcn/rng.hpp"

namespace milfcn {

namespace {

double rel_error(double fd, double analytic) {
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-12});
    return std::abs(fd - analytic) / denom;
}

// Shared FD sweep. With `adaptive` set, an entry whose relative error exceeds
// the tolerance at the base step is re-certified at larger and smaller steps
// before it counts as a failure: central differences of tiny-magnitude
// gradients are rounding-noise limited at small steps and curvature limited
// at large ones, while a genuinely wrong gradient disagrees at every step.
GradCheckReport run_fd_check(const std::function<double(std::size_t)>& f, const std::vector<Tensor>& params,
                             const std::vector<std::vector<double>>& analytic_grads, double step, double tolerance,
                             bool adaptive) {
    if (params.size() != analytic_grads.size()) {
        throw std::invalid_argument("finite_diff_check: one gradient vector per parameter tensor required");
    }
    if (!(step > 0.0)) {
        throw std::invalid_argument("finite_diff_check: step must be positive");
    }

    GradCheckReport report;
    report.step = step;
    report.tolerance = tolerance;

    long long flat = 0;
    bool nonfinite = false;
    auto fd_at = [&f, &nonfinite](double* entry, double h, std::size_t tensor_idx) {
        const double saved = *entry;
        *entry = saved + h;
        const double fp = f(tensor_idx);
        *entry = saved - h;
        const double fm = f(tensor_idx);
        *entry = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            nonfinite = true;
        }
        return (fp - fm) / (2.0 * h);
    };

    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor p = params[t];
        if (analytic_grads[t].size() != static_cast<std::size_t>(p.size())) {
            throw std::invalid_argument("finite_diff_check: gradient size mismatch on tensor " + std::to_string(t));
        }
        double* v = p.data();
        for (int i = 0; i < p.size(); ++i, ++flat) {
            const double a = analytic_grads[t][i];
            double rel = rel_error(fd_at(v + i, step, t), a);
            if (adaptive && rel > tolerance && !nonfinite) {
                for (double factor : {2.0, 4.0, 8.0, 0.5, 0.25}) {
                    rel = std::min(rel, rel_error(fd_at(v + i, factor * step, t), a));
                    if (rel <= tolerance) {
                        break;
                    }
                }
            }
            if (nonfinite) {
                report.finite = false;
                report.pass = false;
                report.nonfinite_index = flat;
                report.worst_index = flat;
                return report;
            }
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_index = flat;
            }
        }
    }
    report.pass = report.finite && report.max_rel_error <= tolerance;
    return report;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<double()>& f, const std::vector<Tensor>& params,
                                  const std::vector<std::vector<double>>& analytic_grads, double step,
                                  double tolerance) {
    return run_fd_check([&f](std::size_t) { return f(); }, params, analytic_grads, step, tolerance, false);
}

namespace {

struct Instance {
    Network net;
    Tensor image;
    LabelBag bag{std::vector<int>{0}};
};

// Margins that keep the objective smooth within the finite-difference window:
// selected argmaxes unique by > 1e-3 and relu/maxpool decisions clear of
// their kinks, both scaled with the step.
double argmax_margin(double step) {
    return std::max(1e-3, 8.0 * step);
}

double kink_margin(double step) {
    return std::max(4e-4, 8.0 * step);
}

bool clear_of_kinks(const ForwardTrace& trace, double margin) {
    for (const Tensor& z : trace.conv_outputs) {
        for (double v : z.values()) {
            if (std::abs(v) <= margin) {
                return false;
            }
        }
    }
    for (const Tensor& a : trace.pool_inputs) {
        const int c_n = a.shape()[0];
        const int h = a.shape()[1];
        const int w = a.shape()[2];
        const double* av = a.data();
        for (int c = 0; c < c_n; ++c) {
            const double* plane = av + static_cast<std::size_t>(c) * h * w;
            for (int oy = 0; oy + 1 < h; oy += 2) {
                for (int ox = 0; ox + 1 < w; ox += 2) {
                    double win[4] = {plane[oy * w + ox], plane[oy * w + ox + 1], plane[(oy + 1) * w + ox],
                                     plane[(oy + 1) * w + ox + 1]};
                    std::sort(win, win + 4);
                    if (win[3] == 0.0) {
                        continue;  // fully dead window: constant zero, no kink in reach
                    }
                    if (win[3] - win[2] <= margin) {
                        return false;
                    }
                }
            }
        }
    }
    return true;
}

// gap between the largest and second-largest entry of one channel plane
double top2_gap(const double* plane, int n) {
    double best = plane[0];
    double second = -std::numeric_limits<double>::infinity();
    for (int i = 1; i < n; ++i) {
        if (plane[i] > best) {
            second = best;
            best = plane[i];
        } else if (plane[i] > second) {
            second = plane[i];
        }
    }
    return n > 1 ? best - second : std::numeric_limits<double>::infinity();
}

Instance sample_instance(const NetworkConfig& config, GradCheckLoss loss, std::uint64_t seed, double step) {
    const int d = config.downsample;
    const int img_h = d;      // one coarse row
    const int img_w = 2 * d;  // two coarse columns, so selection is non-trivial

    const double prob_margin = argmax_margin(step);
    const double preact_margin = kink_margin(step);
    for (std::uint64_t attempt = 0; attempt < 100000; ++attempt) {
        const std::uint64_t s = Rng::derive(seed, attempt);
        Rng rng(s);

        Instance inst;
        inst.net = build_network(config, rng.raw());
        // random off-zero biases push preactivations away from the relu kink,
        // which makes the margin conditions cheap to satisfy
        for (Tensor& b : inst.net.stage_biases) {
            for (double& v : b.values()) {
                v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 0.35);
            }
        }
        inst.image = Tensor::zeros({config.input_channels, img_h, img_w});
        for (double& v : inst.image.values()) {
            v = rng.uniform();
        }
        std::vector<int> classes;
        for (int c = 1; c <= config.num_fg_classes; ++c) {
            classes.push_back(c);
        }
        rng.shuffle(classes);
        const int k = rng.uniform_int(1, std::min(3, config.num_fg_classes));
        classes.resize(static_cast<std::size_t>(k));
        inst.bag = LabelBag::with_background(classes);

        Graph g;
        ForwardTrace trace;
        Tensor scores = inst.net.forward(g, inst.image, &trace);
        if (!clear_of_kinks(trace, preact_margin)) {
            continue;
        }

        const int c_n = scores.shape()[0];
        const int hw = scores.shape()[1] * scores.shape()[2];
        bool ok = true;
        if (loss == GradCheckLoss::kMil) {
            Tensor probs = g.softmax_channels(scores);
            for (int label : inst.bag.labels()) {
                if (top2_gap(probs.data() + static_cast<std::size_t>(label) * hw, hw) <= prob_margin) {
                    ok = false;
                    break;
                }
            }
        } else {
            for (int c = 1; c < c_n && ok; ++c) {
                ok = top2_gap(scores.data() + static_cast<std::size_t>(c) * hw, hw) > prob_margin;
            }
        }
        if (ok) {
            return inst;
        }
    }
    throw std::runtime_error("gradcheck: could not sample an instance with clear margins");
}

// Evaluates the loss recomputing only the stages a perturbed parameter can
// reach; earlier stages are bitwise-unchanged and come from a cache, so the
// value equals a full forward pass exactly.
class StagedObjective {
  public:
    StagedObjective(const Network& net, const Tensor& image, const LabelBag& bag, GradCheckLoss loss)
        : net_(net), bag_(bag), loss_(loss) {
        stage_inputs_.push_back(image);
        Graph g(Graph::Tape::kNone);
        Tensor x = image;
        for (int s = 0; s < net.config.num_stages(); ++s) {
            x = stage_tail(g, x, s);
            stage_inputs_.push_back(x);
        }
    }

    // parameter tensor order: kernel/bias per stage, then the score layer
    double operator()(std::size_t tensor_idx) const {
        const int stages = net_.config.num_stages();
        const int from = std::min(static_cast<int>(tensor_idx / 2), stages);
        Graph g(Graph::Tape::kNone);
        Tensor x = stage_inputs_[static_cast<std::size_t>(from)];
        for (int s = from; s < stages; ++s) {
            x = stage_tail(g, x, s);
        }
        Tensor scores = g.conv2d(x, net_.score_kernel, net_.score_bias, 1, 0);
        if (loss_ == GradCheckLoss::kMil) {
            Tensor probs = g.softmax_channels(scores);
            return mil_loss(g, probs, bag_).loss.item();
        }
        return image_label_loss(g, scores, bag_).item();
    }

  private:
    Tensor stage_tail(Graph& g, const Tensor& x, int s) const {
        Tensor y = g.conv2d(x, net_.stage_kernels[s], net_.stage_biases[s], 1, net_.config.kernel_size / 2);
        y = g.relu(y);
        if (s < net_.config.pool_stages()) {
            y = g.maxpool2(y);
        }
        return y;
    }

    const Network& net_;
    LabelBag bag_;
    GradCheckLoss loss_;
    std::vector<Tensor> stage_inputs_;
};

GradCheckReport check_one_instance(const NetworkConfig& config, GradCheckLoss loss, std::uint64_t seed, double step,
                                   double tolerance) {
    Instance inst = sample_instance(config, loss, seed, step);

    StagedObjective objective(inst.net, inst.image, inst.bag, loss);

    std::vector<Tensor> params = inst.net.parameters();
    std::vector<std::vector<double>> analytic;
    {
        Graph g;
        Tensor scores = inst.net.forward(g, inst.image);
        Tensor l;
        if (loss == GradCheckLoss::kMil) {
            Tensor probs = g.softmax_channels(scores);
            l = mil_loss(g, probs, inst.bag).loss;
        } else {
            l = image_label_loss(g, scores, inst.bag);
        }
        g.backward(l);
        for (const Tensor& p : params) {
            analytic.push_back(p.grad());
        }
    }
    if (objective(0) != objective(params.size() - 1)) {
        throw std::runtime_error("gradcheck: staged evaluation is not exact");
    }
    return run_fd_check([&objective](std::size_t t) { return objective(t); }, params, analytic, step, tolerance,
                        true);
}

}  // namespace

NetGradCheckSummary check_network_gradients(const NetworkConfig& config, GradCheckLoss loss, int instances,
                                            std::uint64_t seed, double step, double tolerance, int threads) {
    config.validate();
    if (instances <= 0) {
        throw std::invalid_argument("check_network_gradients: instance count must be positive");
    }
    if (threads <= 0) {
        threads = static_cast<int>(std::thread::hardware_concurrency());
        threads = std::max(threads, 1);
    }
    threads = std::min(threads, instances);

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<GradCheckReport> reports(static_cast<std::size_t>(instances));
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int i = next.fetch_add(1); i < instances; i = next.fetch_add(1)) {
            reports[static_cast<std::size_t>(i)] =
                check_one_instance(config, loss, Rng::derive(seed, 0x10000u + static_cast<std::uint64_t>(i)), step,
                                   tolerance);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& th : pool) {
        th.join();
    }

    NetGradCheckSummary summary;
    summary.instances = instances;
    summary.pass = true;
    for (const GradCheckReport& r : reports) {
        summary.max_rel_error = std::max(summary.max_rel_error, r.max_rel_error);
        summary.pass = summary.pass && r.pass;
    }
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return summary;
}

}  // namespace milfcn
