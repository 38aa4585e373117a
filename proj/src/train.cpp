#include "milfcn/train.hpp"

#include <cstdio>
#include <stdexcept>
#include <string>

#include "milfcn/errors.hpp"
#include "milfcn/mil.hpp"
#include "milfcn/rng.hpp"

namespace milfcn {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) {
        throw std::invalid_argument(msg);
    }
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

IuReport mean_iu(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truths, int num_classes) {
    require(num_classes > 0, "mean_iu: class count must be positive");
    require(predictions.size() == ground_truths.size(), "mean_iu: " + std::to_string(predictions.size()) +
                                                            " predictions vs " +
                                                            std::to_string(ground_truths.size()) + " ground truths");

    IuReport report;
    report.per_class_iu.assign(static_cast<std::size_t>(num_classes), 0.0);
    report.intersections.assign(static_cast<std::size_t>(num_classes), 0);
    report.unions.assign(static_cast<std::size_t>(num_classes), 0);

    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const Mask& p = predictions[i];
        const Mask& g = ground_truths[i];
        require(p.h == g.h && p.w == g.w, "mean_iu: mask pair " + std::to_string(i) + " has mismatched shapes " +
                                              std::to_string(p.h) + "x" + std::to_string(p.w) + " vs " +
                                              std::to_string(g.h) + "x" + std::to_string(g.w));
        for (std::size_t k = 0; k < p.ids.size(); ++k) {
            const int pc = p.ids[k];
            const int gc = g.ids[k];
            require(pc < num_classes && gc < num_classes, "mean_iu: class index out of range in pair " +
                                                              std::to_string(i));
            if (pc == gc) {
                ++report.intersections[pc];
                ++report.unions[pc];
            } else {
                ++report.unions[pc];
                ++report.unions[gc];
            }
        }
    }

    double total = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        if (report.unions[c] > 0) {
            report.per_class_iu[c] =
                static_cast<double>(report.intersections[c]) / static_cast<double>(report.unions[c]);
            total += report.per_class_iu[c];
            ++report.classes_in_mean;
        }
    }
    report.mean_iu = report.classes_in_mean > 0 ? total / report.classes_in_mean : 0.0;
    return report;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
    if (!out_) {
        throw IoError("cannot open metrics file " + path.string());
    }
    out_ << "iter,phase,loss,mean_iu\n";
    out_.flush();
}

void MetricsWriter::train_row(std::uint64_t iter, double loss) {
    out_ << iter << ",train," << fmt_double(loss) << ",\n";
    out_.flush();
}

void MetricsWriter::val_row(std::uint64_t iter, double mean_iu) {
    out_ << iter << ",val,," << fmt_double(mean_iu) << "\n";
    out_.flush();
}

double pretrain_step(Network& net, OptimState& state, const Sample& sample, const OptimHyper& hyper) {
    Graph g;
    Tensor scores = net.forward(g, sample.image);
    Tensor loss = image_label_loss(g, scores, sample.bag);
    g.backward(loss);
    sgd_step(net.parameters(), state, hyper);
    return loss.item();
}

double train_step(Network& net, OptimState& state, const Sample& sample, const OptimHyper& hyper, TrainMode mode) {
    Graph g;
    Tensor scores = net.forward(g, sample.image);
    Tensor loss;
    if (mode == TrainMode::kMil) {
        Tensor probs = g.softmax_channels(scores);
        loss = mil_loss(g, probs, sample.bag).loss;
    } else {
        loss = supervised_loss(g, scores, sample.mask);
    }
    g.backward(loss);
    sgd_step(net.parameters(), state, hyper);
    return loss.item();
}

namespace {

// seeded epoch shuffler over sample indices
class SampleOrder {
  public:
    SampleOrder(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
        for (std::size_t i = 0; i < n; ++i) {
            order_[i] = i;
        }
    }
    std::size_t next(std::uint64_t step) {
        const std::size_t pos = static_cast<std::size_t>(step % order_.size());
        if (pos == 0) {
            rng_.shuffle(order_);
        }
        return order_[pos];
    }

  private:
    Rng rng_;
    std::vector<std::size_t> order_;
};

}  // namespace

void pretrain_classifier(Network& net, OptimState& state, const LoadedDataset& train, const OptimHyper& hyper,
                         std::uint64_t seed, MetricsWriter* metrics) {
    hyper.validate();
    require(!train.samples.empty(), "pretrain: dataset is empty");

    SampleOrder order(train.samples.size(), seed);
    for (long long step = 0; step < hyper.iterations; ++step) {
        const double loss =
            pretrain_step(net, state, train.samples[order.next(static_cast<std::uint64_t>(step))], hyper);
        if (metrics) {
            metrics->train_row(static_cast<std::uint64_t>(step) + 1, loss);
        }
    }
}

void train_network(Network& net, OptimState& state, const LoadedDataset& train, const LoadedDataset* val,
                   const TrainOptions& options, MetricsWriter* metrics) {
    options.hyper.validate();
    require(!train.samples.empty(), "train: dataset is empty");
    require(options.val_interval > 0, "train: validation interval must be positive");

    SampleOrder order(train.samples.size(), options.seed);
    for (long long step = 0; step < options.hyper.iterations; ++step) {
        const double loss = train_step(net, state, train.samples[order.next(static_cast<std::uint64_t>(step))],
                                       options.hyper, options.mode);
        const std::uint64_t iter = static_cast<std::uint64_t>(step) + 1;
        if (metrics) {
            metrics->train_row(iter, loss);
        }
        if (val && metrics && iter % static_cast<std::uint64_t>(options.val_interval) == 0) {
            metrics->val_row(iter, evaluate(net, *val).mean_iu);
        }
    }
}

Mask infer_sample(const Network& net, const Tensor& image) {
    Graph g(Graph::Tape::kNone);
    Tensor scores = net.forward(g, image);
    return infer_mask(scores, image.shape()[1], image.shape()[2]);
}

IuReport evaluate(const Network& net, const LoadedDataset& ds) {
    std::vector<Mask> predictions;
    std::vector<Mask> truths;
    predictions.reserve(ds.samples.size());
    truths.reserve(ds.samples.size());
    for (const Sample& s : ds.samples) {
        predictions.push_back(infer_sample(net, s.image));
        truths.push_back(s.mask);
    }
    return mean_iu(predictions, truths, net.config.num_classes());
}

}  // namespace milfcn
