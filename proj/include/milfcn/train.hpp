#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "milfcn/mask.hpp"
#include "milfcn/net.hpp"
#include "milfcn/optim.hpp"
#include "milfcn/synthdata.hpp"

namespace milfcn {

struct IuReport {
    std::vector<double> per_class_iu;  // 0 where the union is empty
    std::vector<std::uint64_t> intersections;
    std::vector<std::uint64_t> unions;
    double mean_iu = 0.0;  // over classes with a non-zero union
    int classes_in_mean = 0;
};

// Global accumulation: intersections and unions are summed over the whole
// split per class before dividing. Classes absent from both prediction and
// ground truth everywhere are excluded from the mean.
IuReport mean_iu(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truths, int num_classes);

// CSV with header "iter,phase,loss,mean_iu", LF endings, flushed per row so an
// interrupted run loses at most the current row. mean_iu stays empty on
// training rows, loss stays empty on validation rows.
class MetricsWriter {
  public:
    explicit MetricsWriter(const std::filesystem::path& path);
    void train_row(std::uint64_t iter, double loss);
    void val_row(std::uint64_t iter, double mean_iu);

  private:
    std::ofstream out_;
};

enum class TrainMode { kMil, kSupervised };

// One optimization step; the training loops below are exactly these steps in
// a seeded shuffle order. Both return the step's loss.
double pretrain_step(Network& net, OptimState& state, const Sample& sample, const OptimHyper& hyper);
double train_step(Network& net, OptimState& state, const Sample& sample, const OptimHyper& hyper, TrainMode mode);

void pretrain_classifier(Network& net, OptimState& state, const LoadedDataset& train, const OptimHyper& hyper,
                         std::uint64_t seed, MetricsWriter* metrics);

struct TrainOptions {
    OptimHyper hyper;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::kMil;
    int val_interval = 100;
};

// MIL fine-tuning (or the supervised oracle). When `val` is given, validation
// mean IU is appended to the metrics every val_interval iterations.
void train_network(Network& net, OptimState& state, const LoadedDataset& train, const LoadedDataset* val,
                   const TrainOptions& options, MetricsWriter* metrics);

// forward + softmax + upsample + argmax at the image's own resolution
Mask infer_sample(const Network& net, const Tensor& image);

IuReport evaluate(const Network& net, const LoadedDataset& ds);

}  // namespace milfcn
