#pragma once

#include <map>
#include <vector>

#include "milfcn/mask.hpp"
#include "milfcn/tensor.hpp"

namespace milfcn {

// Image-level label set. Always contains 0 (background); labels are kept
// sorted ascending.
class LabelBag {
  public:
    // requires 0 to be present
    explicit LabelBag(std::vector<int> labels);

    // convenience: background is added for the caller
    static LabelBag with_background(std::vector<int> fg_labels);

    const std::vector<int>& labels() const { return labels_; }
    bool contains(int label) const;
    int size() const { return static_cast<int>(labels_.size()); }

    bool operator==(const LabelBag& o) const { return labels_ == o.labels_; }

  private:
    std::vector<int> labels_;
};

// Coarse-grid location of a per-label maximum; x is the column, y the row.
struct MaxPoint {
    int x = 0;
    int y = 0;
    bool operator==(const MaxPoint& o) const { return x == o.x && y == o.y; }
};

using SelectedPoints = std::map<int, MaxPoint>;

// For each label in the bag, the first (row-major) argmax of that label's
// probability map. Labels outside the bag are ignored entirely.
SelectedPoints select_max_points(const Tensor& probs, const LabelBag& bag);

struct MilLossResult {
    Tensor loss;            // shape {1}, differentiable through probs
    SelectedPoints points;  // the selection is constant during backward
};

// Mean negative log probability over the bag labels at their max points.
MilLossResult mil_loss(Graph& g, const Tensor& probs, const LabelBag& bag);

// Image-level pretraining loss: global max pool each foreground channel of
// the raw scores, then a per-class binary logistic loss against bag
// membership. The background channel is excluded.
Tensor image_label_loss(Graph& g, const Tensor& scores, const LabelBag& bag);

// Per-pixel softmax, bilinear upsampling of the probability maps to
// (out_h, out_w), then a per-pixel argmax over channels.
Mask infer_mask(const Tensor& scores, int out_h, int out_w);

// Full-resolution cross-entropy against a ground-truth mask: softmax, then
// bilinear upsampling of the probabilities to the mask size, then mean
// negative log probability of the target class at every pixel. This is the
// supervised-oracle objective.
Tensor supervised_loss(Graph& g, const Tensor& scores, const Mask& target);

}  // namespace milfcn
