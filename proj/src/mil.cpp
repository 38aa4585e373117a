#include "milfcn/mil.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace milfcn {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) {
        throw std::invalid_argument(msg);
    }
}

}  // namespace

LabelBag::LabelBag(std::vector<int> labels) : labels_(std::move(labels)) {
    std::sort(labels_.begin(), labels_.end());
    labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
    require(!labels_.empty() && labels_.front() == 0,
            "label bag must contain the background label 0");
    require(labels_.front() >= 0, "label bag contains a negative label");
}

LabelBag LabelBag::with_background(std::vector<int> fg_labels) {
    fg_labels.push_back(0);
    return LabelBag(std::move(fg_labels));
}

bool LabelBag::contains(int label) const {
    return std::binary_search(labels_.begin(), labels_.end(), label);
}

SelectedPoints select_max_points(const Tensor& probs, const LabelBag& bag) {
    require(probs.defined() && probs.rank() == 3, "select_max_points: probs must be [C,H,W]");
    const int c_n = probs.shape()[0];
    const int h = probs.shape()[1];
    const int w = probs.shape()[2];
    require(bag.labels().back() < c_n, "select_max_points: bag label " + std::to_string(bag.labels().back()) +
                                           " outside the " + std::to_string(c_n) + " channels");

    SelectedPoints points;
    const double* pv = probs.data();
    for (int label : bag.labels()) {
        const double* plane = pv + static_cast<std::size_t>(label) * h * w;
        int best = 0;
        for (int i = 1; i < h * w; ++i) {
            if (plane[i] > plane[best]) {
                best = i;
            }
        }
        points[label] = MaxPoint{best % w, best / w};
    }
    return points;
}

MilLossResult mil_loss(Graph& g, const Tensor& probs, const LabelBag& bag) {
    MilLossResult result;
    result.points = select_max_points(probs, bag);
    std::vector<ScorePoint> pts;
    pts.reserve(result.points.size());
    for (const auto& [label, pt] : result.points) {
        pts.push_back(ScorePoint{label, pt.y, pt.x});
    }
    result.loss = g.nll_at_points(probs, pts);
    return result;
}

Tensor image_label_loss(Graph& g, const Tensor& scores, const LabelBag& bag) {
    require(scores.defined() && scores.rank() == 3, "image_label_loss: scores must be [C,H,W]");
    const int c_n = scores.shape()[0];
    require(bag.labels().back() < c_n, "image_label_loss: bag label " + std::to_string(bag.labels().back()) +
                                           " outside the " + std::to_string(c_n) + " channels");
    std::vector<std::uint8_t> present(static_cast<std::size_t>(c_n), 0);
    for (int label : bag.labels()) {
        present[label] = 1;
    }
    Tensor maxes = g.channel_max(scores);
    return g.foreground_bce(maxes, present);
}

Mask infer_mask(const Tensor& scores, int out_h, int out_w) {
    require(scores.defined() && scores.rank() == 3, "infer_mask: scores must be [C,H,W]");
    const int c_n = scores.shape()[0];

    Graph g(Graph::Tape::kNone);
    Tensor probs = g.softmax_channels(scores.detached_copy());
    Tensor up = g.bilinear_upsample(probs, out_h, out_w);

    Mask mask(out_h, out_w);
    const double* uv = up.data();
    const int hw = out_h * out_w;
    for (int i = 0; i < hw; ++i) {
        int best = 0;
        double bv = uv[i];
        for (int c = 1; c < c_n; ++c) {
            const double v = uv[static_cast<std::size_t>(c) * hw + i];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        mask.ids[i] = static_cast<std::uint8_t>(best);
    }
    return mask;
}

Tensor supervised_loss(Graph& g, const Tensor& scores, const Mask& target) {
    require(target.h > 0 && target.w > 0, "supervised_loss: empty target mask");
    Tensor probs = g.softmax_channels(scores);
    Tensor up = g.bilinear_upsample(probs, target.h, target.w);
    return g.pixelwise_nll(up, target.ids);
}

}  // namespace milfcn
