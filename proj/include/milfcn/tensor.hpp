#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace milfcn {

std::string shape_str(const std::vector<int>& shape);
int shape_size(const std::vector<int>& shape);

// Dense row-major tensor of 64-bit floats, rank 1..4. Copies of a Tensor share
// the underlying buffer, so gradients written during Graph::backward are
// visible through every handle to the same storage.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor from_values(std::vector<int> shape, std::vector<double> values);
    static Tensor scalar(double value);  // shape {1}

    bool defined() const { return s_ != nullptr; }
    const std::vector<int>& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int size() const { return static_cast<int>(s_->values.size()); }

    double* data() { return s_->values.data(); }
    const double* data() const { return s_->values.data(); }
    std::vector<double>& values() { return s_->values; }
    const std::vector<double>& values() const { return s_->values; }

    // scalar access, size-1 tensors only
    double item() const;

    // gradient buffer of identical shape, allocated on demand
    bool has_grad() const { return !s_->grad.empty(); }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void ensure_grad();
    void zero_grad();

    // identity within the differentiation graph that last tracked this tensor
    int node_id() const { return s_ ? s_->node_id : -1; }

    // deep copy; shares nothing, not tracked by any graph
    Tensor detached_copy() const;

    bool same_storage(const Tensor& o) const { return s_ == o.s_; }

  private:
    friend class Graph;
    struct State {
        std::vector<int> shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty until needed
        int node_id = -1;
    };
    std::shared_ptr<State> s_;
    explicit Tensor(std::shared_ptr<State> s) : s_(std::move(s)) {}
};

// A probability/score location used by the point-selection losses.
struct ScorePoint {
    int channel = 0;
    int y = 0;  // row
    int x = 0;  // column
};

// Reverse-mode tape. Operations execute eagerly and append one node each;
// backward replays the tape once in reverse execution order, so every node is
// visited exactly once and gradient accumulation is reset on every call.
//
// A Graph and its tensors form a single-owner unit: not safe for concurrent
// mutation, safe to move between threads as a whole. Distinct graphs on
// distinct threads need no coordination.
class Graph {
  public:
    enum class Tape { kRecord, kNone };

    // Tape::kNone runs the same forward computations without recording
    // backward closures; backward is then the documented no-op.
    explicit Graph(Tape tape = Tape::kRecord) : recording_(tape == Tape::kRecord) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Cross-correlation (no kernel flip). input [C_in,H,W], kernel
    // [C_out,C_in,kH,kW], bias [C_out]. Output [C_out,H',W'] with
    // H' = (H + 2*pad - kH)/stride + 1, which must divide exactly.
    Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int pad);

    // elementwise max(0, x); backward passes gradient only where x > 0
    Tensor relu(const Tensor& x);

    // non-overlapping 2x2 max over [C,H,W], H and W even; gradient routes to
    // the first maximal element of each window in row-major order
    Tensor maxpool2(const Tensor& x);

    // per-pixel softmax across channels of [C,H,W], stabilized by the
    // per-pixel max score
    Tensor softmax_channels(const Tensor& scores);

    // align-corners bilinear interpolation of [C,h,w] to [C,out_h,out_w],
    // out_h >= h, out_w >= w
    Tensor bilinear_upsample(const Tensor& map, int out_h, int out_w);

    // sum of all elements -> shape {1}
    Tensor sum(const Tensor& x);

    // mean negative log of probs[C,H,W] at the given points, log floored at
    // 1e-300; the point set itself is constant during backward
    Tensor nll_at_points(const Tensor& probs, const std::vector<ScorePoint>& points);

    // per-channel global max of [C,H,W] -> [C]; gradient routes to the first
    // maximal pixel of each channel in row-major order
    Tensor channel_max(const Tensor& x);

    // mean binary logistic loss from logits over channels 1..C-1 of scores
    // [C]; present[c] != 0 marks a positive label, channel 0 is ignored
    Tensor foreground_bce(const Tensor& scores, const std::vector<std::uint8_t>& present);

    // mean negative log of probs[C,H,W] at every pixel's target class
    Tensor pixelwise_nll(const Tensor& probs, const std::vector<std::uint8_t>& target_classes);

    // Reverse-topological accumulation from `output`, seeded with ones (or an
    // explicit seed of identical shape). Grad buffers of every tensor this
    // graph tracked are zeroed first.
    void backward(const Tensor& output);
    void backward(const Tensor& output, const Tensor& seed);

    std::size_t num_ops() const { return tape_.size(); }

  private:
    struct Node {
        std::function<void()> backprop;
    };
    bool recording_ = true;
    std::vector<Node> tape_;
    std::vector<std::shared_ptr<Tensor::State>> tracked_;
    std::unordered_map<const Tensor::State*, int> ids_;
    int next_id_ = 0;

    void track(const Tensor& t);
    Tensor make_output(std::vector<int> shape);
    void record(std::function<void()> backprop);
};

}  // namespace milfcn
