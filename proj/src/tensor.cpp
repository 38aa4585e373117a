#include "milfcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace milfcn {

namespace {

constexpr double kLogFloor = 1e-300;

int ceil_div(int a, int b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

int floor_div(int a, int b) {
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}

void require(bool ok, const std::string& msg) {
    if (!ok) {
        throw std::invalid_argument(msg);
    }
}

double stable_sigmoid(double s) {
    if (s >= 0.0) {
        return 1.0 / (1.0 + std::exp(-s));
    }
    const double e = std::exp(s);
    return e / (1.0 + e);
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            os << ',';
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

int shape_size(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
    require(!shape.empty() && shape.size() <= 4, "tensor rank must be 1..4, got " + shape_str(shape));
    for (int d : shape) {
        require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape));
    }
    auto s = std::make_shared<State>();
    s->values.assign(static_cast<std::size_t>(shape_size(shape)), 0.0);
    s->shape = std::move(shape);
    return Tensor(std::move(s));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values) {
    Tensor t = zeros(std::move(shape));
    require(values.size() == t.values().size(),
            "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(t.shape()));
    t.s_->values = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value) {
    return from_values({1}, {value});
}

double Tensor::item() const {
    require(defined() && size() == 1, "item() requires a size-1 tensor");
    return s_->values[0];
}

std::vector<double>& Tensor::grad() {
    ensure_grad();
    return s_->grad;
}

const std::vector<double>& Tensor::grad() const {
    require(has_grad(), "gradient buffer not allocated");
    return s_->grad;
}

void Tensor::ensure_grad() {
    if (s_->grad.size() != s_->values.size()) {
        s_->grad.assign(s_->values.size(), 0.0);
    }
}

void Tensor::zero_grad() {
    s_->grad.assign(s_->values.size(), 0.0);
}

Tensor Tensor::detached_copy() const {
    Tensor t;
    t.s_ = std::make_shared<State>();
    t.s_->shape = s_->shape;
    t.s_->values = s_->values;
    return t;
}

void Graph::track(const Tensor& t) {
    require(t.defined(), "undefined tensor passed to graph op");
    if (!recording_) {
        return;
    }
    const Tensor::State* key = t.s_.get();
    if (ids_.find(key) == ids_.end()) {
        ids_.emplace(key, next_id_);
        t.s_->node_id = next_id_;
        ++next_id_;
        tracked_.push_back(t.s_);
    }
}

Tensor Graph::make_output(std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    track(t);
    return t;
}

void Graph::record(std::function<void()> backprop) {
    tape_.push_back(Node{std::move(backprop)});
}

// Closure construction is skipped entirely on non-recording graphs; each op
// guards its record() call with recording_.

Tensor Graph::conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int pad) {
    require(input.defined() && kernel.defined() && bias.defined(), "conv2d: undefined operand");
    require(input.rank() == 3, "conv2d: input must be [C_in,H,W], got " + shape_str(input.shape()));
    require(kernel.rank() == 4, "conv2d: kernel must be [C_out,C_in,kH,kW], got " + shape_str(kernel.shape()));
    require(bias.rank() == 1, "conv2d: bias must be [C_out], got " + shape_str(bias.shape()));
    require(stride > 0, "conv2d: stride must be positive");
    require(pad >= 0, "conv2d: pad must be non-negative");

    const int ci_n = input.shape()[0];
    const int h = input.shape()[1];
    const int w = input.shape()[2];
    const int co_n = kernel.shape()[0];
    const int kh = kernel.shape()[2];
    const int kw = kernel.shape()[3];

    require(kernel.shape()[1] == ci_n,
            "conv2d: input channels " + std::to_string(ci_n) + " (input " + shape_str(input.shape()) +
                ") do not match kernel channels " + std::to_string(kernel.shape()[1]) + " (kernel " +
                shape_str(kernel.shape()) + ")");
    require(bias.shape()[0] == co_n, "conv2d: bias size " + std::to_string(bias.shape()[0]) +
                                         " does not match kernel output channels " + std::to_string(co_n));
    require(kh <= h + 2 * pad && kw <= w + 2 * pad, "conv2d: kernel larger than padded input");
    require((h + 2 * pad - kh) % stride == 0 && (w + 2 * pad - kw) % stride == 0,
            "conv2d: output extent is not an integer for stride " + std::to_string(stride));

    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;

    track(input);
    track(kernel);
    track(bias);
    Tensor out = make_output({co_n, oh, ow});

    if (ow < 8) {
        // narrow outputs: per-pixel accumulation avoids the per-tap loop setup
        double* o = out.data();
        const double* in = input.data();
        const double* k = kernel.data();
        const double* b = bias.data();
        for (int co = 0; co < co_n; ++co) {
            const double* kco = k + static_cast<std::size_t>(co) * ci_n * kh * kw;
            double* oplane = o + static_cast<std::size_t>(co) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                const int iy0 = oy * stride - pad;
                const int ky_lo = std::max(0, -iy0);
                const int ky_hi = std::min(kh, h - iy0);
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix0 = ox * stride - pad;
                    const int kx_lo = std::max(0, -ix0);
                    const int kx_hi = std::min(kw, w - ix0);
                    double acc = b[co];
                    for (int ci = 0; ci < ci_n; ++ci) {
                        const double* ip = in + (static_cast<std::size_t>(ci) * h + iy0) * w + ix0;
                        const double* kp = kco + static_cast<std::size_t>(ci) * kh * kw;
                        for (int ky = ky_lo; ky < ky_hi; ++ky) {
                            const double* irow = ip + static_cast<std::size_t>(ky) * w;
                            const double* krow = kp + static_cast<std::size_t>(ky) * kw;
                            for (int kx = kx_lo; kx < kx_hi; ++kx) {
                                acc += krow[kx] * irow[kx];
                            }
                        }
                    }
                    oplane[oy * ow + ox] = acc;
                }
            }
        }
    } else {
        double* o = out.data();
        const double* in = input.data();
        const double* k = kernel.data();
        const double* b = bias.data();
        for (int co = 0; co < co_n; ++co) {
            std::fill(o + static_cast<std::size_t>(co) * oh * ow, o + static_cast<std::size_t>(co + 1) * oh * ow,
                      b[co]);
        }
        for (int co = 0; co < co_n; ++co) {
            double* oplane = o + static_cast<std::size_t>(co) * oh * ow;
            for (int ci = 0; ci < ci_n; ++ci) {
                const double* iplane = in + static_cast<std::size_t>(ci) * h * w;
                const double* kbase = k + (static_cast<std::size_t>(co) * ci_n + ci) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const int oy_lo = std::max(0, ceil_div(pad - ky, stride));
                    const int oy_hi = std::min(oh - 1, floor_div(h - 1 + pad - ky, stride));
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = kbase[ky * kw + kx];
                        if (wv == 0.0) {
                            continue;
                        }
                        const int ox_lo = std::max(0, ceil_div(pad - kx, stride));
                        const int ox_hi = std::min(ow - 1, floor_div(w - 1 + pad - kx, stride));
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            double* orow = oplane + static_cast<std::size_t>(oy) * ow;
                            const double* irow = iplane + static_cast<std::size_t>(iy) * w + kx - pad;
                            if (stride == 1) {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    orow[ox] += wv * irow[ox];
                                }
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    orow[ox] += wv * irow[static_cast<std::size_t>(ox) * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if (recording_) {
    auto in_s = input.s_;
    auto k_s = kernel.s_;
    auto b_s = bias.s_;
    auto out_s = out.s_;
    record([in_s, k_s, b_s, out_s, ci_n, h, w, co_n, kh, kw, oh, ow, stride, pad]() {
        const double* go = out_s->grad.data();
        const double* in = in_s->values.data();
        const double* k = k_s->values.data();
        double* gin = in_s->grad.data();
        double* gk = k_s->grad.data();
        double* gb = b_s->grad.data();

        for (int co = 0; co < co_n; ++co) {
            const double* gplane = go + static_cast<std::size_t>(co) * oh * ow;
            double acc = 0.0;
            for (int i = 0; i < oh * ow; ++i) {
                acc += gplane[i];
            }
            gb[co] += acc;
        }
        for (int co = 0; co < co_n; ++co) {
            const double* gplane = go + static_cast<std::size_t>(co) * oh * ow;
            for (int ci = 0; ci < ci_n; ++ci) {
                const double* iplane = in + static_cast<std::size_t>(ci) * h * w;
                double* giplane = gin + static_cast<std::size_t>(ci) * h * w;
                const double* kbase = k + (static_cast<std::size_t>(co) * ci_n + ci) * kh * kw;
                double* gkbase = gk + (static_cast<std::size_t>(co) * ci_n + ci) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const int oy_lo = std::max(0, ceil_div(pad - ky, stride));
                    const int oy_hi = std::min(oh - 1, floor_div(h - 1 + pad - ky, stride));
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ox_lo = std::max(0, ceil_div(pad - kx, stride));
                        const int ox_hi = std::min(ow - 1, floor_div(w - 1 + pad - kx, stride));
                        const double wv = kbase[ky * kw + kx];
                        double wacc = 0.0;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            const double* grow = gplane + static_cast<std::size_t>(oy) * ow;
                            const double* irow = iplane + static_cast<std::size_t>(iy) * w + kx - pad;
                            double* girow = giplane + static_cast<std::size_t>(iy) * w + kx - pad;
                            if (stride == 1) {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    wacc += grow[ox] * irow[ox];
                                    girow[ox] += wv * grow[ox];
                                }
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    wacc += grow[ox] * irow[static_cast<std::size_t>(ox) * stride];
                                    girow[static_cast<std::size_t>(ox) * stride] += wv * grow[ox];
                                }
                            }
                        }
                        gkbase[ky * kw + kx] += wacc;
                    }
                }
            }
        }
    });
    }
    return out;
}

Tensor Graph::relu(const Tensor& x) {
    require(x.defined(), "relu: undefined operand");
    track(x);
    Tensor out = make_output(x.shape());
    const int n = x.size();
    const double* xv = x.data();
    double* o = out.data();
    for (int i = 0; i < n; ++i) {
        o[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    }
    if (recording_) {
        auto x_s = x.s_;
        auto out_s = out.s_;
        record([x_s, out_s, n]() {
            const double* xv = x_s->values.data();
            const double* go = out_s->grad.data();
            double* gx = x_s->grad.data();
            for (int i = 0; i < n; ++i) {
                if (xv[i] > 0.0) {
                    gx[i] += go[i];
                }
            }
        });
    }
    return out;
}

Tensor Graph::maxpool2(const Tensor& x) {
    require(x.defined() && x.rank() == 3, "maxpool2: input must be [C,H,W]");
    const int c_n = x.shape()[0];
    const int h = x.shape()[1];
    const int w = x.shape()[2];
    require(h % 2 == 0 && w % 2 == 0,
            "maxpool2: spatial dims must be even, got " + std::to_string(h) + "x" + std::to_string(w));

    const int oh = h / 2;
    const int ow = w / 2;
    track(x);
    Tensor out = make_output({c_n, oh, ow});

    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(c_n) * oh * ow);
    const double* xv = x.data();
    double* o = out.data();
    int* am = argmax->data();
    for (int c = 0; c < c_n; ++c) {
        const double* plane = xv + static_cast<std::size_t>(c) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int base = (2 * oy) * w + 2 * ox;
                // window scanned row-major; ties keep the first element
                int best = base;
                double bv = plane[base];
                const int cand[3] = {base + 1, base + w, base + w + 1};
                for (int idx : cand) {
                    if (plane[idx] > bv) {
                        bv = plane[idx];
                        best = idx;
                    }
                }
                const std::size_t oi = (static_cast<std::size_t>(c) * oh + oy) * ow + ox;
                o[oi] = bv;
                am[oi] = c * h * w + best;
            }
        }
    }
    if (recording_) {
        auto x_s = x.s_;
        auto out_s = out.s_;
        record([x_s, out_s, argmax]() {
            const double* go = out_s->grad.data();
            double* gx = x_s->grad.data();
            const std::size_t n = argmax->size();
            const int* am = argmax->data();
            for (std::size_t i = 0; i < n; ++i) {
                gx[am[i]] += go[i];
            }
        });
    }
    return out;
}

Tensor Graph::softmax_channels(const Tensor& scores) {
    require(scores.defined() && scores.rank() == 3, "softmax_channels: input must be [C,H,W]");
    const int c_n = scores.shape()[0];
    const int h = scores.shape()[1];
    const int w = scores.shape()[2];
    const int hw = h * w;

    track(scores);
    Tensor out = make_output(scores.shape());
    const double* sv = scores.data();
    double* o = out.data();
    for (int p = 0; p < hw; ++p) {
        double m = sv[p];
        for (int c = 1; c < c_n; ++c) {
            m = std::max(m, sv[static_cast<std::size_t>(c) * hw + p]);
        }
        double z = 0.0;
        for (int c = 0; c < c_n; ++c) {
            const double e = std::exp(sv[static_cast<std::size_t>(c) * hw + p] - m);
            o[static_cast<std::size_t>(c) * hw + p] = e;
            z += e;
        }
        const double inv = 1.0 / z;
        for (int c = 0; c < c_n; ++c) {
            o[static_cast<std::size_t>(c) * hw + p] *= inv;
        }
    }
    if (recording_) {
    auto s_s = scores.s_;
    auto out_s = out.s_;
    record([s_s, out_s, c_n, hw]() {
        const double* p = out_s->values.data();
        const double* go = out_s->grad.data();
        double* gs = s_s->grad.data();
        for (int px = 0; px < hw; ++px) {
            double dot = 0.0;
            for (int c = 0; c < c_n; ++c) {
                const std::size_t i = static_cast<std::size_t>(c) * hw + px;
                dot += go[i] * p[i];
            }
            for (int c = 0; c < c_n; ++c) {
                const std::size_t i = static_cast<std::size_t>(c) * hw + px;
                gs[i] += p[i] * (go[i] - dot);
            }
        }
    });
    }
    return out;
}

namespace {

struct LerpAxis {
    std::vector<int> lo;
    std::vector<int> hi;
    std::vector<double> frac;
};

// exact on endpoints and constants; the (1-f)a + fb weights still describe
// the derivative everywhere
double lerp(double a, double b, double f) {
    if (f == 0.0 || a == b) {
        return a;
    }
    if (f == 1.0) {
        return b;
    }
    return (1.0 - f) * a + f * b;
}

// align-corners source coordinates: s = t*(n-1)/(out_n-1), s = 0 when out_n == 1
LerpAxis lerp_axis(int n, int out_n) {
    LerpAxis a;
    a.lo.resize(out_n);
    a.hi.resize(out_n);
    a.frac.resize(out_n);
    for (int t = 0; t < out_n; ++t) {
        double s = 0.0;
        if (out_n > 1) {
            s = static_cast<double>(t) * (n - 1) / (out_n - 1);
        }
        int lo = static_cast<int>(std::floor(s));
        if (lo > n - 2) {
            lo = std::max(0, n - 2);
        }
        const int hi = std::min(lo + 1, n - 1);
        a.lo[t] = lo;
        a.hi[t] = hi;
        a.frac[t] = s - lo;
    }
    return a;
}

}  // namespace

Tensor Graph::bilinear_upsample(const Tensor& map, int out_h, int out_w) {
    require(map.defined() && map.rank() == 3, "bilinear_upsample: input must be [C,h,w]");
    require(out_h > 0 && out_w > 0, "bilinear_upsample: output dims must be positive");
    const int c_n = map.shape()[0];
    const int h = map.shape()[1];
    const int w = map.shape()[2];
    require(out_h >= h && out_w >= w, "bilinear_upsample: output dims " + std::to_string(out_h) + "x" +
                                          std::to_string(out_w) + " must be >= input dims " + std::to_string(h) +
                                          "x" + std::to_string(w));

    track(map);
    Tensor out = make_output({c_n, out_h, out_w});

    auto ay = std::make_shared<LerpAxis>(lerp_axis(h, out_h));
    auto ax = std::make_shared<LerpAxis>(lerp_axis(w, out_w));

    const double* mv = map.data();
    double* o = out.data();
    for (int c = 0; c < c_n; ++c) {
        const double* plane = mv + static_cast<std::size_t>(c) * h * w;
        double* oplane = o + static_cast<std::size_t>(c) * out_h * out_w;
        for (int ty = 0; ty < out_h; ++ty) {
            const double* r0 = plane + static_cast<std::size_t>(ay->lo[ty]) * w;
            const double* r1 = plane + static_cast<std::size_t>(ay->hi[ty]) * w;
            const double fy = ay->frac[ty];
            double* orow = oplane + static_cast<std::size_t>(ty) * out_w;
            for (int tx = 0; tx < out_w; ++tx) {
                const int x0 = ax->lo[tx];
                const int x1 = ax->hi[tx];
                const double fx = ax->frac[tx];
                orow[tx] = lerp(lerp(r0[x0], r0[x1], fx), lerp(r1[x0], r1[x1], fx), fy);
            }
        }
    }
    if (recording_) {
    auto m_s = map.s_;
    auto out_s = out.s_;
    record([m_s, out_s, ay, ax, c_n, h, w, out_h, out_w]() {
        const double* go = out_s->grad.data();
        double* gm = m_s->grad.data();
        for (int c = 0; c < c_n; ++c) {
            double* gplane = gm + static_cast<std::size_t>(c) * h * w;
            const double* goplane = go + static_cast<std::size_t>(c) * out_h * out_w;
            for (int ty = 0; ty < out_h; ++ty) {
                const double fy = ay->frac[ty];
                double* g0 = gplane + static_cast<std::size_t>(ay->lo[ty]) * w;
                double* g1 = gplane + static_cast<std::size_t>(ay->hi[ty]) * w;
                const double* gorow = goplane + static_cast<std::size_t>(ty) * out_w;
                for (int tx = 0; tx < out_w; ++tx) {
                    const int x0 = ax->lo[tx];
                    const int x1 = ax->hi[tx];
                    const double fx = ax->frac[tx];
                    const double g = gorow[tx];
                    g0[x0] += (1.0 - fy) * (1.0 - fx) * g;
                    g0[x1] += (1.0 - fy) * fx * g;
                    g1[x0] += fy * (1.0 - fx) * g;
                    g1[x1] += fy * fx * g;
                }
            }
        }
    });
    }
    return out;
}

Tensor Graph::sum(const Tensor& x) {
    require(x.defined(), "sum: undefined operand");
    track(x);
    Tensor out = make_output({1});
    double acc = 0.0;
    const double* xv = x.data();
    const int n = x.size();
    for (int i = 0; i < n; ++i) {
        acc += xv[i];
    }
    out.data()[0] = acc;
    if (recording_) {
        auto x_s = x.s_;
        auto out_s = out.s_;
        record([x_s, out_s, n]() {
            const double g = out_s->grad[0];
            double* gx = x_s->grad.data();
            for (int i = 0; i < n; ++i) {
                gx[i] += g;
            }
        });
    }
    return out;
}

Tensor Graph::nll_at_points(const Tensor& probs, const std::vector<ScorePoint>& points) {
    require(probs.defined() && probs.rank() == 3, "nll_at_points: probs must be [C,H,W]");
    require(!points.empty(), "nll_at_points: point set must be non-empty");
    const int c_n = probs.shape()[0];
    const int h = probs.shape()[1];
    const int w = probs.shape()[2];

    auto flat = std::make_shared<std::vector<std::size_t>>();
    flat->reserve(points.size());
    for (const ScorePoint& p : points) {
        require(p.channel >= 0 && p.channel < c_n && p.y >= 0 && p.y < h && p.x >= 0 && p.x < w,
                "nll_at_points: point out of range");
        flat->push_back((static_cast<std::size_t>(p.channel) * h + p.y) * w + p.x);
    }

    track(probs);
    Tensor out = make_output({1});
    const double* pv = probs.data();
    const double inv_n = 1.0 / static_cast<double>(flat->size());
    double acc = 0.0;
    for (std::size_t i : *flat) {
        acc -= std::log(std::max(pv[i], kLogFloor));
    }
    out.data()[0] = acc * inv_n;

    if (recording_) {
        auto p_s = probs.s_;
        auto out_s = out.s_;
        record([p_s, out_s, flat, inv_n]() {
            const double g = out_s->grad[0];
            const double* pv = p_s->values.data();
            double* gp = p_s->grad.data();
            for (std::size_t i : *flat) {
                if (pv[i] > kLogFloor) {
                    gp[i] -= g * inv_n / pv[i];
                }
            }
        });
    }
    return out;
}

Tensor Graph::channel_max(const Tensor& x) {
    require(x.defined() && x.rank() == 3, "channel_max: input must be [C,H,W]");
    const int c_n = x.shape()[0];
    const int hw = x.shape()[1] * x.shape()[2];

    track(x);
    Tensor out = make_output({c_n});
    auto argmax = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(c_n));
    const double* xv = x.data();
    double* o = out.data();
    for (int c = 0; c < c_n; ++c) {
        const double* plane = xv + static_cast<std::size_t>(c) * hw;
        int best = 0;
        for (int i = 1; i < hw; ++i) {
            if (plane[i] > plane[best]) {
                best = i;
            }
        }
        o[c] = plane[best];
        (*argmax)[c] = static_cast<std::size_t>(c) * hw + best;
    }
    if (recording_) {
        auto x_s = x.s_;
        auto out_s = out.s_;
        record([x_s, out_s, argmax, c_n]() {
            const double* go = out_s->grad.data();
            double* gx = x_s->grad.data();
            for (int c = 0; c < c_n; ++c) {
                gx[(*argmax)[c]] += go[c];
            }
        });
    }
    return out;
}

Tensor Graph::foreground_bce(const Tensor& scores, const std::vector<std::uint8_t>& present) {
    require(scores.defined() && scores.rank() == 1, "foreground_bce: scores must be [C]");
    const int c_n = scores.shape()[0];
    require(c_n >= 2, "foreground_bce: need at least one foreground channel");
    require(static_cast<int>(present.size()) == c_n, "foreground_bce: presence vector size " +
                                                         std::to_string(present.size()) + " does not match " +
                                                         std::to_string(c_n) + " channels");

    track(scores);
    Tensor out = make_output({1});
    const double inv_n = 1.0 / static_cast<double>(c_n - 1);
    const double* sv = scores.data();
    double acc = 0.0;
    for (int c = 1; c < c_n; ++c) {
        const double s = sv[c];
        const double y = present[c] ? 1.0 : 0.0;
        acc += std::max(s, 0.0) - y * s + std::log1p(std::exp(-std::abs(s)));
    }
    out.data()[0] = acc * inv_n;

    if (recording_) {
        auto targets = std::make_shared<std::vector<std::uint8_t>>(present);
        auto s_s = scores.s_;
        auto out_s = out.s_;
        record([s_s, out_s, targets, c_n, inv_n]() {
            const double g = out_s->grad[0];
            const double* sv = s_s->values.data();
            double* gs = s_s->grad.data();
            for (int c = 1; c < c_n; ++c) {
                const double y = (*targets)[c] ? 1.0 : 0.0;
                gs[c] += g * inv_n * (stable_sigmoid(sv[c]) - y);
            }
        });
    }
    return out;
}

Tensor Graph::pixelwise_nll(const Tensor& probs, const std::vector<std::uint8_t>& target_classes) {
    require(probs.defined() && probs.rank() == 3, "pixelwise_nll: probs must be [C,H,W]");
    const int c_n = probs.shape()[0];
    const int hw = probs.shape()[1] * probs.shape()[2];
    require(static_cast<int>(target_classes.size()) == hw,
            "pixelwise_nll: target has " + std::to_string(target_classes.size()) + " pixels, probs have " +
                std::to_string(hw));
    for (std::uint8_t t : target_classes) {
        require(t < c_n, "pixelwise_nll: target class " + std::to_string(t) + " out of range");
    }

    track(probs);
    Tensor out = make_output({1});
    const double inv_n = 1.0 / static_cast<double>(hw);
    const double* pv = probs.data();
    double acc = 0.0;
    for (int i = 0; i < hw; ++i) {
        acc -= std::log(std::max(pv[static_cast<std::size_t>(target_classes[i]) * hw + i], kLogFloor));
    }
    out.data()[0] = acc * inv_n;

    if (recording_) {
        auto targets = std::make_shared<std::vector<std::uint8_t>>(target_classes);
        auto p_s = probs.s_;
        auto out_s = out.s_;
        record([p_s, out_s, targets, hw, inv_n]() {
            const double g = out_s->grad[0];
            const double* pv = p_s->values.data();
            double* gp = p_s->grad.data();
            for (int i = 0; i < hw; ++i) {
                const std::size_t idx = static_cast<std::size_t>((*targets)[i]) * hw + i;
                if (pv[idx] > kLogFloor) {
                    gp[idx] -= g * inv_n / pv[idx];
                }
            }
        });
    }
    return out;
}

void Graph::backward(const Tensor& output) {
    require(output.defined(), "backward: undefined output");
    backward(output, Tensor::full(output.shape(), 1.0));
}

void Graph::backward(const Tensor& output, const Tensor& seed) {
    require(output.defined() && seed.defined(), "backward: undefined tensor");
    require(seed.shape() == output.shape(), "backward: seed shape " + shape_str(seed.shape()) +
                                                " does not match output shape " + shape_str(output.shape()));
    const bool tracked = ids_.find(output.s_.get()) != ids_.end();
    if (!tracked) {
        require(tape_.empty(), "backward: output tensor is not part of this graph");
        return;  // nothing recorded
    }
    for (const auto& s : tracked_) {
        s->grad.assign(s->values.size(), 0.0);
    }
    output.s_->grad = seed.values();
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        it->backprop();
    }
}

}  // namespace milfcn
