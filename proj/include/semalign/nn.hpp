#pragma once

// Minimal CPU convolutional network toolkit: layers with explicit forward/backward passes,
// parameter gradients, and input gradients. Scalar type is a template parameter so the
// same networks train in float and run gradient checks in double.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "semalign/error.hpp"
#include "semalign/rng.hpp"

namespace semalign::nn {

enum class Mode { Train, Eval };

/// Storage for tensors and parameters. Eigen's vectorized kernels pick their summation
/// order from the data's address alignment, so every buffer is aligned to the widest SIMD
/// width to keep results independent of where the allocator places it.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    Buffer<T> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const noexcept { return data.size(); }
    std::size_t sample_size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
    T* sample(int i) noexcept { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    const T* sample(int i) const noexcept { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    T& at(int i, int ch, int y, int x) noexcept {
        return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
    }
    T at(int i, int ch, int y, int x) const noexcept {
        return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
    }
    bool same_shape(const Tensor& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
struct Param {
    std::string name;
    Buffer<T> value;
    Buffer<T> grad;
    Buffer<T> velocity;

    explicit Param(std::string n, std::size_t size = 0)
        : name(std::move(n)), value(size, T(0)), grad(size, T(0)), velocity(size, T(0)) {}
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
struct StateRefs {
    std::vector<Param<T>*> params;
    std::vector<Buffer<T>*> buffers;
};

template <typename T>
class Layer {
public:
    using value_type = T;
    virtual ~Layer() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
    /// Propagates dL/d(output) to dL/d(input); accumulates parameter gradients when asked.
    virtual Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) = 0;
    virtual void collect(StateRefs<T>&) {}
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual std::string describe() const = 0;
};

namespace detail {

template <typename T>
void kaiming_normal(Buffer<T>& w, int fan_in, Rng& rng) {
    std::normal_distribution<double> d(0.0, std::sqrt(2.0 / fan_in));
    for (T& v : w) v = static_cast<T>(d(rng));
}

template <typename T>
void uniform_fan_in(Buffer<T>& w, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> d(-bound, bound);
    for (T& v : w) v = static_cast<T>(d(rng));
}

}  // namespace detail

template <typename T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias, Rng& rng)
        : in_(in_ch), out_(out_ch), k_(kernel), s_(stride), p_(pad), has_bias_(bias),
          weight_("conv.weight", static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel),
          bias_("conv.bias", bias ? static_cast<std::size_t>(out_ch) : 0) {
        detail::kaiming_normal(weight_.value, in_ch * kernel * kernel, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode) override {
        if (x.c != in_) throw Error("conv input has " + std::to_string(x.c) + " channels, expected " + std::to_string(in_));
        input_ = x;
        const int ho = out_dim(x.h), wo = out_dim(x.w);
        Tensor<T> y(x.n, out_, ho, wo);
        const int kk = in_ * k_ * k_, pp = ho * wo;
        CMatMap<T> W(weight_.value.data(), out_, kk);
        Buffer<T> col;
        for (int i = 0; i < x.n; ++i) {
            MatMap<T> Y(y.sample(i), out_, pp);
            if (pointwise()) {
                Y.noalias() = W * CMatMap<T>(x.sample(i), in_, pp);
            } else {
                im2col(x, i, ho, wo, col);
                Y.noalias() = W * CMatMap<T>(col.data(), kk, pp);
            }
            if (has_bias_)
                for (int o = 0; o < out_; ++o) Y.row(o).array() += bias_.value[static_cast<std::size_t>(o)];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g, bool param_grads) override {
        const Tensor<T>& x = input_;
        const int ho = g.h, wo = g.w, kk = in_ * k_ * k_, pp = ho * wo;
        Tensor<T> dx(x.n, x.c, x.h, x.w);
        CMatMap<T> W(weight_.value.data(), out_, kk);
        MatMap<T> dW(weight_.grad.data(), out_, kk);
        Buffer<T> col, dcol(static_cast<std::size_t>(kk) * pp);
        for (int i = 0; i < x.n; ++i) {
            CMatMap<T> G(g.sample(i), out_, pp);
            if (pointwise()) {
                if (param_grads) dW.noalias() += G * CMatMap<T>(x.sample(i), in_, pp).transpose();
                MatMap<T>(dx.sample(i), in_, pp).noalias() = W.transpose() * G;
            } else {
                if (param_grads) {
                    im2col(x, i, ho, wo, col);
                    dW.noalias() += G * CMatMap<T>(col.data(), kk, pp).transpose();
                }
                MatMap<T>(dcol.data(), kk, pp).noalias() = W.transpose() * G;
                col2im(dcol, dx, i, ho, wo);
            }
            if (param_grads && has_bias_)
                for (int o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += G.row(o).sum();
        }
        return dx;
    }

    void collect(StateRefs<T>& refs) override {
        refs.params.push_back(&weight_);
        if (has_bias_) refs.params.push_back(&bias_);
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }
    std::string describe() const override {
        return "conv" + std::to_string(k_) + "x" + std::to_string(k_) + "(" + std::to_string(in_) + "->" +
               std::to_string(out_) + ", s" + std::to_string(s_) + ")";
    }

private:
    bool pointwise() const noexcept { return k_ == 1 && s_ == 1 && p_ == 0; }
    int out_dim(int d) const noexcept { return (d + 2 * p_ - k_) / s_ + 1; }

    void im2col(const Tensor<T>& x, int i, int ho, int wo, Buffer<T>& col) const {
        col.assign(static_cast<std::size_t>(in_) * k_ * k_ * ho * wo, T(0));
        const T* src = x.sample(i);
        std::size_t r = 0;
        for (int c = 0; c < in_; ++c)
            for (int ki = 0; ki < k_; ++ki)
                for (int kj = 0; kj < k_; ++kj, ++r) {
                    T* dst = col.data() + r * ho * wo;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * s_ - p_ + ki;
                        if (iy < 0 || iy >= x.h) continue;
                        const T* row = src + (static_cast<std::size_t>(c) * x.h + iy) * x.w;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * s_ - p_ + kj;
                            if (ix >= 0 && ix < x.w) dst[oy * wo + ox] = row[ix];
                        }
                    }
                }
    }

    void col2im(const Buffer<T>& col, Tensor<T>& dx, int i, int ho, int wo) const {
        T* dst = dx.sample(i);
        std::size_t r = 0;
        for (int c = 0; c < in_; ++c)
            for (int ki = 0; ki < k_; ++ki)
                for (int kj = 0; kj < k_; ++kj, ++r) {
                    const T* src = col.data() + r * ho * wo;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * s_ - p_ + ki;
                        if (iy < 0 || iy >= dx.h) continue;
                        T* row = dst + (static_cast<std::size_t>(c) * dx.h + iy) * dx.w;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * s_ - p_ + kj;
                            if (ix >= 0 && ix < dx.w) row[ix] += src[oy * wo + ox];
                        }
                    }
                }
    }

    int in_, out_, k_, s_, p_;
    bool has_bias_;
    Param<T> weight_, bias_;
    Tensor<T> input_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
public:
    explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
        : ch_(channels), momentum_(momentum), eps_(eps),
          gamma_("bn.gamma", static_cast<std::size_t>(channels)), beta_("bn.beta", static_cast<std::size_t>(channels)),
          running_mean_(static_cast<std::size_t>(channels), T(0)), running_var_(static_cast<std::size_t>(channels), T(1)) {
        std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        mode_ = mode;
        const int hw = x.h * x.w;
        const double m = static_cast<double>(x.n) * hw;
        Tensor<T> y(x.n, x.c, x.h, x.w);
        xhat_ = Tensor<T>(x.n, x.c, x.h, x.w);
        inv_std_.assign(static_cast<std::size_t>(ch_), T(0));
        for (int c = 0; c < ch_; ++c) {
            double mean, var;
            if (mode == Mode::Train) {
                double s = 0.0, ss = 0.0;
                for (int i = 0; i < x.n; ++i) {
                    const T* p = x.sample(i) + static_cast<std::size_t>(c) * hw;
                    for (int k = 0; k < hw; ++k) s += p[k];
                }
                mean = s / m;
                for (int i = 0; i < x.n; ++i) {
                    const T* p = x.sample(i) + static_cast<std::size_t>(c) * hw;
                    for (int k = 0; k < hw; ++k) ss += (p[k] - mean) * (p[k] - mean);
                }
                var = ss / m;
                const double unbiased = m > 1 ? ss / (m - 1) : var;
                auto& rm = running_mean_[static_cast<std::size_t>(c)];
                auto& rv = running_var_[static_cast<std::size_t>(c)];
                rm = static_cast<T>((1 - momentum_) * rm + momentum_ * mean);
                rv = static_cast<T>((1 - momentum_) * rv + momentum_ * unbiased);
            } else {
                mean = running_mean_[static_cast<std::size_t>(c)];
                var = running_var_[static_cast<std::size_t>(c)];
            }
            const double inv = 1.0 / std::sqrt(var + eps_);
            inv_std_[static_cast<std::size_t>(c)] = static_cast<T>(inv);
            const T gm = gamma_.value[static_cast<std::size_t>(c)], bt = beta_.value[static_cast<std::size_t>(c)];
            for (int i = 0; i < x.n; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * x.sample_size() + static_cast<std::size_t>(c) * hw;
                for (int k = 0; k < hw; ++k) {
                    const T xh = static_cast<T>((x.data[off + k] - mean) * inv);
                    xhat_.data[off + k] = xh;
                    y.data[off + k] = gm * xh + bt;
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g, bool param_grads) override {
        const int hw = g.h * g.w;
        const double m = static_cast<double>(g.n) * hw;
        Tensor<T> dx(g.n, g.c, g.h, g.w);
        for (int c = 0; c < ch_; ++c) {
            double dgamma = 0.0, dbeta = 0.0;
            for (int i = 0; i < g.n; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * g.sample_size() + static_cast<std::size_t>(c) * hw;
                for (int k = 0; k < hw; ++k) {
                    dgamma += static_cast<double>(g.data[off + k]) * xhat_.data[off + k];
                    dbeta += g.data[off + k];
                }
            }
            if (param_grads) {
                gamma_.grad[static_cast<std::size_t>(c)] += static_cast<T>(dgamma);
                beta_.grad[static_cast<std::size_t>(c)] += static_cast<T>(dbeta);
            }
            const double scale = static_cast<double>(gamma_.value[static_cast<std::size_t>(c)]) * inv_std_[static_cast<std::size_t>(c)];
            for (int i = 0; i < g.n; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * g.sample_size() + static_cast<std::size_t>(c) * hw;
                for (int k = 0; k < hw; ++k) {
                    if (mode_ == Mode::Train)
                        dx.data[off + k] = static_cast<T>(scale / m * (m * g.data[off + k] - dbeta - xhat_.data[off + k] * dgamma));
                    else
                        dx.data[off + k] = static_cast<T>(scale * g.data[off + k]);
                }
            }
        }
        return dx;
    }

    void collect(StateRefs<T>& refs) override {
        refs.params.push_back(&gamma_);
        refs.params.push_back(&beta_);
        refs.buffers.push_back(&running_mean_);
        refs.buffers.push_back(&running_var_);
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
    std::string describe() const override { return "batchnorm(" + std::to_string(ch_) + ")"; }

private:
    int ch_;
    double momentum_, eps_;
    Param<T> gamma_, beta_;
    Buffer<T> running_mean_, running_var_;
    Mode mode_ = Mode::Eval;
    Tensor<T> xhat_;
    Buffer<T> inv_std_;
};

template <typename T>
class ReLU final : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x, Mode) override {
        Tensor<T> y = x;
        mask_.assign(x.size(), 0);
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (y.data[i] > T(0)) mask_[i] = 1;
            else y.data[i] = T(0);
        }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& g, bool) override {
        Tensor<T> dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!mask_[i]) dx.data[i] = T(0);
        return dx;
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }
    std::string describe() const override { return "relu"; }

private:
    std::vector<std::uint8_t> mask_;
};

/// 2x2 max pooling with stride 2.
template <typename T>
class MaxPool2 final : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x, Mode) override {
        in_shape_ = {x.n, x.c, x.h, x.w};
        Tensor<T> y(x.n, x.c, x.h / 2, x.w / 2);
        argmax_.assign(y.size(), 0);
        std::size_t o = 0;
        for (int i = 0; i < x.n; ++i)
            for (int c = 0; c < x.c; ++c)
                for (int oy = 0; oy < y.h; ++oy)
                    for (int ox = 0; ox < y.w; ++ox, ++o) {
                        std::size_t best = ((static_cast<std::size_t>(i) * x.c + c) * x.h + 2 * oy) * x.w + 2 * ox;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dxx = 0; dxx < 2; ++dxx) {
                                std::size_t idx = ((static_cast<std::size_t>(i) * x.c + c) * x.h + 2 * oy + dy) * x.w + 2 * ox + dxx;
                                if (x.data[idx] > x.data[best]) best = idx;
                            }
                        argmax_[o] = best;
                        y.data[o] = x.data[best];
                    }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& g, bool) override {
        Tensor<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
        for (std::size_t o = 0; o < g.size(); ++o) dx.data[argmax_[o]] += g.data[o];
        return dx;
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2>(*this); }
    std::string describe() const override { return "maxpool2"; }

private:
    std::array<int, 4> in_shape_{};
    std::vector<std::size_t> argmax_;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x, Mode) override {
        in_shape_ = {x.n, x.c, x.h, x.w};
        Tensor<T> y(x.n, x.c, 1, 1);
        const int hw = x.h * x.w;
        for (int i = 0; i < x.n; ++i)
            for (int c = 0; c < x.c; ++c) {
                const T* p = x.sample(i) + static_cast<std::size_t>(c) * hw;
                double s = 0.0;
                for (int k = 0; k < hw; ++k) s += p[k];
                y.at(i, c, 0, 0) = static_cast<T>(s / hw);
            }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& g, bool) override {
        Tensor<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
        const int hw = dx.h * dx.w;
        for (int i = 0; i < dx.n; ++i)
            for (int c = 0; c < dx.c; ++c) {
                T* p = dx.sample(i) + static_cast<std::size_t>(c) * hw;
                const T v = g.at(i, c, 0, 0) / static_cast<T>(hw);
                for (int k = 0; k < hw; ++k) p[k] = v;
            }
        return dx;
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
    std::string describe() const override { return "global_avg_pool"; }

private:
    std::array<int, 4> in_shape_{};
};

/// Fully connected layer over the flattened sample; output shape (n, out, 1, 1).
template <typename T>
class Linear final : public Layer<T> {
public:
    Linear(int in, int out, Rng& rng)
        : in_(in), out_(out), weight_("linear.weight", static_cast<std::size_t>(in) * out),
          bias_("linear.bias", static_cast<std::size_t>(out)) {
        detail::uniform_fan_in(weight_.value, in, rng);
        detail::uniform_fan_in(bias_.value, in, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode) override {
        if (static_cast<int>(x.sample_size()) != in_)
            throw Error("linear input has " + std::to_string(x.sample_size()) + " features, expected " + std::to_string(in_));
        input_ = x;
        // Row-at-a-time products keep each sample's result independent of batch composition.
        Tensor<T> y(x.n, out_, 1, 1);
        CMatMap<T> W(weight_.value.data(), out_, in_);
        const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias_.value.data(), out_);
        // Inputs are staged through an aligned vector since sample strides need not be.
        Eigen::Matrix<T, Eigen::Dynamic, 1> xi(in_);
        for (int i = 0; i < x.n; ++i) {
            xi = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(x.sample(i), in_);
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(y.sample(i), out_).noalias() = W * xi + b;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g, bool param_grads) override {
        CMatMap<T> G(g.data.data(), g.n, out_);
        CMatMap<T> X(input_.data.data(), input_.n, in_);
        if (param_grads) {
            MatMap<T>(weight_.grad.data(), out_, in_).noalias() += G.transpose() * X;
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), out_) += G.colwise().sum();
        }
        Tensor<T> dx(input_.n, input_.c, input_.h, input_.w);
        CMatMap<T> W(weight_.value.data(), out_, in_);
        Eigen::Matrix<T, Eigen::Dynamic, 1> gi(out_);
        for (int i = 0; i < g.n; ++i) {
            gi = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(g.sample(i), out_);
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(dx.sample(i), in_).noalias() = W.transpose() * gi;
        }
        return dx;
    }

    void collect(StateRefs<T>& refs) override {
        refs.params.push_back(&weight_);
        refs.params.push_back(&bias_);
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }
    std::string describe() const override {
        return "linear(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
    }

    Buffer<T>& weight() noexcept { return weight_.value; }
    Buffer<T>& bias() noexcept { return bias_.value; }

private:
    int in_, out_;
    Param<T> weight_, bias_;
    Tensor<T> input_;
};

template <typename T>
class Sequential : public Layer<T> {
public:
    Sequential() = default;
    Sequential(const Sequential& o) {
        for (const auto& l : o.layers_) layers_.push_back(l->clone());
    }
    Sequential& operator=(const Sequential& o) {
        if (this != &o) {
            layers_.clear();
            for (const auto& l : o.layers_) layers_.push_back(l->clone());
        }
        return *this;
    }
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    template <typename L, typename... Args>
    Sequential& add(Args&&... args) {
        layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
        return *this;
    }
    Sequential& add(std::unique_ptr<Layer<T>> layer) {
        layers_.push_back(std::move(layer));
        return *this;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        Tensor<T> h = x;
        for (auto& l : layers_) h = l->forward(h, mode);
        return h;
    }
    Tensor<T> backward(const Tensor<T>& g, bool param_grads) override {
        Tensor<T> d = g;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d, param_grads);
        return d;
    }
    void collect(StateRefs<T>& refs) override {
        for (auto& l : layers_) l->collect(refs);
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Sequential>(*this); }
    std::string describe() const override {
        std::string s = "[";
        for (std::size_t i = 0; i < layers_.size(); ++i) s += (i ? ", " : "") + layers_[i]->describe();
        return s + "]";
    }
    std::size_t depth() const noexcept { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// ResNet bottleneck: 1x1 reduce, 3x3 (strided), 1x1 expand (x4), each batch-normalized,
/// summed with an identity or projected shortcut, then ReLU.
template <typename T>
class Bottleneck final : public Layer<T> {
public:
    static constexpr int kExpansion = 4;

    Bottleneck(int in_ch, int width, int stride, Rng& rng) : desc_("bottleneck(" + std::to_string(in_ch) + "->" + std::to_string(width * kExpansion) + ", s" + std::to_string(stride) + ")") {
        main_.template add<Conv2d<T>>(in_ch, width, 1, 1, 0, false, rng)
            .template add<BatchNorm2d<T>>(width)
            .template add<ReLU<T>>()
            .template add<Conv2d<T>>(width, width, 3, stride, 1, false, rng)
            .template add<BatchNorm2d<T>>(width)
            .template add<ReLU<T>>()
            .template add<Conv2d<T>>(width, width * kExpansion, 1, 1, 0, false, rng)
            .template add<BatchNorm2d<T>>(width * kExpansion);
        if (stride != 1 || in_ch != width * kExpansion) {
            projected_ = true;
            shortcut_.template add<Conv2d<T>>(in_ch, width * kExpansion, 1, stride, 0, false, rng)
                .template add<BatchNorm2d<T>>(width * kExpansion);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        Tensor<T> y = main_.forward(x, mode);
        const Tensor<T> s = projected_ ? shortcut_.forward(x, mode) : x;
        if (!y.same_shape(s)) throw Error("bottleneck branch shape mismatch");
        sum_relu_.assign(y.size(), 0);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y.data[i] += s.data[i];
            if (y.data[i] > T(0)) sum_relu_[i] = 1;
            else y.data[i] = T(0);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g, bool param_grads) override {
        Tensor<T> gs = g;
        for (std::size_t i = 0; i < gs.size(); ++i)
            if (!sum_relu_[i]) gs.data[i] = T(0);
        Tensor<T> dx = main_.backward(gs, param_grads);
        const Tensor<T> ds = projected_ ? shortcut_.backward(gs, param_grads) : gs;
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
        return dx;
    }

    void collect(StateRefs<T>& refs) override {
        main_.collect(refs);
        if (projected_) shortcut_.collect(refs);
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Bottleneck>(*this); }
    std::string describe() const override { return desc_; }

private:
    std::string desc_;
    Sequential<T> main_, shortcut_;
    bool projected_ = false;
    std::vector<std::uint8_t> sum_relu_;
};

/// Three conv-BN-ReLU-maxpool blocks (16, 32, 64 channels) and a two-layer head:
/// 91,033 parameters for 25 classes.
template <typename T>
Sequential<T> make_smallcnn(int num_classes, Rng& rng) {
    Sequential<T> net;
    int in = 3;
    for (int ch : {16, 32, 64}) {
        net.template add<Conv2d<T>>(in, ch, 3, 1, 1, true, rng)
            .template add<BatchNorm2d<T>>(ch)
            .template add<ReLU<T>>()
            .template add<MaxPool2<T>>();
        in = ch;
    }
    net.template add<Linear<T>>(64 * 4 * 4, 64, rng).template add<ReLU<T>>().template add<Linear<T>>(64, num_classes, rng);
    return net;
}

/// CIFAR-style bottleneck ResNet (3x3 stem, no stem pooling). {3,4,6,3} gives ResNet50.
template <typename T>
Sequential<T> make_resnet(const std::vector<int>& stage_blocks, int num_classes, Rng& rng, int base_width = 64) {
    Sequential<T> net;
    net.template add<Conv2d<T>>(3, base_width, 3, 1, 1, false, rng)
        .template add<BatchNorm2d<T>>(base_width)
        .template add<ReLU<T>>();
    int in = base_width;
    for (std::size_t stage = 0; stage < stage_blocks.size(); ++stage) {
        const int width = base_width << stage;
        for (int b = 0; b < stage_blocks[stage]; ++b) {
            const int stride = (b == 0 && stage > 0) ? 2 : 1;
            net.template add<Bottleneck<T>>(in, width, stride, rng);
            in = width * Bottleneck<T>::kExpansion;
        }
    }
    net.template add<GlobalAvgPool<T>>().template add<Linear<T>>(in, num_classes, rng);
    return net;
}

template <typename T>
std::size_t parameter_count(Layer<T>& net) {
    StateRefs<T> refs;
    net.collect(refs);
    std::size_t n = 0;
    for (auto* p : refs.params) n += p->value.size();
    return n;
}

struct SgdOptions {
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

/// SGD with heavy-ball momentum and L2 weight decay on every parameter:
///   g <- grad + wd * w;  v <- momentum * v + g;  w <- w - lr * v
template <typename T>
void sgd_step(const StateRefs<T>& refs, const SgdOptions& opt) {
    for (auto* p : refs.params)
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = static_cast<double>(p->grad[i]) + opt.weight_decay * p->value[i];
            const double v = opt.momentum * p->velocity[i] + g;
            p->velocity[i] = static_cast<T>(v);
            p->value[i] = static_cast<T>(p->value[i] - opt.lr * v);
        }
}

template <typename T>
void zero_grad(const StateRefs<T>& refs) {
    for (auto* p : refs.params) p->zero_grad();
}

}  // namespace semalign::nn
