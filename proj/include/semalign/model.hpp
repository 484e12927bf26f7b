#pragma once

#include <cstdint>
#include <cstring>
#include <algorithm>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "semalign/error.hpp"
#include "semalign/image.hpp"
#include "semalign/io.hpp"
#include "semalign/loss.hpp"
#include "semalign/nn.hpp"

namespace semalign {

struct ModelConfig {
    std::string architecture = "smallcnn";
    int num_classes = 25;

    static bool supported(const std::string& arch) { return arch == "smallcnn" || arch == "resnet50"; }
};

template <typename T>
nn::Tensor<T> to_batch(std::span<const Image* const> images) {
    if (images.empty()) throw Error("empty image batch");
    const int h = images.front()->height(), w = images.front()->width();
    nn::Tensor<T> x(static_cast<int>(images.size()), Image::kChannels, h, w);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->height() != h || images[i]->width() != w)
            throw Error("image batch has mixed shapes");
        auto px = images[i]->pixels();
        std::copy(px.begin(), px.end(), x.sample(static_cast<int>(i)));
    }
    return x;
}

/// Per-sample loss values and gradients from one forward/backward pass.
template <typename T>
struct LossGrad {
    std::vector<double> losses;
    std::vector<std::vector<double>> probs;
    nn::Tensor<T> input_grad;
};

/// A network plus its architecture tag. Outputs are logits; probabilities via softmax.
template <typename T>
class Classifier {
public:
    Classifier() = default;
    Classifier(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        if (!ModelConfig::supported(cfg_.architecture))
            throw ConfigError("unsupported architecture '" + cfg_.architecture + "'");
        Rng rng = make_rng(seed, "init");
        if (cfg_.architecture == "smallcnn") net_ = nn::make_smallcnn<T>(cfg_.num_classes, rng);
        else net_ = nn::make_resnet<T>({3, 4, 6, 3}, cfg_.num_classes, rng);
    }
    Classifier(ModelConfig cfg, nn::Sequential<T> net) : cfg_(std::move(cfg)), net_(std::move(net)) {}

    const ModelConfig& config() const noexcept { return cfg_; }
    int num_classes() const noexcept { return cfg_.num_classes; }
    nn::Sequential<T>& net() noexcept { return net_; }

    nn::StateRefs<T> state() {
        nn::StateRefs<T> refs;
        net_.collect(refs);
        return refs;
    }

    std::vector<std::vector<double>> probabilities(const nn::Tensor<T>& x, nn::Mode mode = nn::Mode::Eval) {
        auto logits = net_.forward(x, mode);
        return rows_softmax(logits);
    }

    /// Forward, soft cross-entropy per sample against `targets`, and backward of
    /// sum_i weight * loss_i. Parameter gradients accumulate only when `param_grads`.
    LossGrad<T> loss_and_grad(const nn::Tensor<T>& x, std::span<const std::vector<double>> targets,
                              nn::Mode mode, bool param_grads, double weight = 1.0, bool backward = true) {
        if (static_cast<int>(targets.size()) != x.n) throw Error("target count does not match batch size");
        auto logits = net_.forward(x, mode);
        LossGrad<T> out;
        out.probs = rows_softmax(logits);
        nn::Tensor<T> g(logits.n, logits.c, 1, 1);
        for (int i = 0; i < x.n; ++i) {
            const auto& q = targets[static_cast<std::size_t>(i)];
            if (static_cast<int>(q.size()) != cfg_.num_classes) throw Error("target has wrong number of classes");
            out.losses.push_back(soft_cross_entropy(out.probs[static_cast<std::size_t>(i)], q));
            auto dz = soft_cross_entropy_logit_grad(out.probs[static_cast<std::size_t>(i)], q);
            for (int c = 0; c < logits.c; ++c) g.at(i, c, 0, 0) = static_cast<T>(weight * dz[static_cast<std::size_t>(c)]);
        }
        if (backward) out.input_grad = net_.backward(g, param_grads);
        return out;
    }

    void save(std::ostream& out) {
        auto refs = state();
        auto write_vec = [&](const nn::Buffer<T>& v) {
            const std::uint64_t n = v.size();
            out.write(reinterpret_cast<const char*>(&n), sizeof n);
            out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
        };
        for (auto* p : refs.params) write_vec(p->value);
        for (auto* b : refs.buffers) write_vec(*b);
    }

    void load(std::istream& in) {
        auto refs = state();
        auto read_vec = [&](nn::Buffer<T>& v) {
            std::uint64_t n = 0;
            in.read(reinterpret_cast<char*>(&n), sizeof n);
            if (!in || n != v.size()) throw Error("checkpoint parameter layout does not match architecture");
            in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
            if (!in) throw Error("checkpoint truncated");
        };
        for (auto* p : refs.params) read_vec(p->value);
        for (auto* b : refs.buffers) read_vec(*b);
    }

private:
    static std::vector<std::vector<double>> rows_softmax(const nn::Tensor<T>& logits) {
        std::vector<std::vector<double>> rows;
        rows.reserve(static_cast<std::size_t>(logits.n));
        std::vector<double> z(static_cast<std::size_t>(logits.c));
        for (int i = 0; i < logits.n; ++i) {
            for (int c = 0; c < logits.c; ++c) z[static_cast<std::size_t>(c)] = logits.at(i, c, 0, 0);
            rows.push_back(softmax(z));
        }
        return rows;
    }

    ModelConfig cfg_;
    nn::Sequential<T> net_;
};

inline int argmax(std::span<const double> v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline std::vector<double> one_hot(int cls, int num_classes) {
    std::vector<double> v(static_cast<std::size_t>(num_classes), 0.0);
    v.at(static_cast<std::size_t>(cls)) = 1.0;
    return v;
}

}  // namespace semalign
