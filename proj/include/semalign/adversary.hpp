#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "semalign/dataset.hpp"
#include "semalign/error.hpp"
#include "semalign/io.hpp"
#include "semalign/model.hpp"
#include "semalign/rng.hpp"

namespace semalign {

struct AttackConfig {
    double epsilon = 0.0;
    int steps = 20;
    std::optional<double> step_size;  // default 2.5 * epsilon / steps
    bool random_start = false;
    std::uint64_t seed = 0;

    double effective_step_size() const { return step_size.value_or(2.5 * epsilon / steps); }

    void validate() const {
        if (!(epsilon >= 0.0)) throw ConfigError("attack epsilon must be >= 0");
        if (steps < 1) throw ConfigError("attack steps must be >= 1");
        if (step_size && !(*step_size > 0.0)) throw ConfigError("attack step_size must be > 0");
    }
};

struct AttackResult {
    std::vector<double> delta;
    double achieved_loss = 0.0;
    double clean_loss = 0.0;
    int clean_pred = -1;
    int adv_pred = -1;
    int iterations = 0;
    bool stopped_on_zero_gradient = false;
    double delta_norm() const {
        double s = 0.0;
        for (double v : delta) s += v * v;
        return std::sqrt(s);
    }
};

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

/// Euclidean projection onto the closed ball {u : ||u||_2 <= epsilon}.
inline std::vector<double> project_l2_ball(std::span<const double> v, double epsilon) {
    if (epsilon < 0.0) throw Error("projection radius must be >= 0");
    std::vector<double> out(v.begin(), v.end());
    const double n = l2_norm(v);
    if (n > epsilon) {
        const double s = n > 0.0 ? epsilon / n : 0.0;
        for (double& x : out) x *= s;
        // Guard against the rescaled norm landing one ulp above the radius.
        while (l2_norm(out) > epsilon)
            for (double& x : out) x = std::nextafter(x, 0.0);
    }
    return out;
}

namespace detail {

/// Replaces delta by clip(x + delta, 0, 1) - x, which never increases any |delta_i|.
inline void clip_to_box(std::vector<double>& delta, std::span<const float> x) {
    for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] = std::clamp(static_cast<double>(x[i]) + delta[i], 0.0, 1.0) - static_cast<double>(x[i]);
}

inline bool inside_box(std::span<const double> delta, std::span<const float> x) {
    for (std::size_t i = 0; i < delta.size(); ++i) {
        const double v = static_cast<double>(x[i]) + delta[i];
        if (v < 0.0 || v > 1.0) return false;
    }
    return true;
}

template <typename T>
nn::Tensor<T> perturbed_batch(std::span<const Image* const> images, const std::vector<std::vector<double>>& deltas,
                              const std::vector<std::size_t>& which) {
    const Image& first = *images[which.front()];
    nn::Tensor<T> x(static_cast<int>(which.size()), Image::kChannels, first.height(), first.width());
    for (std::size_t b = 0; b < which.size(); ++b) {
        auto px = images[which[b]]->pixels();
        const auto& d = deltas[which[b]];
        T* dst = x.sample(static_cast<int>(b));
        for (std::size_t i = 0; i < px.size(); ++i) dst[i] = static_cast<T>(static_cast<double>(px[i]) + d[i]);
    }
    return x;
}

}  // namespace detail

/// Untargeted L2 projected gradient ascent on the soft cross-entropy of the true class,
/// run for a batch of images in lockstep. Every iterate is projected onto the epsilon-ball
/// and clipped to the [0,1] pixel box; the iterate with the highest loss is returned.
/// `starts` optionally supplies per-image initial perturbations (warm starts).
template <typename Model>
std::vector<AttackResult> pgd_l2_attack_batch(Model& model, std::span<const Image* const> images,
                                              std::span<const int> labels, const AttackConfig& cfg,
                                              const std::vector<std::vector<double>>* starts = nullptr) {
    using T = typename std::remove_cvref_t<decltype(model.net())>::value_type;
    static_assert(std::is_floating_point_v<T>);
    cfg.validate();
    if (images.size() != labels.size()) throw Error("attack: image and label counts differ");
    const std::size_t n = images.size();
    if (starts && starts->size() != n) throw Error("attack: warm-start count differs from image count");
    for (std::size_t i = 0; starts && i < n; ++i)
        if (!(*starts)[i].empty() && (*starts)[i].size() != images[i]->size())
            throw Error("attack: warm start has the wrong number of pixels");
    std::vector<AttackResult> res(n);
    if (n == 0) return res;
    const int nc = model.num_classes();
    const double alpha = cfg.effective_step_size();

    std::vector<std::vector<double>> targets, delta(n);
    for (std::size_t i = 0; i < n; ++i) {
        targets.push_back(one_hot(labels[i], nc));
        delta[i].assign(images[i]->size(), 0.0);
    }

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    auto evaluate = [&](const std::vector<std::size_t>& which, bool need_grad) {
        std::vector<std::vector<double>> tg;
        for (std::size_t i : which) tg.push_back(targets[i]);
        return model.loss_and_grad(detail::perturbed_batch<T>(images, delta, which), tg, nn::Mode::Eval, false, 1.0, need_grad);
    };

    {
        auto clean = evaluate(all, false);
        for (std::size_t i = 0; i < n; ++i) {
            res[i].clean_loss = clean.losses[i];
            res[i].clean_pred = argmax(clean.probs[i]);
        }
    }

    Rng rng = make_rng(cfg.seed, "pgd-random-start");
    for (std::size_t i = 0; i < n; ++i) {
        if (starts && !(*starts)[i].empty()) {
            delta[i] = (*starts)[i];
        } else if (cfg.random_start && cfg.epsilon > 0.0) {
            std::normal_distribution<double> g(0.0, 1.0);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            for (double& v : delta[i]) v = g(rng);
            const double r = cfg.epsilon * std::pow(u(rng), 1.0 / static_cast<double>(delta[i].size()));
            const double nrm = l2_norm(delta[i]);
            for (double& v : delta[i]) v *= r / nrm;
        }
        // A warm start from a smaller ball is already feasible; leave it bit-identical so its
        // loss here equals the loss recorded at the previous radius.
        const bool feasible_start = starts && !(*starts)[i].empty() && l2_norm(delta[i]) <= cfg.epsilon &&
                                    detail::inside_box(delta[i], images[i]->pixels());
        if (!feasible_start) {
            delta[i] = project_l2_ball(delta[i], cfg.epsilon);
            detail::clip_to_box(delta[i], images[i]->pixels());
            delta[i] = project_l2_ball(delta[i], cfg.epsilon);
        }
        res[i].delta = delta[i];
        res[i].achieved_loss = -std::numeric_limits<double>::infinity();
    }

    std::vector<std::size_t> active = all;
    const int iterations = cfg.epsilon > 0.0 ? cfg.steps : 0;
    for (int k = 0; k <= iterations && !active.empty(); ++k) {
        auto lg = evaluate(active, k < iterations);
        std::vector<std::size_t> still;
        for (std::size_t b = 0; b < active.size(); ++b) {
            const std::size_t i = active[b];
            AttackResult& r = res[i];
            const double loss = lg.losses[b];
            if (loss > r.achieved_loss) {
                r.achieved_loss = loss;
                r.delta = delta[i];
                r.adv_pred = argmax(lg.probs[b]);
            }
            if (k == iterations) continue;
            const T* g = lg.input_grad.sample(static_cast<int>(b));
            std::vector<double> grad(delta[i].size());
            for (std::size_t p = 0; p < grad.size(); ++p) grad[p] = static_cast<double>(g[p]);
            const double gn = l2_norm(grad);
            if (!(gn >= 1e-12)) {
                r.stopped_on_zero_gradient = true;
                continue;
            }
            for (std::size_t p = 0; p < grad.size(); ++p) delta[i][p] += alpha * grad[p] / gn;
            delta[i] = project_l2_ball(delta[i], cfg.epsilon);
            detail::clip_to_box(delta[i], images[i]->pixels());
            delta[i] = project_l2_ball(delta[i], cfg.epsilon);
            ++r.iterations;
            still.push_back(i);
        }
        if (k < iterations) active = std::move(still);
    }
    return res;
}

template <typename Model>
AttackResult pgd_l2_attack(Model& model, const Image& x, int y_true, const AttackConfig& cfg) {
    const Image* p = &x;
    return pgd_l2_attack_batch(model, std::span<const Image* const>(&p, 1), std::span<const int>(&y_true, 1), cfg)
        .front();
}

struct PredictionRow {
    std::string image_id;
    int true_class = -1;
    int pred_class = -1;
    int clean_pred_class = -1;
    double achieved_loss = 0.0;
    double delta_norm = 0.0;
    bool failed = false;
};

struct SweepLevel {
    double epsilon = 0.0;
    AttackConfig config;
    std::vector<PredictionRow> rows;
    std::size_t failures = 0;
};

/// Attacks every test image at each epsilon in ascending order. Each level warm-starts from
/// the previous level's best perturbation, so the best loss per image cannot decrease with
/// epsilon. The epsilon = 0 level is plain clean evaluation.
template <typename Model>
std::vector<SweepLevel> attack_sweep(Model& model, std::span<const LabeledImage> test, std::span<const double> epsilons,
                                     const AttackConfig& tmpl, std::size_t batch = 50) {
    if (epsilons.empty()) throw ConfigError("attack sweep needs at least one epsilon");
    if (epsilons.front() != 0.0) throw ConfigError("attack sweep epsilons must start at 0");
    for (std::size_t e = 1; e < epsilons.size(); ++e)
        if (!(epsilons[e] > epsilons[e - 1])) throw ConfigError("attack sweep epsilons must be strictly ascending");

    std::vector<SweepLevel> levels;
    for (double eps : epsilons) {
        AttackConfig c = tmpl;
        c.epsilon = eps;
        c.validate();
        levels.push_back({eps, c, {}, 0});
    }

    for (std::size_t start = 0; start < test.size(); start += batch) {
        const std::size_t end = std::min(test.size(), start + batch);
        std::vector<const Image*> imgs;
        std::vector<int> labels;
        for (std::size_t i = start; i < end; ++i) {
            imgs.push_back(&test[i].image);
            labels.push_back(test[i].label);
        }
        std::vector<std::vector<double>> warm(imgs.size());
        for (auto& level : levels) {
            auto results = pgd_l2_attack_batch(model, imgs, labels, level.config, &warm);
            for (std::size_t b = 0; b < results.size(); ++b) {
                const auto& r = results[b];
                const bool failed = !std::isfinite(r.achieved_loss);
                level.failures += failed;
                level.rows.push_back({test[start + b].id, labels[b], failed ? r.clean_pred : r.adv_pred, r.clean_pred,
                                      r.achieved_loss, r.delta_norm(), failed});
                warm[b] = r.delta;
            }
        }
    }
    return levels;
}

inline std::string predictions_file_name(double epsilon) { return "predictions_eps" + format_real(epsilon) + ".csv"; }

inline void write_predictions(const fs::path& dir, const SweepLevel& level, const ClassTaxonomy& taxonomy) {
    std::string text = "image_id,true_class,pred_class,clean_pred_class,achieved_loss\n";
    char buf[64];
    for (const auto& r : level.rows) {
        std::snprintf(buf, sizeof buf, "%.17g", r.achieved_loss);
        text += r.image_id + "," + taxonomy.name(r.true_class) + "," + taxonomy.name(r.pred_class) + "," +
                taxonomy.name(r.clean_pred_class) + "," + buf + "\n";
    }
    write_text_atomic(dir / predictions_file_name(level.epsilon), text);
}

inline json attack_config_json(const std::vector<SweepLevel>& levels) {
    json j = json::array();
    for (const auto& l : levels)
        j.push_back({{"epsilon", l.epsilon},
                     {"steps", l.config.steps},
                     {"step_size", l.config.effective_step_size()},
                     {"random_start", l.config.random_start},
                     {"seed", l.config.seed},
                     {"norm", "l2"},
                     {"objective", "untargeted, maximize true-class cross-entropy"},
                     {"warm_start", "previous epsilon's best perturbation"},
                     {"images", l.rows.size()},
                     {"failures", l.failures}});
    return j;
}

}  // namespace semalign
