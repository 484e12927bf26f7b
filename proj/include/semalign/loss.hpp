#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "semalign/error.hpp"

namespace semalign {

inline constexpr double kProbClamp = 1e-12;

inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    const double mx = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (double& v : p) z += (v = std::exp(v - mx));
    for (double& v : p) v /= z;
    return p;
}

/// -sum_c target_c * log(max(pred_c, 1e-12))
inline double soft_cross_entropy(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size())
        throw Error("soft_cross_entropy: prediction has " + std::to_string(pred.size()) +
                    " entries, target has " + std::to_string(target.size()));
    double loss = 0.0;
    for (std::size_t c = 0; c < pred.size(); ++c)
        if (target[c] != 0.0) loss -= target[c] * std::log(std::max(pred[c], kProbClamp));
    return loss;
}

/// Gradient of soft_cross_entropy(softmax(z), target) with respect to the logits z.
/// Chain rule through the clamp (zero slope below it) and the softmax Jacobian:
///   dL/dp_c = -q_c / p_c where p_c > clamp, else 0
///   dL/dz_j = p_j * (dL/dp_j - sum_c p_c dL/dp_c)
inline std::vector<double> soft_cross_entropy_logit_grad(std::span<const double> probs,
                                                         std::span<const double> target) {
    if (probs.size() != target.size()) throw Error("soft_cross_entropy_logit_grad: shape mismatch");
    double active_mass = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c)
        if (probs[c] > kProbClamp) active_mass += target[c];
    std::vector<double> g(probs.size());
    for (std::size_t j = 0; j < probs.size(); ++j)
        g[j] = (probs[j] > kProbClamp ? -target[j] : 0.0) + probs[j] * active_mass;
    return g;
}

inline double entropy(std::span<const double> q) {
    double h = 0.0;
    for (double v : q)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

}  // namespace semalign
