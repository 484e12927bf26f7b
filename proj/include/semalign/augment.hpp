#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "semalign/dataset.hpp"
#include "semalign/error.hpp"
#include "semalign/hybridgen.hpp"
#include "semalign/rng.hpp"

namespace semalign {

struct AugmentationPolicy {
    double probability = 0.0;
    std::string preset = "none";

    static AugmentationPolicy from_preset(const std::string& name) {
        if (name == "none") return {0.0, name};
        if (name == "low") return {0.25, name};
        if (name == "high") return {0.50, name};
        throw ConfigError("unknown augmentation preset '" + name + "' (expected none, low, high)");
    }

    static AugmentationPolicy from_probability(double p) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probability " + format_real(p) + " outside [0,1]");
        const char* name = p == 0.0 ? "none" : p == 0.25 ? "low" : p == 0.5 ? "high" : "custom";
        return {p, name};
    }
};

struct SoftLabel {
    std::vector<double> dist;

    int nonzeros() const {
        return static_cast<int>(std::count_if(dist.begin(), dist.end(), [](double v) { return v != 0.0; }));
    }
    double sum() const { return std::accumulate(dist.begin(), dist.end(), 0.0); }
    bool is_one_hot() const { return nonzeros() == 1 && sum() == 1.0; }
    bool is_hybrid_pair() const {
        return nonzeros() == 2 && std::count(dist.begin(), dist.end(), 0.5) == 2;
    }
};

enum class Origin { Clean, Hybrid };

struct TrainingInstance {
    Image image;
    SoftLabel label;
    Origin origin = Origin::Clean;
    std::string provenance;
    int base_class = -1;
};

inline TrainingInstance clean_instance(const LabeledImage& li, int num_classes) {
    std::vector<double> d(static_cast<std::size_t>(num_classes), 0.0);
    d.at(static_cast<std::size_t>(li.label)) = 1.0;
    return {li.image, {std::move(d)}, Origin::Clean, li.id, li.label};
}

/// Half the mass on the base class, half on the target class.
inline SoftLabel soft_label_for_hybrid(const HybridRecord& r, int num_classes) {
    if (r.base_class == r.target_class)
        throw Error("hybrid record " + r.base_image_id + " has identical base and target class");
    if (r.base_class < 0 || r.base_class >= num_classes || r.target_class < 0 || r.target_class >= num_classes)
        throw Error("hybrid record class index out of range");
    std::vector<double> d(static_cast<std::size_t>(num_classes), 0.0);
    d[static_cast<std::size_t>(r.base_class)] = 0.5;
    d[static_cast<std::size_t>(r.target_class)] = 0.5;
    return {std::move(d)};
}

inline TrainingInstance hybrid_instance(const HybridRecord& r, int num_classes) {
    return {r.image, soft_label_for_hybrid(r, num_classes), Origin::Hybrid, record_key(r), r.base_class};
}

/// One Bernoulli(p) draw per encountered instance; on success a hybrid drawn uniformly from
/// every catalog record sharing the instance's base class is appended. Exactly one uniform
/// variate is consumed per call, plus one integer variate when augmentation fires.
inline std::vector<TrainingInstance> maybe_augment(const TrainingInstance& instance, const AugmentationPolicy& policy,
                                                   const HybridCatalog& catalog, Rng& rng) {
    if (instance.origin != Origin::Clean) throw Error("maybe_augment expects a clean instance");
    std::vector<TrainingInstance> out{instance};
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (!(coin(rng) < policy.probability)) return out;
    const auto& pool = catalog.records_for_class(instance.base_class);
    if (pool.empty())
        throw Error("augmentation fired for " + instance.provenance + " but the catalog has no hybrid with base class " +
                    std::to_string(instance.base_class));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    out.push_back(hybrid_instance(catalog.records()[pool[pick(rng)]], static_cast<int>(instance.label.dist.size())));
    return out;
}

}  // namespace semalign
