#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "semalign/augment.hpp"
#include "semalign/dataset.hpp"
#include "semalign/error.hpp"
#include "semalign/hybridgen.hpp"
#include "semalign/io.hpp"
#include "semalign/model.hpp"
#include "semalign/rng.hpp"

namespace semalign {

struct TrainConfig {
    double learning_rate = 0.1;
    int batch_size = 100;  // clean instances per batch; appended hybrids ride along
    int epochs = 100;
    std::uint64_t seed = 0;
    bool random_crop = true;
    int crop_padding = 4;
    bool horizontal_flip = true;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> lr_milestones;  // epochs (1-based) after which lr is multiplied by lr_gamma
    double lr_gamma = 0.1;
    AugmentationPolicy augmentation;
    std::string catalog_path;
    std::string mixer_id;
    std::optional<double> mix_factor;
    int eval_batch_size = 100;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
        if (crop_padding < 0) throw ConfigError("train.crop_padding must be >= 0");
        if (eval_batch_size < 1) throw ConfigError("train.eval_batch_size must be >= 1");
        AugmentationPolicy::from_probability(augmentation.probability);
    }

    double lr_at(int epoch) const {
        double lr = learning_rate;
        for (int m : lr_milestones)
            if (epoch > m) lr *= lr_gamma;
        return lr;
    }

    json to_json() const {
        json j{{"learning_rate", learning_rate},
               {"batch_size", batch_size},
               {"epochs", epochs},
               {"seed", seed},
               {"random_crop", random_crop},
               {"crop_padding", crop_padding},
               {"horizontal_flip", horizontal_flip},
               {"momentum", momentum},
               {"weight_decay", weight_decay},
               {"lr_milestones", lr_milestones},
               {"lr_gamma", lr_gamma},
               {"augment_probability", augmentation.probability},
               {"augment_preset", augmentation.preset},
               {"catalog_path", catalog_path},
               {"mixer_id", mixer_id},
               {"eval_batch_size", eval_batch_size}};
        j["mix_factor"] = mix_factor ? json(*mix_factor) : json(nullptr);
        return j;
    }

    /// Reads the `train` section; unknown keys are rejected so typos do not pass silently.
    static TrainConfig from_json(const json& j) {
        static const std::set<std::string> known{"learning_rate", "batch_size", "epochs", "seed", "random_crop",
                                                 "crop_padding", "horizontal_flip", "momentum", "weight_decay",
                                                 "lr_milestones", "lr_gamma", "eval_batch_size", "architecture"};
        for (const auto& [k, v] : j.items())
            if (!known.count(k)) throw ConfigError("unknown train config key '" + k + "'");
        TrainConfig c;
        try {
            c.learning_rate = j.value("learning_rate", c.learning_rate);
            c.batch_size = j.value("batch_size", c.batch_size);
            c.epochs = j.value("epochs", c.epochs);
            c.seed = j.value("seed", c.seed);
            c.random_crop = j.value("random_crop", c.random_crop);
            c.crop_padding = j.value("crop_padding", c.crop_padding);
            c.horizontal_flip = j.value("horizontal_flip", c.horizontal_flip);
            c.momentum = j.value("momentum", c.momentum);
            c.weight_decay = j.value("weight_decay", c.weight_decay);
            c.lr_milestones = j.value("lr_milestones", c.lr_milestones);
            c.lr_gamma = j.value("lr_gamma", c.lr_gamma);
            c.eval_batch_size = j.value("eval_batch_size", c.eval_batch_size);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("bad train config value: ") + e.what());
        }
        return c;
    }
};

/// Zero-pads by `pad`, crops back to the original size at offset (dy, dx), then optionally
/// mirrors horizontally.
inline Image crop_and_flip(const Image& img, int pad, int dy, int dx, bool flip) {
    const int h = img.height(), w = img.width();
    Image out(h, w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sx = flip ? (w - 1 - x) : x;
                const int py = y + dy - pad, px = sx + dx - pad;
                out.at(c, y, x) = (py >= 0 && py < h && px >= 0 && px < w) ? img.at(c, py, px) : 0.0f;
            }
    return out;
}

/// Pad-4 random crop (offsets uniform on 0..2*pad in each axis) then a fair-coin horizontal flip.
inline Image standard_augment(const Image& img, Rng& rng, int pad = 4, bool crop = true, bool flip = true) {
    std::uniform_int_distribution<int> off(0, 2 * pad);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const int dy = crop ? off(rng) : pad;
    const int dx = crop ? off(rng) : pad;
    const bool f = flip && coin(rng) < 0.5;
    return crop_and_flip(img, pad, dy, dx, f);
}

struct EvalScalars {
    double loss = 0.0;
    double accuracy = 0.0;
};

struct Predictions {
    std::vector<std::vector<double>> probs;
    std::vector<int> classes;
};

template <typename T>
Predictions predict(Classifier<T>& model, std::span<const Image* const> images, int batch = 100) {
    Predictions out;
    for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
        const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch));
        for (const Image* im : images.subspan(start, end - start))
            if (im->height() != Image::kNative || im->width() != Image::kNative)
                throw Error("predict expects 32x32x3 images");
        auto rows = model.probabilities(to_batch<T>(images.subspan(start, end - start)), nn::Mode::Eval);
        for (auto& r : rows) {
            out.classes.push_back(argmax(r));
            out.probs.push_back(std::move(r));
        }
    }
    return out;
}

template <typename T>
EvalScalars evaluate(Classifier<T>& model, std::span<const LabeledImage> data, int batch = 100) {
    std::vector<const Image*> ptrs;
    for (const auto& li : data) ptrs.push_back(&li.image);
    auto pred = predict(model, ptrs, batch);
    double loss = 0.0;
    int correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        loss += soft_cross_entropy(pred.probs[i], one_hot(data[i].label, model.num_classes()));
        correct += pred.classes[i] == data[i].label;
    }
    return {loss / static_cast<double>(data.size()), static_cast<double>(correct) / static_cast<double>(data.size())};
}

struct CheckpointMeta {
    std::string architecture;
    int num_classes = 25;
    int epoch = 0;
    std::uint64_t seed = 0;
    json scalars = json::object();
    json config = json::object();
    std::string scalar_type = "float32";
};

inline constexpr const char* kCheckpointMagic = "SEMALIGN-CHECKPOINT 1";

template <typename T>
void save_checkpoint(const fs::path& path, Classifier<T>& model, const CheckpointMeta& meta) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + path.string());
        json header{{"architecture", meta.architecture},
                    {"num_classes", meta.num_classes},
                    {"epoch", meta.epoch},
                    {"seed", meta.seed},
                    {"scalars", meta.scalars},
                    {"config", meta.config},
                    {"scalar_type", sizeof(T) == 4 ? "float32" : "float64"}};
        out << kCheckpointMagic << "\n" << header.dump() << "\n";
        model.save(out);
        if (!out) throw Error("short write to checkpoint " + path.string());
    }
    fs::rename(tmp, path);
}

template <typename T = float>
std::pair<Classifier<T>, CheckpointMeta> load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    std::string magic, header_line;
    std::getline(in, magic);
    if (magic != kCheckpointMagic) throw Error(path.string() + " is not a checkpoint");
    std::getline(in, header_line);
    json h = json::parse(header_line);
    CheckpointMeta meta{h.at("architecture"), h.at("num_classes"), h.at("epoch"), h.at("seed"),
                        h.at("scalars"), h.at("config"), h.at("scalar_type")};
    if (meta.scalar_type != (sizeof(T) == 4 ? "float32" : "float64"))
        throw Error("checkpoint scalar type " + meta.scalar_type + " does not match the requested type");
    Classifier<T> model(ModelConfig{meta.architecture, meta.num_classes}, meta.seed);
    model.load(in);
    return {std::move(model), std::move(meta)};
}

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    std::size_t clean_instances = 0;
    std::size_t hybrid_instances = 0;
    double augmented_fraction = 0.0;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> history;
    fs::path final_checkpoint;
};

/// Appends {epoch, split, metric, value} rows to <out>/scalars.jsonl.
class ScalarLog {
public:
    explicit ScalarLog(fs::path path) : path_(std::move(path)) {}
    void append(int epoch, const std::string& split, const std::string& metric, double value) {
        std::ofstream out(path_, std::ios::app);
        out << json{{"epoch", epoch}, {"split", split}, {"metric", metric}, {"value", value}}.dump() << "\n";
    }

private:
    fs::path path_;
};

/// Online soft-label augmented training. Per epoch: shuffle clean order, draw one
/// augmentation decision per clean instance, apply crop/flip to every instance, and take
/// one SGD step per batch on the mean soft cross-entropy. Writes epoch-N.ckpt per epoch,
/// final.ckpt, and scalars.jsonl into `out`.
template <typename T = float>
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& data,
                  const HybridCatalog* catalog, const fs::path& out,
                  const std::function<void(const EpochLog&)>& on_epoch = {}) {
    cfg.validate();
    if (!ModelConfig::supported(model_cfg.architecture))
        throw ConfigError("unsupported architecture '" + model_cfg.architecture + "'");
    if (cfg.augmentation.probability > 0.0 && catalog == nullptr)
        throw ConfigError("augmentation probability > 0 requires a hybrid catalog");
    if (data.train.empty()) throw Error("training set is empty");

    fs::create_directories(out);
    fs::remove(out / "scalars.jsonl");
    ScalarLog log(out / "scalars.jsonl");
    Classifier<T> model(model_cfg, cfg.seed);
    auto refs = model.state();
    const int nc = model_cfg.num_classes;
    HybridCatalog empty_catalog;
    const HybridCatalog& cat = catalog ? *catalog : empty_catalog;

    std::vector<std::size_t> order(data.train.size());
    TrainResult result;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = make_rng(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        Rng aug_rng = make_rng(cfg.seed, "augment", static_cast<std::uint64_t>(epoch), 0);
        Rng tf_rng = make_rng(cfg.seed, "transform", static_cast<std::uint64_t>(epoch), 0);
        const double lr = cfg.lr_at(epoch);

        EpochLog el;
        el.epoch = epoch;
        el.learning_rate = lr;
        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_no) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<TrainingInstance> batch;
            for (std::size_t k = start; k < end; ++k) {
                auto items = maybe_augment(clean_instance(data.train[order[k]], nc), cfg.augmentation, cat, aug_rng);
                for (auto& it : items) batch.push_back(std::move(it));
            }
            std::vector<Image> imgs;
            std::vector<std::vector<double>> targets;
            for (auto& inst : batch) {
                if (inst.origin == Origin::Hybrid) ++el.hybrid_instances;
                else ++el.clean_instances;
                imgs.push_back(cfg.random_crop || cfg.horizontal_flip
                                   ? standard_augment(inst.image, tf_rng, cfg.crop_padding, cfg.random_crop, cfg.horizontal_flip)
                                   : inst.image);
                targets.push_back(std::move(inst.label.dist));
            }
            std::vector<const Image*> ptrs;
            for (const auto& im : imgs) ptrs.push_back(&im);

            nn::zero_grad(refs);
            auto lg = model.loss_and_grad(to_batch<T>(ptrs), targets, nn::Mode::Train, true,
                                          1.0 / static_cast<double>(batch.size()));
            const double batch_loss = std::accumulate(lg.losses.begin(), lg.losses.end(), 0.0);
            if (!std::isfinite(batch_loss))
                throw Error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no) + " (lr " + format_real(lr) + "); try a lower learning rate");
            loss_sum += batch_loss;
            nn::sgd_step(refs, {lr, cfg.momentum, cfg.weight_decay});
        }
        const std::size_t seen = el.clean_instances + el.hybrid_instances;
        el.train_loss = loss_sum / static_cast<double>(seen);
        el.augmented_fraction = static_cast<double>(el.hybrid_instances) / static_cast<double>(el.clean_instances);
        if (!data.test.empty()) {
            auto ev = evaluate(model, data.test, cfg.eval_batch_size);
            el.test_loss = ev.loss;
            el.test_accuracy = ev.accuracy;
        }

        log.append(epoch, "train", "loss", el.train_loss);
        log.append(epoch, "train", "clean_instances", static_cast<double>(el.clean_instances));
        log.append(epoch, "train", "hybrid_instances", static_cast<double>(el.hybrid_instances));
        log.append(epoch, "train", "augmented_fraction", el.augmented_fraction);
        log.append(epoch, "train", "learning_rate", lr);
        if (!data.test.empty()) {
            log.append(epoch, "test", "loss", el.test_loss);
            log.append(epoch, "test", "accuracy", el.test_accuracy);
        }

        CheckpointMeta meta{model_cfg.architecture, nc, epoch, cfg.seed,
                            json{{"train_loss", el.train_loss},
                                 {"test_loss", el.test_loss},
                                 {"test_accuracy", el.test_accuracy},
                                 {"augmented_fraction", el.augmented_fraction}},
                            json{{"model", {{"architecture", model_cfg.architecture}, {"num_classes", nc}}},
                                 {"train", cfg.to_json()}}};
        save_checkpoint(out / ("epoch-" + std::to_string(epoch) + ".ckpt"), model, meta);
        if (epoch == cfg.epochs) {
            save_checkpoint(out / "final.ckpt", model, meta);
            result.final_checkpoint = out / "final.ckpt";
        }
        result.history.push_back(el);
        if (on_epoch) on_epoch(el);
    }
    return result;
}

}  // namespace semalign
