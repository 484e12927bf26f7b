#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "semalign/dataset.hpp"
#include "semalign/error.hpp"
#include "semalign/image.hpp"
#include "semalign/io.hpp"
#include "semalign/rng.hpp"
#include "semalign/taxonomy.hpp"

namespace semalign {

inline constexpr double kLowMixStrength = 0.50;
inline constexpr double kHighMixStrength = 0.75;

class MixerError : public Error {
public:
    using Error::Error;
};

struct MixRequest {
    const LabeledImage* base = nullptr;
    int target_class = -1;
    double mix_factor = kLowMixStrength;
};

struct HybridRecord {
    Image image;
    int base_class = -1;
    int target_class = -1;
    double mix_factor = 0.0;
    std::string base_image_id;
    std::string mixer_id;
    std::uint64_t seed = 0;
};

inline std::string record_key(const std::string& base_image_id, int target_class, double mix_factor,
                              const std::string& mixer_id) {
    return base_image_id + "|" + std::to_string(target_class) + "|" + format_real(mix_factor) + "|" + mixer_id;
}

inline std::string record_key(const HybridRecord& r) {
    return record_key(r.base_image_id, r.target_class, r.mix_factor, r.mixer_id);
}

/// Relative file path of a record inside the catalog directory.
inline std::string record_file(const ClassTaxonomy& t, const HybridRecord& r) {
    return t.name(r.base_class) + "/" + r.base_image_id + "__" + t.name(r.target_class) + "__m" +
           format_real(r.mix_factor) + ".png";
}

/// Image-to-image mixing backend: blends `base` toward the concept of `target`.
class Mixer {
public:
    virtual ~Mixer() = default;
    virtual std::string id() const = 0;
    virtual Image blend(const Image& base, const FineClass& target, double mix_factor, std::uint64_t seed) = 0;
    virtual json config() const { return json::object(); }
};

/// Per-pixel mean of every training image of each class.
inline std::vector<Image> build_class_prototypes(std::span<const LabeledImage> train, int num_classes) {
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(num_classes));
    std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
    int h = Image::kNative, w = Image::kNative;
    for (const auto& li : train) {
        if (li.label < 0 || li.label >= num_classes) throw Error("train image " + li.id + " has invalid label");
        auto& s = sums[static_cast<std::size_t>(li.label)];
        if (s.empty()) s.assign(li.image.size(), 0.0);
        if (s.size() != li.image.size()) throw Error("train images have mixed shapes");
        h = li.image.height();
        w = li.image.width();
        auto px = li.image.pixels();
        for (std::size_t i = 0; i < px.size(); ++i) s[i] += px[i];
        ++counts[static_cast<std::size_t>(li.label)];
    }
    std::vector<Image> protos;
    for (int c = 0; c < num_classes; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0)
            throw Error("cannot build prototype: class " + std::to_string(c) + " has no training images");
        const auto& s = sums[static_cast<std::size_t>(c)];
        std::vector<float> px(s.size());
        for (std::size_t i = 0; i < s.size(); ++i)
            px[i] = std::clamp(static_cast<float>(s[i] / counts[static_cast<std::size_t>(c)]), 0.0f, 1.0f);
        protos.emplace_back(h, w, std::move(px));
    }
    return protos;
}

/// Deterministic stand-in for a diffusion mixer: (1 - v) * base + v * prototype(target).
class ReferenceMixer final : public Mixer {
public:
    explicit ReferenceMixer(std::vector<Image> prototypes) : protos_(std::move(prototypes)) {}

    std::string id() const override { return "reference"; }

    Image blend(const Image& base, const FineClass& target, double nu, std::uint64_t) override {
        const Image& proto = protos_.at(static_cast<std::size_t>(target.index));
        if (proto.size() != base.size()) throw MixerError("prototype and base image shapes differ");
        Image out = base;
        auto o = out.pixels();
        auto b = base.pixels();
        auto p = proto.pixels();
        for (std::size_t i = 0; i < o.size(); ++i)
            o[i] = std::clamp(static_cast<float>((1.0 - nu) * b[i] + nu * p[i]), 0.0f, 1.0f);
        return out;
    }

    const std::vector<Image>& prototypes() const noexcept { return protos_; }

private:
    std::vector<Image> protos_;
};

/// Nearest-neighbour upscale to (size x size).
inline Image resize_nearest(const Image& img, int size) {
    Image out(size, size);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                out.at(c, y, x) = img.at(c, y * img.height() / size, x * img.width() / size);
    return out;
}

/// Area-average downscale to (size x size); exact box filter when dimensions divide evenly.
inline Image resize_area(const Image& img, int size) {
    Image out(size, size);
    const double sy = static_cast<double>(img.height()) / size, sx = static_cast<double>(img.width()) / size;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double y0 = y * sy, y1 = (y + 1) * sy, x0 = x * sx, x1 = (x + 1) * sx;
                double acc = 0.0, area = 0.0;
                for (int iy = static_cast<int>(y0); iy < static_cast<int>(std::ceil(y1)); ++iy)
                    for (int ix = static_cast<int>(x0); ix < static_cast<int>(std::ceil(x1)); ++ix) {
                        const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
                        const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
                        acc += wy * wx * img.at(c, iy, ix);
                        area += wy * wx;
                    }
                out.at(c, y, x) = std::clamp(static_cast<float>(acc / area), 0.0f, 1.0f);
            }
    return out;
}

struct DiffusionAdapterOptions {
    std::string command;
    int resolution = 512;
    fs::path work_dir = fs::temp_directory_path() / "semalign-mixer";
    json backend_config = json::object();
};

/// Runs an external text-conditioned image mixer. The backend is any executable invoked as
///   <command> --input <png> --output <png> --prompt <text> --mix-factor <v> --seed <n> --config <json>
/// It receives the base upscaled to `resolution` pixels and must write an RGB PNG; the result
/// is area-downscaled back to the native size.
class DiffusionAdapter final : public Mixer {
public:
    explicit DiffusionAdapter(DiffusionAdapterOptions opt) : opt_(std::move(opt)) {
        if (opt_.command.empty()) throw ConfigError("diffusion-adapter requires a backend command");
        if (opt_.resolution < Image::kNative) throw ConfigError("diffusion-adapter resolution must be >= 32");
    }

    std::string id() const override { return "diffusion-adapter"; }

    json config() const override {
        return {{"command", opt_.command}, {"resolution", opt_.resolution}, {"backend_config", opt_.backend_config}};
    }

    static std::string prompt_for(const std::string& class_name) {
        std::string p = class_name;
        std::replace(p.begin(), p.end(), '_', ' ');
        return p;
    }

    Image blend(const Image& base, const FineClass& target, double nu, std::uint64_t seed) override {
        const std::string tag = hex64(derive_seed(seed, target.name, static_cast<std::uint64_t>(nu * 1e6),
                                                  std::hash<std::thread::id>{}(std::this_thread::get_id())));
        const fs::path dir = opt_.work_dir / tag;
        fs::create_directories(dir);
        const fs::path in = dir / "in.png", out = dir / "out.png", cfg = dir / "config.json";
        write_png(in, resize_nearest(base, opt_.resolution));
        write_json(cfg, opt_.backend_config);
        std::ostringstream cmd;
        cmd << opt_.command << " --input " << quote(in.string()) << " --output " << quote(out.string())
            << " --prompt " << quote(prompt_for(target.name)) << " --mix-factor " << format_real(nu)
            << " --seed " << seed << " --config " << quote(cfg.string());
        const int rc = std::system(cmd.str().c_str());
        if (rc != 0 || !fs::exists(out)) {
            fs::remove_all(dir);
            throw MixerError("diffusion backend failed (exit status " + std::to_string(rc) + ") for prompt '" +
                             prompt_for(target.name) + "'");
        }
        Image result = read_png(out);
        fs::remove_all(dir);
        return resize_area(result, base.height());
    }

private:
    static std::string quote(const std::string& s) {
        std::string q = "'";
        for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
        return q + "'";
    }
    DiffusionAdapterOptions opt_;
};

/// Validates the request and runs the mixer. The returned image is unquantized.
inline HybridRecord mix(const MixRequest& req, const ClassTaxonomy& taxonomy, Mixer& mixer, std::uint64_t seed = 0) {
    if (req.base == nullptr) throw Error("mix request has no base image");
    if (!(req.mix_factor >= 0.0 && req.mix_factor <= 1.0))
        throw Error("mix factor " + format_real(req.mix_factor) + " outside [0,1]");
    const int b = req.base->label, t = req.target_class;
    if (t < 0 || t >= taxonomy.size()) throw Error("mix target class out of range");
    if (b == t) throw Error("mix target equals base class '" + taxonomy.name(b) + "'");
    if (!taxonomy.same_semantic(b, t))
        throw Error("mix target '" + taxonomy.name(t) + "' is not in the semantic superclass of '" + taxonomy.name(b) + "'");
    Image img = mixer.blend(req.base->image, taxonomy.at(t), req.mix_factor, seed);
    if (img.height() != req.base->image.height() || img.width() != req.base->image.width())
        throw MixerError("mixer returned an image of the wrong size");
    for (float& v : img.pixels()) v = std::clamp(v, 0.0f, 1.0f);
    return {std::move(img), b, t, req.mix_factor, req.base->id, mixer.id(), seed};
}

/// Thread-safe record store keyed on record_key; rejects duplicate keys.
class CatalogStore {
public:
    bool insert(HybridRecord rec) {
        std::lock_guard lock(mu_);
        return records_.emplace(record_key(rec), std::move(rec)).second;
    }
    std::size_t size() const {
        std::lock_guard lock(mu_);
        return records_.size();
    }
    std::optional<HybridRecord> find(const std::string& key) const {
        std::lock_guard lock(mu_);
        auto it = records_.find(key);
        if (it == records_.end()) return std::nullopt;
        return it->second;
    }

private:
    mutable std::mutex mu_;
    std::map<std::string, HybridRecord> records_;
};

/// Loaded, immutable collection of hybrids indexed by base class.
class HybridCatalog {
public:
    HybridCatalog() = default;
    HybridCatalog(std::vector<HybridRecord> records, json manifest) : records_(std::move(records)), manifest_(std::move(manifest)) {
        for (std::size_t i = 0; i < records_.size(); ++i) by_base_[records_[i].base_class].push_back(i);
    }

    const std::vector<HybridRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }
    const json& manifest() const noexcept { return manifest_; }
    bool complete() const { return manifest_.value("complete", false); }

    const std::vector<std::size_t>& records_for_class(int base_class) const {
        static const std::vector<std::size_t> none;
        auto it = by_base_.find(base_class);
        return it == by_base_.end() ? none : it->second;
    }

private:
    std::vector<HybridRecord> records_;
    std::map<int, std::vector<std::size_t>> by_base_;
    json manifest_;
};

struct GenerateOptions {
    std::uint64_t seed = 0;
    bool resume = true;
    unsigned jobs = 1;
};

struct GenerationStats {
    std::size_t requested = 0;
    std::size_t generated = 0;
    std::size_t reused = 0;
    std::size_t failed = 0;
};

inline const char* kCatalogManifest = "catalog.manifest";

namespace detail {

inline std::optional<HybridRecord> reuse_record(const fs::path& out, const json& entry) {
    const fs::path file = out / entry.at("file").get<std::string>();
    if (!fs::exists(file)) return std::nullopt;
    try {
        Image img = read_png(file);
        if (hex64(checksum_image(img)) != entry.at("checksum").get<std::string>()) return std::nullopt;
        return HybridRecord{std::move(img),
                            entry.at("base_class").get<int>(),
                            entry.at("target_class").get<int>(),
                            entry.at("mix_factor").get<double>(),
                            entry.at("base_image_id").get<std::string>(),
                            entry.at("mixer_id").get<std::string>(),
                            entry.at("seed").get<std::uint64_t>()};
    } catch (const Error&) {
        return std::nullopt;
    }
}

}  // namespace detail

/// Pre-generates one hybrid per (train image, other class in its semantic superclass).
/// Each hybrid is quantized to 8 bits and written as PNG; the manifest lists every record
/// and every failed request. With `resume`, records already on disk with a matching
/// checksum are reused rather than regenerated.
inline HybridCatalog generate_catalog(std::span<const LabeledImage> train, const ClassTaxonomy& taxonomy,
                                      double mix_factor, Mixer& mixer, const fs::path& out,
                                      const GenerateOptions& opt = {}, GenerationStats* stats = nullptr) {
    if (!(mix_factor >= 0.0 && mix_factor <= 1.0))
        throw Error("mix factor " + format_real(mix_factor) + " outside [0,1]");
    fs::create_directories(out);

    std::map<std::string, json> previous;
    if (opt.resume && fs::exists(out / kCatalogManifest)) {
        json old = read_json(out / kCatalogManifest);
        for (const auto& e : old.value("records", json::array())) previous[e.at("key").get<std::string>()] = e;
    }

    struct Job {
        std::size_t image;
        int target;
        std::string key;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < train.size(); ++i)
        for (int t : taxonomy.mix_targets(train[i].label))
            jobs.push_back({i, t, record_key(train[i].id, t, mix_factor, mixer.id())});

    CatalogStore store;
    std::vector<std::optional<std::string>> errors(jobs.size());
    std::atomic<std::size_t> next{0}, generated{0}, reused{0};
    auto worker = [&] {
        for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
            const Job& job = jobs[j];
            if (auto it = previous.find(job.key); it != previous.end()) {
                if (auto rec = detail::reuse_record(out, it->second)) {
                    store.insert(std::move(*rec));
                    ++reused;
                    continue;
                }
            }
            try {
                const std::uint64_t seed = derive_seed(opt.seed, job.key);
                HybridRecord rec = mix({&train[job.image], job.target, mix_factor}, taxonomy, mixer, seed);
                rec.image = quantized(rec.image);
                write_png(out / record_file(taxonomy, rec), rec.image);
                store.insert(std::move(rec));
                ++generated;
            } catch (const std::exception& e) {
                errors[j] = e.what();
            }
        }
    };
    const unsigned n_workers = std::max(1u, std::min<unsigned>(opt.jobs, static_cast<unsigned>(std::max<std::size_t>(jobs.size(), 1))));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    }

    std::vector<HybridRecord> records;
    json rec_list = json::array(), failures = json::array();
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        if (errors[j]) {
            failures.push_back({{"key", jobs[j].key},
                                {"base_image_id", train[jobs[j].image].id},
                                {"target_class", taxonomy.name(jobs[j].target)},
                                {"error", *errors[j]}});
            continue;
        }
        auto rec = store.find(jobs[j].key);
        if (!rec) continue;
        rec_list.push_back({{"key", jobs[j].key},
                            {"file", record_file(taxonomy, *rec)},
                            {"base_image_id", rec->base_image_id},
                            {"base_class", rec->base_class},
                            {"target_class", rec->target_class},
                            {"mix_factor", rec->mix_factor},
                            {"mixer_id", rec->mixer_id},
                            {"seed", rec->seed},
                            {"checksum", hex64(checksum_image(rec->image))}});
        records.push_back(std::move(*rec));
    }

    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    json manifest{{"format", "semalign-catalog-1"},
                  {"mixer_id", mixer.id()},
                  {"mixer_config", mixer.config()},
                  {"mix_factor", mix_factor},
                  {"seed", opt.seed},
                  {"seed_policy", "per-request seed = derive_seed(seed, record key)"},
                  {"train_images", train.size()},
                  {"expected_records", jobs.size()},
                  {"record_count", records.size()},
                  {"complete", failures.empty() && records.size() == jobs.size()},
                  {"generated_at", static_cast<std::int64_t>(now)},
                  {"records", rec_list},
                  {"failures", failures}};
    write_json(out / kCatalogManifest, manifest);

    if (stats) *stats = {jobs.size(), generated.load(), reused.load(), static_cast<std::size_t>(failures.size())};
    return HybridCatalog(std::move(records), std::move(manifest));
}

inline HybridCatalog load_catalog(const fs::path& dir) {
    if (!fs::exists(dir / kCatalogManifest)) throw Error("no catalog manifest in " + dir.string());
    json manifest = read_json(dir / kCatalogManifest);
    std::vector<HybridRecord> records;
    for (const auto& e : manifest.at("records")) {
        auto rec = detail::reuse_record(dir, e);
        if (!rec) throw Error("catalog record " + e.at("key").get<std::string>() + " is missing or does not match its checksum");
        records.push_back(std::move(*rec));
    }
    return HybridCatalog(std::move(records), std::move(manifest));
}

struct CatalogValidation {
    std::size_t expected = 0;   // 4 per train image for 5-member superclasses
    std::size_t present = 0;    // records matching an expected (base image, target) pair
    std::size_t complete_bases = 0;
    std::vector<std::string> missing;     // "base_image_id -> target"
    std::vector<std::string> violations;  // constraint failures
    std::vector<std::string> orphans;     // records whose base image is not in the train set

    bool ok() const noexcept { return violations.empty() && orphans.empty() && missing.empty(); }
};

inline CatalogValidation validate_catalog(const HybridCatalog& catalog, std::span<const LabeledImage> train,
                                          const ClassTaxonomy& taxonomy) {
    CatalogValidation v;
    std::map<std::string, int> train_label;
    for (const auto& li : train) train_label[li.id] = li.label;

    std::map<std::string, std::set<int>> targets;
    for (const auto& r : catalog.records()) {
        const std::string key = record_key(r);
        auto it = train_label.find(r.base_image_id);
        if (it == train_label.end()) {
            v.orphans.push_back(key);
            continue;
        }
        bool valid = true;
        if (r.base_class != it->second) {
            v.violations.push_back(key + ": base class does not match the train image label");
            valid = false;
        }
        if (r.target_class < 0 || r.target_class >= taxonomy.size() || r.base_class < 0 || r.base_class >= taxonomy.size()) {
            v.violations.push_back(key + ": class index out of range");
            continue;
        }
        if (r.target_class == r.base_class) {
            v.violations.push_back(key + ": target equals base class");
            valid = false;
        } else if (!taxonomy.same_semantic(r.base_class, r.target_class)) {
            v.violations.push_back(key + ": target '" + taxonomy.name(r.target_class) +
                                   "' is outside the semantic superclass of '" + taxonomy.name(r.base_class) + "'");
            valid = false;
        }
        if (!r.image.in_unit_range()) {
            v.violations.push_back(key + ": pixels outside [0,1]");
            valid = false;
        }
        if (valid && !targets[r.base_image_id].insert(r.target_class).second)
            v.violations.push_back(key + ": duplicate (base image, target) pair");
    }
    for (const auto& li : train) {
        const auto expected = taxonomy.mix_targets(li.label);
        v.expected += expected.size();
        const auto& have = targets[li.id];
        std::size_t hit = 0;
        for (int t : expected) {
            if (have.count(t)) ++hit;
            else v.missing.push_back(li.id + " -> " + taxonomy.name(t));
        }
        v.present += hit;
        if (hit == expected.size()) ++v.complete_bases;
    }
    return v;
}

}  // namespace semalign
