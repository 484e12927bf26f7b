#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "semalign/error.hpp"
#include "semalign/image.hpp"
#include "semalign/io.hpp"
#include "semalign/rng.hpp"
#include "semalign/taxonomy.hpp"

namespace semalign {

enum class Split { Train, Test };

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

struct LabeledImage {
    Image image;
    int label = -1;
    Split split = Split::Train;
    std::string id;
};

/// A prepared 25-class dataset: images relabeled to taxonomy indices plus the manifest
/// recording counts, checksum, and the index mapping back to source labels.
struct Dataset {
    ClassTaxonomy taxonomy;
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> test;
    json manifest;
};

namespace cifar {

inline constexpr std::size_t kPixels = 3 * 32 * 32;
inline constexpr std::size_t kRecordBytes = 2 + kPixels;  // coarse, fine, R/G/B planes

struct RawRecord {
    std::uint8_t coarse;
    std::uint8_t fine;
    std::array<std::uint8_t, kPixels> pixels;
};

inline std::vector<std::string> read_label_names(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("archive missing label names file " + path.string());
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) names.push_back(line);
    }
    return names;
}

inline std::string read_split_bytes(const fs::path& path) {
    if (!fs::exists(path)) throw Error("archive missing split file " + path.string());
    std::string bytes = read_text(path);
    if (bytes.size() % kRecordBytes != 0)
        throw Error("archive split file " + path.string() + " is corrupt (" +
                    std::to_string(bytes.size()) + " bytes is not a multiple of " +
                    std::to_string(kRecordBytes) + ")");
    return bytes;
}

inline void write_records(const fs::path& path, const std::vector<RawRecord>& records) {
    std::string bytes;
    bytes.reserve(records.size() * kRecordBytes);
    for (const auto& r : records) {
        bytes.push_back(static_cast<char>(r.coarse));
        bytes.push_back(static_cast<char>(r.fine));
        bytes.append(reinterpret_cast<const char*>(r.pixels.data()), kPixels);
    }
    write_text_atomic(path, bytes);
}

}  // namespace cifar

/// Result of ingestion before persistence.
struct IngestResult {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> test;
    json manifest;
};

inline Image image_from_planar_bytes(const std::uint8_t* planar) {
    std::vector<float> px(cifar::kPixels);
    for (std::size_t i = 0; i < cifar::kPixels; ++i) px[i] = static_cast<float>(planar[i]) / 255.0f;
    return Image(32, 32, std::move(px));
}

/// Reads a CIFAR-100 binary archive directory (train.bin, test.bin, fine_label_names.txt)
/// and keeps only the taxonomy's classes, relabeled to taxonomy indices. The source's
/// own train/test split is used unchanged.
inline IngestResult ingest_subset(const fs::path& source, const ClassTaxonomy& taxonomy) {
    if (!fs::is_directory(source)) throw Error("archive directory not found: " + source.string());
    auto names = cifar::read_label_names(source / "fine_label_names.txt");

    std::map<int, int> source_to_index;
    std::vector<int> index_to_source(static_cast<std::size_t>(taxonomy.size()), -1);
    std::vector<std::string> missing;
    for (const auto& fc : taxonomy.classes()) {
        auto it = std::find(names.begin(), names.end(), fc.name);
        if (it == names.end()) {
            missing.push_back(fc.name);
            continue;
        }
        int src = static_cast<int>(it - names.begin());
        source_to_index[src] = fc.index;
        index_to_source[static_cast<std::size_t>(fc.index)] = src;
    }
    if (!missing.empty()) {
        std::string msg = "taxonomy class(es) absent from source archive:";
        for (const auto& m : missing) msg += " '" + m + "'";
        throw Error(msg);
    }

    IngestResult out;
    std::uint64_t sum = checksum_bytes(taxonomy.to_jsonl());
    json counts;
    json source_desc{{"path", fs::absolute(source).string()}, {"format", "cifar-100-binary"}};

    for (Split split : {Split::Train, Split::Test}) {
        const std::string file = std::string(to_string(split)) + ".bin";
        const std::string bytes = cifar::read_split_bytes(source / file);
        source_desc[file + "_bytes"] = bytes.size();
        auto& dst = split == Split::Train ? out.train : out.test;
        std::vector<int> per_class(static_cast<std::size_t>(taxonomy.size()), 0);
        const std::size_t n = bytes.size() / cifar::kRecordBytes;
        for (std::size_t r = 0; r < n; ++r) {
            const auto* rec = reinterpret_cast<const std::uint8_t*>(bytes.data()) + r * cifar::kRecordBytes;
            int fine = rec[1];
            if (fine >= static_cast<int>(names.size()))
                throw Error("archive record " + std::to_string(r) + " in " + file +
                            " has out-of-range fine label " + std::to_string(fine));
            auto it = source_to_index.find(fine);
            if (it == source_to_index.end()) continue;
            char idbuf[32];
            std::snprintf(idbuf, sizeof idbuf, "%s-%05zu", to_string(split), r);
            dst.push_back({image_from_planar_bytes(rec + 2), it->second, split, idbuf});
            ++per_class[static_cast<std::size_t>(it->second)];
            const char label = static_cast<char>(it->second);
            sum = checksum_bytes(std::string_view(&label, 1), sum);
            sum = checksum_bytes(std::string_view(reinterpret_cast<const char*>(rec + 2), cifar::kPixels), sum);
        }
        json c;
        for (int i = 0; i < taxonomy.size(); ++i) {
            if (per_class[static_cast<std::size_t>(i)] != per_class[0])
                throw Error(std::string("source archive ") + to_string(split) +
                            " split is unbalanced: class '" + taxonomy.name(i) + "' has " +
                            std::to_string(per_class[static_cast<std::size_t>(i)]) + " images, '" +
                            taxonomy.name(0) + "' has " + std::to_string(per_class[0]));
            c[taxonomy.name(i)] = per_class[static_cast<std::size_t>(i)];
        }
        if (per_class[0] == 0)
            throw Error(std::string("source archive ") + to_string(split) + " split has no images of the taxonomy classes");
        counts[to_string(split)] = {{"per_class", c},
                                    {"per_class_count", per_class[0]},
                                    {"total", dst.size()}};
    }

    json mapping = json::array();
    for (const auto& fc : taxonomy.classes())
        mapping.push_back({{"index", fc.index},
                           {"name", fc.name},
                           {"source_label", index_to_source[static_cast<std::size_t>(fc.index)]}});

    out.manifest = {{"format", "semalign-dataset-1"},
                    {"index_order", "alphabetical by fine class name"},
                    {"index_mapping", mapping},
                    {"counts", counts},
                    {"checksum", hex64(sum)},
                    {"source", source_desc},
                    {"split_note", "standard source train/test split used unchanged"},
                    {"pixel_range", "[0,1], value = byte / 255"}};
    return out;
}

namespace detail {

inline void write_prepared_split(const fs::path& path, const std::vector<LabeledImage>& images) {
    std::string bytes;
    for (const auto& li : images) {
        bytes.push_back(static_cast<char>(li.label));
        std::uint32_t idx = static_cast<std::uint32_t>(std::stoul(li.id.substr(li.id.find('-') + 1)));
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((idx >> (8 * b)) & 0xFF));
        for (float v : li.image.pixels())
            bytes.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
    write_text_atomic(path, bytes);
}

inline std::vector<LabeledImage> read_prepared_split(const fs::path& path, Split split, int num_classes) {
    constexpr std::size_t rec_bytes = 1 + 4 + cifar::kPixels;
    std::string bytes = read_text(path);
    if (bytes.size() % rec_bytes != 0) throw Error("prepared split " + path.string() + " is corrupt");
    std::vector<LabeledImage> out;
    out.reserve(bytes.size() / rec_bytes);
    for (std::size_t off = 0; off < bytes.size(); off += rec_bytes) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data()) + off;
        if (p[0] >= num_classes) throw Error("prepared split " + path.string() + " has invalid label");
        std::uint32_t idx = p[1] | (p[2] << 8) | (p[3] << 16) | (static_cast<std::uint32_t>(p[4]) << 24);
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "%s-%05u", to_string(split), idx);
        out.push_back({image_from_planar_bytes(p + 5), p[0], split, idbuf});
    }
    return out;
}

}  // namespace detail

/// Persists an ingested subset as <dir>/{train.bin,test.bin,manifest.json,taxonomy.jsonl}.
inline void write_prepared(const fs::path& dir, const ClassTaxonomy& taxonomy, const IngestResult& r) {
    fs::create_directories(dir);
    detail::write_prepared_split(dir / "train.bin", r.train);
    detail::write_prepared_split(dir / "test.bin", r.test);
    write_text_atomic(dir / "taxonomy.jsonl", taxonomy.to_jsonl());
    write_json(dir / "manifest.json", r.manifest);
}

inline Dataset load_prepared(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json")) throw Error("no prepared dataset in " + dir.string());
    Dataset ds{ClassTaxonomy::load(dir / "taxonomy.jsonl"), {}, {}, read_json(dir / "manifest.json")};
    ds.train = detail::read_prepared_split(dir / "train.bin", Split::Train, ds.taxonomy.size());
    ds.test = detail::read_prepared_split(dir / "test.bin", Split::Test, ds.taxonomy.size());
    return ds;
}

inline Dataset prepare_data(const fs::path& source, const fs::path& taxonomy_file, const fs::path& out) {
    auto taxonomy = ClassTaxonomy::load(taxonomy_file);
    auto r = ingest_subset(source, taxonomy);
    write_prepared(out, taxonomy, r);
    return Dataset{taxonomy, std::move(r.train), std::move(r.test), std::move(r.manifest)};
}

// ---------------------------------------------------------------------------------------
// Synthetic archive in the CIFAR-100 binary layout, for offline fixtures and demos.
// Classes in one visual superclass share a base colour; within a column each class has a
// distinct stripe orientation, and no orientation repeats along a semantic row, so the
// semantic rows carry no shared visual cue.

struct SyntheticArchiveOptions {
    int train_per_class = 20;
    int test_per_class = 10;
    int filler_classes = 75;
    int filler_per_class = 2;
    double noise = 0.06;
    std::uint64_t seed = 0;
};

inline Image synthetic_class_image(const ClassTaxonomy& t, int cls, Rng& rng, double noise) {
    static constexpr std::array<std::array<float, 3>, 5> palette{{{0.80f, 0.30f, 0.40f},
                                                                  {0.55f, 0.40f, 0.25f},
                                                                  {0.30f, 0.62f, 0.30f},
                                                                  {0.72f, 0.58f, 0.28f},
                                                                  {0.33f, 0.40f, 0.72f}}};
    const auto& vs = t.visual_supers();
    const auto& ss = t.semantic_supers();
    const int v = static_cast<int>(std::find(vs.begin(), vs.end(), t.visual_super(cls)) - vs.begin());
    const int s = static_cast<int>(std::find(ss.begin(), ss.end(), t.semantic_super(cls)) - ss.begin());
    const double theta = std::numbers::pi * ((s + 2 * v) % 5) / 5.0;
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> bright(-0.08, 0.08);
    std::normal_distribution<double> gauss(0.0, noise);
    const double ph = phase(rng), b = bright(rng);
    Image img;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            double u = (x * std::cos(theta) + y * std::sin(theta)) / 32.0;
            double stripe = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * 4.0 * u + ph);
            for (int c = 0; c < 3; ++c) {
                double val = palette[static_cast<std::size_t>(v)][static_cast<std::size_t>(c)] * (0.55 + 0.6 * stripe) + b + gauss(rng);
                img.at(c, y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
        }
    return img;
}

/// Writes train.bin, test.bin, fine_label_names.txt and coarse_label_names.txt.
/// `omit` drops a class name from the label list entirely (for error-path fixtures).
inline void write_synthetic_archive(const fs::path& dir, const ClassTaxonomy& taxonomy,
                                    const SyntheticArchiveOptions& opt, const std::string& omit = {}) {
    std::vector<std::string> names;
    for (const auto& c : taxonomy.classes())
        if (c.name != omit) names.push_back(c.name);
    for (int i = 0; i < opt.filler_classes; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "other_%02d", i);
        names.push_back(buf);
    }
    std::sort(names.begin(), names.end());

    fs::create_directories(dir);
    std::string label_text;
    for (const auto& n : names) label_text += n + "\n";
    write_text_atomic(dir / "fine_label_names.txt", label_text);
    write_text_atomic(dir / "coarse_label_names.txt", "synthetic_visual\nsynthetic_other\n");

    auto to_raw = [](const Image& img, int fine, int coarse) {
        cifar::RawRecord r{static_cast<std::uint8_t>(coarse), static_cast<std::uint8_t>(fine), {}};
        auto px = img.pixels();
        for (std::size_t i = 0; i < cifar::kPixels; ++i)
            r.pixels[i] = static_cast<std::uint8_t>(std::lround(px[i] * 255.0f));
        return r;
    };

    for (Split split : {Split::Train, Split::Test}) {
        Rng rng = make_rng(opt.seed, split == Split::Train ? "synthetic-train" : "synthetic-test");
        const int per_class = split == Split::Train ? opt.train_per_class : opt.test_per_class;
        std::vector<cifar::RawRecord> recs;
        // Interleave classes the way the real archive does (not grouped by class).
        for (int k = 0; k < std::max(per_class, opt.filler_per_class); ++k)
            for (std::size_t li = 0; li < names.size(); ++li) {
                const bool filler = !taxonomy.contains(names[li]);
                if (k >= (filler ? opt.filler_per_class : per_class)) continue;
                Image img;
                if (filler) {
                    std::uniform_real_distribution<float> u(0.0f, 1.0f);
                    for (float& p : img.pixels()) p = u(rng);
                } else {
                    img = synthetic_class_image(taxonomy, taxonomy.index_of(names[li]), rng, opt.noise);
                }
                recs.push_back(to_raw(img, static_cast<int>(li), filler ? 1 : 0));
            }
        cifar::write_records(dir / (std::string(to_string(split)) + ".bin"), recs);
    }
}

}  // namespace semalign
