#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "semalign/dataset.hpp"
#include "semalign/taxonomy.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path source_dir() { return SEMALIGN_SOURCE_DIR; }
inline fs::path taxonomy_file() { return source_dir() / "data" / "taxonomy.jsonl"; }
inline const semalign::ClassTaxonomy& taxonomy() {
    static const auto t = semalign::ClassTaxonomy::load(taxonomy_file());
    return t;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("semalign-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

/// Synthetic archive + prepared dataset with `per_class` train images per class.
inline semalign::Dataset small_dataset(const fs::path& dir, int per_class = 4, int test_per_class = 4,
                                       std::uint64_t seed = 1) {
    semalign::SyntheticArchiveOptions o;
    o.train_per_class = per_class;
    o.test_per_class = test_per_class;
    o.filler_classes = 3;
    o.seed = seed;
    semalign::write_synthetic_archive(dir / "src", taxonomy(), o);
    return semalign::prepare_data(dir / "src", taxonomy_file(), dir / "prepared");
}

inline std::string replace_line(std::string text, const std::string& from, const std::string& to) {
    auto pos = text.find(from);
    if (pos != std::string::npos) text.replace(pos, from.size(), to);
    return text;
}

}  // namespace fixture
