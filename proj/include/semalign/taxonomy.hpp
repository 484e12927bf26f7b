#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "semalign/error.hpp"
#include "semalign/io.hpp"

namespace semalign {

struct FineClass {
    std::string name;
    int index = -1;

    friend bool operator==(const FineClass&, const FineClass&) = default;
};

struct TaxonomyRecord {
    std::string name;
    std::string visual_super;
    std::string semantic_super;
};

class TaxonomyError : public ConfigError {
public:
    explicit TaxonomyError(std::vector<std::string> problems)
        : ConfigError(join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "invalid taxonomy:";
        for (const auto& x : p) s += "\n  - " + x;
        return s;
    }
    std::vector<std::string> problems_;
};

/// Two-axis class grid: every fine class sits in exactly one (visual, semantic) cell and
/// every cell holds exactly one fine class. Fine-class indices follow alphabetical name order.
class ClassTaxonomy {
public:
    static constexpr int kGridSide = 5;
    static constexpr int kNumClasses = kGridSide * kGridSide;

    static ClassTaxonomy from_records(std::vector<TaxonomyRecord> records) {
        std::vector<std::string> problems;
        std::map<std::string, int> seen;
        for (const auto& r : records) {
            if (r.name.empty() || r.visual_super.empty() || r.semantic_super.empty())
                problems.push_back("record with empty field (name='" + r.name + "')");
            if (++seen[r.name] == 2) problems.push_back("duplicate fine class '" + r.name + "'");
        }
        if (records.size() != kNumClasses)
            problems.push_back("expected " + std::to_string(kNumClasses) + " fine classes, found " +
                               std::to_string(records.size()));

        std::map<std::string, int> vis_count, sem_count;
        std::map<std::pair<std::string, std::string>, std::vector<std::string>> cells;
        for (const auto& r : records) {
            ++vis_count[r.visual_super];
            ++sem_count[r.semantic_super];
            cells[{r.visual_super, r.semantic_super}].push_back(r.name);
        }
        auto check_axis = [&](const std::map<std::string, int>& counts, const char* axis) {
            if (counts.size() != kGridSide)
                problems.push_back("expected " + std::to_string(kGridSide) + " " + axis +
                                   " superclasses, found " + std::to_string(counts.size()));
            for (const auto& [name, n] : counts)
                if (n != kGridSide)
                    problems.push_back(std::string(axis) + " superclass '" + name + "' has " +
                                       std::to_string(n) + " members, expected " +
                                       std::to_string(kGridSide));
        };
        check_axis(vis_count, "visual");
        check_axis(sem_count, "semantic");
        for (const auto& [v, nv] : vis_count)
            for (const auto& [s, ns] : sem_count) {
                auto it = cells.find({v, s});
                if (it == cells.end())
                    problems.push_back("cell (" + v + ", " + s + ") is empty");
                else if (it->second.size() > 1)
                    problems.push_back("cell (" + v + ", " + s + ") holds " +
                                       std::to_string(it->second.size()) + " classes");
            }
        if (!problems.empty()) throw TaxonomyError(std::move(problems));

        std::sort(records.begin(), records.end(),
                  [](const auto& a, const auto& b) { return a.name < b.name; });
        ClassTaxonomy t;
        for (const auto& [v, n] : vis_count) t.visual_names_.push_back(v);
        for (const auto& [s, n] : sem_count) t.semantic_names_.push_back(s);
        for (std::size_t i = 0; i < records.size(); ++i) {
            t.classes_.push_back({records[i].name, static_cast<int>(i)});
            t.by_name_[records[i].name] = static_cast<int>(i);
            t.visual_of_.push_back(records[i].visual_super);
            t.semantic_of_.push_back(records[i].semantic_super);
        }
        return t;
    }

    /// Parses the taxonomy file: one JSON object per line with keys
    /// name, visual_super, semantic_super. Blank lines and '#' comments are skipped.
    static ClassTaxonomy parse(std::string_view text) {
        std::vector<TaxonomyRecord> records;
        std::istringstream in{std::string(text)};
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            try {
                auto j = json::parse(line);
                records.push_back({j.at("name").get<std::string>(),
                                   j.at("visual_super").get<std::string>(),
                                   j.at("semantic_super").get<std::string>()});
            } catch (const json::exception& e) {
                throw ConfigError("taxonomy line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        return from_records(std::move(records));
    }

    static ClassTaxonomy load(const fs::path& path) { return parse(read_text(path)); }

    std::string to_jsonl() const {
        std::string out;
        for (const auto& c : classes_)
            out += json{{"name", c.name},
                        {"visual_super", visual_of_[c.index]},
                        {"semantic_super", semantic_of_[c.index]}}
                       .dump() +
                   "\n";
        return out;
    }

    int size() const noexcept { return static_cast<int>(classes_.size()); }
    const std::vector<FineClass>& classes() const noexcept { return classes_; }
    const FineClass& at(int index) const { return classes_.at(static_cast<std::size_t>(index)); }
    const std::string& name(int index) const { return at(index).name; }

    bool contains(const std::string& name) const { return by_name_.count(name) != 0; }
    int index_of(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw Error("unknown fine class '" + name + "'");
        return it->second;
    }

    const std::string& visual_super(int index) const { return visual_of_.at(static_cast<std::size_t>(index)); }
    const std::string& semantic_super(int index) const { return semantic_of_.at(static_cast<std::size_t>(index)); }
    const std::string& visual_super(const std::string& name) const { return visual_super(index_of(name)); }
    const std::string& semantic_super(const std::string& name) const { return semantic_super(index_of(name)); }

    const std::vector<std::string>& visual_supers() const noexcept { return visual_names_; }
    const std::vector<std::string>& semantic_supers() const noexcept { return semantic_names_; }

    bool same_semantic(int a, int b) const { return semantic_super(a) == semantic_super(b); }
    bool same_visual(int a, int b) const { return visual_super(a) == visual_super(b); }

    /// Fine class at grid cell (visual, semantic), or -1.
    int cell(const std::string& visual, const std::string& semantic) const {
        for (int i = 0; i < size(); ++i)
            if (visual_of_[i] == visual && semantic_of_[i] == semantic) return i;
        return -1;
    }

    std::vector<int> semantic_members(const std::string& semantic) const {
        std::vector<int> out;
        for (int i = 0; i < size(); ++i)
            if (semantic_of_[i] == semantic) out.push_back(i);
        return out;
    }

    /// Hybrid targets for a base class: its semantic superclass minus itself.
    std::vector<int> mix_targets(int base) const {
        auto members = semantic_members(semantic_super(base));
        std::erase(members, base);
        return members;
    }

private:
    std::vector<FineClass> classes_;
    std::map<std::string, int> by_name_;
    std::vector<std::string> visual_of_;
    std::vector<std::string> semantic_of_;
    std::vector<std::string> visual_names_;
    std::vector<std::string> semantic_names_;
};

}  // namespace semalign
