#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "semalign/error.hpp"
#include "semalign/io.hpp"
#include "semalign/taxonomy.hpp"

namespace semalign {

struct PredictionRecord {
    std::string image_id;
    int true_class = -1;
    int pred_class = -1;
    double epsilon = 0.0;
};

struct MetricsReport {
    double epsilon = 0.0;
    std::size_t n_total = 0;
    std::size_t n_mistakes = 0;
    double fine_accuracy = 0.0;
    double semantic_super_accuracy = 0.0;
    std::optional<double> semantic_mistake_share;  // null iff n_mistakes == 0
    std::optional<double> visual_mistake_share;
};

using SweepReport = std::vector<MetricsReport>;

namespace detail {

inline void check_records(std::span<const PredictionRecord> records, const ClassTaxonomy* t) {
    if (t)
        for (const auto& r : records)
            if (r.true_class < 0 || r.true_class >= t->size() || r.pred_class < 0 || r.pred_class >= t->size())
                throw Error("prediction record " + r.image_id + " has a class outside the taxonomy");
}

}  // namespace detail

inline double fine_accuracy(std::span<const PredictionRecord> records) {
    if (records.empty()) throw Error("fine_accuracy of an empty record set");
    const auto correct = std::count_if(records.begin(), records.end(),
                                       [](const auto& r) { return r.pred_class == r.true_class; });
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

/// Fraction of records whose prediction lands in the true class's semantic superclass.
inline double semantic_super_accuracy(std::span<const PredictionRecord> records, const ClassTaxonomy& t) {
    if (records.empty()) throw Error("semantic_super_accuracy of an empty record set");
    detail::check_records(records, &t);
    const auto hits = std::count_if(records.begin(), records.end(),
                                    [&](const auto& r) { return t.same_semantic(r.pred_class, r.true_class); });
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

namespace detail {

template <typename SameGroup>
std::optional<double> mistake_share(std::span<const PredictionRecord> records, SameGroup same) {
    std::size_t mistakes = 0, within = 0;
    for (const auto& r : records) {
        if (r.pred_class == r.true_class) continue;
        ++mistakes;
        within += same(r.pred_class, r.true_class);
    }
    if (mistakes == 0) return std::nullopt;
    return static_cast<double>(within) / static_cast<double>(mistakes);
}

}  // namespace detail

/// Among mistakes, the fraction predicted inside the true semantic superclass.
inline std::optional<double> semantic_mistake_share(std::span<const PredictionRecord> records, const ClassTaxonomy& t) {
    detail::check_records(records, &t);
    return detail::mistake_share(records, [&](int a, int b) { return t.same_semantic(a, b); });
}

/// Among mistakes, the fraction predicted inside the true visual superclass.
inline std::optional<double> visual_mistake_share(std::span<const PredictionRecord> records, const ClassTaxonomy& t) {
    detail::check_records(records, &t);
    return detail::mistake_share(records, [&](int a, int b) { return t.same_visual(a, b); });
}

inline MetricsReport metrics_for(std::span<const PredictionRecord> records, const ClassTaxonomy& t, double epsilon) {
    if (records.empty()) throw Error("empty prediction group at epsilon " + format_real(epsilon));
    MetricsReport m;
    m.epsilon = epsilon;
    m.n_total = records.size();
    m.n_mistakes = static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                          [](const auto& r) { return r.pred_class != r.true_class; }));
    m.fine_accuracy = fine_accuracy(records);
    m.semantic_super_accuracy = semantic_super_accuracy(records, t);
    m.semantic_mistake_share = semantic_mistake_share(records, t);
    m.visual_mistake_share = visual_mistake_share(records, t);
    return m;
}

/// One report per epsilon group, ascending in epsilon.
inline SweepReport compute_report(const std::map<double, std::vector<PredictionRecord>>& groups, const ClassTaxonomy& t) {
    SweepReport out;
    for (const auto& [eps, recs] : groups) out.push_back(metrics_for(recs, t, eps));
    return out;
}

// ---------------------------------------------------------------------------------------
// Files

inline std::vector<PredictionRecord> read_prediction_file(const fs::path& path, const ClassTaxonomy& t, double epsilon) {
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    if (line.rfind("image_id,true_class,pred_class", 0) != 0) throw Error(path.string() + " is not a prediction-record file");
    std::vector<PredictionRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() < 3) throw Error("malformed prediction row in " + path.string() + ": " + line);
        out.push_back({f[0], t.index_of(f[1]), t.index_of(f[2]), epsilon});
    }
    return out;
}

inline std::string format_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_metric(const std::optional<double>& v) { return v ? format_metric(*v) : "null"; }

inline const char* kSweepHeader =
    "epsilon,n_total,n_mistakes,fine_accuracy,semantic_super_accuracy,semantic_mistake_share,visual_mistake_share";

inline std::string sweep_report_csv(const SweepReport& rep) {
    std::string s = std::string(kSweepHeader) + "\n";
    for (const auto& m : rep)
        s += format_real(m.epsilon) + "," + std::to_string(m.n_total) + "," + std::to_string(m.n_mistakes) + "," +
             format_metric(m.fine_accuracy) + "," + format_metric(m.semantic_super_accuracy) + "," +
             format_metric(m.semantic_mistake_share) + "," + format_metric(m.visual_mistake_share) + "\n";
    return s;
}

/// Raw cells of a sweep report file, kept as text so downstream tables can pass values
/// through byte-for-byte.
struct SweepTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw Error("sweep report has no column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
    std::vector<std::string> epsilons() const {
        std::vector<std::string> e;
        for (const auto& r : rows) e.push_back(r.at(0));
        return e;
    }
};

inline SweepTable parse_sweep_csv(std::string_view text, const std::string& first_column = "epsilon") {
    SweepTable t;
    std::istringstream in{std::string(text)};
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
        if (first) t.header = std::move(cells);
        else t.rows.push_back(std::move(cells));
        first = false;
    }
    if (t.header.empty() || t.header.front() != first_column) throw Error("not a sweep report");
    return t;
}

inline SweepReport parse_sweep_report(std::string_view text) {
    auto t = parse_sweep_csv(text);
    auto opt = [](const std::string& s) -> std::optional<double> {
        if (s == "null") return std::nullopt;
        return std::stod(s);
    };
    SweepReport rep;
    for (const auto& r : t.rows)
        rep.push_back({std::stod(r.at(0)), std::stoul(r.at(1)), std::stoul(r.at(2)), std::stod(r.at(3)),
                       std::stod(r.at(4)), opt(r.at(5)), opt(r.at(6))});
    return rep;
}

}  // namespace semalign
