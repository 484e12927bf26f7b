#pragma once

#include <chrono>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "semalign/adversary.hpp"
#include "semalign/augment.hpp"
#include "semalign/dataset.hpp"
#include "semalign/error.hpp"
#include "semalign/hybridgen.hpp"
#include "semalign/io.hpp"
#include "semalign/metrics.hpp"
#include "semalign/plot.hpp"
#include "semalign/taxonomy.hpp"
#include "semalign/train.hpp"

namespace semalign {

struct Variant {
    std::string name;
    double probability;
    std::optional<double> mix_factor;
};

/// The five compared models: augmentation probability p and mix strength v.
inline const std::vector<Variant>& experiment_variants() {
    static const std::vector<Variant> v{{"standard", 0.0, std::nullopt},
                                        {"low-aug/low-mix", 0.25, kLowMixStrength},
                                        {"low-aug/high-mix", 0.25, kHighMixStrength},
                                        {"high-aug/low-mix", 0.50, kLowMixStrength},
                                        {"high-aug/high-mix", 0.50, kHighMixStrength}};
    return v;
}

inline const Variant& variant_by_name(const std::string& name) {
    for (const auto& v : experiment_variants())
        if (v.name == name) return v;
    std::string known;
    for (const auto& v : experiment_variants()) known += " " + v.name;
    throw ConfigError("unknown variant '" + name + "' (expected one of:" + known + ")");
}

inline const std::vector<double>& default_epsilons() {
    static const std::vector<double> e{0.0, 0.25, 0.5, 1.0, 2.0};
    return e;
}

struct ExperimentConfig {
    json raw;
    fs::path base_dir;

    std::string variant = "standard";
    std::vector<std::uint64_t> seeds{0};

    fs::path data_source;  // CIFAR-100 binary archive; optional when data_dir is already prepared
    fs::path data_dir;
    fs::path taxonomy_path;

    std::string mixer = "reference";
    std::optional<double> mix_factor;
    std::uint64_t hybrid_seed = 0;
    unsigned hybrid_jobs = 1;
    bool generate_hybrids = true;
    DiffusionAdapterOptions diffusion;

    AugmentationPolicy augmentation;
    fs::path catalog_path;

    ModelConfig model;
    TrainConfig train;

    std::vector<double> epsilons = default_epsilons();
    AttackConfig attack;
    std::size_t attack_batch = 50;
    std::optional<std::size_t> max_images;

    fs::path out_dir;
    bool plots = true;

    bool uses_catalog() const { return augmentation.probability > 0.0; }

    std::string hash() const { return hex64(checksum_bytes(raw.dump())); }

    static ExperimentConfig load(const fs::path& path) {
        if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
        return parse(read_json(path), fs::absolute(path).parent_path());
    }

    static ExperimentConfig parse(const json& j, const fs::path& base_dir) {
        try {
            return parse_impl(j, base_dir);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("bad config value: ") + e.what());
        }
    }

private:
    static ExperimentConfig parse_impl(const json& j, const fs::path& base_dir) {
        static const std::set<std::string> sections{"variant", "seeds", "data", "taxonomy", "hybrid",
                                                    "augment", "train", "attack", "report", "model"};
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        for (const auto& [k, v] : j.items())
            if (!sections.count(k)) throw ConfigError("unknown config section '" + k + "'");
        for (const char* required : {"data", "taxonomy", "train", "attack", "report"})
            if (!j.contains(required)) throw ConfigError(std::string("config is missing section '") + required + "'");

        ExperimentConfig c;
        c.raw = j;
        c.base_dir = base_dir;
        auto path_of = [&](const json& sec, const char* key) -> fs::path {
            if (!sec.contains(key) || sec.at(key).is_null()) return {};
            fs::path p = sec.at(key).get<std::string>();
            return p.is_absolute() ? p : base_dir / p;
        };

        const json& report = j.at("report");
        c.out_dir = path_of(report, "out_dir");
        if (c.out_dir.empty()) throw ConfigError("report.out_dir is required");
        c.plots = report.value("plots", true);

        c.variant = j.value("variant", std::string("standard"));
        const Variant& var = variant_by_name(c.variant);
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (c.seeds.empty()) throw ConfigError("seeds must list at least one seed");

        const json& data = j.at("data");
        c.data_source = path_of(data, "source");
        c.data_dir = path_of(data, "dir");
        if (c.data_dir.empty()) c.data_dir = c.out_dir / "data";
        c.taxonomy_path = path_of(j.at("taxonomy"), "path");
        if (c.taxonomy_path.empty()) throw ConfigError("taxonomy.path is required");

        const json augment = j.value("augment", json::object());
        const double p = augment.value("probability", var.probability);
        if (p != var.probability)
            throw ConfigError("augment.probability " + format_real(p) + " contradicts variant '" + c.variant +
                              "' (p = " + format_real(var.probability) + ")");
        c.augmentation = AugmentationPolicy::from_probability(p);
        c.catalog_path = path_of(augment, "catalog_path");

        const json hybrid = j.value("hybrid", json::object());
        if (var.mix_factor) {
            const double nu = hybrid.value("mix_factor", *var.mix_factor);
            if (nu != *var.mix_factor)
                throw ConfigError("hybrid.mix_factor " + format_real(nu) + " contradicts variant '" + c.variant +
                                  "' (mix factor " + format_real(*var.mix_factor) + ")");
            c.mix_factor = nu;
        }
        c.mixer = hybrid.value("mixer", std::string("reference"));
        if (c.mixer != "reference" && c.mixer != "diffusion-adapter")
            throw ConfigError("hybrid.mixer must be 'reference' or 'diffusion-adapter'");
        c.hybrid_seed = hybrid.value("seed", std::uint64_t{0});
        c.hybrid_jobs = hybrid.value("jobs", 1u);
        c.generate_hybrids = hybrid.value("generate", true);
        if (hybrid.contains("diffusion")) {
            const json& d = hybrid.at("diffusion");
            c.diffusion.command = d.value("command", std::string());
            c.diffusion.resolution = d.value("resolution", 512);
            c.diffusion.backend_config = d.value("backend", json::object());
            if (d.contains("work_dir")) c.diffusion.work_dir = path_of(d, "work_dir");
        }
        if (c.uses_catalog() && c.catalog_path.empty()) c.catalog_path = c.out_dir / "catalog";

        json train = j.at("train");
        c.model.architecture = train.value("architecture", std::string("smallcnn"));
        if (j.contains("model")) c.model.architecture = j.at("model").value("architecture", c.model.architecture);
        if (!ModelConfig::supported(c.model.architecture))
            throw ConfigError("unsupported architecture '" + c.model.architecture + "'");
        c.train = TrainConfig::from_json(train);
        c.train.augmentation = c.augmentation;
        c.train.catalog_path = c.catalog_path.string();
        c.train.mixer_id = c.uses_catalog() ? c.mixer : "";
        c.train.mix_factor = c.uses_catalog() ? c.mix_factor : std::nullopt;
        c.train.validate();

        const json& attack = j.at("attack");
        c.epsilons = attack.value("epsilons", default_epsilons());
        c.attack.steps = attack.value("steps", 20);
        if (attack.contains("step_size") && !attack.at("step_size").is_null())
            c.attack.step_size = attack.at("step_size").get<double>();
        c.attack.random_start = attack.value("random_start", false);
        c.attack_batch = attack.value("batch", std::size_t{50});
        if (attack.contains("max_images") && !attack.at("max_images").is_null())
            c.max_images = attack.at("max_images").get<std::size_t>();
        c.attack.validate();
        if (c.epsilons.empty() || c.epsilons.front() != 0.0)
            throw ConfigError("attack.epsilons must start at 0");
        for (std::size_t e = 1; e < c.epsilons.size(); ++e)
            if (!(c.epsilons[e] > c.epsilons[e - 1])) throw ConfigError("attack.epsilons must be strictly ascending");
        return c;
    }
};

struct StageRecord {
    std::string name;
    bool ran = false;
    double seconds = 0.0;
};

struct RunArtifacts {
    fs::path out_dir;
    fs::path sweep_report;
    std::vector<fs::path> seed_dirs;
    std::vector<StageRecord> stages;

    std::size_t stages_run() const {
        return static_cast<std::size_t>(std::count_if(stages.begin(), stages.end(), [](const auto& s) { return s.ran; }));
    }
};

inline std::string file_hash(const fs::path& p) { return hex64(checksum_bytes(read_text(p))); }

namespace detail {

class StageRunner {
public:
    StageRunner(fs::path out, std::ostream& log, std::vector<StageRecord>& records)
        : dir_(std::move(out) / "stages"), log_(log), records_(records) {}

    /// Runs `body` unless a marker with the same input hash exists and every listed output
    /// is present. Failures surface as StageError naming the stage.
    template <typename F>
    void run(const std::string& name, const std::string& input_hash, const std::vector<fs::path>& outputs, F&& body) {
        const fs::path marker = dir_ / (sanitize(name) + ".done");
        bool fresh = fs::exists(marker);
        if (fresh) {
            try {
                fresh = read_json(marker).value("input_hash", "") == input_hash;
            } catch (const Error&) {
                fresh = false;
            }
        }
        for (const auto& o : outputs) fresh = fresh && fs::exists(o);
        if (fresh) {
            log_ << "[skip] " << name << " (up to date)\n";
            records_.push_back({name, false, 0.0});
            return;
        }
        log_ << "[run ] " << name << "\n";
        const auto t0 = std::chrono::steady_clock::now();
        try {
            body();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_json(marker, {{"stage", name}, {"input_hash", input_hash}, {"seconds", secs}});
        records_.push_back({name, true, secs});
    }

private:
    static std::string sanitize(std::string s) {
        for (char& c : s)
            if (c == '/' || c == ' ') c = '_';
        return s;
    }
    fs::path dir_;
    std::ostream& log_;
    std::vector<StageRecord>& records_;
};

/// Mean over seeds per epsilon; counts are summed, shares averaged over seeds where defined.
inline SweepReport mean_report(const std::vector<SweepReport>& per_seed) {
    SweepReport out = per_seed.front();
    for (std::size_t e = 0; e < out.size(); ++e) {
        auto& m = out[e];
        m.n_total = m.n_mistakes = 0;
        double fa = 0, sa = 0, ss = 0, vs = 0;
        int ns = 0, nv = 0;
        for (const auto& rep : per_seed) {
            const auto& r = rep.at(e);
            m.n_total += r.n_total;
            m.n_mistakes += r.n_mistakes;
            fa += r.fine_accuracy;
            sa += r.semantic_super_accuracy;
            if (r.semantic_mistake_share) ss += *r.semantic_mistake_share, ++ns;
            if (r.visual_mistake_share) vs += *r.visual_mistake_share, ++nv;
        }
        const double k = static_cast<double>(per_seed.size());
        m.fine_accuracy = fa / k;
        m.semantic_super_accuracy = sa / k;
        m.semantic_mistake_share = ns ? std::optional(ss / ns) : std::nullopt;
        m.visual_mistake_share = nv ? std::optional(vs / nv) : std::nullopt;
    }
    return out;
}

inline const std::vector<std::pair<std::string, std::string>>& chart_metrics() {
    static const std::vector<std::pair<std::string, std::string>> m{
        {"semantic_mistake_share", "Mistakes within the same semantic superclass"},
        {"visual_mistake_share", "Mistakes within the same visual superclass"},
        {"fine_accuracy", "Fine class accuracy"},
        {"semantic_super_accuracy", "Semantic superclass accuracy"}};
    return m;
}

inline std::optional<double> cell_value(const std::string& s) {
    if (s == "null") return std::nullopt;
    return std::stod(s);
}

inline std::vector<fs::path> write_charts(const fs::path& dir, const std::vector<std::pair<std::string, SweepTable>>& runs) {
    std::vector<fs::path> files;
    for (const auto& [metric, title] : chart_metrics()) {
        std::vector<Series> series;
        for (const auto& [label, table] : runs) {
            Series s{label, {}, {}};
            const std::size_t col = table.column(metric);
            for (const auto& row : table.rows) {
                s.x.push_back(std::stod(row.at(0)));
                s.y.push_back(cell_value(row.at(col)));
            }
            series.push_back(std::move(s));
        }
        const fs::path f = dir / (metric + ".svg");
        write_text_atomic(f, line_chart_svg(title, "L2 perturbation budget (epsilon)", "fraction", series));
        files.push_back(f);
    }
    return files;
}

inline std::string series_label(const std::string& variant, std::size_t seeds) {
    return variant + (seeds == 1 ? " (single seed)" : " (mean of " + std::to_string(seeds) + " seeds)");
}

}  // namespace detail

/// prepare -> generate-hybrids (when p > 0) -> train -> attack-eval -> report, once per seed
/// for the training and evaluation stages. Completed stages are skipped on rerun.
inline RunArtifacts run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
    RunArtifacts art;
    art.out_dir = cfg.out_dir;
    fs::create_directories(cfg.out_dir);
    write_json(cfg.out_dir / "config.json", cfg.raw);
    detail::StageRunner stages(cfg.out_dir, log, art.stages);

    // Preconditions checked before any stage runs.
    if (!fs::exists(cfg.taxonomy_path)) throw ConfigError("taxonomy file not found: " + cfg.taxonomy_path.string());
    if (cfg.data_source.empty() && !fs::exists(cfg.data_dir / "manifest.json"))
        throw ConfigError("data.dir " + cfg.data_dir.string() + " holds no prepared dataset and data.source is not set");
    if (!cfg.data_source.empty() && !fs::is_directory(cfg.data_source))
        throw ConfigError("data.source not found: " + cfg.data_source.string());
    if (cfg.uses_catalog() && !cfg.generate_hybrids && !fs::exists(cfg.catalog_path / kCatalogManifest))
        throw ConfigError("augmentation probability " + format_real(cfg.augmentation.probability) +
                          " needs a hybrid catalog, but " + cfg.catalog_path.string() +
                          " has none and hybrid generation is disabled");
    if (cfg.uses_catalog() && cfg.generate_hybrids && cfg.mixer == "diffusion-adapter" && cfg.diffusion.command.empty())
        throw ConfigError("hybrid.diffusion.command is required for the diffusion-adapter mixer");

    const std::string taxonomy_text = read_text(cfg.taxonomy_path);
    if (!cfg.data_source.empty()) {
        std::string src_desc = taxonomy_text + fs::absolute(cfg.data_source).string();
        for (const char* f : {"train.bin", "test.bin", "fine_label_names.txt"})
            if (fs::exists(cfg.data_source / f)) src_desc += std::string(f) + std::to_string(fs::file_size(cfg.data_source / f));
        stages.run("prepare", hex64(checksum_bytes(src_desc)), {cfg.data_dir / "manifest.json"},
                   [&] { prepare_data(cfg.data_source, cfg.taxonomy_path, cfg.data_dir); });
    }
    Dataset data = [&] {
        try {
            return load_prepared(cfg.data_dir);
        } catch (const std::exception& e) {
            throw StageError("prepare", e.what());
        }
    }();
    const std::string data_checksum = data.manifest.value("checksum", "");

    std::optional<HybridCatalog> catalog;
    if (cfg.uses_catalog()) {
        if (cfg.generate_hybrids) {
            json desc{{"data", data_checksum}, {"mixer", cfg.mixer}, {"mix_factor", *cfg.mix_factor},
                      {"seed", cfg.hybrid_seed}, {"diffusion", cfg.diffusion.command}};
            stages.run("generate-hybrids", hex64(checksum_bytes(desc.dump())), {cfg.catalog_path / kCatalogManifest}, [&] {
                std::unique_ptr<Mixer> mixer;
                if (cfg.mixer == "reference")
                    mixer = std::make_unique<ReferenceMixer>(build_class_prototypes(data.train, data.taxonomy.size()));
                else
                    mixer = std::make_unique<DiffusionAdapter>(cfg.diffusion);
                GenerationStats st;
                auto cat = generate_catalog(data.train, data.taxonomy, *cfg.mix_factor, *mixer, cfg.catalog_path,
                                            {cfg.hybrid_seed, true, cfg.hybrid_jobs}, &st);
                log << "       hybrids: " << st.generated << " generated, " << st.reused << " reused, " << st.failed
                    << " failed\n";
                if (!cat.complete()) throw Error("catalog incomplete: " + std::to_string(st.failed) + " failed requests");
            });
        }
        try {
            catalog = load_catalog(cfg.catalog_path);
        } catch (const std::exception& e) {
            throw StageError("generate-hybrids", e.what());
        }
        if (catalog->manifest().value("mix_factor", -1.0) != *cfg.mix_factor)
            throw ConfigError("catalog at " + cfg.catalog_path.string() + " was generated with mix factor " +
                              format_real(catalog->manifest().value("mix_factor", -1.0)) + ", config expects " +
                              format_real(*cfg.mix_factor));
    }
    const std::string catalog_sig =
        catalog ? hex64(checksum_bytes(catalog->manifest().at("records").dump())) : std::string("none");

    std::vector<const LabeledImage*> eval_ptrs;
    std::vector<LabeledImage> eval_set(data.test.begin(),
                                       data.test.begin() + static_cast<std::ptrdiff_t>(std::min(data.test.size(), cfg.max_images.value_or(data.test.size()))));

    std::vector<SweepReport> per_seed;
    std::vector<std::string> per_seed_text;
    for (std::uint64_t seed : cfg.seeds) {
        const fs::path sd = cfg.out_dir / ("seed-" + std::to_string(seed));
        art.seed_dirs.push_back(sd);
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        json train_desc{{"data", data_checksum}, {"catalog", catalog_sig}, {"train", tc.to_json()},
                        {"arch", cfg.model.architecture}};
        stages.run("train/seed-" + std::to_string(seed), hex64(checksum_bytes(train_desc.dump())),
                   {sd / "train" / "final.ckpt"}, [&] {
                       fs::remove_all(sd / "train");
                       train<float>(cfg.model, tc, data, catalog ? &*catalog : nullptr, sd / "train",
                                    [&](const EpochLog& e) {
                                        log << "       epoch " << e.epoch << " loss " << e.train_loss << " test acc "
                                            << e.test_accuracy << " aug " << e.augmented_fraction << "\n";
                                    });
                   });

        AttackConfig ac = cfg.attack;
        ac.seed = seed;
        json attack_desc{{"checkpoint", file_hash(sd / "train" / "final.ckpt")}, {"epsilons", cfg.epsilons},
                         {"steps", ac.steps}, {"step_size", ac.step_size ? json(*ac.step_size) : json(nullptr)},
                         {"random_start", ac.random_start}, {"seed", ac.seed}, {"images", eval_set.size()}};
        std::vector<fs::path> pred_files;
        for (double e : cfg.epsilons) pred_files.push_back(sd / "attack" / predictions_file_name(e));
        stages.run("attack-eval/seed-" + std::to_string(seed), hex64(checksum_bytes(attack_desc.dump())), pred_files, [&] {
            auto [model, meta] = load_checkpoint<float>(sd / "train" / "final.ckpt");
            auto levels = attack_sweep(model, eval_set, cfg.epsilons, ac, cfg.attack_batch);
            for (const auto& l : levels) write_predictions(sd / "attack", l, data.taxonomy);
            write_json(sd / "attack" / "attack_config.json", attack_config_json(levels));
        });

        std::string preds_hash;
        for (const auto& f : pred_files) preds_hash += file_hash(f);
        stages.run("report/seed-" + std::to_string(seed), hex64(checksum_bytes(preds_hash)), {sd / "sweep_report.csv"}, [&] {
            std::map<double, std::vector<PredictionRecord>> groups;
            for (double e : cfg.epsilons)
                groups[e] = read_prediction_file(sd / "attack" / predictions_file_name(e), data.taxonomy, e);
            write_text_atomic(sd / "sweep_report.csv", sweep_report_csv(compute_report(groups, data.taxonomy)));
        });
        per_seed_text.push_back(read_text(sd / "sweep_report.csv"));
        per_seed.push_back(parse_sweep_report(per_seed_text.back()));
    }

    std::string agg_hash;
    for (const auto& t : per_seed_text) agg_hash += hex64(checksum_bytes(t));
    art.sweep_report = cfg.out_dir / "sweep_report.csv";
    stages.run("report", hex64(checksum_bytes(agg_hash + (cfg.plots ? "p" : ""))), {art.sweep_report, cfg.out_dir / "seeds_report.csv"}, [&] {
        write_text_atomic(art.sweep_report, per_seed.size() == 1 ? per_seed_text.front() : sweep_report_csv(detail::mean_report(per_seed)));
        std::string seeds_csv = "seed," + std::string(kSweepHeader) + "\n";
        for (std::size_t s = 0; s < per_seed_text.size(); ++s) {
            auto t = parse_sweep_csv(per_seed_text[s]);
            for (const auto& row : t.rows) {
                seeds_csv += std::to_string(cfg.seeds[s]);
                for (const auto& c : row) seeds_csv += "," + c;
                seeds_csv += "\n";
            }
        }
        write_text_atomic(cfg.out_dir / "seeds_report.csv", seeds_csv);
        if (cfg.plots)
            detail::write_charts(cfg.out_dir / "plots",
                                 {{detail::series_label(cfg.variant, cfg.seeds.size()), parse_sweep_csv(read_text(art.sweep_report))}});
    });

    json stage_log = json::array();
    for (const auto& s : art.stages) stage_log.push_back({{"stage", s.name}, {"status", s.ran ? "ran" : "skipped"}, {"seconds", s.seconds}});
    write_json(cfg.out_dir / "run_log.json",
               {{"config_hash", cfg.hash()},
                {"variant", cfg.variant},
                {"seeds", cfg.seeds},
                {"single_seed", cfg.seeds.size() == 1},
                {"sweep_report_hash", file_hash(art.sweep_report)},
                {"environment", {{"compiler", __VERSION__}, {"cplusplus", __cplusplus}, {"threads", 1}}},
                {"stages", stage_log}});
    return art;
}

struct ComparisonResult {
    fs::path table;
    std::vector<fs::path> charts;
    json trend = nullptr;
};

namespace detail {

struct LoadedRun {
    fs::path dir;
    std::string variant;
    std::size_t seeds = 1;
    SweepTable table;
    std::optional<SweepTable> seeds_table;
};

inline LoadedRun load_run(const fs::path& dir) {
    if (!fs::exists(dir / "sweep_report.csv")) throw ConfigError(dir.string() + " has no sweep_report.csv");
    LoadedRun r{dir, dir.filename().string(), 1, parse_sweep_csv(read_text(dir / "sweep_report.csv")), std::nullopt};
    if (fs::exists(dir / "config.json")) {
        json c = read_json(dir / "config.json");
        r.variant = c.value("variant", r.variant);
        if (c.contains("seeds")) r.seeds = c.at("seeds").size();
    }
    if (fs::exists(dir / "seeds_report.csv")) r.seeds_table = parse_sweep_csv(read_text(dir / "seeds_report.csv"), "seed");
    return r;
}

/// Per seed: does high-aug/high-mix keep at least the standard model's semantic mistake share
/// at the largest epsilon? Informational only.
inline json trend_flags(const LoadedRun& standard, const LoadedRun& treated) {
    auto at_max_eps = [](const SweepTable& t) {
        std::map<std::string, std::optional<double>> by_seed;
        const std::size_t col = t.column("semantic_mistake_share"), eps = t.column("epsilon");
        double max_eps = -1;
        for (const auto& r : t.rows) max_eps = std::max(max_eps, std::stod(r.at(eps)));
        for (const auto& r : t.rows)
            if (std::stod(r.at(eps)) == max_eps) by_seed[r.at(0)] = cell_value(r.at(col));
        return std::pair{max_eps, by_seed};
    };
    if (!standard.seeds_table || !treated.seeds_table) return nullptr;
    auto [eps_s, a] = at_max_eps(*standard.seeds_table);
    auto [eps_t, b] = at_max_eps(*treated.seeds_table);
    json seeds = json::array();
    int compared = 0, holds = 0;
    for (const auto& [seed, sv] : a) {
        auto it = b.find(seed);
        if (it == b.end()) continue;
        json row{{"seed", seed}};
        row["standard"] = sv ? json(*sv) : json(nullptr);
        row["high-aug/high-mix"] = it->second ? json(*it->second) : json(nullptr);
        if (sv && it->second) {
            ++compared;
            const bool ok = *it->second >= *sv;
            holds += ok;
            row["holds"] = ok;
        } else {
            row["holds"] = nullptr;
        }
        seeds.push_back(row);
    }
    const int needed = (2 * compared + 2) / 3;  // at least two thirds of compared seeds
    return {{"metric", "semantic_mistake_share"},
            {"epsilon", eps_s},
            {"seeds", seeds},
            {"seeds_compared", compared},
            {"seeds_holding", holds},
            {"flag", compared > 0 && holds >= needed},
            {"note", "informational trend check; not a gate"}};
}

}  // namespace detail

/// Collates completed runs into one table and one chart per metric. Table cells are copied
/// verbatim from each run's sweep report.
inline ComparisonResult compare(const std::vector<fs::path>& run_dirs, const fs::path& out) {
    if (run_dirs.empty()) throw ConfigError("compare needs at least one run directory");
    std::vector<detail::LoadedRun> runs;
    for (const auto& d : run_dirs) runs.push_back(detail::load_run(d));

    const auto grid = runs.front().table.epsilons();
    for (const auto& r : runs)
        if (r.table.epsilons() != grid) {
            std::string msg = "runs use different epsilon grids:";
            for (const auto& q : runs) {
                msg += "\n  " + q.dir.string() + ": ";
                for (const auto& e : q.table.epsilons()) msg += e + " ";
            }
            throw ConfigError(msg);
        }

    fs::create_directories(out);
    ComparisonResult res;
    std::string csv = "run,variant,seeds," + std::string(kSweepHeader) + "\n";
    std::vector<std::pair<std::string, SweepTable>> series;
    for (const auto& r : runs) {
        for (const auto& row : r.table.rows) {
            csv += r.dir.filename().string() + "," + r.variant + "," + std::to_string(r.seeds);
            for (const auto& c : row) csv += "," + c;
            csv += "\n";
        }
        series.emplace_back(detail::series_label(r.variant, r.seeds), r.table);
    }
    res.table = out / "comparison.csv";
    write_text_atomic(res.table, csv);
    res.charts = detail::write_charts(out, series);

    const detail::LoadedRun *standard = nullptr, *treated = nullptr;
    for (const auto& r : runs) {
        if (r.variant == "standard") standard = &r;
        if (r.variant == "high-aug/high-mix") treated = &r;
    }
    if (standard && treated) {
        res.trend = detail::trend_flags(*standard, *treated);
        if (!res.trend.is_null()) write_json(out / "trend.json", res.trend);
    }
    return res;
}

}  // namespace semalign
