#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "semalign/semalign.hpp"

namespace {

using namespace semalign;

std::vector<double> parse_epsilons(const std::string& s) {
    std::vector<double> out;
    std::istringstream in(s);
    for (std::string tok; std::getline(in, tok, ',');) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("bad epsilon value '" + tok + "'");
        }
    }
    return out;
}

int cmd_prepare(const std::string& source, const std::string& taxonomy, const std::string& out) {
    auto ds = prepare_data(source, taxonomy, out);
    std::cout << "prepared " << ds.train.size() << " train / " << ds.test.size() << " test images of "
              << ds.taxonomy.size() << " classes into " << out << " (checksum " << ds.manifest.at("checksum").get<std::string>()
              << ")\n";
    return 0;
}

struct HybridArgs {
    std::string data, mixer = "reference", out, diffusion_command, backend_config;
    double mix_factor = kLowMixStrength;
    bool resume = false;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    int resolution = 512;
};

int cmd_generate(const HybridArgs& a) {
    Dataset ds = load_prepared(a.data);
    std::unique_ptr<Mixer> mixer;
    if (a.mixer == "reference") {
        mixer = std::make_unique<ReferenceMixer>(build_class_prototypes(ds.train, ds.taxonomy.size()));
    } else {
        DiffusionAdapterOptions opt;
        opt.command = a.diffusion_command;
        opt.resolution = a.resolution;
        if (!a.backend_config.empty()) opt.backend_config = read_json(a.backend_config);
        mixer = std::make_unique<DiffusionAdapter>(opt);
    }
    GenerationStats st;
    auto cat = generate_catalog(ds.train, ds.taxonomy, a.mix_factor, *mixer, a.out, {a.seed, a.resume, a.jobs}, &st);
    auto report = validate_catalog(cat, ds.train, ds.taxonomy);
    std::cout << "catalog " << a.out << ": " << cat.size() << " records (" << st.generated << " generated, " << st.reused
              << " reused, " << st.failed << " failed); complete bases " << report.complete_bases << "/" << ds.train.size()
              << ", violations " << report.violations.size() << "\n";
    return cat.complete() ? 0 : 3;
}

int cmd_validate_catalog(const std::string& data, const std::string& catalog_dir) {
    Dataset ds = load_prepared(data);
    auto cat = load_catalog(catalog_dir);
    auto v = validate_catalog(cat, ds.train, ds.taxonomy);
    std::cout << "expected " << v.expected << ", present " << v.present << ", complete bases " << v.complete_bases
              << ", missing " << v.missing.size() << ", violations " << v.violations.size() << ", orphans "
              << v.orphans.size() << "\n";
    for (const auto& s : v.violations) std::cout << "  violation: " << s << "\n";
    for (const auto& s : v.orphans) std::cout << "  orphan: " << s << "\n";
    return v.ok() ? 0 : 3;
}

int cmd_train(const std::string& config, const std::string& out) {
    auto cfg = ExperimentConfig::load(config);
    Dataset ds = load_prepared(cfg.data_dir);
    std::optional<HybridCatalog> cat;
    if (cfg.uses_catalog()) {
        if (!fs::exists(cfg.catalog_path / kCatalogManifest))
            throw ConfigError("augmentation probability " + format_real(cfg.augmentation.probability) +
                              " requires a catalog at " + cfg.catalog_path.string());
        cat = load_catalog(cfg.catalog_path);
    }
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seeds.front();
    auto res = train<float>(cfg.model, tc, ds, cat ? &*cat : nullptr, out, [](const EpochLog& e) {
        std::cout << "epoch " << e.epoch << " train_loss " << e.train_loss << " test_accuracy " << e.test_accuracy
                  << " augmented_fraction " << e.augmented_fraction << "\n";
    });
    std::cout << "final checkpoint " << res.final_checkpoint.string() << "\n";
    return 0;
}

struct AttackArgs {
    std::string checkpoint, data, epsilons = "0,0.25,0.5,1.0,2.0", out;
    int steps = 20;
    double step_size = 0.0;
    bool random_start = false;
    std::uint64_t seed = 0;
    std::size_t max_images = 0;
};

int cmd_attack(const AttackArgs& a) {
    auto eps = parse_epsilons(a.epsilons);
    Dataset ds = load_prepared(a.data);
    auto [model, meta] = load_checkpoint<float>(a.checkpoint);
    AttackConfig ac;
    ac.steps = a.steps;
    if (a.step_size > 0.0) ac.step_size = a.step_size;
    ac.random_start = a.random_start;
    ac.seed = a.seed;
    std::vector<LabeledImage> test = ds.test;
    if (a.max_images > 0 && a.max_images < test.size()) test.resize(a.max_images);
    auto levels = attack_sweep(model, test, eps, ac);
    std::map<double, std::vector<PredictionRecord>> groups;
    for (const auto& l : levels) {
        write_predictions(a.out, l, ds.taxonomy);
        groups[l.epsilon] = read_prediction_file(fs::path(a.out) / predictions_file_name(l.epsilon), ds.taxonomy, l.epsilon);
    }
    write_json(fs::path(a.out) / "attack_config.json", attack_config_json(levels));
    const auto report = compute_report(groups, ds.taxonomy);
    write_text_atomic(fs::path(a.out) / "sweep_report.csv", sweep_report_csv(report));
    std::cout << sweep_report_csv(report);
    return 0;
}

int cmd_report(const std::string& predictions, const std::string& data, const std::string& out) {
    auto taxonomy = ClassTaxonomy::load(fs::path(data) / "taxonomy.jsonl");
    std::map<double, std::vector<PredictionRecord>> groups;
    for (const auto& entry : fs::directory_iterator(predictions)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("predictions_eps", 0) != 0 || entry.path().extension() != ".csv") continue;
        const double eps = std::stod(name.substr(15, name.size() - 15 - 4));
        groups[eps] = read_prediction_file(entry.path(), taxonomy, eps);
    }
    if (groups.empty()) throw ConfigError("no prediction files in " + predictions);
    const auto text = sweep_report_csv(compute_report(groups, taxonomy));
    write_text_atomic(out, text);
    std::cout << text;
    return 0;
}

int cmd_run(const std::string& config) {
    auto cfg = ExperimentConfig::load(config);
    auto art = run_experiment(cfg);
    std::cout << "sweep report: " << art.sweep_report.string() << " (" << art.stages_run() << " stage(s) ran)\n";
    return 0;
}

int cmd_compare(const std::vector<std::string>& runs, const std::string& out) {
    std::vector<fs::path> dirs(runs.begin(), runs.end());
    auto res = compare(dirs, out);
    std::cout << "table: " << res.table.string() << "\n";
    for (const auto& c : res.charts) std::cout << "chart: " << c.string() << "\n";
    if (!res.trend.is_null()) std::cout << "trend: " << res.trend.dump() << "\n";
    return 0;
}

int cmd_synth(const std::string& out, const std::string& taxonomy, const SyntheticArchiveOptions& opt) {
    write_synthetic_archive(out, ClassTaxonomy::load(taxonomy), opt);
    std::cout << "wrote synthetic CIFAR-100-format archive to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semalign: semantic-hybrid augmentation and mistake-severity robustness toolkit"};
    app.require_subcommand(1);
    std::function<int()> action;

    std::string source, taxonomy, out, data, config, catalog_dir, predictions;
    auto* prep = app.add_subcommand("prepare-data", "Ingest the 25-class subset from a CIFAR-100 binary archive");
    prep->add_option("--source", source, "Archive directory (train.bin, test.bin, fine_label_names.txt)")->required();
    prep->add_option("--taxonomy", taxonomy, "Taxonomy file (JSON lines)")->required();
    prep->add_option("--out", out, "Output dataset directory")->required();
    prep->callback([&] { action = [&] { return cmd_prepare(source, taxonomy, out); }; });

    HybridArgs ha;
    auto* gen = app.add_subcommand("generate-hybrids", "Pre-generate the hybrid-image catalog");
    gen->add_option("--data", ha.data, "Prepared dataset directory")->required();
    gen->add_option("--mixer", ha.mixer, "Mixer backend")->check(CLI::IsMember({"reference", "diffusion-adapter"}));
    gen->add_option("--mix-factor", ha.mix_factor, "Mix strength in [0,1]")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--out", ha.out, "Catalog directory")->required();
    gen->add_flag("--resume", ha.resume, "Reuse records already on disk");
    gen->add_option("--seed", ha.seed, "Catalog seed");
    gen->add_option("--jobs", ha.jobs, "Parallel generation workers");
    gen->add_option("--diffusion-command", ha.diffusion_command, "Backend executable for diffusion-adapter");
    gen->add_option("--resolution", ha.resolution, "Backend resolution for diffusion-adapter");
    gen->add_option("--backend-config", ha.backend_config, "JSON file passed through to the backend");
    gen->callback([&] { action = [&] { return cmd_generate(ha); }; });

    auto* val = app.add_subcommand("validate-catalog", "Check catalog completeness and constraints");
    val->add_option("--data", data)->required();
    val->add_option("--catalog", catalog_dir)->required();
    val->callback([&] { action = [&] { return cmd_validate_catalog(data, catalog_dir); }; });

    auto* tr = app.add_subcommand("train", "Train one classifier from an experiment config");
    tr->add_option("--config", config)->required();
    tr->add_option("--out", out)->required();
    tr->callback([&] { action = [&] { return cmd_train(config, out); }; });

    AttackArgs aa;
    auto* att = app.add_subcommand("attack-eval", "L2 PGD sweep over the test set");
    att->add_option("--checkpoint", aa.checkpoint)->required();
    att->add_option("--data", aa.data)->required();
    att->add_option("--epsilons", aa.epsilons, "Comma-separated ascending budgets starting at 0");
    att->add_option("--out", aa.out)->required();
    att->add_option("--steps", aa.steps);
    att->add_option("--step-size", aa.step_size, "Default 2.5*epsilon/steps");
    att->add_flag("--random-start", aa.random_start);
    att->add_option("--seed", aa.seed);
    att->add_option("--max-images", aa.max_images, "Attack only the first N test images");
    att->callback([&] { action = [&] { return cmd_attack(aa); }; });

    auto* rep = app.add_subcommand("report", "Compute the sweep report from prediction-record files");
    rep->add_option("--predictions", predictions)->required();
    rep->add_option("--data", data, "Prepared dataset directory (for the taxonomy)")->required();
    rep->add_option("--out", out)->required();
    rep->callback([&] { action = [&] { return cmd_report(predictions, data, out); }; });

    auto* run = app.add_subcommand("run", "Run a full experiment from its config");
    run->add_option("--config", config)->required();
    run->callback([&] { action = [&] { return cmd_run(config); }; });

    std::vector<std::string> runs;
    auto* cmp = app.add_subcommand("compare", "Tabulate and chart completed runs");
    cmp->add_option("--runs", runs)->required();
    cmp->add_option("--out", out)->required();
    cmp->callback([&] { action = [&] { return cmd_compare(runs, out); }; });

    SyntheticArchiveOptions so;
    auto* syn = app.add_subcommand("synth-archive", "Write a synthetic archive in the CIFAR-100 binary layout");
    syn->add_option("--out", out)->required();
    syn->add_option("--taxonomy", taxonomy)->required();
    syn->add_option("--train-per-class", so.train_per_class);
    syn->add_option("--test-per-class", so.test_per_class);
    syn->add_option("--seed", so.seed);
    syn->callback([&] { action = [&] { return cmd_synth(out, taxonomy, so); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    try {
        return action();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const StageError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
