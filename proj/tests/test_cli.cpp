#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>

#include "fixtures.hpp"
#include "semalign/harness.hpp"

using namespace semalign;

namespace {

struct CliResult {
    int code;
    std::string output;
};

CliResult cli(const fixture::TempDir& dir, const std::string& args) {
    const fs::path log = dir / "cli.log";
    const std::string cmd = std::string("\"") + SEMALIGN_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, fs::exists(log) ? read_text(log) : ""};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST(Cli, StagewisePipeline) {
    fixture::TempDir dir("cli-pipeline");
    const fs::path tax = fixture::taxonomy_file();
    auto r = cli(dir, "synth-archive --out " + q(dir / "src") + " --taxonomy " + q(tax) +
                          " --train-per-class 2 --test-per-class 1");
    ASSERT_EQ(r.code, 0) << r.output;
    r = cli(dir, "prepare-data --source " + q(dir / "src") + " --taxonomy " + q(tax) + " --out " + q(dir / "data"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("prepared 50 train / 25 test"), std::string::npos) << r.output;

    r = cli(dir, "generate-hybrids --data " + q(dir / "data") + " --mix-factor 0.75 --out " + q(dir / "catalog"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("200 records"), std::string::npos) << r.output;
    r = cli(dir, "validate-catalog --data " + q(dir / "data") + " --catalog " + q(dir / "catalog"));
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("violations 0"), std::string::npos) << r.output;

    write_json(dir / "exp.json", {{"variant", "high-aug/high-mix"},
                                  {"data", {{"dir", "data"}}},
                                  {"taxonomy", {{"path", tax.string()}}},
                                  {"augment", {{"catalog_path", "catalog"}}},
                                  {"train", {{"epochs", 1}, {"batch_size", 25}, {"learning_rate", 0.005}}},
                                  {"attack", {{"epsilons", {0, 0.5}}}},
                                  {"report", {{"out_dir", "run"}}}});
    r = cli(dir, "train --config " + q(dir / "exp.json") + " --out " + q(dir / "train"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir / "train" / "final.ckpt"));

    r = cli(dir, "attack-eval --checkpoint " + q(dir / "train" / "final.ckpt") + " --data " + q(dir / "data") +
                     " --epsilons 0,0.5 --steps 2 --max-images 10 --out " + q(dir / "attack"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir / "attack" / "predictions_eps0.5.csv"));

    r = cli(dir, "report --predictions " + q(dir / "attack") + " --data " + q(dir / "data") + " --out " +
                     q(dir / "report.csv"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(read_text(dir / "report.csv"), read_text(dir / "attack" / "sweep_report.csv"));
    auto rep = parse_sweep_report(read_text(dir / "report.csv"));
    ASSERT_EQ(rep.size(), 2u);
    EXPECT_EQ(rep[0].n_total, 10u);
}

TEST(Cli, RunAndCompare) {
    fixture::TempDir dir("cli-run");
    const fs::path tax = fixture::taxonomy_file();
    ASSERT_EQ(cli(dir, "synth-archive --out " + q(dir / "src") + " --taxonomy " + q(tax) +
                           " --train-per-class 2 --test-per-class 1")
                  .code,
              0);
    write_json(dir / "exp.json", {{"variant", "standard"},
                                  {"data", {{"source", "src"}, {"dir", "data"}}},
                                  {"taxonomy", {{"path", tax.string()}}},
                                  {"train", {{"epochs", 1}, {"batch_size", 25}}},
                                  {"attack", {{"epsilons", {0, 0.5}}, {"steps", 2}}},
                                  {"report", {{"out_dir", "run"}}}});
    auto r = cli(dir, "run --config " + q(dir / "exp.json"));
    ASSERT_EQ(r.code, 0) << r.output;
    r = cli(dir, "run --config " + q(dir / "exp.json"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("(0 stage(s) ran)"), std::string::npos) << r.output;

    r = cli(dir, "compare --runs " + q(dir / "run") + " --out " + q(dir / "cmp"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir / "cmp" / "comparison.csv"));
    EXPECT_TRUE(fs::exists(dir / "cmp" / "fine_accuracy.svg"));
}

TEST(Cli, ExitCodes) {
    fixture::TempDir dir("cli-codes");
    EXPECT_EQ(cli(dir, "").code, 2);
    EXPECT_EQ(cli(dir, "frobnicate").code, 2);
    EXPECT_EQ(cli(dir, "--help").code, 0);
    EXPECT_EQ(cli(dir, "prepare-data --source x").code, 2);
    EXPECT_EQ(cli(dir, "generate-hybrids --data d --out o --mix-factor 1.5").code, 2);

    write_text_atomic(dir / "bad.json", "{\"data\": {}, \"bogus\": 1}");
    auto r = cli(dir, "run --config " + q(dir / "bad.json"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("unknown config section 'bogus'"), std::string::npos) << r.output;
    r = cli(dir, "run --config " + q(dir / "missing.json"));
    EXPECT_EQ(r.code, 2);
    r = cli(dir, "attack-eval --checkpoint c --data d --out o --epsilons 0,x");
    EXPECT_EQ(r.code, 2) << r.output;

    // A stage that fails at runtime exits 3 and names the stage.
    const fs::path tax = fixture::taxonomy_file();
    ASSERT_EQ(cli(dir, "synth-archive --out " + q(dir / "src") + " --taxonomy " + q(tax) +
                           " --train-per-class 2 --test-per-class 1")
                  .code,
              0);
    write_json(dir / "fail.json",
               {{"variant", "low-aug/low-mix"},
                {"data", {{"source", "src"}}},
                {"taxonomy", {{"path", tax.string()}}},
                {"hybrid", {{"mixer", "diffusion-adapter"}, {"diffusion", {{"command", SEMALIGN_FAKE_BACKEND}, {"resolution", 32}, {"backend", {{"fail_prompts", {"rose"}}}}}}}},
                {"train", {{"epochs", 1}}},
                {"attack", {{"epsilons", {0}}}},
                {"report", {{"out_dir", "run"}}}});
    r = cli(dir, "run --config " + q(dir / "fail.json"));
    EXPECT_EQ(r.code, 3) << r.output;
    EXPECT_NE(r.output.find("generate-hybrids"), std::string::npos) << r.output;

    r = cli(dir, "validate-catalog --data " + q(dir / "run" / "data") + " --catalog " + q(dir / "run" / "catalog"));
    EXPECT_EQ(r.code, 3) << r.output;
}
