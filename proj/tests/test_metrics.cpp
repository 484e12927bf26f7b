#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "semalign/metrics.hpp"

using namespace semalign;

namespace {

/// Lookup tables read straight from the taxonomy file, bypassing ClassTaxonomy.
struct RawTable {
    std::map<std::string, std::string> visual, semantic;
    std::vector<std::string> names;
    RawTable() {
        std::ifstream in(fixture::taxonomy_file());
        for (std::string line; std::getline(in, line);) {
            if (line.empty() || line[0] == '#') continue;
            auto j = json::parse(line);
            visual[j["name"]] = j["visual_super"];
            semantic[j["name"]] = j["semantic_super"];
            names.push_back(j["name"]);
        }
    }
};

const RawTable& raw() {
    static const RawTable t;
    return t;
}

struct OracleCounts {
    std::size_t total = 0, correct = 0, super_correct = 0, mistakes = 0, sem_mistakes = 0, vis_mistakes = 0;
};

OracleCounts brute_force(const std::vector<PredictionRecord>& recs) {
    const auto& t = fixture::taxonomy();
    OracleCounts c;
    for (const auto& r : recs) {
        const std::string& tn = t.name(r.true_class);
        const std::string& pn = t.name(r.pred_class);
        ++c.total;
        if (tn == pn) ++c.correct;
        if (raw().semantic.at(tn) == raw().semantic.at(pn)) ++c.super_correct;
        if (tn != pn) {
            ++c.mistakes;
            if (raw().semantic.at(tn) == raw().semantic.at(pn)) ++c.sem_mistakes;
            if (raw().visual.at(tn) == raw().visual.at(pn)) ++c.vis_mistakes;
        }
    }
    return c;
}

PredictionRecord rec(const std::string& truth, const std::string& pred) {
    const auto& t = fixture::taxonomy();
    return {"x", t.index_of(truth), t.index_of(pred), 0.0};
}

double ratio(std::size_t a, std::size_t b) { return static_cast<double>(a) / static_cast<double>(b); }

}  // namespace

TEST(Metrics, AllCorrectAndAllWrong) {
    const auto& t = fixture::taxonomy();
    std::vector<PredictionRecord> right, wrong;
    for (int c = 0; c < 25; ++c) {
        right.push_back({"a", c, c, 0.0});
        wrong.push_back({"b", c, (c + 1) % 25, 0.0});
    }
    EXPECT_EQ(fine_accuracy(right), 1.0);
    EXPECT_EQ(semantic_super_accuracy(right, t), 1.0);
    EXPECT_FALSE(semantic_mistake_share(right, t).has_value());
    EXPECT_FALSE(visual_mistake_share(right, t).has_value());
    EXPECT_EQ(fine_accuracy(wrong), 0.0);
}

TEST(Metrics, TulipExamplesFromTheGrid) {
    const auto& t = fixture::taxonomy();
    std::vector<PredictionRecord> cockroach{rec("tulip", "cockroach")};
    EXPECT_EQ(semantic_super_accuracy(cockroach, t), 1.0);
    std::vector<PredictionRecord> wardrobe{rec("tulip", "wardrobe")};
    EXPECT_EQ(semantic_mistake_share(wardrobe, t), 1.0);
    EXPECT_EQ(visual_mistake_share(wardrobe, t), 0.0);
    std::vector<PredictionRecord> rose{rec("tulip", "rose")};
    EXPECT_EQ(visual_mistake_share(rose, t), 1.0);
    EXPECT_EQ(semantic_mistake_share(rose, t), 0.0);
    std::vector<PredictionRecord> mixed{rec("tulip", "wardrobe"), rec("tulip", "rose"), rec("tulip", "bee"),
                                        rec("tulip", "tulip")};
    EXPECT_EQ(fine_accuracy(mixed), 0.25);
    EXPECT_EQ(semantic_super_accuracy(mixed, t), 0.5);
    EXPECT_EQ(semantic_mistake_share(mixed, t), 1.0 / 3.0);
    EXPECT_EQ(visual_mistake_share(mixed, t), 1.0 / 3.0);
}

TEST(Metrics, EmptyInputErrors) {
    const auto& t = fixture::taxonomy();
    std::vector<PredictionRecord> none;
    EXPECT_THROW(fine_accuracy(none), Error);
    EXPECT_THROW(semantic_super_accuracy(none, t), Error);
    EXPECT_FALSE(semantic_mistake_share(none, t).has_value());
    std::map<double, std::vector<PredictionRecord>> groups{{0.0, {}}};
    EXPECT_THROW(compute_report(groups, t), Error);
    std::vector<PredictionRecord> bad{{"x", 0, 30, 0.0}};
    EXPECT_THROW(semantic_super_accuracy(bad, t), Error);
}

TEST(Metrics, RandomizedSetsMatchBruteForceOracle) {
    const auto& t = fixture::taxonomy();
    Rng rng(2024);
    std::uniform_int_distribution<int> size(1, 50), cls(0, 24);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    int with_mistakes = 0, without = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        // Vary the error rate so zero-mistake sets occur too.
        const double p_correct = trial % 10 == 0 ? 1.0 : coin(rng);
        std::vector<PredictionRecord> recs;
        const int n = size(rng);
        for (int i = 0; i < n; ++i) {
            const int truth = cls(rng);
            recs.push_back({"r" + std::to_string(i), truth, coin(rng) < p_correct ? truth : cls(rng), 0.0});
        }
        const auto o = brute_force(recs);
        const auto m = metrics_for(recs, t, 0.0);
        ASSERT_EQ(m.n_total, o.total);
        ASSERT_EQ(m.n_mistakes, o.mistakes);
        ASSERT_EQ(m.fine_accuracy, ratio(o.correct, o.total));
        ASSERT_EQ(m.semantic_super_accuracy, ratio(o.super_correct, o.total));
        ASSERT_GE(m.semantic_super_accuracy, m.fine_accuracy);
        if (o.mistakes == 0) {
            ++without;
            ASSERT_FALSE(m.semantic_mistake_share.has_value());
            ASSERT_FALSE(m.visual_mistake_share.has_value());
        } else {
            ++with_mistakes;
            ASSERT_EQ(*m.semantic_mistake_share, ratio(o.sem_mistakes, o.mistakes));
            ASSERT_EQ(*m.visual_mistake_share, ratio(o.vis_mistakes, o.mistakes));
            ASSERT_LE(*m.semantic_mistake_share + *m.visual_mistake_share, 1.0);
            const double identity = m.fine_accuracy + (1.0 - m.fine_accuracy) * *m.semantic_mistake_share;
            ASSERT_NEAR(m.semantic_super_accuracy, identity, 1e-12);
        }
        auto shuffled = recs;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const auto ms = metrics_for(shuffled, t, 0.0);
        ASSERT_EQ(ms.fine_accuracy, m.fine_accuracy);
        ASSERT_EQ(ms.semantic_mistake_share, m.semantic_mistake_share);
    }
    EXPECT_GT(with_mistakes, 500);
    EXPECT_GT(without, 50);
}

TEST(Metrics, NoMistakeIsBothSemanticAndVisual) {
    const auto& t = fixture::taxonomy();
    for (int a = 0; a < 25; ++a)
        for (int b = 0; b < 25; ++b)
            if (a != b) EXPECT_FALSE(t.same_semantic(a, b) && t.same_visual(a, b));
}

TEST(Report, GroupsAscendingWithOracleFields) {
    const auto& t = fixture::taxonomy();
    std::map<double, std::vector<PredictionRecord>> groups;
    groups[1.0] = {rec("tulip", "wardrobe"), rec("rose", "rose"), rec("bee", "orchid")};
    groups[0.0] = {rec("tulip", "tulip"), rec("rose", "rose")};
    auto rep = compute_report(groups, t);
    ASSERT_EQ(rep.size(), 2u);
    EXPECT_EQ(rep[0].epsilon, 0.0);
    EXPECT_EQ(rep[0].fine_accuracy, 1.0);
    EXPECT_FALSE(rep[0].semantic_mistake_share);
    EXPECT_EQ(rep[1].epsilon, 1.0);
    EXPECT_EQ(rep[1].n_mistakes, 2u);
    EXPECT_EQ(rep[1].fine_accuracy, 1.0 / 3.0);
    EXPECT_EQ(rep[1].semantic_super_accuracy, 1.0);  // bee and orchid share row A
    EXPECT_EQ(rep[1].semantic_mistake_share, 1.0);
    EXPECT_EQ(rep[1].visual_mistake_share, 0.0);
}

TEST(Report, CsvRoundTripIsExact) {
    const auto& t = fixture::taxonomy();
    std::map<double, std::vector<PredictionRecord>> groups;
    groups[0.0] = {rec("tulip", "tulip")};
    groups[0.5] = {rec("tulip", "wardrobe"), rec("rose", "couch"), rec("bee", "bed")};
    auto rep = compute_report(groups, t);
    const auto csv = sweep_report_csv(rep);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kSweepHeader);
    EXPECT_NE(csv.find("0,1,0,1,1,null,null"), std::string::npos) << csv;
    auto back = parse_sweep_report(csv);
    ASSERT_EQ(back.size(), rep.size());
    for (std::size_t i = 0; i < rep.size(); ++i) {
        EXPECT_EQ(back[i].epsilon, rep[i].epsilon);
        EXPECT_EQ(back[i].n_total, rep[i].n_total);
        EXPECT_EQ(back[i].fine_accuracy, rep[i].fine_accuracy);
        EXPECT_EQ(back[i].semantic_super_accuracy, rep[i].semantic_super_accuracy);
        EXPECT_EQ(back[i].semantic_mistake_share, rep[i].semantic_mistake_share);
        EXPECT_EQ(back[i].visual_mistake_share, rep[i].visual_mistake_share);
    }
    auto table = parse_sweep_csv(csv);
    EXPECT_EQ(table.column("fine_accuracy"), 3u);
    EXPECT_EQ(table.epsilons(), (std::vector<std::string>{"0", "0.5"}));
    EXPECT_THROW(table.column("nope"), Error);
    EXPECT_THROW(parse_sweep_csv("a,b\n1,2\n"), Error);
}

TEST(Report, ReadsPredictionFiles) {
    fixture::TempDir dir("predfile");
    write_text_atomic(dir / "p.csv",
                      "image_id,true_class,pred_class,clean_pred_class,achieved_loss\n"
                      "test-00001,tulip,wardrobe,tulip,1.5\n"
                      "test-00002,rose,rose,rose,0.1\n");
    auto recs = read_prediction_file(dir / "p.csv", fixture::taxonomy(), 0.25);
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[0].true_class, fixture::taxonomy().index_of("tulip"));
    EXPECT_EQ(recs[0].pred_class, fixture::taxonomy().index_of("wardrobe"));
    EXPECT_EQ(recs[0].epsilon, 0.25);
    write_text_atomic(dir / "bad.csv", "x,y\n");
    EXPECT_THROW(read_prediction_file(dir / "bad.csv", fixture::taxonomy(), 0.0), Error);
    write_text_atomic(dir / "unknown.csv", "image_id,true_class,pred_class\nid,apple,rose\n");
    EXPECT_ANY_THROW(read_prediction_file(dir / "unknown.csv", fixture::taxonomy(), 0.0));
}
