#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "semalign/augment.hpp"

using namespace semalign;

namespace {

HybridRecord make_record(int base, int target, const std::string& id) {
    HybridRecord r;
    r.image = Image(32, 32, 0.25f);
    r.base_class = base;
    r.target_class = target;
    r.mix_factor = 0.5;
    r.base_image_id = id;
    r.mixer_id = "reference";
    return r;
}

/// Catalog with k records for `base`, plus unrelated records for another class.
HybridCatalog catalog_for(int base, int k) {
    const auto& t = fixture::taxonomy();
    std::vector<HybridRecord> recs;
    auto targets = t.mix_targets(base);
    for (int i = 0; i < k; ++i) recs.push_back(make_record(base, targets[static_cast<std::size_t>(i % 4)], "train-" + std::to_string(i)));
    const int other = (base + 1) % 25;
    recs.push_back(make_record(other, t.mix_targets(other)[0], "train-other"));
    return HybridCatalog(std::move(recs), {});
}

TrainingInstance rose_instance() {
    const auto& t = fixture::taxonomy();
    return clean_instance({Image(32, 32, 0.5f), t.index_of("rose"), Split::Train, "train-00001"}, 25);
}

}  // namespace

TEST(Presets, MapToProbabilities) {
    EXPECT_EQ(AugmentationPolicy::from_preset("none").probability, 0.0);
    EXPECT_EQ(AugmentationPolicy::from_preset("low").probability, 0.25);
    EXPECT_EQ(AugmentationPolicy::from_preset("high").probability, 0.5);
    EXPECT_THROW(AugmentationPolicy::from_preset("medium"), ConfigError);
    EXPECT_THROW(AugmentationPolicy::from_probability(1.5), ConfigError);
    EXPECT_THROW(AugmentationPolicy::from_probability(-0.1), ConfigError);
    EXPECT_EQ(AugmentationPolicy::from_probability(0.25).preset, "low");
    EXPECT_EQ(AugmentationPolicy::from_probability(0.3).preset, "custom");
}

TEST(SoftLabels, RoseToCouch) {
    const auto& t = fixture::taxonomy();
    auto rec = make_record(t.index_of("rose"), t.index_of("couch"), "x");
    auto l = soft_label_for_hybrid(rec, 25);
    for (int c = 0; c < 25; ++c) {
        const double expect = (c == t.index_of("rose") || c == t.index_of("couch")) ? 0.5 : 0.0;
        EXPECT_EQ(l.dist[static_cast<std::size_t>(c)], expect);
    }
    EXPECT_TRUE(l.is_hybrid_pair());
    EXPECT_EQ(l.nonzeros(), 2);
    EXPECT_NEAR(l.sum(), 1.0, 1e-9);
}

TEST(SoftLabels, EveryCatalogPairSumsToOne) {
    const auto& t = fixture::taxonomy();
    for (int b = 0; b < 25; ++b)
        for (int tg : t.mix_targets(b)) {
            auto l = soft_label_for_hybrid(make_record(b, tg, "x"), 25);
            EXPECT_EQ(l.nonzeros(), 2);
            EXPECT_NEAR(l.sum(), 1.0, 1e-9);
            for (double v : l.dist) EXPECT_GE(v, 0.0);
        }
}

TEST(SoftLabels, BaseEqualsTargetRejected) {
    EXPECT_THROW(soft_label_for_hybrid(make_record(3, 3, "x"), 25), Error);
    EXPECT_THROW(soft_label_for_hybrid(make_record(3, 30, "x"), 25), Error);
}

TEST(Instances, OriginsCarryMatchingLabels) {
    auto clean = rose_instance();
    EXPECT_EQ(clean.origin, Origin::Clean);
    EXPECT_TRUE(clean.label.is_one_hot());
    auto h = hybrid_instance(make_record(2, fixture::taxonomy().mix_targets(2)[0], "train-7"), 25);
    EXPECT_EQ(h.origin, Origin::Hybrid);
    EXPECT_TRUE(h.label.is_hybrid_pair());
    EXPECT_EQ(h.base_class, 2);
    EXPECT_NE(h.provenance.find("train-7"), std::string::npos);
}

TEST(MaybeAugment, ZeroProbabilityNeverFires) {
    auto inst = rose_instance();
    auto cat = catalog_for(inst.base_class, 4);
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        auto out = maybe_augment(inst, AugmentationPolicy::from_probability(0.0), cat, rng);
        ASSERT_EQ(out.size(), 1u);
        EXPECT_EQ(out[0].provenance, inst.provenance);
    }
    HybridCatalog empty;
    EXPECT_EQ(maybe_augment(inst, AugmentationPolicy::from_probability(0.0), empty, rng).size(), 1u);
}

TEST(MaybeAugment, OneProbabilityAlwaysAppendsTheSingleRecord) {
    auto inst = rose_instance();
    auto cat = catalog_for(inst.base_class, 1);
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        auto out = maybe_augment(inst, AugmentationPolicy::from_probability(1.0), cat, rng);
        ASSERT_EQ(out.size(), 2u);
        EXPECT_EQ(out[0].origin, Origin::Clean);
        EXPECT_EQ(out[0].image, inst.image);
        EXPECT_EQ(out[1].provenance, record_key(cat.records()[0]));
        EXPECT_EQ(out[1].base_class, inst.base_class);
    }
}

TEST(MaybeAugment, FiringWithoutMatchingRecordIsAnError) {
    auto inst = rose_instance();
    auto cat = catalog_for((inst.base_class + 3) % 25, 4);
    Rng rng(3);
    EXPECT_THROW(maybe_augment(inst, AugmentationPolicy::from_probability(1.0), cat, rng), Error);
}

TEST(MaybeAugment, RejectsHybridInput) {
    auto cat = catalog_for(0, 4);
    auto h = hybrid_instance(cat.records()[0], 25);
    Rng rng(4);
    EXPECT_THROW(maybe_augment(h, AugmentationPolicy::from_probability(0.5), cat, rng), Error);
}

TEST(MaybeAugment, FiringCountWithinBinomialInterval) {
    const auto [lo, hi] = oracle::binom_interval(10000, 0.25, 0.001);
    auto inst = rose_instance();
    auto cat = catalog_for(inst.base_class, 4);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng = make_rng(seed, "augment-test");
        int fired = 0;
        for (int i = 0; i < 10000; ++i) fired += maybe_augment(inst, AugmentationPolicy::from_probability(0.25), cat, rng).size() == 2;
        EXPECT_GE(fired, lo) << "seed " << seed;
        EXPECT_LE(fired, hi) << "seed " << seed;
        EXPECT_GE(fired, 2287);
        EXPECT_LE(fired, 2713);
    }
}

TEST(MaybeAugment, SelectionIsUniformChiSquare) {
    const double critical = oracle::chi2_critical_df3(0.001);
    EXPECT_NEAR(critical, 16.266, 1e-3);
    auto inst = rose_instance();
    auto cat = catalog_for(inst.base_class, 4);
    Rng rng = make_rng(7, "chi2");
    std::map<std::string, int> counts;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        auto out = maybe_augment(inst, AugmentationPolicy::from_probability(1.0), cat, rng);
        ++counts[out[1].provenance];
    }
    ASSERT_EQ(counts.size(), 4u);
    double chi2 = 0.0;
    for (const auto& [k, c] : counts) chi2 += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
    EXPECT_LT(chi2, critical);
    EXPECT_GT(oracle::chi2_sf_df3(chi2), 0.001);
}

TEST(MaybeAugment, PoolSpansAllRecordsOfTheBaseClass) {
    // Records from several base images of the same class are all eligible.
    auto inst = rose_instance();
    auto cat = catalog_for(inst.base_class, 12);
    Rng rng(8);
    std::set<std::string> seen;
    for (int i = 0; i < 2000; ++i) seen.insert(maybe_augment(inst, AugmentationPolicy::from_probability(1.0), cat, rng)[1].provenance);
    EXPECT_EQ(seen.size(), 12u);
}

TEST(MaybeAugment, IdenticalSeedsReproduceSequence) {
    auto inst = rose_instance();
    auto cat = catalog_for(inst.base_class, 4);
    auto run = [&](std::uint64_t seed) {
        Rng rng = make_rng(seed, "determinism");
        std::vector<std::string> seq;
        for (int i = 0; i < 2000; ++i) {
            auto out = maybe_augment(inst, AugmentationPolicy::from_probability(0.25), cat, rng);
            seq.push_back(out.size() == 2 ? out[1].provenance : "-");
        }
        return seq;
    };
    EXPECT_EQ(run(11), run(11));
    EXPECT_NE(run(11), run(12));
}

TEST(BinomialOracle, MatchesReferenceQuantiles) {
    // Reference quantiles from an independent statistics package.
    EXPECT_EQ(oracle::binom_interval(10000, 0.25, 0.001), std::make_pair(2358, 2643));
    EXPECT_EQ(oracle::binom_interval(10000, 0.5, 0.001), std::make_pair(4835, 5165));
    EXPECT_NEAR(oracle::binom_cdf(5, 10, 0.5), 638.0 / 1024.0, 1e-12);
    EXPECT_NEAR(oracle::chi2_sf_df3(16.26623619623813), 0.001, 1e-9);
}
