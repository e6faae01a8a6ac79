#include <catch2/catch_amalgamated.hpp>

#include "ema/synth.hpp"

using namespace ema;

TEST_CASE("generator is deterministic per seed") {
    SynthConfig cfg;
    cfg.n_participants = 10;
    cfg.days = 5;
    cfg.seed = 17;
    Dataset a = generate_synthetic(cfg);
    Dataset b = generate_synthetic(cfg);
    CHECK(a == b);
    CHECK(to_csv(a) == to_csv(b));

    cfg.seed = 18;
    CHECK_FALSE(generate_synthetic(cfg) == a);
}

TEST_CASE("default-scale generation hits the compliance target") {
    SynthConfig cfg;  // 200 participants x 14 days x 4/day
    cfg.seed = 2024;
    Dataset ds = generate_synthetic(cfg);
    CHECK(ds.n_prompts() == 200u * 14u * 4u);
    auto rep = validate(ds);
    CHECK(rep.violations.empty());
    CHECK(std::fabs(rep.compliance_rate - 0.628) < 0.02);
    // within-day prompt spacing ~4h
    CHECK(std::fabs(rep.mean_within_day_gap_min - 240.0) < 15.0);
}

TEST_CASE("timestamps follow the day grid with bounded jitter") {
    SynthConfig cfg;
    cfg.n_participants = 5;
    cfg.days = 3;
    cfg.seed = 9;
    Dataset ds = generate_synthetic(cfg);
    for (const auto& [pid, recs] : ds.participants) {
        REQUIRE(recs.size() == 12);
        for (std::size_t j = 0; j < recs.size(); ++j) {
            const double day = std::floor(static_cast<double>(j) / 4.0);
            const double slot = static_cast<double>(j % 4);
            const double nominal = day * 1440.0 + 540.0 + slot * 240.0;
            CHECK(std::fabs(recs[j].timestamp_min - nominal) <= 45.0);
        }
    }
}

TEST_CASE("with zeroed effect weights the label sequence is iid") {
    // all covariate weights off -> per-participant P(miss) constant, so
    // consecutive completions must be independent (chi-square, df=1, alpha=.01)
    SynthConfig cfg;
    cfg.n_participants = 1;
    cfg.days = 500;
    cfg.w_bored = cfg.w_angry = cfg.w_streak = cfg.w_tod = 0.0;
    cfg.seed = 31;
    Dataset ds = generate_synthetic(cfg);
    const auto& recs = ds.participants.begin()->second;
    double n[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t j = 0; j + 1 < recs.size(); ++j)
        n[recs[j].completed ? 1 : 0][recs[j + 1].completed ? 1 : 0] += 1.0;
    const double total = n[0][0] + n[0][1] + n[1][0] + n[1][1];
    double chi2 = 0.0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            const double expected = (n[a][0] + n[a][1]) * (n[0][b] + n[1][b]) / total;
            REQUIRE(expected > 0.0);
            chi2 += (n[a][b] - expected) * (n[a][b] - expected) / expected;
        }
    CHECK(chi2 < 6.635);  // chi-square df=1 critical value at alpha = 0.01
}

TEST_CASE("lag-1 boredom mode couples misses to previous boredom") {
    SynthConfig cfg;
    cfg.n_participants = 40;
    cfg.days = 14;
    cfg.w_lag1_bored = 3.0;
    cfg.seed = 55;
    Dataset ds = generate_synthetic(cfg);
    // among prompts whose previous prompt was completed, split miss rate by
    // previous boredom level
    double miss_high = 0, n_high = 0, miss_low = 0, n_low = 0;
    for (const auto& [pid, recs] : ds.participants) {
        for (std::size_t j = 1; j < recs.size(); ++j) {
            if (!recs[j - 1].completed) continue;
            const bool high = recs[j - 1].items[3] >= 4;  // bored
            const double miss = recs[j].completed ? 0.0 : 1.0;
            if (high) {
                miss_high += miss;
                n_high += 1;
            } else {
                miss_low += miss;
                n_low += 1;
            }
        }
    }
    REQUIRE(n_high > 100);
    REQUIRE(n_low > 100);
    CHECK(miss_high / n_high > miss_low / n_low + 0.05);
}

TEST_CASE("config validation") {
    SynthConfig cfg;
    cfg.n_participants = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.target_compliance = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
