#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "ema/grad_check.hpp"
#include "ema/runconfig.hpp"

using namespace ema;

namespace {

std::vector<std::string> make_ids(int n) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back("P" + std::to_string(100 + i));
    return ids;
}

// reference AUC: (concordant + 0.5 * tied) / (n_pos * n_neg)
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0.0, denom = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (!(y[i] == 1 && y[j] == 0)) continue;
            denom += 1.0;
            if (s[i] > s[j]) num += 1.0;
            else if (s[i] == s[j]) num += 0.5;
        }
    return num / denom;
}

}  // namespace

TEST_CASE("cross-subject folds partition the participants") {
    auto ids = make_ids(10);
    FoldPlan plan = cross_subject_folds(ids, 5, 42);
    std::vector<int> sizes(5, 0);
    std::set<std::string> seen;
    for (const auto& [id, f] : plan.assignment) {
        REQUIRE(f >= 0);
        REQUIRE(f < 5);
        ++sizes[f];
        seen.insert(id);
    }
    CHECK(seen == std::set<std::string>(ids.begin(), ids.end()));
    for (int s : sizes) CHECK(s == 2);
    for (int f = 0; f < 5; ++f) CHECK(plan.fold_members(f).size() == 2);

    CHECK(cross_subject_folds(ids, 5, 42).assignment == plan.assignment);
    CHECK_FALSE(cross_subject_folds(ids, 5, 43).assignment == plan.assignment);
    CHECK_THROWS_AS(cross_subject_folds(make_ids(4), 5, 1), std::invalid_argument);
}

TEST_CASE("fold split reserves validation subjects from the training set") {
    FoldPlan plan = cross_subject_folds(make_ids(30), 5, 9);
    for (int f = 0; f < 5; ++f) {
        auto split = ema::detail::make_fold_split(plan, f, 9);
        CHECK(split.test_ids.size() == 6);
        CHECK(split.valid_ids.size() == 2);  // 10% of 24, >= 1
        CHECK(split.train_ids.size() == 22);
        std::set<std::string> all;
        for (const auto& id : split.train_ids) all.insert(id);
        for (const auto& id : split.valid_ids) all.insert(id);
        for (const auto& id : split.test_ids) all.insert(id);
        CHECK(all.size() == 30);
    }
}

TEST_CASE("auc on small hand-checked examples") {
    CHECK(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == Catch::Approx(0.75));
    CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(roc_auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
    CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    CHECK(roc_auc({0.3, 0.3, 0.7}, {0, 1, 1}) == Catch::Approx(0.75));  // one tie
    CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(roc_auc({0.1}, {0, 1}), std::invalid_argument);
}

TEST_CASE("midrank auc matches pairwise counting on random instances") {
    Rng rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 5 + rng.uniform_int(30);
        std::vector<double> s(n);
        std::vector<int> y(n);
        bool has0 = false, has1 = false;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = 0.1 * static_cast<double>(rng.uniform_int(10));  // forces ties
            y[i] = rng.uniform() < 0.4 ? 1 : 0;
            (y[i] ? has1 : has0) = true;
        }
        if (!has0 || !has1) continue;
        CHECK(roc_auc(s, y) == Catch::Approx(pairwise_auc(s, y)).margin(1e-12));
    }
}

TEST_CASE("metrics table csv layout is exact") {
    MetricsTable table;
    ExperimentCell cell{"logreg", 1, "-", false};
    CellResult res;
    res.fold_aucs = {0.5, 0.6251234};
    table.rows.emplace_back(cell, res);
    CHECK(table.to_csv() ==
          "model,N,encoding,pretrain,fold,auc\n"
          "logreg,1,-,0,0,0.500000\n"
          "logreg,1,-,0,1,0.625123\n");
    CHECK(table.find("logreg", 1).fold_aucs.size() == 2);
    CHECK_THROWS(table.find("transformer", 10));
}

TEST_CASE("run config rejects unknown keys at every level") {
    nlohmann::json base = {{"seed", 3}};
    CHECK(RunConfig::from_json(base).seed == 3);

    CHECK_THROWS_AS(RunConfig::from_json({{"sseed", 3}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"paths", "x.csv"}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"synthetic", {{"participants", 5}}}}}}),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"experiment", {{"folds", 3}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"transformer", {{"layers", 2}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"training", {{"learning_rate", 0.1}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"masking", {{"frac", 0.2}}}}), ConfigError);
}

TEST_CASE("run config validates values") {
    CHECK_THROWS_AS(
        RunConfig::from_json({{"data", {{"path", "a.csv"}, {"synthetic", {{"days", 3}}}}}}),
        ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"experiment", {{"models", {"svm"}}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"experiment", {{"encodings", {"learned"}}}}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(RunConfig::from_json({{"masking", {{"task", "two_items"}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"training", {{"epochs", 0}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"transformer", {{"d_model", 30}}}}), ConfigError);

    auto cfg = RunConfig::from_json({{"seed", 11},
                                     {"data", {{"synthetic", {{"n_participants", 8}, {"days", 3}}}}},
                                     {"experiment", {{"models", {"logreg"}}, {"k_folds", 4}}},
                                     {"masking", {{"task", "five_items"}}}});
    CHECK(cfg.synth.n_participants == 8);
    CHECK(cfg.synth.seed == derive_seed(11, 0xda7a));
    CHECK(cfg.experiment.k == 4);
    CHECK(cfg.experiment.seed == 11);
    CHECK(cfg.experiment.mask_cfg.task == MaskTask::FiveItems);
}

TEST_CASE("experiment runner produces an auc per fold") {
    SynthConfig sc;
    sc.n_participants = 12;
    sc.days = 4;
    sc.seed = 88;
    Dataset ds = generate_synthetic(sc);

    ExperimentSpec spec;
    spec.k = 3;
    spec.seed = 5;
    spec.models = {"logreg"};
    spec.train_cfg.epochs = 5;
    spec.train_cfg.seed = 5;

    MetricsTable a = run_experiment(spec, ds);
    REQUIRE(a.rows.size() == 1);
    const auto& res = a.rows[0].second;
    REQUIRE_FALSE(res.failed);
    REQUIRE(res.fold_aucs.size() == 3);
    for (double auc : res.fold_aucs) {
        CHECK(auc >= 0.0);
        CHECK(auc <= 1.0);
    }
    // sample standard deviation over folds
    double mean = (res.fold_aucs[0] + res.fold_aucs[1] + res.fold_aucs[2]) / 3.0;
    double var = 0.0;
    for (double x : res.fold_aucs) var += (x - mean) * (x - mean);
    CHECK(res.mean == Catch::Approx(mean));
    CHECK(res.stddev == Catch::Approx(std::sqrt(var / 2.0)));

    MetricsTable b = run_experiment(spec, ds);
    CHECK(a.to_csv() == b.to_csv());
}

TEST_CASE("failed cells are reported instead of aborting the run") {
    SynthConfig sc;
    sc.n_participants = 6;
    sc.days = 2;  // 8 prompts per participant
    sc.seed = 91;
    Dataset ds = generate_synthetic(sc);

    ExperimentSpec spec;
    spec.k = 3;
    spec.models = {"lstm", "logreg"};
    spec.n_values = {8};  // windows need N+1 prompts, so no windows exist
    spec.train_cfg.epochs = 2;

    MetricsTable t = run_experiment(spec, ds);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].second.failed);
    CHECK_FALSE(t.rows[0].second.error.empty());
    CHECK_FALSE(t.rows[1].second.failed);
}

TEST_CASE("attention summary per-lag mass sums to one per layer") {
    TransformerConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.dropout = 0.0;
    cfg.encoding.d_pe = 4;
    Rng rng(7);
    TransformerModel model(cfg, rng);

    Rng wrng(8);
    std::vector<WindowSample> windows;
    for (int i = 0; i < 6; ++i) windows.push_back(ema::detail::rand_window(4, wrng));

    auto summary = extract_attention_summary(model, windows);
    REQUIRE(summary.per_lag.size() == 2);
    for (const auto& lags : summary.per_lag) {
        REQUIRE(lags.size() == 4);
        double s = 0.0;
        for (double v : lags) s += v;
        CHECK(s == Catch::Approx(1.0).margin(1e-6));
    }
    REQUIRE(summary.per_feature.size() == kFeatureDim);
    double fs = 0.0;
    for (const auto& [name, w] : summary.per_feature) {
        CHECK(w >= 0.0);
        fs += w;
    }
    CHECK(fs == Catch::Approx(1.0).margin(1e-9));

    std::vector<WindowSample> single = {ema::detail::rand_window(1, wrng)};
    auto s1 = extract_attention_summary(model, single);
    for (const auto& lags : s1.per_lag) {
        REQUIRE(lags.size() == 1);
        CHECK(lags[0] == Catch::Approx(1.0).margin(1e-12));
    }
    CHECK_THROWS_AS(extract_attention_summary(model, {}), std::invalid_argument);
}
