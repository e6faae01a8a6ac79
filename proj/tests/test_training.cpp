#include <catch2/catch_amalgamated.hpp>

#include "ema/eval.hpp"
#include "ema/grad_check.hpp"
#include "ema/training.hpp"

using namespace ema;

namespace {

TransformerConfig tiny_config() {
    TransformerConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.dropout = 0.0;
    cfg.encoding.d_pe = 4;
    return cfg;
}

std::vector<WindowSample> random_windows(std::size_t count, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<WindowSample> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(ema::detail::rand_window(n, rng));
    return out;
}

// windows whose first feature of the last row separates the classes
std::vector<WindowSample> separable_windows(std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<WindowSample> out;
    for (std::size_t i = 0; i < count; ++i) {
        WindowSample w = ema::detail::rand_window(1, rng);
        w.label = i % 2 == 0 ? 1 : 0;
        w.features.back()[0] = (w.label ? 0.8 : 0.2) + rng.uniform(-0.05, 0.05);
        out.push_back(w);
    }
    return out;
}

}  // namespace

TEST_CASE("zero learning rate leaves the model bitwise unchanged") {
    auto train = random_windows(12, 1, 3);
    TrainConfig tc;
    tc.lr = 0.0;
    tc.epochs = 3;
    tc.seed = 5;
    auto trained = train_logreg(train, {}, tc);

    Rng fresh_rng(derive_seed(tc.seed, 0x109e));
    LogRegModel fresh(BaselineOptions{}, fresh_rng);
    CHECK(trained.weights().data() == fresh.weights().data());
}

TEST_CASE("training is bitwise reproducible per seed") {
    auto train = random_windows(20, 3, 11);
    auto valid = random_windows(5, 3, 12);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 8;
    tc.seed = 21;
    auto cfg = tiny_config();
    auto a = finetune(cfg, nullptr, train, valid, tc);
    auto b = finetune(cfg, nullptr, train, valid, tc);
    CHECK(a.checkpoint.bitwise_equal(b.checkpoint));
    tc.seed = 22;
    auto c = finetune(cfg, nullptr, train, valid, tc);
    CHECK_FALSE(a.checkpoint.bitwise_equal(c.checkpoint));
}

TEST_CASE("logistic regression separates a separable problem") {
    auto train = separable_windows(60, 31);
    auto valid = separable_windows(12, 32);
    TrainConfig tc;
    tc.lr = 0.3;
    tc.epochs = 200;
    tc.batch_size = 16;
    tc.patience = 200;
    tc.seed = 2;
    BaselineOptions opts;
    opts.use_summary = false;
    auto model = train_logreg(train, valid, tc, opts);
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& w : train) {
        scores.push_back(model.predict(w));
        labels.push_back(w.label);
    }
    CHECK(roc_auc(scores, labels) == 1.0);
}

TEST_CASE("lstm backpropagation through time matches finite differences") {
    Rng rng(41);
    LstmModel model(4, 3, rng);
    Tensor x = ema::detail::rand_tensor({3, 4}, rng);
    Tensor y = Tensor::from({1, 1}, {1.0});
    auto f = [&](Tape& t) { return bce_loss(t, model.forward_prob(t, x), y); };
    std::vector<Tensor> inputs = model.parameters();
    inputs.push_back(x);
    CHECK(finite_diff_check(f, inputs) < 1e-4);
    CHECK(finite_diff_check(f, inputs, 1e-4, true) >= 1e-4);  // self-test
}

TEST_CASE("attention-lstm gradients match finite differences") {
    Rng rng(43);
    AttentionLstmModel model(4, 2, rng);
    Tensor x = ema::detail::rand_tensor({3, 4}, rng);
    Tensor y = Tensor::from({1, 1}, {0.0});
    auto f = [&](Tape& t) { return bce_loss(t, model.forward_prob(t, x), y); };
    CHECK(finite_diff_check(f, model.parameters()) < 1e-4);
    auto ws = model.attention_weights();
    double s = 0.0;
    for (double v : ws) s += v;
    CHECK(s == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("masked imputation loss is the mse over masked targets") {
    Rng rng(51);
    TransformerModel model(tiny_config(), rng);
    WindowSample w = random_windows(1, 4, 52)[0];
    for (auto& f : w.features) f[8] = 1.0;

    MaskedWindow mw;
    mw.window = w;
    mw.positions = {0, 2};
    const std::vector<std::size_t> items = {1};
    for (std::size_t p : mw.positions) {
        mw.targets.push_back({w.features[p][1]});
        mw.window.features[p][1] = -1.0;
    }
    Tape t1;
    const double loss = masked_imputation_loss(t1, model, mw, items, false, nullptr).value();

    Tape t2;
    Tensor pred = model.impute(t2, model.encode(t2, mw.window, false, nullptr), mw.positions, items);
    double manual = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
        const double d = pred.at(r, 0) - mw.targets[r][0];
        manual += d * d;
    }
    manual /= 2.0;
    CHECK(loss == manual);

    MaskedWindow empty;
    empty.window = w;
    Tape t3;
    CHECK_FALSE(masked_imputation_loss(t3, model, empty, items, false, nullptr).defined());
}

TEST_CASE("pretraining then finetuning runs end to end") {
    auto train = random_windows(24, 4, 61);
    auto valid = random_windows(6, 4, 62);
    auto cfg = tiny_config();
    MaskingConfig mc;
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.seed = 63;

    auto pt = pretrain(cfg, train, valid, mc, tc);
    CHECK(pt.checkpoint.meta.at("metadata").at("task") == "pretrain-imputation");
    REQUIRE(pt.item_mse.count("happy") == 1);
    CHECK(pt.item_mse.at("happy") >= 0.0);
    CHECK_FALSE(pt.log.empty());

    auto ft = finetune(cfg, &pt.checkpoint, train, valid, tc);
    CHECK(ft.checkpoint.meta.at("metadata").at("task") == "finetune-from-pretrained");
    CHECK(std::isfinite(ft.best_valid_loss));

    TransformerModel model = TransformerModel::from_checkpoint(ft.checkpoint);
    const double p = transformer_score(model, valid[0]);
    CHECK(p > 0.0);
    CHECK(p < 1.0);

    auto other = cfg;
    other.n_heads = 4;
    CHECK_THROWS_AS(finetune(other, &pt.checkpoint, train, valid, tc), std::invalid_argument);
}

TEST_CASE("pretraining is deterministic per seed") {
    auto train = random_windows(10, 3, 71);
    auto cfg = tiny_config();
    MaskingConfig mc;
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 72;
    auto a = pretrain(cfg, train, {}, mc, tc);
    auto b = pretrain(cfg, train, {}, mc, tc);
    CHECK(a.checkpoint.bitwise_equal(b.checkpoint));
}

TEST_CASE("train config validation") {
    TrainConfig tc;
    tc.epochs = 0;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
    tc = TrainConfig{};
    tc.lr = -1.0;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}
