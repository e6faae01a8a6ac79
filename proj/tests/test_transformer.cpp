#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "ema/grad_check.hpp"
#include "ema/transformer.hpp"

using namespace ema;

namespace {

TransformerConfig tiny_config(const char* encoding = "time_concat") {
    TransformerConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.dropout = 0.0;
    cfg.encoding = EncodingStrategy::parse(encoding);
    cfg.encoding.d_pe = 4;
    return cfg;
}

WindowSample random_window(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return ema::detail::rand_window(n, rng);
}

}  // namespace

TEST_CASE("attention with zero queries is uniform") {
    Tape t;
    Rng rng(4);
    Tensor q = Tensor::zeros({3, 4});
    Tensor k = ema::detail::rand_tensor({3, 4}, rng);
    Tensor v = ema::detail::rand_tensor({3, 4}, rng);
    auto att = scaled_dot_attention(t, q, k, v);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(att.a.at(i, j) == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("attention at N=1 is the identity on V") {
    Tape t;
    Tensor q = Tensor::from({1, 2}, {0.3, -0.7});
    Tensor k = Tensor::from({1, 2}, {1.0, 2.0});
    Tensor v = Tensor::from({1, 2}, {5.0, -4.0});
    auto att = scaled_dot_attention(t, q, k, v);
    CHECK(att.a.at(0, 0) == 1.0);
    CHECK(att.output.at(0, 0) == 5.0);
    CHECK(att.output.at(0, 1) == -4.0);
}

TEST_CASE("attention saturates to identity for large aligned Q,K") {
    const double c = 50.0;
    Tape t;
    Tensor q = Tensor::from({2, 2}, {c, 0, 0, c});
    Tensor k = Tensor::from({2, 2}, {c, 0, 0, c});
    Tensor v = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto att = scaled_dot_attention(t, q, k, v);
    CHECK(att.a.at(0, 0) == Catch::Approx(1.0).margin(1e-6));
    CHECK(att.a.at(1, 1) == Catch::Approx(1.0).margin(1e-6));
    CHECK(att.output.at(0, 0) == Catch::Approx(1.0).margin(1e-4));
    CHECK(att.output.at(1, 1) == Catch::Approx(4.0).margin(1e-4));
}

TEST_CASE("encoder output shape is N x d_model") {
    Rng rng(1);
    TransformerModel model(tiny_config(), rng);
    for (std::size_t n : {1u, 5u, 25u}) {
        Tape t;
        Tensor h = model.encode(t, random_window(n, 100 + n), false, nullptr);
        CHECK(h.shape() == Dims{n, 8});
    }
}

TEST_CASE("eval-mode forward is deterministic") {
    Rng rng(2);
    TransformerModel model(tiny_config(), rng);
    WindowSample w = random_window(4, 9);
    Tape t1, t2;
    Tensor a = model.encode(t1, w, false, nullptr);
    Tensor b = model.encode(t2, w, false, nullptr);
    CHECK(a.data() == b.data());
}

TEST_CASE("train mode without dropout equals eval mode") {
    Rng rng(3);
    TransformerModel model(tiny_config(), rng);  // dropout 0
    WindowSample w = random_window(5, 10);
    Rng drop_rng(77);
    Tape t1, t2;
    Tensor a = model.encode(t1, w, true, &drop_rng);
    Tensor b = model.encode(t2, w, false, nullptr);
    CHECK(a.data() == b.data());
}

TEST_CASE("dropout changes training forward but not eval") {
    auto cfg = tiny_config();
    cfg.dropout = 0.4;
    Rng rng(3);
    TransformerModel model(cfg, rng);
    WindowSample w = random_window(5, 10);
    Rng d1(1), d2(2);
    Tape t1, t2, t3, t4;
    Tensor a = model.encode(t1, w, true, &d1);
    Tensor b = model.encode(t2, w, true, &d2);
    CHECK_FALSE(a.data() == b.data());
    Tensor c = model.encode(t3, w, false, nullptr);
    Tensor d = model.encode(t4, w, false, nullptr);
    CHECK(c.data() == d.data());
    CHECK_THROWS_AS(model.encode(t1, w, true, nullptr), ContractError);
}

TEST_CASE("permuting window rows changes the output") {
    Rng rng(6);
    TransformerModel model(tiny_config(), rng);
    WindowSample w = random_window(4, 11);
    WindowSample perm = w;
    std::swap(perm.features[0], perm.features[3]);
    Tape t1, t2;
    Tensor p1 = model.classify(t1, model.encode(t1, w, false, nullptr));
    Tensor p2 = model.classify(t2, model.encode(t2, perm, false, nullptr));
    CHECK(p1.value() != p2.value());
}

TEST_CASE("attention records are row-stochastic and complete") {
    auto cfg = tiny_config();
    Rng rng(8);
    TransformerModel model(cfg, rng);
    WindowSample w = random_window(6, 13);
    Tape t;
    std::vector<AttentionRecord> recs;
    model.encode(t, w, false, nullptr, &recs);
    REQUIRE(recs.size() == static_cast<std::size_t>(cfg.n_layers * cfg.n_heads));
    for (const auto& r : recs) {
        REQUIRE(r.a.size() == 6);
        for (const auto& row : r.a) {
            double s = 0.0;
            for (double v : row) {
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(s == Catch::Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("classifier closed forms") {
    Rng rng(9);
    TransformerModel model(tiny_config(), rng);
    WindowSample w = random_window(3, 14);

    SECTION("zero weights give probability one half") {
        std::fill(model.param("cls_w").data().begin(), model.param("cls_w").data().end(), 0.0);
        model.param("cls_b").data()[0] = 0.0;
        Tape t;
        CHECK(model.classify(t, model.encode(t, w, false, nullptr)).value() == 0.5);
    }
    SECTION("doubling the weights doubles the logit") {
        model.param("cls_b").data()[0] = 0.0;
        Tape t1;
        const double p1 = model.classify(t1, model.encode(t1, w, false, nullptr)).value();
        for (auto& v : model.param("cls_w").data()) v *= 2.0;
        Tape t2;
        const double p2 = model.classify(t2, model.encode(t2, w, false, nullptr)).value();
        const double logit1 = std::log(p1 / (1.0 - p1));
        const double logit2 = std::log(p2 / (1.0 - p2));
        CHECK(logit2 == Catch::Approx(2.0 * logit1).epsilon(1e-9));
    }
}

TEST_CASE("imputation head shapes and closed forms") {
    Rng rng(10);
    TransformerModel model(tiny_config(), rng);
    WindowSample w = random_window(4, 15);
    Tape t;
    Tensor h = model.encode(t, w, false, nullptr);
    Tensor one = model.impute(t, h, {2}, {5});
    CHECK(one.shape() == Dims{1, 1});
    Tensor more = model.impute(t, h, {0, 2, 3}, {1, 3, 4, 5, 6});
    CHECK(more.shape() == Dims{3, 5});
    CHECK_THROWS_AS(model.impute(t, h, {}, {1}), ContractError);
    CHECK_THROWS_AS(model.impute(t, h, {0}, {}), ContractError);

    std::fill(model.param("imp_w").data().begin(), model.param("imp_w").data().end(), 0.0);
    std::fill(model.param("imp_b").data().begin(), model.param("imp_b").data().end(), 0.0);
    Tape t2;
    Tensor z = model.impute(t2, model.encode(t2, w, false, nullptr), {0, 1}, {0, 7});
    for (double v : z.data()) CHECK(v == 0.5);
}

TEST_CASE("default configuration parameter count is frozen") {
    TransformerConfig cfg;  // 6 layers, 8 heads, d_model 64, d_pe 16 concat
    Rng rng(1);
    TransformerModel model(cfg, rng);
    CHECK(model.parameter_count() == 301113);
}

TEST_CASE("mean pooling option changes only the pooled row") {
    auto cfg = tiny_config();
    cfg.mean_pool = true;
    Rng rng(12);
    TransformerModel model(cfg, rng);
    WindowSample w = random_window(4, 16);
    Tape t;
    Tensor h = model.encode(t, w, false, nullptr);
    Tensor p = model.classify(t, h);
    CHECK(p.shape() == Dims{1, 1});
    CHECK(p.value() > 0.0);
    CHECK(p.value() < 1.0);
}

TEST_CASE("checkpoint round-trip is bitwise identical") {
    Rng rng(13);
    TransformerModel model(tiny_config("pos_add"), rng);
    Checkpoint ckpt = model.to_checkpoint({{"note", "unit"}});
    const std::string path = "/tmp/ema_test_ckpt.bin";
    save_checkpoint(ckpt, path);
    Checkpoint back = load_checkpoint(path);
    CHECK(ckpt.bitwise_equal(back));

    TransformerModel restored = TransformerModel::from_checkpoint(back);
    WindowSample w = random_window(3, 17);
    Tape t1, t2;
    Tensor a = model.classify(t1, model.encode(t1, w, false, nullptr));
    Tensor b = restored.classify(t2, restored.encode(t2, w, false, nullptr));
    CHECK(a.value() == b.value());
    std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoint files are rejected") {
    const std::string path = "/tmp/ema_test_bad_ckpt.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "definitely not a checkpoint";
    }
    CHECK_THROWS(load_checkpoint(path));
    CHECK_THROWS(load_checkpoint("/tmp/does_not_exist_ckpt.bin"));
    std::remove(path.c_str());
}

TEST_CASE("encoder output is finite across many random windows") {
    Rng rng(14);
    TransformerModel model(tiny_config("time_add"), rng);
    Rng wrng(15);
    for (int i = 0; i < 10000; ++i) {
        const std::size_t n = 1 + wrng.uniform_int(6);
        WindowSample w = ema::detail::rand_window(n, wrng);
        Tape t;
        Tensor h = model.encode(t, w, false, nullptr);
        if (!h.all_finite()) {
            FAIL("non-finite encoder output at draw " << i);
        }
    }
    SUCCEED();
}

TEST_CASE("config validation rejects bad shapes") {
    TransformerConfig cfg;
    cfg.d_model = 30;
    cfg.n_heads = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TransformerConfig{};
    cfg.encoding.d_pe = cfg.d_model;  // leaves no feature width
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TransformerConfig{};
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("config json round-trip") {
    auto cfg = tiny_config("time_add");
    cfg.mean_pool = true;
    cfg.encoding.time_scale_min = 120.0;
    auto back = TransformerConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
}
