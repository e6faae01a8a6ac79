#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ema/rng.hpp"
#include "ema/tensor.hpp"
#include "ema/transformer.hpp"

namespace ema {

// Compares reverse-mode gradients against central finite differences for a
// scalar-valued function of the given inputs. Returns the max relative error,
// with denominator max(|analytic|, |numeric|, 1e-8). The function must be
// deterministic (no dropout) and rebuild its graph on the supplied tape.
// `corrupt` injects an error into the first analytic gradient, as a self-test
// that the comparison can actually fail.
inline double finite_diff_check(const std::function<Tensor(Tape&)>& f,
                                std::vector<Tensor> inputs, double eps = 1e-4,
                                bool corrupt = false) {
    for (auto& in : inputs) in.zero_grad();
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) analytic.push_back(in.grad());
    if (corrupt && !analytic.empty() && !analytic[0].empty()) analytic[0][0] += 0.5;

    const auto eval = [&]() {
        Tape t;
        return f(t).value();
    };

    double max_rel = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& data = inputs[k].data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + eps;
            const double fp = eval();
            data[i] = saved - eps;
            const double fm = eval();
            data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[k][i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
        }
    }
    return max_rel;
}

struct GradCheckCase {
    std::string name;
    // returns max relative error; corrupt=true must make the error large
    std::function<double(std::uint64_t seed, bool corrupt)> run;
};

namespace detail {

inline Tensor rand_tensor(Dims shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(data), true);
}

// keeps values away from the ReLU kink so finite differences are valid
inline Tensor rand_tensor_off_zero(Dims shape, Rng& rng) {
    std::vector<double> data(numel(shape));
    for (auto& v : data) {
        const double u = rng.uniform(0.2, 1.0);
        v = rng.uniform() < 0.5 ? -u : u;
    }
    return Tensor::from(std::move(shape), std::move(data), true);
}

inline WindowSample rand_window(std::size_t n, Rng& rng) {
    WindowSample w;
    w.participant_id = "gradcheck";
    w.label = rng.uniform() < 0.5 ? 0 : 1;
    double t = 540.0;
    for (std::size_t i = 0; i < n; ++i) {
        FeatureVector f{};
        for (std::size_t d = 0; d < kFeatureDim; ++d) f[d] = rng.uniform();
        f[8] = rng.uniform() < 0.3 ? 0.0 : 1.0;
        w.features.push_back(f);
        w.timestamps.push_back(t);
        t += rng.uniform(120.0, 360.0);
    }
    return w;
}

inline GradCheckCase op_case(std::string name,
                             std::function<double(Rng&, bool)> body) {
    GradCheckCase c;
    c.name = std::move(name);
    c.run = [body = std::move(body)](std::uint64_t seed, bool corrupt) {
        Rng rng(seed);
        return body(rng, corrupt);
    };
    return c;
}

// End-to-end check of the composed graph: gradient of loss(encoder(x)) with
// respect to the random input window. Parameter-side gradients of each op are
// covered by the per-op cases.
inline double model_loss_check(const TransformerConfig& cfg, std::size_t n, std::uint64_t seed,
                               bool corrupt, bool impute_head) {
    Rng rng(derive_seed(seed, 0x90de1));
    TransformerModel model(cfg, rng);
    WindowSample w = rand_window(n, rng);
    Tensor x = rand_tensor({n, static_cast<std::size_t>(cfg.input_dim)}, rng, 0.0, 1.0);
    const Tensor y = Tensor::from({1, 1}, {static_cast<double>(w.label)});
    const std::vector<std::size_t> positions = {0};
    const std::vector<std::size_t> items = {1, 3};
    Tensor target = rand_tensor({positions.size(), items.size()}, rng, 0.0, 1.0);

    auto f = [&](Tape& tape) {
        Tensor hidden = model.encode_tensor(tape, x, w.timestamps, false, nullptr);
        if (impute_head) {
            Tensor pred = model.impute(tape, hidden, positions, items);
            return mse_loss(tape, pred, target);
        }
        Tensor p = model.classify(tape, hidden);
        return bce_loss(tape, p, y);
    };
    return finite_diff_check(f, {x}, 1e-4, corrupt);
}

}  // namespace detail

// One finite-difference case per differentiable op, plus end-to-end checks of
// the full encoder with both heads.
inline std::vector<GradCheckCase> grad_check_suite() {
    using detail::op_case;
    using detail::rand_tensor;
    using detail::rand_tensor_off_zero;
    std::vector<GradCheckCase> cases;

    cases.push_back(op_case("matmul", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 2}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, matmul(t, a, b)); }, {a, b}, 1e-4, c);
    }));
    cases.push_back(op_case("transpose", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({3, 2}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, matmul(t, transpose(t, a), b)); }, {a, b}, 1e-4, c);
    }));
    cases.push_back(op_case("add", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({4, 3}, rng), b = rand_tensor({4, 3}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, mul(t, add(t, a, b), a)); }, {a, b}, 1e-4, c);
    }));
    cases.push_back(op_case("sub", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({4, 3}, rng), b = rand_tensor({4, 3}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, mul(t, sub(t, a, b), b)); }, {a, b}, 1e-4, c);
    }));
    cases.push_back(op_case("mul", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({4, 3}, rng), b = rand_tensor({4, 3}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, mul(t, a, b)); }, {a, b}, 1e-4, c);
    }));
    cases.push_back(op_case("scale", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({4, 3}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, scale(t, mul(t, a, a), -2.5)); }, {a}, 1e-4, c);
    }));
    cases.push_back(op_case("relu", [](Rng& rng, bool c) {
        Tensor a = rand_tensor_off_zero({5, 4}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, relu(t, a)); }, {a}, 1e-4, c);
    }));
    cases.push_back(op_case("sigmoid", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({5, 4}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, sigmoid(t, a)); }, {a}, 1e-4, c);
    }));
    cases.push_back(op_case("tanh", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({5, 4}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, tanh_act(t, a)); }, {a}, 1e-4, c);
    }));
    cases.push_back(op_case("add_row", [](Rng& rng, bool c) {
        Tensor x = rand_tensor({4, 3}, rng), b = rand_tensor({3}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, sigmoid(t, add_row(t, x, b))); }, {x, b}, 1e-4, c);
    }));
    cases.push_back(op_case("mul_row", [](Rng& rng, bool c) {
        Tensor x = rand_tensor({4, 3}, rng), w = rand_tensor({3}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, mul_row(t, x, w)); }, {x, w}, 1e-4, c);
    }));
    cases.push_back(op_case("concat_cols", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({3, 2}, rng), b = rand_tensor({3, 4}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, sigmoid(t, concat_cols(t, a, b))); }, {a, b}, 1e-4,
            c);
    }));
    cases.push_back(op_case("slice_cols", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({3, 6}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, mul(t, slice_cols(t, a, 1, 3), slice_cols(t, a, 3, 3))); },
            {a}, 1e-4, c);
    }));
    cases.push_back(op_case("gather_rows", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({5, 3}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, sigmoid(t, gather_rows(t, a, {0, 2, 2, 4}))); }, {a},
            1e-4, c);
    }));
    cases.push_back(op_case("gather_cols", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({3, 5}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, sigmoid(t, gather_cols(t, a, {4, 1, 1}))); }, {a},
            1e-4, c);
    }));
    cases.push_back(op_case("row", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({4, 3}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, sigmoid(t, row(t, a, 2))); }, {a}, 1e-4, c);
    }));
    cases.push_back(op_case("mean_rows", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({4, 3}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, sigmoid(t, mean_rows(t, a))); }, {a}, 1e-4, c);
    }));
    cases.push_back(op_case("softmax_rows", [](Rng& rng, bool c) {
        Tensor a = rand_tensor({3, 5}, rng), w = rand_tensor({3, 5}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, mul(t, softmax_rows(t, a), w)); }, {a, w}, 1e-4, c);
    }));
    cases.push_back(op_case("layer_norm", [](Rng& rng, bool c) {
        Tensor x = rand_tensor({4, 6}, rng), g = rand_tensor({6}, rng, 0.5, 1.5),
               b = rand_tensor({6}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, sigmoid(t, layer_norm(t, x, g, b))); }, {x, g, b},
            1e-4, c);
    }));
    cases.push_back(op_case("bce_loss", [](Rng& rng, bool c) {
        Tensor z = rand_tensor({3, 2}, rng);
        std::vector<double> ydata(6);
        for (auto& v : ydata) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        Tensor y = Tensor::from({3, 2}, std::move(ydata));
        return finite_diff_check(
            [&](Tape& t) { return bce_loss(t, sigmoid(t, z), y); }, {z}, 1e-4, c);
    }));
    cases.push_back(op_case("mse_loss", [](Rng& rng, bool c) {
        Tensor p = rand_tensor({3, 4}, rng), y = rand_tensor({3, 4}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mse_loss(t, p, y); }, {p}, 1e-4, c);
    }));
    cases.push_back(op_case("attention", [](Rng& rng, bool c) {
        Tensor q = rand_tensor({4, 3}, rng), k = rand_tensor({4, 3}, rng),
               v = rand_tensor({4, 3}, rng);
        return finite_diff_check(
            [&](Tape& t) { return mean_reduce(t, scaled_dot_attention(t, q, k, v).output); },
            {q, k, v}, 1e-4, c);
    }));

    const auto small_cfg = [](EncodingKind kind) {
        TransformerConfig cfg;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        cfg.d_model = 8;
        cfg.d_ff = 16;
        cfg.dropout = 0.0;
        cfg.encoding.kind = kind;
        cfg.encoding.d_pe = 4;
        return cfg;
    };
    GradCheckCase full2;
    full2.name = "encoder+bce (N=2, concat)";
    full2.run = [small_cfg](std::uint64_t seed, bool corrupt) {
        return detail::model_loss_check(small_cfg(EncodingKind::TemporalConcat), 2, seed, corrupt,
                                        false);
    };
    cases.push_back(full2);
    GradCheckCase full3;
    full3.name = "encoder+bce (N=3, add)";
    full3.run = [small_cfg](std::uint64_t seed, bool corrupt) {
        return detail::model_loss_check(small_cfg(EncodingKind::TemporalAdd), 3, seed, corrupt,
                                        false);
    };
    cases.push_back(full3);
    GradCheckCase imp;
    imp.name = "encoder+imputation (N=3)";
    imp.run = [small_cfg](std::uint64_t seed, bool corrupt) {
        return detail::model_loss_check(small_cfg(EncodingKind::PositionalConcat), 3, seed, corrupt,
                                        true);
    };
    cases.push_back(imp);
    return cases;
}

}  // namespace ema
