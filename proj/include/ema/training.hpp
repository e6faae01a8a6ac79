#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ema/adam.hpp"
#include "ema/masking.hpp"
#include "ema/transformer.hpp"

namespace ema {

struct TrainConfig {
    double lr = 1e-3;
    int epochs = 100;
    int batch_size = 64;
    std::uint64_t seed = 1;
    int patience = 5;
    double l2 = 0.0;                    // logistic regression only
    std::size_t max_train_windows = 0;  // 0 = use all

    void validate() const {
        if (lr < 0.0 || epochs < 1 || batch_size < 1 || patience < 0)
            throw std::invalid_argument("train config: values must be positive");
    }
};

struct EpochLog {
    int epoch = 0;
    std::string split;
    double loss = 0.0;
};

namespace detail {

inline std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.data());
    return out;
}

inline void restore(std::vector<Tensor>& params, const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].data() = snap[i];
}

// Generic minibatch loop with validation-based early stopping and
// best-checkpoint restore. sample_loss builds one sample's scalar loss on
// the given tape (train mode); valid_loss evaluates the whole validation
// split in eval mode.
struct FitSpec {
    std::function<Tensor(Tape&, std::size_t index, Rng& rng)> sample_loss;
    std::function<void(int epoch)> on_epoch_start;                 // optional
    std::function<double()> valid_loss;                            // optional
    std::function<void(std::vector<Tensor>&)> adjust_grads;        // optional (e.g. L2)
    std::size_t n_train = 0;
};

inline double fit(std::vector<Tensor> params, const FitSpec& spec, const TrainConfig& cfg,
                  std::vector<EpochLog>* logs) {
    cfg.validate();
    Adam opt(params, AdamConfig{cfg.lr});
    std::vector<std::size_t> order(spec.n_train);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_valid = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_snap;
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (spec.on_epoch_start) spec.on_epoch_start(epoch);
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5f0f, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng train_rng(derive_seed(cfg.seed, 0xd0d0, static_cast<std::uint64_t>(epoch)));

        double epoch_loss = 0.0;
        std::size_t n_seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            opt.zero_grad();
            double batch_loss = 0.0;
            std::size_t batch_n = 0;
            for (std::size_t q = start; q < end; ++q) {
                Tape tape;
                Tensor loss = spec.sample_loss(tape, order[q], train_rng);
                if (!loss.defined()) continue;  // sample contributed nothing (e.g. no mask)
                ++batch_n;
                batch_loss += loss.value();
                tape.backward(loss);
            }
            if (batch_n == 0) continue;
            // average gradients over the batch
            for (auto& p : params) {
                auto& g = p.grad();
                for (auto& v : g) v /= static_cast<double>(batch_n);
            }
            if (spec.adjust_grads) spec.adjust_grads(params);
            if (!std::isfinite(batch_loss))
                throw NumericError("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch));
            opt.step();
            epoch_loss += batch_loss;
            n_seen += batch_n;
        }
        const double mean_train = n_seen ? epoch_loss / static_cast<double>(n_seen)
                                         : std::numeric_limits<double>::quiet_NaN();
        if (logs) logs->push_back({epoch, "train", mean_train});

        if (spec.valid_loss) {
            const double vl = spec.valid_loss();
            if (logs) logs->push_back({epoch, "valid", vl});
            if (vl < best_valid) {
                best_valid = vl;
                best_snap = snapshot(params);
                since_best = 0;
            } else if (++since_best > cfg.patience) {
                break;
            }
        }
    }
    if (!best_snap.empty()) restore(params, best_snap);
    return best_valid;
}

inline Tensor window_input(const WindowSample& w) {
    std::vector<double> flat;
    flat.reserve(w.length() * kFeatureDim);
    for (const auto& f : w.features) flat.insert(flat.end(), f.begin(), f.end());
    return Tensor::from({w.length(), static_cast<std::size_t>(kFeatureDim)}, std::move(flat));
}

}  // namespace detail

// ---- transformer pre-training (masked imputation) ----

struct PretrainResult {
    Checkpoint checkpoint;
    std::map<std::string, double> item_mse;  // held-out imputation error per item
    std::vector<EpochLog> log;
    std::size_t skipped_windows = 0;
};

// Scalar MSE over masked (position, item) targets of one corrupted window;
// undefined tensor when nothing was masked.
inline Tensor masked_imputation_loss(Tape& tape, const TransformerModel& model,
                                     const MaskedWindow& mw,
                                     const std::vector<std::size_t>& item_dims, bool train_mode,
                                     Rng* rng) {
    if (mw.positions.empty()) return Tensor();
    Tensor hidden = model.encode(tape, mw.window, train_mode, rng);
    Tensor pred = model.impute(tape, hidden, mw.positions, item_dims);
    std::vector<double> tdata;
    tdata.reserve(mw.positions.size() * item_dims.size());
    for (const auto& row : mw.targets) tdata.insert(tdata.end(), row.begin(), row.end());
    Tensor target = Tensor::from({mw.positions.size(), item_dims.size()}, std::move(tdata));
    return mse_loss(tape, pred, target);
}

inline PretrainResult pretrain(const TransformerConfig& cfg,
                               const std::vector<WindowSample>& train,
                               const std::vector<WindowSample>& valid,
                               const MaskingConfig& mask_cfg, const TrainConfig& train_cfg) {
    cfg.validate();
    mask_cfg.validate();
    Rng init_rng(derive_seed(train_cfg.seed, 0x1217));
    TransformerModel model(cfg, init_rng);
    const auto item_dims = mask_cfg.task_items();

    PretrainResult result;
    std::vector<MaskedWindow> masked_train(train.size());
    // validation masks stay fixed so epoch losses are comparable
    std::vector<MaskedWindow> masked_valid;
    {
        Rng mask_rng(derive_seed(train_cfg.seed, 0xe7a1));
        MaskingStats st;
        for (const auto& w : valid) masked_valid.push_back(apply_masking(w, mask_cfg, mask_rng, &st));
    }

    detail::FitSpec spec;
    spec.n_train = train.size();
    spec.on_epoch_start = [&](int epoch) {
        if (epoch > 0 && !mask_cfg.resample_each_epoch) return;
        MaskingStats st;
        Rng mask_rng(derive_seed(train_cfg.seed, 0x3a5c,
                                 mask_cfg.resample_each_epoch ? static_cast<std::uint64_t>(epoch) : 0));
        for (std::size_t i = 0; i < train.size(); ++i)
            masked_train[i] = apply_masking(train[i], mask_cfg, mask_rng, &st);
        result.skipped_windows += st.skipped_windows;
    };
    spec.sample_loss = [&](Tape& tape, std::size_t i, Rng& rng) {
        return masked_imputation_loss(tape, model, masked_train[i], item_dims, true, &rng);
    };
    if (!valid.empty()) {
        spec.valid_loss = [&]() {
            double s = 0.0;
            std::size_t n = 0;
            for (const auto& mw : masked_valid) {
                Tape tape;
                Tensor loss = masked_imputation_loss(tape, model, mw, item_dims, false, nullptr);
                if (!loss.defined()) continue;
                s += loss.value();
                ++n;
            }
            return n ? s / static_cast<double>(n) : std::numeric_limits<double>::infinity();
        };
    }
    detail::fit(model.parameters(), spec, train_cfg, &result.log);

    // held-out per-item imputation error
    std::map<std::string, std::vector<double>> sq_err;
    const auto& eval_set = masked_valid;
    for (const auto& mw : eval_set) {
        if (mw.positions.empty()) continue;
        Tape tape;
        Tensor hidden = model.encode(tape, mw.window, false, nullptr);
        Tensor pred = model.impute(tape, hidden, mw.positions, item_dims);
        for (std::size_t r = 0; r < mw.positions.size(); ++r)
            for (std::size_t c = 0; c < item_dims.size(); ++c) {
                const double d = pred.at(r, c) - mw.targets[r][c];
                sq_err[kItemNames[item_dims[c]]].push_back(d * d);
            }
    }
    for (const auto& [item, errs] : sq_err) {
        double s = 0.0;
        for (double e : errs) s += e;
        result.item_mse[item] = errs.empty() ? 0.0 : s / static_cast<double>(errs.size());
    }

    nlohmann::json meta = {{"task", "pretrain-imputation"},
                           {"seed", train_cfg.seed},
                           {"epochs", train_cfg.epochs}};
    result.checkpoint = model.to_checkpoint(meta);
    return result;
}

// ---- fine-tuning (non-response classification) ----

struct FinetuneResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
    double best_valid_loss = std::numeric_limits<double>::infinity();
};

inline FinetuneResult finetune(const TransformerConfig& cfg, const Checkpoint* init,
                               const std::vector<WindowSample>& train,
                               const std::vector<WindowSample>& valid,
                               const TrainConfig& train_cfg) {
    cfg.validate();
    std::optional<TransformerModel> model;
    if (init) {
        model.emplace(TransformerModel::from_checkpoint(*init));
        const auto init_cfg = TransformerConfig::from_json(init->meta.at("config"));
        if (init_cfg.to_json() != cfg.to_json())
            throw std::invalid_argument("finetune: checkpoint config does not match requested config");
    } else {
        Rng init_rng(derive_seed(train_cfg.seed, 0x1217));
        model.emplace(cfg, init_rng);
    }

    detail::FitSpec spec;
    spec.n_train = train.size();
    spec.sample_loss = [&](Tape& tape, std::size_t i, Rng& rng) {
        Tensor hidden = model->encode(tape, train[i], true, &rng);
        Tensor p = model->classify(tape, hidden);
        return bce_loss(tape, p, Tensor::from({1, 1}, {static_cast<double>(train[i].label)}));
    };
    if (!valid.empty()) {
        spec.valid_loss = [&]() {
            double s = 0.0;
            for (const auto& w : valid) {
                Tape tape;
                Tensor hidden = model->encode(tape, w, false, nullptr);
                Tensor p = model->classify(tape, hidden);
                s += bce_loss(tape, p, Tensor::from({1, 1}, {static_cast<double>(w.label)})).value();
            }
            return s / static_cast<double>(valid.size());
        };
    }
    FinetuneResult result;
    result.best_valid_loss = detail::fit(model->parameters(), spec, train_cfg, &result.log);
    nlohmann::json meta = {{"task", init ? "finetune-from-pretrained" : "finetune-from-scratch"},
                           {"seed", train_cfg.seed},
                           {"epochs", train_cfg.epochs}};
    result.checkpoint = model->to_checkpoint(meta);
    return result;
}

inline double transformer_score(const TransformerModel& model, const WindowSample& w) {
    Tape tape;
    Tensor hidden = model.encode(tape, w, false, nullptr);
    return model.classify(tape, hidden).value();
}

// ---- baselines ----

enum class BaselineKind { LogReg, VanillaLSTM, AttentionLSTM };

inline std::string baseline_name(BaselineKind k) {
    switch (k) {
        case BaselineKind::LogReg: return "logreg";
        case BaselineKind::VanillaLSTM: return "lstm";
        case BaselineKind::AttentionLSTM: return "attention_lstm";
    }
    return "?";
}

struct BaselineOptions {
    bool use_summary = true;  // logreg: include dims 10..19
    int lstm_hidden = 64;
};

// Logistic regression on a single feature vector (the window's last row).
class LogRegModel {
public:
    LogRegModel(BaselineOptions opts, Rng& rng) : opts_(opts) {
        dims_.clear();
        const int n_dims = opts.use_summary ? kFeatureDim : 10;
        for (int d = 0; d < n_dims; ++d) dims_.push_back(d);
        w_ = Tensor::zeros({dims_.size(), 1}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims_.size()));
        for (auto& v : w_.data()) v = rng.uniform(-bound, bound);
        b_ = Tensor::zeros({1}, true);
    }

    Tensor forward(Tape& tape, const Tensor& x_rows) const {
        return sigmoid(tape, add_row(tape, matmul(tape, x_rows, w_), b_));
    }

    Tensor input_matrix(const std::vector<WindowSample>& ws) const {
        std::vector<double> flat;
        flat.reserve(ws.size() * dims_.size());
        for (const auto& w : ws) {
            const FeatureVector& f = w.features.back();
            for (int d : dims_) flat.push_back(f[d]);
        }
        return Tensor::from({ws.size(), dims_.size()}, std::move(flat));
    }

    double predict(const WindowSample& w) const {
        Tape tape;
        return forward(tape, input_matrix({w})).value();
    }

    std::vector<Tensor> parameters() { return {w_, b_}; }
    Tensor weights() const { return w_; }

private:
    BaselineOptions opts_;
    std::vector<int> dims_;
    Tensor w_, b_;
};

inline LogRegModel train_logreg(const std::vector<WindowSample>& train,
                                const std::vector<WindowSample>& valid, const TrainConfig& cfg,
                                BaselineOptions opts = {}) {
    Rng init_rng(derive_seed(cfg.seed, 0x109e));
    LogRegModel model(opts, init_rng);

    const auto batch_loss = [&](Tape& tape, const std::vector<WindowSample>& ws) {
        std::vector<double> labels;
        labels.reserve(ws.size());
        for (const auto& w : ws) labels.push_back(static_cast<double>(w.label));
        Tensor p = model.forward(tape, model.input_matrix(ws));
        return bce_loss(tape, p, Tensor::from({ws.size(), 1}, std::move(labels)));
    };

    detail::FitSpec spec;
    spec.n_train = train.size();
    spec.sample_loss = [&](Tape& tape, std::size_t i, Rng&) {
        return batch_loss(tape, {train[i]});
    };
    if (!valid.empty()) {
        spec.valid_loss = [&]() {
            Tape tape;
            return batch_loss(tape, valid).value();
        };
    }
    if (cfg.l2 > 0.0) {
        Tensor w = model.weights();
        spec.adjust_grads = [w, l2 = cfg.l2](std::vector<Tensor>& params) mutable {
            (void)params;
            auto& g = w.grad();
            for (std::size_t i = 0; i < w.size(); ++i) g[i] += 2.0 * l2 * w.data()[i];
        };
    }
    detail::fit(model.parameters(), spec, cfg, nullptr);
    return model;
}

// Single-layer LSTM; final hidden state through a sigmoid readout.
class LstmModel {
public:
    LstmModel(int input_dim, int hidden, Rng& rng) : in_(input_dim), h_(hidden) {
        wx_ = init({static_cast<std::size_t>(in_), static_cast<std::size_t>(4 * h_)}, in_, rng);
        wh_ = init({static_cast<std::size_t>(h_), static_cast<std::size_t>(4 * h_)}, h_, rng);
        b_ = init({static_cast<std::size_t>(4 * h_)}, h_, rng);
        out_w_ = init({static_cast<std::size_t>(h_), 1}, h_, rng);
        out_b_ = init({1}, h_, rng);
    }

    // hidden state after consuming rows first..last of x (step = +1 or -1)
    Tensor run(Tape& tape, const Tensor& x, bool reverse = false) const {
        const std::size_t n = x.rows();
        Tensor h = Tensor::zeros({1, static_cast<std::size_t>(h_)});
        Tensor c = Tensor::zeros({1, static_cast<std::size_t>(h_)});
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t t = reverse ? n - 1 - s : s;
            Tensor xt = row(tape, x, t);
            Tensor gates = add_row(tape, add(tape, matmul(tape, xt, wx_), matmul(tape, h, wh_)), b_);
            Tensor ig = sigmoid(tape, slice_cols(tape, gates, 0, h_));
            Tensor fg = sigmoid(tape, slice_cols(tape, gates, h_, h_));
            Tensor gg = tanh_act(tape, slice_cols(tape, gates, 2 * h_, h_));
            Tensor og = sigmoid(tape, slice_cols(tape, gates, 3 * h_, h_));
            c = add(tape, mul(tape, fg, c), mul(tape, ig, gg));
            h = mul(tape, og, tanh_act(tape, c));
        }
        return h;
    }

    Tensor forward_prob(Tape& tape, const Tensor& x) const {
        Tensor h = run(tape, x);
        return sigmoid(tape, add_row(tape, matmul(tape, h, out_w_), out_b_));
    }

    double predict(const WindowSample& w) const {
        Tape tape;
        return forward_prob(tape, detail::window_input(w)).value();
    }

    std::vector<Tensor> parameters() { return {wx_, wh_, b_, out_w_, out_b_}; }

private:
    static Tensor init(Dims shape, int fan_in, Rng& rng) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.data()) v = rng.uniform(-bound, bound);
        return t;
    }
    int in_, h_;
    Tensor wx_, wh_, b_, out_w_, out_b_;
    friend class AttentionLstmModel;
};

// Learned per-feature attention applied to the inputs, then a bidirectional
// LSTM; both final states feed the readout.
class AttentionLstmModel {
public:
    AttentionLstmModel(int input_dim, int hidden, Rng& rng)
        : in_(input_dim), fwd_(input_dim, hidden, rng), bwd_(input_dim, hidden, rng) {
        att_ = Tensor::zeros({1, static_cast<std::size_t>(in_)}, true);
        out_w_ = LstmModel::init({static_cast<std::size_t>(2 * hidden), 1}, 2 * hidden, rng);
        out_b_ = LstmModel::init({1}, hidden, rng);
    }

    Tensor forward_prob(Tape& tape, const Tensor& x) const {
        Tensor a = softmax_rows(tape, att_);  // [1, in]
        Tensor ones = Tensor::filled({x.rows(), 1}, 1.0);
        Tensor weighted = mul(tape, x, matmul(tape, ones, a));
        Tensor hf = fwd_.run(tape, weighted, false);
        Tensor hb = bwd_.run(tape, weighted, true);
        Tensor h = concat_cols(tape, hf, hb);
        return sigmoid(tape, add_row(tape, matmul(tape, h, out_w_), out_b_));
    }

    double predict(const WindowSample& w) const {
        Tape tape;
        return forward_prob(tape, detail::window_input(w)).value();
    }

    // softmaxed per-feature weights, for inspection
    std::vector<double> attention_weights() const {
        Tape tape;
        Tensor a = softmax_rows(tape, att_.detached_copy());
        return a.data();
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out = {att_, out_w_, out_b_};
        for (auto& p : fwd_.parameters()) out.push_back(p);
        for (auto& p : bwd_.parameters()) out.push_back(p);
        return out;
    }

private:
    int in_;
    Tensor att_, out_w_, out_b_;
    LstmModel fwd_, bwd_;
};

template <typename Model>
Model train_sequence_baseline(Model model, const std::vector<WindowSample>& train,
                              const std::vector<WindowSample>& valid, const TrainConfig& cfg) {
    detail::FitSpec spec;
    spec.n_train = train.size();
    spec.sample_loss = [&](Tape& tape, std::size_t i, Rng&) {
        Tensor p = model.forward_prob(tape, detail::window_input(train[i]));
        return bce_loss(tape, p, Tensor::from({1, 1}, {static_cast<double>(train[i].label)}));
    };
    if (!valid.empty()) {
        spec.valid_loss = [&]() {
            double s = 0.0;
            for (const auto& w : valid) {
                Tape tape;
                Tensor p = model.forward_prob(tape, detail::window_input(w));
                s += bce_loss(tape, p, Tensor::from({1, 1}, {static_cast<double>(w.label)})).value();
            }
            return s / static_cast<double>(valid.size());
        };
    }
    detail::fit(model.parameters(), spec, cfg, nullptr);
    return model;
}

inline LstmModel train_vanilla_lstm(const std::vector<WindowSample>& train,
                                    const std::vector<WindowSample>& valid, const TrainConfig& cfg,
                                    BaselineOptions opts = {}) {
    Rng init_rng(derive_seed(cfg.seed, 0x157b));
    return train_sequence_baseline(LstmModel(kFeatureDim, opts.lstm_hidden, init_rng), train, valid, cfg);
}

inline AttentionLstmModel train_attention_lstm(const std::vector<WindowSample>& train,
                                               const std::vector<WindowSample>& valid,
                                               const TrainConfig& cfg, BaselineOptions opts = {}) {
    Rng init_rng(derive_seed(cfg.seed, 0xa77b));
    return train_sequence_baseline(AttentionLstmModel(kFeatureDim, opts.lstm_hidden, init_rng), train,
                                   valid, cfg);
}

}  // namespace ema
