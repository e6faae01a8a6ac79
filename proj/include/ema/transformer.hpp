#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ema/checkpoint.hpp"
#include "ema/encoding.hpp"
#include "ema/features.hpp"
#include "ema/rng.hpp"
#include "ema/tensor.hpp"

namespace ema {

struct TransformerConfig {
    int n_layers = 6;
    int n_heads = 8;
    int d_model = 64;
    int d_ff = 0;  // 0 -> 4 * d_model
    int input_dim = kFeatureDim;
    double dropout = 0.1;
    bool mean_pool = false;  // default: final-position hidden state
    EncodingStrategy encoding;

    int d_head() const { return d_model / n_heads; }
    int d_ff_eff() const { return d_ff > 0 ? d_ff : 4 * d_model; }
    // width of the input projection: concat encodings fill the remaining
    // columns up to d_model
    int d_proj() const { return encoding.is_concat() ? d_model - encoding.d_pe : d_model; }

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_model < 1 || input_dim < 1)
            throw std::invalid_argument("transformer config: dimensions must be positive");
        if (d_model % n_heads != 0)
            throw std::invalid_argument("transformer config: d_model (" + std::to_string(d_model) +
                                        ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("transformer config: dropout must be in [0,1)");
        encoding.validate();
        if (encoding.is_concat() && d_proj() < 1)
            throw std::invalid_argument("transformer config: d_pe leaves no width for features");
    }

    nlohmann::json to_json() const {
        return {{"n_layers", n_layers},     {"n_heads", n_heads},
                {"d_model", d_model},       {"d_ff", d_ff},
                {"input_dim", input_dim},   {"dropout", dropout},
                {"mean_pool", mean_pool},   {"encoding", encoding.name()},
                {"d_pe", encoding.d_pe},    {"pe_base", encoding.base},
                {"time_scale_min", encoding.time_scale_min},
                {"pe_pre_projection", encoding.pre_projection}};
    }

    static TransformerConfig from_json(const nlohmann::json& j) {
        TransformerConfig c;
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.d_ff = j.at("d_ff").get<int>();
        c.input_dim = j.at("input_dim").get<int>();
        c.dropout = j.at("dropout").get<double>();
        c.mean_pool = j.at("mean_pool").get<bool>();
        c.encoding = EncodingStrategy::parse(j.at("encoding").get<std::string>());
        c.encoding.d_pe = j.at("d_pe").get<int>();
        c.encoding.base = j.at("pe_base").get<double>();
        c.encoding.time_scale_min = j.at("time_scale_min").get<double>();
        c.encoding.pre_projection = j.at("pe_pre_projection").get<bool>();
        return c;
    }
};

// A = softmax(QK^T / sqrt(d)); output = A V. A is also returned un-dropped
// for interpretation.
struct AttentionOut {
    Tensor output;
    Tensor a;
};

inline AttentionOut scaled_dot_attention(Tape& tape, const Tensor& q, const Tensor& k,
                                         const Tensor& v) {
    if (q.cols() != k.cols() || k.cols() != v.cols() || q.rows() != k.rows() || k.rows() != v.rows())
        throw ContractError("scaled_dot_attention: Q " + shape_str(q.shape()) + ", K " +
                            shape_str(k.shape()) + ", V " + shape_str(v.shape()) + " must agree");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor scores = scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt_d);
    Tensor a = softmax_rows(tape, scores);
    return {matmul(tape, a, v), a};
}

// Per (layer, head) row-stochastic attention matrix snapshot.
struct AttentionRecord {
    int layer = 0;
    int head = 0;
    std::vector<std::vector<double>> a;  // N x N
};

class TransformerModel {
public:
    TransformerModel(TransformerConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const int dm = cfg_.d_model, dp = cfg_.d_proj(), dff = cfg_.d_ff_eff();
        add_param("input_proj_w", {static_cast<std::size_t>(cfg_.input_dim),
                                   static_cast<std::size_t>(dp)}, cfg_.input_dim, rng);
        add_param("input_proj_b", {static_cast<std::size_t>(dp)}, cfg_.input_dim, rng);
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            for (const char* w : {"wq", "wk", "wv", "wo"}) {
                add_param(p + w, {static_cast<std::size_t>(dm), static_cast<std::size_t>(dm)}, dm, rng);
                // no key bias: softmax is invariant to a per-query constant
                // shift of the logits, so K's bias would be a dead parameter
                if (std::string(w) != "wk")
                    add_param(p + w + std::string("_b"), {static_cast<std::size_t>(dm)}, dm, rng);
            }
            add_const_param(p + "ln1_gamma", {static_cast<std::size_t>(dm)}, 1.0);
            add_const_param(p + "ln1_beta", {static_cast<std::size_t>(dm)}, 0.0);
            add_param(p + "ff_w1", {static_cast<std::size_t>(dm), static_cast<std::size_t>(dff)}, dm, rng);
            add_param(p + "ff_b1", {static_cast<std::size_t>(dff)}, dm, rng);
            add_param(p + "ff_w2", {static_cast<std::size_t>(dff), static_cast<std::size_t>(dm)}, dff, rng);
            add_param(p + "ff_b2", {static_cast<std::size_t>(dm)}, dff, rng);
            add_const_param(p + "ln2_gamma", {static_cast<std::size_t>(dm)}, 1.0);
            add_const_param(p + "ln2_beta", {static_cast<std::size_t>(dm)}, 0.0);
        }
        add_param("cls_w", {static_cast<std::size_t>(dm), 1}, dm, rng);
        add_param("cls_b", {1}, dm, rng);
        add_param("imp_w", {static_cast<std::size_t>(dm), static_cast<std::size_t>(kNumItems)}, dm, rng);
        add_param("imp_b", {static_cast<std::size_t>(kNumItems)}, dm, rng);
    }

    const TransformerConfig& config() const { return cfg_; }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        out.reserve(named_.size());
        for (const auto& [name, t] : named_) out.push_back(t);
        return out;
    }
    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return named_; }

    Tensor param(const std::string& name) const {
        for (const auto& [n, t] : named_)
            if (n == name) return t;
        throw std::runtime_error("transformer: no parameter \"" + name + "\"");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named_) n += t.size();
        return n;
    }

    // Full encoder pipeline: input projection, positional/temporal encoding,
    // then n_layers of post-norm [multihead + residual + LN, FFN + residual
    // + LN]. Returns final hidden states [N, d_model].
    Tensor encode(Tape& tape, const WindowSample& window, bool train_mode, Rng* rng,
                  std::vector<AttentionRecord>* attention = nullptr) const {
        if (window.features.empty()) throw ContractError("encode: empty window");
        if (static_cast<int>(kFeatureDim) != cfg_.input_dim)
            throw ContractError("encode: config input_dim " + std::to_string(cfg_.input_dim) +
                                " does not match feature width");
        const std::size_t n = window.length();
        std::vector<double> flat;
        flat.reserve(n * kFeatureDim);
        for (const auto& f : window.features) flat.insert(flat.end(), f.begin(), f.end());
        Tensor x = Tensor::from({n, static_cast<std::size_t>(kFeatureDim)}, std::move(flat));
        return encode_tensor(tape, x, window.timestamps, train_mode, rng, attention);
    }

    // Same pipeline on an already-built [N, input_dim] tensor (may require
    // grad, e.g. for gradient checks against the inputs).
    Tensor encode_tensor(Tape& tape, const Tensor& x, const std::vector<double>& timestamps,
                         bool train_mode, Rng* rng,
                         std::vector<AttentionRecord>* attention = nullptr) const {
        if (train_mode && cfg_.dropout > 0.0 && rng == nullptr)
            throw ContractError("encode: train mode with dropout needs an rng");
        Tensor h = x;
        if (!cfg_.encoding.is_concat() && cfg_.encoding.pre_projection)
            h = apply_encoding(tape, h, timestamps, cfg_.encoding);
        h = add_row(tape, matmul(tape, h, param("input_proj_w")), param("input_proj_b"));
        if (cfg_.encoding.is_concat() || !cfg_.encoding.pre_projection)
            h = apply_encoding(tape, h, timestamps, cfg_.encoding);

        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            Tensor attn_out = multihead(tape, h, l, attention);
            if (train_mode && cfg_.dropout > 0.0) attn_out = dropout(tape, attn_out, cfg_.dropout, *rng);
            h = layer_norm(tape, add(tape, h, attn_out), param(p + "ln1_gamma"), param(p + "ln1_beta"));
            Tensor ff = add_row(tape, matmul(tape, h, param(p + "ff_w1")), param(p + "ff_b1"));
            ff = relu(tape, ff);
            ff = add_row(tape, matmul(tape, ff, param(p + "ff_w2")), param(p + "ff_b2"));
            if (train_mode && cfg_.dropout > 0.0) ff = dropout(tape, ff, cfg_.dropout, *rng);
            h = layer_norm(tape, add(tape, h, ff), param(p + "ln2_gamma"), param(p + "ln2_beta"));
            if (!h.all_finite())
                throw NumericError("encoder layer " + std::to_string(l) + " produced non-finite values");
        }
        return h;
    }

    // sigmoid(w . h_pool + b); pool = final position (or row mean if configured)
    Tensor classify(Tape& tape, const Tensor& hidden) const {
        Tensor pooled = cfg_.mean_pool ? mean_rows(tape, hidden) : row(tape, hidden, hidden.rows() - 1);
        Tensor logit = add_row(tape, matmul(tape, pooled, param("cls_w")), param("cls_b"));
        return sigmoid(tape, logit);  // [1,1]
    }

    // Per masked position: linear d_model -> |items| then sigmoid. Returns
    // [n_positions, |items|] predictions in (0,1).
    Tensor impute(Tape& tape, const Tensor& hidden, const std::vector<std::size_t>& positions,
                  const std::vector<std::size_t>& item_dims) const {
        if (positions.empty()) throw ContractError("impute: empty masked position set");
        if (item_dims.empty()) throw ContractError("impute: empty item subset");
        Tensor h = gather_rows(tape, hidden, positions);
        Tensor out = add_row(tape, matmul(tape, h, param("imp_w")), param("imp_b"));
        out = gather_cols(tape, out, item_dims);
        return sigmoid(tape, out);
    }

    Checkpoint to_checkpoint(nlohmann::json metadata = {}) const {
        Checkpoint ckpt;
        ckpt.meta = {{"format", "ema-transformer"},
                     {"config", cfg_.to_json()},
                     {"metadata", std::move(metadata)}};
        for (const auto& [name, t] : named_) ckpt.params.emplace_back(name, t.detached_copy());
        return ckpt;
    }

    static TransformerModel from_checkpoint(const Checkpoint& ckpt) {
        if (!ckpt.meta.contains("config"))
            throw std::runtime_error("checkpoint has no transformer config");
        TransformerConfig cfg = TransformerConfig::from_json(ckpt.meta.at("config"));
        Rng rng(0);
        TransformerModel m(cfg, rng);
        if (m.named_.size() != ckpt.params.size())
            throw std::runtime_error("checkpoint parameter set does not match config");
        for (std::size_t i = 0; i < m.named_.size(); ++i) {
            const auto& [name, t] = ckpt.params[i];
            if (name != m.named_[i].first || t.shape() != m.named_[i].second.shape())
                throw std::runtime_error("checkpoint parameter \"" + name + "\" does not match config");
            m.named_[i].second.data() = t.data();
        }
        return m;
    }

    void load_parameters(const std::vector<std::vector<double>>& values) {
        if (values.size() != named_.size())
            throw std::runtime_error("load_parameters: count mismatch");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i].size() != named_[i].second.size())
                throw std::runtime_error("load_parameters: size mismatch at " + named_[i].first);
            named_[i].second.data() = values[i];
        }
    }
    std::vector<std::vector<double>> snapshot_parameters() const {
        std::vector<std::vector<double>> out;
        out.reserve(named_.size());
        for (const auto& [name, t] : named_) out.push_back(t.data());
        return out;
    }

private:
    Tensor multihead(Tape& tape, const Tensor& x, int layer,
                     std::vector<AttentionRecord>* attention) const {
        const std::string p = "layer" + std::to_string(layer) + ".";
        Tensor q = add_row(tape, matmul(tape, x, param(p + "wq")), param(p + "wq_b"));
        Tensor k = matmul(tape, x, param(p + "wk"));
        Tensor v = add_row(tape, matmul(tape, x, param(p + "wv")), param(p + "wv_b"));
        const int dh = cfg_.d_head();
        Tensor concat;
        for (int h = 0; h < cfg_.n_heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(h * dh);
            auto att = scaled_dot_attention(tape,
                                            slice_cols(tape, q, off, dh),
                                            slice_cols(tape, k, off, dh),
                                            slice_cols(tape, v, off, dh));
            if (attention) {
                AttentionRecord rec;
                rec.layer = layer;
                rec.head = h;
                const std::size_t n = att.a.rows();
                rec.a.assign(n, std::vector<double>(n));
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) rec.a[i][j] = att.a.at(i, j);
                attention->push_back(std::move(rec));
            }
            concat = h == 0 ? att.output : concat_cols(tape, concat, att.output);
        }
        return add_row(tape, matmul(tape, concat, param(p + "wo")), param(p + "wo_b"));
    }

    void add_param(const std::string& name, Dims shape, int fan_in, Rng& rng) {
        Tensor t = Tensor::zeros(shape, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.data()) v = rng.uniform(-bound, bound);
        named_.emplace_back(name, std::move(t));
    }

    void add_const_param(const std::string& name, Dims shape, double value) {
        named_.emplace_back(name, Tensor::filled(shape, value, true));
    }

    TransformerConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> named_;
};

}  // namespace ema
