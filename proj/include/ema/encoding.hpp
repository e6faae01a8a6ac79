#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ema/tensor.hpp"

namespace ema {

enum class EncodingKind { PositionalAdd, PositionalConcat, TemporalAdd, TemporalConcat };

struct EncodingStrategy {
    EncodingKind kind = EncodingKind::TemporalConcat;
    int d_pe = 16;             // concat kinds only
    double base = 10000.0;
    double time_scale_min = 240.0;  // minutes per unit for temporal kinds
    bool pre_projection = false;    // add kinds: inject before the input projection

    bool is_concat() const {
        return kind == EncodingKind::PositionalConcat || kind == EncodingKind::TemporalConcat;
    }
    bool is_temporal() const {
        return kind == EncodingKind::TemporalAdd || kind == EncodingKind::TemporalConcat;
    }

    void validate() const {
        if (base <= 1.0) throw std::invalid_argument("encoding: base must be > 1");
        if (is_concat() && (d_pe < 2 || d_pe % 2 != 0))
            throw std::invalid_argument("encoding: d_pe must be even and >= 2 for concat kinds");
        if (time_scale_min <= 0.0) throw std::invalid_argument("encoding: time scale must be positive");
    }

    std::string name() const {
        switch (kind) {
            case EncodingKind::PositionalAdd: return "pos_add";
            case EncodingKind::PositionalConcat: return "pos_concat";
            case EncodingKind::TemporalAdd: return "time_add";
            case EncodingKind::TemporalConcat: return "time_concat";
        }
        return "?";
    }

    static EncodingStrategy parse(const std::string& s) {
        EncodingStrategy e;
        if (s == "pos_add") e.kind = EncodingKind::PositionalAdd;
        else if (s == "pos_concat") e.kind = EncodingKind::PositionalConcat;
        else if (s == "time_add") e.kind = EncodingKind::TemporalAdd;
        else if (s == "time_concat") e.kind = EncodingKind::TemporalConcat;
        else throw std::invalid_argument("unknown encoding \"" + s +
                                         "\" (expected pos_add|pos_concat|time_add|time_concat)");
        return e;
    }
};

// out[2i] = sin(value / base^(2i/d)), out[2i+1] = cos(value / base^(2i/d))
inline std::vector<double> sinusoidal_pe(double value, int d, double base = 10000.0) {
    if (d < 2 || d % 2 != 0)
        throw ContractError("sinusoidal_pe: dimension must be even and >= 2, got " + std::to_string(d));
    std::vector<double> out(d);
    for (int i = 0; i < d / 2; ++i) {
        const double freq = std::pow(base, 2.0 * i / d);
        out[2 * i] = std::sin(value / freq);
        out[2 * i + 1] = std::cos(value / freq);
    }
    return out;
}

// Positions 1..N for positional kinds; scaled offsets from the window's
// first prompt for temporal kinds (consecutive prompts advance ~1 unit at
// the default 4h scale, matching positional granularity).
inline std::vector<double> encoding_values(const EncodingStrategy& strategy, std::size_t n,
                                           const std::vector<double>& timestamps) {
    std::vector<double> vals(n);
    if (strategy.is_temporal()) {
        if (timestamps.size() != n)
            throw ShapeError("encoding_values: " + std::to_string(timestamps.size()) +
                             " timestamps for sequence length " + std::to_string(n));
        for (std::size_t i = 0; i < n; ++i)
            vals[i] = (timestamps[i] - timestamps[0]) / strategy.time_scale_min + 1.0;
    } else {
        for (std::size_t i = 0; i < n; ++i) vals[i] = static_cast<double>(i + 1);
    }
    return vals;
}

// Constant [n, d] matrix of sinusoidal encodings for the given values.
inline Tensor pe_matrix(const std::vector<double>& values, int d, double base) {
    Tensor out = Tensor::zeros({values.size(), static_cast<std::size_t>(d)});
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto pe = sinusoidal_pe(values[i], d, base);
        for (int j = 0; j < d; ++j) out.at(i, j) = pe[j];
    }
    return out;
}

// Row-wise injection. Add kinds require the PE width to equal the input
// width; concat kinds append d_pe columns, leaving the input columns intact.
inline Tensor apply_encoding(Tape& tape, const Tensor& x, const std::vector<double>& timestamps,
                             const EncodingStrategy& strategy) {
    strategy.validate();
    const std::size_t n = x.rows();
    const auto vals = encoding_values(strategy, n, timestamps);
    if (strategy.is_concat()) {
        return concat_cols(tape, x, pe_matrix(vals, strategy.d_pe, strategy.base));
    }
    const int d = static_cast<int>(x.cols());
    if (d % 2 != 0)
        throw ContractError("apply_encoding: additive injection needs an even width, got " +
                            std::to_string(d));
    return add(tape, x, pe_matrix(vals, d, strategy.base));
}

}  // namespace ema
