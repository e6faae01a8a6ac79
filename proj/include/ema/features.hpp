#pragma once

#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ema/data.hpp"

namespace ema {

// Fixed 20-dim feature layout:
//   [0..7]   emotion items normalized (v-1)/4, zero when the prompt was missed
//   [8]      completion flag Y_j
//   [9]      time of day in [0,1)
//   [10..17] running population variance of each raw item over completed prompts 1..j
//   [18]     long-term completion rate
//   [19]     short-term completion rate (previous day)
inline constexpr int kFeatureDim = 20;
inline constexpr std::array<const char*, kFeatureDim> kFeatureNames = {
    "enthusiastic", "happy", "relaxed", "bored", "sad", "angry", "restless", "urge",
    "completed", "time_of_day",
    "var_enthusiastic", "var_happy", "var_relaxed", "var_bored", "var_sad", "var_angry",
    "var_restless", "var_urge",
    "cr_long", "cr_short"};

using FeatureVector = std::array<double, kFeatureDim>;

struct WindowSample {
    std::string participant_id;
    std::vector<FeatureVector> features;  // N rows
    std::vector<double> timestamps;       // N, strictly increasing
    int label = 0;                        // Y_{N+1}

    std::size_t length() const { return features.size(); }
};

// Sum_{i=1..j} Y_i / j, with the explicit 0 base case at j = 0.
inline double long_term_cr(const std::vector<int>& history, std::size_t j) {
    if (j > history.size())
        throw std::invalid_argument("long_term_cr: j=" + std::to_string(j) + " exceeds history length " +
                                    std::to_string(history.size()));
    if (j == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < j; ++i) s += history[i];
    return s / static_cast<double>(j);
}

inline long day_of(double timestamp_min) { return static_cast<long>(std::floor(timestamp_min / 1440.0)); }

// Previous-day completed/triggered ratio; 0 when the previous day had no prompts.
inline double short_term_cr(const std::vector<PromptRecord>& records, long current_day) {
    std::size_t triggered = 0, completed = 0;
    for (const auto& r : records) {
        if (day_of(r.timestamp_min) == current_day - 1) {
            ++triggered;
            if (r.completed) ++completed;
        }
    }
    if (triggered == 0) return 0.0;
    return static_cast<double>(completed) / static_cast<double>(triggered);
}

// Population variance; 0 with fewer than 2 observations.
inline double running_variance(const std::vector<double>& values) {
    if (values.size() < 2) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return var / static_cast<double>(values.size());
}

// One FeatureVector per prompt, using only information available at or
// before that prompt.
inline std::vector<FeatureVector> build_participant_features(const std::vector<PromptRecord>& records) {
    std::vector<FeatureVector> out;
    out.reserve(records.size());
    std::vector<int> history;
    std::array<std::vector<double>, kNumItems> item_values;  // completed prompts only
    for (const auto& r : records) {
        FeatureVector f{};
        if (r.completed) {
            for (int k = 0; k < kNumItems; ++k) {
                f[k] = (r.items[k] - 1) / 4.0;
                item_values[k].push_back(static_cast<double>(r.items[k]));
            }
        }
        f[8] = r.completed ? 1.0 : 0.0;
        f[9] = std::fmod(r.timestamp_min, 1440.0) / 1440.0;
        for (int k = 0; k < kNumItems; ++k) f[10 + k] = running_variance(item_values[k]);
        history.push_back(r.completed ? 1 : 0);
        f[18] = long_term_cr(history, history.size());
        f[19] = short_term_cr(records, day_of(r.timestamp_min));
        out.push_back(f);
    }
    return out;
}

inline std::map<std::string, std::vector<FeatureVector>> build_features(const Dataset& ds) {
    std::map<std::string, std::vector<FeatureVector>> out;
    for (const auto& [pid, recs] : ds.participants) out[pid] = build_participant_features(recs);
    return out;
}

// For n_i prompts and window length N: max(0, n_i - N) samples; sample k
// covers prompts k..k+N-1 and carries label Y_{k+N}.
inline std::vector<WindowSample> sliding_windows(const std::string& participant_id,
                                                 const std::vector<FeatureVector>& features,
                                                 const std::vector<PromptRecord>& records,
                                                 std::size_t n) {
    if (n < 1) throw std::invalid_argument("sliding_windows: N must be >= 1");
    std::vector<WindowSample> out;
    if (records.size() <= n) return out;
    for (std::size_t k = 0; k + n < records.size(); ++k) {
        WindowSample w;
        w.participant_id = participant_id;
        w.features.assign(features.begin() + k, features.begin() + k + n);
        w.timestamps.reserve(n);
        for (std::size_t j = k; j < k + n; ++j) w.timestamps.push_back(records[j].timestamp_min);
        w.label = records[k + n].completed ? 1 : 0;
        out.push_back(std::move(w));
    }
    return out;
}

inline std::vector<WindowSample> make_windows(const Dataset& ds, std::size_t n) {
    std::vector<WindowSample> out;
    for (const auto& [pid, recs] : ds.participants) {
        auto feats = build_participant_features(recs);
        auto ws = sliding_windows(pid, feats, recs, n);
        out.insert(out.end(), std::make_move_iterator(ws.begin()), std::make_move_iterator(ws.end()));
    }
    return out;
}

// Feature dump: participant_id, prompt_index, then the 20 feature columns.
inline std::string features_to_csv(const Dataset& ds) {
    std::ostringstream out;
    out << "participant_id,prompt_index";
    for (const char* name : kFeatureNames) out << ',' << name;
    out << "\n";
    for (const auto& [pid, recs] : ds.participants) {
        auto feats = build_participant_features(recs);
        for (std::size_t j = 0; j < recs.size(); ++j) {
            out << pid << ',' << recs[j].prompt_index;
            for (double v : feats[j]) out << ',' << detail::format_double(v);
            out << "\n";
        }
    }
    return out.str();
}

}  // namespace ema
