#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ema/features.hpp"
#include "ema/rng.hpp"

namespace ema {

enum class MaskTask { OneItem, FiveItems, AllItems };

// BERT-style corruption of emotion items at randomly chosen completed
// positions. Completion and completion-rate dims are never touched.
struct MaskingConfig {
    double mask_fraction = 0.15;
    double p_sentinel = 0.8;
    double p_keep = 0.1;
    double p_random = 0.1;
    double sentinel = -1.0;  // outside the [0,1] feature range
    MaskTask task = MaskTask::OneItem;
    std::vector<std::size_t> items = {1};  // feature dims 0..7; default: Happy
    bool resample_each_epoch = true;

    std::vector<std::size_t> task_items() const {
        switch (task) {
            case MaskTask::OneItem:
                return {items.at(0)};
            case MaskTask::FiveItems:
                return items.size() == 5 ? items
                                         : std::vector<std::size_t>{1, 3, 4, 5, 6};
            case MaskTask::AllItems:
                return {0, 1, 2, 3, 4, 5, 6, 7};
        }
        return {};
    }

    void validate() const {
        if (mask_fraction < 0.0 || mask_fraction >= 1.0)
            throw std::invalid_argument("masking: mask_fraction must be in [0,1)");
        if (std::fabs(p_sentinel + p_keep + p_random - 1.0) > 1e-12)
            throw std::invalid_argument("masking: replacement probabilities must sum to 1");
        for (std::size_t d : task_items())
            if (d >= static_cast<std::size_t>(kNumItems))
                throw std::invalid_argument("masking: item dim " + std::to_string(d) +
                                            " is not an emotion item");
    }
};

struct MaskedWindow {
    WindowSample window;                       // corrupted copy
    std::vector<std::size_t> positions;        // masked rows
    std::vector<std::vector<double>> targets;  // per position, original values per task item
};

struct MaskingStats {
    std::size_t positions_considered = 0;  // window length summed
    std::size_t positions_masked = 0;
    std::size_t sentinel = 0;
    std::size_t keep = 0;
    std::size_t random = 0;
    std::size_t skipped_windows = 0;  // no completed prompt to mask
};

inline MaskedWindow apply_masking(const WindowSample& window, const MaskingConfig& cfg, Rng& rng,
                                  MaskingStats* stats = nullptr) {
    cfg.validate();
    MaskedWindow out;
    out.window = window;
    if (stats) stats->positions_considered += window.length();

    std::vector<std::size_t> completed;
    for (std::size_t i = 0; i < window.length(); ++i)
        if (window.features[i][8] == 1.0) completed.push_back(i);
    if (completed.empty()) {
        if (stats) ++stats->skipped_windows;
        return out;
    }
    const std::size_t want =
        static_cast<std::size_t>(std::ceil(cfg.mask_fraction * static_cast<double>(window.length())));
    const std::size_t k = std::min(want, completed.size());
    if (k == 0) return out;

    const auto item_dims = cfg.task_items();
    static constexpr double kLikertLevels[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t pick : rng.sample_without_replacement(completed.size(), k)) {
        const std::size_t pos = completed[pick];
        std::vector<double> target;
        target.reserve(item_dims.size());
        for (std::size_t d : item_dims) target.push_back(window.features[pos][d]);
        const double u = rng.uniform();
        if (u < cfg.p_sentinel) {
            for (std::size_t d : item_dims) out.window.features[pos][d] = cfg.sentinel;
            if (stats) ++stats->sentinel;
        } else if (u < cfg.p_sentinel + cfg.p_keep) {
            if (stats) ++stats->keep;
        } else {
            for (std::size_t d : item_dims)
                out.window.features[pos][d] = kLikertLevels[rng.uniform_int(5)];
            if (stats) ++stats->random;
        }
        out.positions.push_back(pos);
        out.targets.push_back(std::move(target));
        if (stats) ++stats->positions_masked;
    }
    return out;
}

}  // namespace ema
