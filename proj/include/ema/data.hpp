#pragma once

#include <array>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ema {

class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr int kNumItems = 8;
inline constexpr std::array<const char*, kNumItems> kItemNames = {
    "enthusiastic", "happy", "relaxed", "bored", "sad", "angry", "restless", "urge"};

// One triggered prompt. Likert items are meaningful only when completed.
struct PromptRecord {
    int prompt_index = 0;          // 1-based, time-ordered per participant
    double timestamp_min = 0.0;    // minutes since the participant's study start
    bool completed = false;
    std::array<int, kNumItems> items{};  // 1..5 iff completed

    bool operator==(const PromptRecord& o) const {
        if (prompt_index != o.prompt_index || timestamp_min != o.timestamp_min ||
            completed != o.completed)
            return false;
        return !completed || items == o.items;
    }
};

struct Dataset {
    // std::map keeps participants in a deterministic (sorted) order
    std::map<std::string, std::vector<PromptRecord>> participants;
    std::string provenance = "loaded";

    std::size_t n_participants() const { return participants.size(); }
    std::size_t n_prompts() const {
        std::size_t n = 0;
        for (const auto& [id, recs] : participants) n += recs.size();
        return n;
    }
    std::vector<std::string> participant_ids() const {
        std::vector<std::string> ids;
        ids.reserve(participants.size());
        for (const auto& [id, recs] : participants) ids.push_back(id);
        return ids;
    }

    bool operator==(const Dataset& o) const { return participants == o.participants; }
};

inline const char* kCsvHeader =
    "participant_id,prompt_index,timestamp_min,completed,"
    "enthusiastic,happy,relaxed,bored,sad,angry,restless,urge";

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

// shortest decimal string that round-trips a double
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.15g", v);
    if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

inline Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    {
        std::string hdr = line;
        if (!hdr.empty() && hdr.back() == '\r') hdr.pop_back();
        if (hdr != kCsvHeader)
            throw ParseError(path + ": header mismatch, expected \"" + kCsvHeader + "\"");
    }
    Dataset ds;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 12)
            throw ParseError(path + ": row " + std::to_string(row) + ": expected 12 columns, got " +
                             std::to_string(cells.size()));
        PromptRecord rec;
        const std::string& pid = cells[0];
        if (pid.empty()) throw ParseError(path + ": row " + std::to_string(row) + ": empty participant_id");
        try {
            rec.prompt_index = std::stoi(cells[1]);
            rec.timestamp_min = std::stod(cells[2]);
        } catch (const std::exception&) {
            throw ParseError(path + ": row " + std::to_string(row) + ": bad numeric field");
        }
        if (cells[3] == "1")
            rec.completed = true;
        else if (cells[3] == "0")
            rec.completed = false;
        else
            throw ParseError(path + ": row " + std::to_string(row) + ": column completed must be 0 or 1");
        for (int k = 0; k < kNumItems; ++k) {
            const std::string& cell = cells[4 + k];
            if (rec.completed) {
                if (cell.empty())
                    throw ParseError(path + ": row " + std::to_string(row) + ": column " +
                                     kItemNames[k] + " empty for a completed prompt");
                int v = 0;
                try {
                    v = std::stoi(cell);
                } catch (const std::exception&) {
                    throw ParseError(path + ": row " + std::to_string(row) + ": column " +
                                     kItemNames[k] + " is not an integer");
                }
                if (v < 1 || v > 5)
                    throw ParseError(path + ": row " + std::to_string(row) + ": column " +
                                     kItemNames[k] + " value " + std::to_string(v) +
                                     " outside Likert range 1..5");
                rec.items[k] = v;
            } else if (!cell.empty()) {
                throw ParseError(path + ": row " + std::to_string(row) + ": column " +
                                 kItemNames[k] + " must be empty for a missed prompt");
            }
        }
        ds.participants[pid].push_back(rec);
    }
    for (auto& [pid, recs] : ds.participants) {
        std::stable_sort(recs.begin(), recs.end(),
                         [](const PromptRecord& a, const PromptRecord& b) {
                             return a.timestamp_min < b.timestamp_min;
                         });
        for (std::size_t j = 0; j + 1 < recs.size(); ++j) {
            if (recs[j + 1].timestamp_min <= recs[j].timestamp_min)
                throw ParseError(path + ": participant " + pid +
                                 ": timestamps not strictly increasing near prompt " +
                                 std::to_string(recs[j].prompt_index));
        }
        for (std::size_t j = 0; j < recs.size(); ++j) recs[j].prompt_index = static_cast<int>(j) + 1;
    }
    ds.provenance = "loaded";
    return ds;
}

inline std::string to_csv(const Dataset& ds) {
    std::ostringstream out;
    out << kCsvHeader << "\n";
    for (const auto& [pid, recs] : ds.participants) {
        for (const auto& r : recs) {
            out << pid << ',' << r.prompt_index << ',' << detail::format_double(r.timestamp_min)
                << ',' << (r.completed ? 1 : 0);
            for (int k = 0; k < kNumItems; ++k) {
                out << ',';
                if (r.completed) out << r.items[k];
            }
            out << "\n";
        }
    }
    return out.str();
}

inline void write_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << to_csv(ds);
}

struct ValidationReport {
    std::size_t n_participants = 0;
    std::size_t n_prompts = 0;
    std::size_t n_completed = 0;
    double compliance_rate = 0.0;
    double mean_within_day_gap_min = 0.0;  // gaps between same-day prompts
    std::size_t n_within_day_gaps = 0;
    std::map<std::string, std::size_t> prompts_per_participant;
    std::vector<std::string> violations;

    std::string summary() const {
        std::ostringstream os;
        os << "participants: " << n_participants << "\n"
           << "prompts: " << n_prompts << " (completed " << n_completed << ")\n"
           << "compliance: " << compliance_rate << "\n"
           << "mean within-day gap (min): " << mean_within_day_gap_min << " over "
           << n_within_day_gaps << " gaps\n"
           << "violations: " << violations.size() << "\n";
        for (const auto& v : violations) os << "  " << v << "\n";
        return os.str();
    }
};

inline ValidationReport validate(const Dataset& ds) {
    ValidationReport rep;
    rep.n_participants = ds.n_participants();
    double gap_sum = 0.0;
    for (const auto& [pid, recs] : ds.participants) {
        rep.prompts_per_participant[pid] = recs.size();
        for (std::size_t j = 0; j < recs.size(); ++j) {
            const auto& r = recs[j];
            ++rep.n_prompts;
            if (r.completed) {
                ++rep.n_completed;
                for (int k = 0; k < kNumItems; ++k) {
                    if (r.items[k] < 1 || r.items[k] > 5)
                        rep.violations.push_back("participant " + pid + " prompt " +
                                                 std::to_string(r.prompt_index) + ": item " +
                                                 kItemNames[k] + " out of range");
                }
            }
            if (j > 0) {
                if (r.timestamp_min <= recs[j - 1].timestamp_min)
                    rep.violations.push_back("participant " + pid + " prompt " +
                                             std::to_string(r.prompt_index) +
                                             ": timestamp not increasing");
                const long day_prev = static_cast<long>(recs[j - 1].timestamp_min / 1440.0);
                const long day_cur = static_cast<long>(r.timestamp_min / 1440.0);
                if (day_prev == day_cur) {
                    gap_sum += r.timestamp_min - recs[j - 1].timestamp_min;
                    ++rep.n_within_day_gaps;
                }
            }
        }
    }
    rep.compliance_rate = rep.n_prompts ? static_cast<double>(rep.n_completed) / rep.n_prompts : 0.0;
    rep.mean_within_day_gap_min = rep.n_within_day_gaps ? gap_sum / rep.n_within_day_gaps : 0.0;
    return rep;
}

}  // namespace ema
