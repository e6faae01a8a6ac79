#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ema/tensor.hpp"

namespace ema {

// Versioned container: config/metadata JSON plus named 64-bit float arrays.
// Layout (little-endian):
//   magic "EMACKPT1"
//   u64 json_len, json bytes (UTF-8)
//   u64 n_params, then per parameter:
//     u64 name_len, name bytes
//     u64 rank, u64 dims[rank]
//     raw doubles (row-major)
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> params;

    const Tensor& find(const std::string& name) const {
        for (const auto& [n, t] : params)
            if (n == name) return t;
        throw std::runtime_error("checkpoint: no parameter named \"" + name + "\"");
    }

    bool bitwise_equal(const Checkpoint& o) const {
        if (meta != o.meta || params.size() != o.params.size()) return false;
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].first != o.params[i].first) return false;
            const Tensor& a = params[i].second;
            const Tensor& b = o.params[i].second;
            if (a.shape() != b.shape()) return false;
            if (std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) != 0)
                return false;
        }
        return true;
    }
};

namespace detail {
constexpr char kCkptMagic[8] = {'E', 'M', 'A', 'C', 'K', 'P', 'T', '1'};

inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    const std::string js = ckpt.meta.dump();
    detail::write_u64(out, js.size());
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    detail::write_u64(out, ckpt.params.size());
    for (const auto& [name, t] : ckpt.params) {
        detail::write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u64(out, t.rank());
        for (std::size_t d : t.shape()) detail::write_u64(out, d);
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not an EMA checkpoint: " + path);
    Checkpoint ckpt;
    const std::uint64_t js_len = detail::read_u64(in);
    std::string js(js_len, '\0');
    in.read(js.data(), static_cast<std::streamsize>(js_len));
    if (!in) throw std::runtime_error("checkpoint: truncated metadata");
    ckpt.meta = nlohmann::json::parse(js);
    const std::uint64_t n_params = detail::read_u64(in);
    for (std::uint64_t k = 0; k < n_params; ++k) {
        const std::uint64_t name_len = detail::read_u64(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t rank = detail::read_u64(in);
        if (rank < 1 || rank > 3) throw std::runtime_error("checkpoint: bad tensor rank");
        Dims shape(rank);
        for (auto& d : shape) d = detail::read_u64(in);
        std::vector<double> data(numel(shape));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
        ckpt.params.emplace_back(std::move(name), Tensor::from(shape, std::move(data), true));
    }
    return ckpt;
}

}  // namespace ema
