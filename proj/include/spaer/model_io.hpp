#pragma once

#include "spaer/eqfeatures.hpp"
#include "spaer/errors.hpp"
#include "spaer/temporal.hpp"
#include "spaer/volume_io.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

// Model file layout (little-endian):
//   char[8]  "SPAERMDL"
//   u32      version, d, K, heads, layers
//   f64[]    attention tensors in AttentionParams::tensors() order, column-major
//   f64[K]   raw filter-bank gains
// `<model>.meta.json` repeats the header and lists the channel specs.

namespace spaer::io {

inline constexpr std::array<char, 8> kModelMagic{'S', 'P', 'A', 'E', 'R', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

struct Model {
    AttentionParams params;
    FilterBank bank;
};

inline fs::path model_meta_path(const fs::path& model_path) {
    fs::path p = model_path;
    p += ".meta.json";
    return p;
}

namespace detail {

template <class T>
void put(std::ofstream& out, T v) {
    if constexpr (std::is_same_v<T, double>) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    } else {
        static_assert(std::is_same_v<T, std::uint32_t>);
        if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

template <class T>
T get(std::ifstream& in, const fs::path& path) {
    if constexpr (std::is_same_v<T, double>) {
        std::uint64_t bits = 0;
        if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw IoError("truncated model file " + path.string());
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        return std::bit_cast<double>(bits);
    } else {
        std::uint32_t v = 0;
        if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated model file " + path.string());
        if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
        return v;
    }
}

} // namespace detail

inline void save_model(const fs::path& path, const AttentionParams& params, const FilterBank& bank) {
    params.validate();
    bank.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kModelMagic.data(), kModelMagic.size());
    const auto d = static_cast<std::uint32_t>(params.dim());
    detail::put(out, kModelVersion);
    detail::put(out, d);
    detail::put(out, static_cast<std::uint32_t>(bank.size()));
    detail::put(out, static_cast<std::uint32_t>(params.heads));
    detail::put(out, static_cast<std::uint32_t>(params.layers.size()));
    for (const auto& m : params.tensors())
        for (Eigen::Index i = 0; i < m.size(); ++i) detail::put(out, m.data()[i]);
    for (double g : bank.raw_gains) detail::put(out, g);
    if (!out) throw IoError("write failed for " + path.string());

    json channels = json::array();
    for (const auto& c : bank.channels)
        channels.push_back({{"type", std::string(to_string(c.type))}, {"sigma_mm", c.sigma_mm}, {"power", c.power}});
    write_json(model_meta_path(path), json{{"magic", std::string(kModelMagic.begin(), kModelMagic.end())},
                                           {"version", kModelVersion},
                                           {"d", d},
                                           {"K", bank.size()},
                                           {"heads", params.heads},
                                           {"layers", params.layers.size()},
                                           {"channels", channels}});
}

inline Model load_model(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kModelMagic) throw IoError(path.string() + " is not a model file");
    const auto version = detail::get<std::uint32_t>(in, path);
    if (version != kModelVersion) throw IoError("unsupported model version " + std::to_string(version));
    const auto d = static_cast<Eigen::Index>(detail::get<std::uint32_t>(in, path));
    const auto k = detail::get<std::uint32_t>(in, path);
    const auto heads = static_cast<int>(detail::get<std::uint32_t>(in, path));
    const auto layers = detail::get<std::uint32_t>(in, path);
    if (d == 0 || heads == 0 || layers == 0 || d % heads != 0 || layers > 64 || d > 1 << 16)
        throw IoError("implausible model header in " + path.string());

    const Eigen::Index h = kFeedForwardExpansion * d;
    const std::array<std::pair<Eigen::Index, Eigen::Index>, kTensorsPerLayer> shapes{
        {{d, d}, {d, d}, {d, d}, {d, d}, {d, h}, {h, d}, {1, d}, {1, d}}};
    std::vector<Matrix> tensors;
    for (std::uint32_t l = 0; l < layers; ++l)
        for (const auto& [r, c] : shapes) {
            Matrix m(r, c);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = detail::get<double>(in, path);
            tensors.push_back(std::move(m));
        }
    std::vector<double> gains(k);
    for (auto& g : gains) g = detail::get<double>(in, path);
    if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing data in " + path.string());

    std::vector<ChannelSpec> channels;
    const fs::path meta_path = model_meta_path(path);
    if (fs::exists(meta_path)) {
        const json meta = read_json(meta_path);
        try {
            for (const auto& c : meta.at("channels"))
                channels.push_back({channel_type_from_string(c.at("type").get<std::string>()), c.at("sigma_mm").get<double>(),
                                    c.at("power").get<double>()});
        } catch (const json::exception& e) {
            throw IoError("malformed model metadata " + meta_path.string() + ": " + e.what());
        }
    } else {
        channels = default_channels();
    }
    if (channels.size() != k) throw IoError("model channel count does not match its metadata");

    Model model{AttentionParams::from_tensors(tensors, heads), FilterBank{std::move(channels), std::move(gains)}};
    model.bank.validate();
    return model;
}

} // namespace spaer::io
