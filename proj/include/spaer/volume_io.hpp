#pragma once

#include "spaer/errors.hpp"
#include "spaer/field.hpp"
#include "spaer/volume.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

// Volume file: `<name>.vol` holds raw little-endian float32 samples, x fastest;
// `<name>.json` next to it holds dims, spacing_mm and origin_mm. Vector fields
// use the same layout with three interleaved components per voxel and a
// `field_type` entry in the sidecar. A sequence is a directory whose
// `manifest.json` lists the frame files in temporal order.

namespace spaer::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline fs::path sidecar_path(const fs::path& vol_path) {
    fs::path p = vol_path;
    p.replace_extension(".json");
    return p;
}

inline json grid_to_json(const Grid& g) {
    return json{{"dims", {g.dims[0], g.dims[1], g.dims[2]}},
                {"spacing_mm", {g.spacing[0], g.spacing[1], g.spacing[2]}},
                {"origin_mm", {g.origin[0], g.origin[1], g.origin[2]}}};
}

inline Grid grid_from_json(const json& j) {
    try {
        Grid g;
        for (int a = 0; a < 3; ++a) {
            g.dims[a] = j.at("dims").at(a).get<int>();
            g.spacing[a] = j.at("spacing_mm").at(a).get<double>();
            g.origin[a] = j.at("origin_mm").at(a).get<double>();
        }
        g.validate();
        return g;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed volume sidecar: ") + e.what());
    } catch (const ShapeMismatch& e) {
        throw IoError(std::string("invalid grid in sidecar: ") + e.what());
    }
}

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("cannot parse " + path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

namespace detail {

inline void write_floats(const fs::path& path, const std::vector<float>& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (float f : values) {
        auto bits = std::bit_cast<std::uint32_t>(f);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        char bytes[4];
        std::memcpy(bytes, &bits, 4);
        out.write(bytes, 4);
    }
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<float> read_floats(const fs::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        char bytes[4];
        if (!in.read(bytes, 4)) throw IoError("truncated data in " + path.string());
        std::uint32_t bits;
        std::memcpy(&bits, bytes, 4);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        values[i] = std::bit_cast<float>(bits);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing data in " + path.string());
    return values;
}

} // namespace detail

inline void write_volume(const fs::path& vol_path, const Volume& vol) {
    std::vector<float> samples(vol.size());
    for (std::size_t i = 0; i < vol.size(); ++i) samples[i] = static_cast<float>(vol[i]);
    detail::write_floats(vol_path, samples);
    write_json(sidecar_path(vol_path), grid_to_json(vol.grid()));
}

inline Volume read_volume(const fs::path& vol_path) {
    const json meta = read_json(sidecar_path(vol_path));
    if (meta.contains("field_type")) throw IoError(vol_path.string() + " holds a vector field, not a volume");
    const Grid grid = grid_from_json(meta);
    const auto samples = detail::read_floats(vol_path, grid.size());
    std::vector<double> data(samples.begin(), samples.end());
    return Volume(grid, std::move(data));
}

inline void write_field(const fs::path& path, const VectorField& field, const std::string& field_type) {
    std::vector<float> samples;
    samples.reserve(field.size() * 3);
    for (const auto& v : field.values())
        for (int c = 0; c < 3; ++c) samples.push_back(static_cast<float>(v[c]));
    detail::write_floats(path, samples);
    json meta = grid_to_json(field.grid());
    meta["field_type"] = field_type;
    meta["components"] = 3;
    write_json(sidecar_path(path), meta);
}

struct LoadedField {
    VectorField field;
    std::string field_type;
};

inline LoadedField read_field(const fs::path& path) {
    const json meta = read_json(sidecar_path(path));
    if (!meta.contains("field_type")) throw IoError(path.string() + " is not a vector field");
    const Grid grid = grid_from_json(meta);
    const auto samples = detail::read_floats(path, grid.size() * 3);
    std::vector<Vec3> values(grid.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = Vec3(samples[3 * i], samples[3 * i + 1], samples[3 * i + 2]);
    return {VectorField(grid, std::move(values)), meta.at("field_type").get<std::string>()};
}

inline std::string frame_name(std::size_t t) {
    std::ostringstream s;
    s << "frame_" << std::setw(3) << std::setfill('0') << t << ".vol";
    return s.str();
}

/// Writes frames plus manifest.json into `dir` (created if missing).
inline void write_sequence(const fs::path& dir, const std::vector<Volume>& frames) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    json names = json::array();
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const std::string name = frame_name(t);
        write_volume(dir / name, frames[t]);
        names.push_back(name);
    }
    write_json(dir / "manifest.json", json{{"format", "spaer-sequence"}, {"version", 1}, {"frames", names}});
}

inline bool is_sequence_dir(const fs::path& dir) { return fs::is_regular_file(dir / "manifest.json"); }

inline std::vector<Volume> read_sequence(const fs::path& dir) {
    const json manifest = read_json(dir / "manifest.json");
    std::vector<Volume> frames;
    try {
        for (const auto& name : manifest.at("frames")) frames.push_back(read_volume(dir / name.get<std::string>()));
    } catch (const json::exception& e) {
        throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    return frames;
}

} // namespace spaer::io
