#pragma once

#include "spaer/errors.hpp"
#include "spaer/geometry.hpp"
#include "spaer/tracker.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

// CSV files start with a `# spaer-csv v1` line followed by a column header.
// Numbers are written with 17 significant digits so they read back exactly.

namespace spaer::io {

namespace fs = std::filesystem;

inline constexpr const char* kCsvVersionLine = "# spaer-csv v1";
inline constexpr const char* kTrajectoryHeader = "frame,qw,qx,qy,qz,tx_mm,ty_mm,tz_mm";
inline constexpr const char* kReportHeader = "pair,trans_err_mm,ang_err_deg,dice,ssd_pre,ssd_post,secs";

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_number(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw SchemaError("not a number: '" + s + "'");
    }
    if (used != s.size()) throw SchemaError("not a number: '" + s + "'");
    return v;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

/// Rows of a versioned CSV with the given header, as numbers.
inline std::vector<std::vector<double>> read_csv(const fs::path& path, const std::string& header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kCsvVersionLine)
        throw SchemaError(path.string() + ": missing '" + kCsvVersionLine + "' line");
    if (!std::getline(in, line) || line != header)
        throw SchemaError(path.string() + ": expected columns '" + header + "'");
    const std::size_t columns = split_csv_line(header).size();
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != columns)
            throw SchemaError(path.string() + ": row " + std::to_string(rows.size() + 1) + " has " +
                              std::to_string(cells.size()) + " columns, expected " + std::to_string(columns));
        std::vector<double> row;
        for (const auto& c : cells) row.push_back(parse_number(c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::ofstream open_csv(const fs::path& path, const std::string& header) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << kCsvVersionLine << '\n' << header << '\n';
    return out;
}

} // namespace detail

/// One row per frame: the transform from frame 0 to that frame.
inline void write_trajectory_csv(const fs::path& path, const std::vector<RigidTransform>& path_transforms) {
    auto out = detail::open_csv(path, kTrajectoryHeader);
    for (std::size_t t = 0; t < path_transforms.size(); ++t) {
        const Quaternion q = to_quaternion(path_transforms[t].rotation);
        const Vec3& tr = path_transforms[t].translation;
        out << t;
        for (double v : {q.w, q.x, q.y, q.z, tr[0], tr[1], tr[2]}) out << ',' << format_number(v);
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<RigidTransform> read_trajectory_csv(const fs::path& path) {
    const auto rows = detail::read_csv(path, kTrajectoryHeader);
    std::vector<RigidTransform> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r[0] != static_cast<double>(i)) throw SchemaError(path.string() + ": frames must be numbered 0, 1, 2, ...");
        for (double v : r)
            if (!std::isfinite(v)) throw SchemaError(path.string() + ": non-finite value in row " + std::to_string(i));
        const Quaternion q{r[1], r[2], r[3], r[4]};
        const double n = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
        if (std::abs(n - 1.0) > 1e-6) throw SchemaError(path.string() + ": quaternion in row " + std::to_string(i) + " is not unit length");
        RigidTransform tr;
        tr.rotation = to_matrix(q);
        tr.translation = Vec3(r[5], r[6], r[7]);
        out.push_back(tr);
    }
    return out;
}

inline void write_report_csv(const fs::path& path, const TrackingReport& report) {
    auto out = detail::open_csv(path, kReportHeader);
    for (std::size_t t = 0; t < report.pairs.size(); ++t) {
        const PairMetrics& m = report.pairs[t];
        out << t;
        for (double v : {m.trans_err_mm, m.ang_err_deg, m.dice, m.ssd_pre, m.ssd_post, m.secs}) out << ',' << format_number(v);
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

/// Reads the columns of a report CSV back (accumulated and ncc fields are not stored).
inline TrackingReport read_report_csv(const fs::path& path) {
    TrackingReport report;
    const auto rows = detail::read_csv(path, kReportHeader);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r[0] != static_cast<double>(i)) throw SchemaError(path.string() + ": pairs must be numbered 0, 1, 2, ...");
        PairMetrics m;
        m.trans_err_mm = r[1];
        m.ang_err_deg = r[2];
        m.dice = r[3];
        m.ssd_pre = r[4];
        m.ssd_post = r[5];
        m.secs = r[6];
        m.acc_trans_err_mm = m.acc_ang_err_deg = m.ncc_pre = m.ncc_post = std::numeric_limits<double>::quiet_NaN();
        report.pairs.push_back(m);
    }
    return report;
}

/// Mean and sample std of every metric. NaN statistics are written as null.
inline nlohmann::json report_summary(const TrackingReport& report) {
    auto stat = [&](double PairMetrics::*field) {
        const Stat s = report.stat(field);
        nlohmann::json j;
        j["mean"] = std::isfinite(s.mean) ? nlohmann::json(s.mean) : nlohmann::json(nullptr);
        j["std"] = std::isfinite(s.std) ? nlohmann::json(s.std) : nlohmann::json(nullptr);
        return j;
    };
    nlohmann::json j;
    j["format"] = "spaer-report";
    j["version"] = 1;
    j["pairs"] = report.pairs.size();
    j["trans_err_mm"] = stat(&PairMetrics::trans_err_mm);
    j["ang_err_deg"] = stat(&PairMetrics::ang_err_deg);
    j["acc_trans_err_mm"] = stat(&PairMetrics::acc_trans_err_mm);
    j["acc_ang_err_deg"] = stat(&PairMetrics::acc_ang_err_deg);
    j["dice"] = stat(&PairMetrics::dice);
    j["ssd_pre"] = stat(&PairMetrics::ssd_pre);
    j["ssd_post"] = stat(&PairMetrics::ssd_post);
    j["ncc_pre"] = stat(&PairMetrics::ncc_pre);
    j["ncc_post"] = stat(&PairMetrics::ncc_post);
    j["secs"] = stat(&PairMetrics::secs);
    j["sequence_seconds"] =
        std::isfinite(report.sequence_seconds) ? nlohmann::json(report.sequence_seconds) : nlohmann::json(nullptr);
    return j;
}

} // namespace spaer::io
