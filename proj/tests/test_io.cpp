#include "oracles.hpp"

#include "spaer/csv_io.hpp"
#include "spaer/errors.hpp"
#include "spaer/model_io.hpp"
#include "spaer/svg.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

using namespace spaer;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("spaer_test_io_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

/// Minimal structural check: every tag is closed in order (no attributes containing '>').
bool balanced_xml(const std::string& doc) {
    std::vector<std::string> stack;
    const std::regex tag(R"(<(/?)([A-Za-z][\w:-]*)[^>]*?(/?)>)");
    for (auto it = std::sregex_iterator(doc.begin(), doc.end(), tag); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        if (m[3].length()) continue;
        if (m[1].length()) {
            if (stack.empty() || stack.back() != m[2].str()) return false;
            stack.pop_back();
        } else {
            stack.push_back(m[2].str());
        }
    }
    return stack.empty();
}

std::size_t count(const std::string& doc, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = doc.find(needle); p != std::string::npos; p = doc.find(needle, p + 1)) ++n;
    return n;
}

} // namespace

TEST(TrajectoryCsv, RoundTripIsExact) {
    const fs::path dir = temp_dir("traj");
    Rng rng(1);
    std::vector<RigidTransform> path{RigidTransform::identity()};
    for (int i = 0; i < 10; ++i) path.push_back(oracle::random_transform(rng, 90, 30));
    io::write_trajectory_csv(dir / "t.csv", path);
    const std::string text = slurp(dir / "t.csv");
    EXPECT_EQ(text.rfind("# spaer-csv v1\nframe,qw,qx,qy,qz,tx_mm,ty_mm,tz_mm\n0,1,0,0,0,0,0,0\n", 0), 0u);
    const auto back = io::read_trajectory_csv(dir / "t.csv");
    ASSERT_EQ(back.size(), path.size());
    for (std::size_t t = 0; t < path.size(); ++t) {
        EXPECT_LT((back[t].rotation - path[t].rotation).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(back[t].translation, path[t].translation);
    }
}

TEST(TrajectoryCsv, SchemaViolations) {
    const fs::path dir = temp_dir("bad");
    const std::string header = "# spaer-csv v1\nframe,qw,qx,qy,qz,tx_mm,ty_mm,tz_mm\n";
    write(dir / "noversion.csv", "frame,qw,qx,qy,qz,tx_mm,ty_mm,tz_mm\n0,1,0,0,0,0,0,0\n");
    write(dir / "columns.csv", "# spaer-csv v1\nframe,qw,qx,qy,qz,tx,ty,tz\n");
    write(dir / "short.csv", header + "0,1,0,0,0,0,0\n");
    write(dir / "text.csv", header + "0,1,0,0,0,abc,0,0\n");
    write(dir / "order.csv", header + "1,1,0,0,0,0,0,0\n");
    write(dir / "unit.csv", header + "0,2,0,0,0,0,0,0\n");
    for (const char* f : {"noversion.csv", "columns.csv", "short.csv", "text.csv", "order.csv", "unit.csv"})
        EXPECT_THROW(io::read_trajectory_csv(dir / f), SchemaError) << f;
    EXPECT_THROW(io::read_trajectory_csv(dir / "missing.csv"), IoError);
}

TEST(ReportCsv, RoundTripAndSummary) {
    const fs::path dir = temp_dir("report");
    TrackingReport r;
    Rng rng(2);
    for (int t = 0; t < 7; ++t) {
        PairMetrics m;
        m.trans_err_mm = rng.uniform(0, 2);
        m.ang_err_deg = rng.uniform(0, 2);
        m.dice = rng.uniform(0.8, 1);
        m.ssd_pre = rng.uniform();
        m.ssd_post = rng.uniform();
        m.secs = rng.uniform();
        r.pairs.push_back(m);
    }
    io::write_report_csv(dir / "r.csv", r);
    EXPECT_EQ(slurp(dir / "r.csv").rfind("# spaer-csv v1\npair,trans_err_mm,ang_err_deg,dice,ssd_pre,ssd_post,secs\n", 0), 0u);
    const TrackingReport back = io::read_report_csv(dir / "r.csv");
    ASSERT_EQ(back.pairs.size(), 7u);
    for (std::size_t t = 0; t < 7; ++t) EXPECT_EQ(back.pairs[t].dice, r.pairs[t].dice);

    // Recompute mean and sample std straight from the rows.
    const auto j = io::report_summary(back);
    double s = 0, sq = 0;
    for (const auto& p : back.pairs) s += p.ang_err_deg;
    const double mean = s / 7.0;
    for (const auto& p : back.pairs) sq += (p.ang_err_deg - mean) * (p.ang_err_deg - mean);
    EXPECT_NEAR(j["ang_err_deg"]["mean"].get<double>(), mean, 1e-12);
    EXPECT_NEAR(j["ang_err_deg"]["std"].get<double>(), std::sqrt(sq / 6.0), 1e-12);
    EXPECT_TRUE(j["ncc_pre"]["mean"].is_null());
    EXPECT_EQ(j["pairs"].get<int>(), 7);
}

TEST(ReportCsv, NanCellsSurvive) {
    const fs::path dir = temp_dir("nan");
    TrackingReport r;
    r.pairs.push_back(PairMetrics{});
    io::write_report_csv(dir / "r.csv", r);
    const TrackingReport back = io::read_report_csv(dir / "r.csv");
    EXPECT_TRUE(std::isnan(back.pairs[0].ssd_pre));
    EXPECT_TRUE(std::isnan(back.pairs[0].secs));
    EXPECT_EQ(io::parse_number(io::format_number(0.1)), 0.1);
    EXPECT_THROW(io::parse_number("1.5x"), SchemaError);
}

TEST(Svg, LinePlotStructure) {
    const std::string doc = svg::line_plot("t <1>", "x", "y",
                                           {{"a", {0, 1, 2}, {1, 2, 3}}, {"b & c", {0, 1}, {5, std::nan("")}}, {"d", {}, {}}});
    EXPECT_TRUE(balanced_xml(doc));
    EXPECT_EQ(count(doc, "<polyline class=\"series\""), 3u);
    EXPECT_NE(doc.find("viewBox=\"0 0 800 600\""), std::string::npos);
    EXPECT_NE(doc.find("t &lt;1&gt;"), std::string::npos);
    EXPECT_NE(doc.find("b &amp; c"), std::string::npos);
    EXPECT_EQ(doc.find("nan"), std::string::npos);
}

TEST(Svg, BoxPlotAndQuartiles) {
    const svg::BoxStats b = svg::box_stats({5, 1, 3, 2, 4});
    EXPECT_EQ(b.min, 1);
    EXPECT_EQ(b.q1, 2);
    EXPECT_EQ(b.median, 3);
    EXPECT_EQ(b.q3, 4);
    EXPECT_EQ(b.max, 5);
    EXPECT_DOUBLE_EQ(svg::box_stats({1, 2, 3, 4}).median, 2.5);
    const std::string doc = svg::box_plot("box", "deg", {{"a", {1, 2, 3}}, {"b", {2, 2}}});
    EXPECT_TRUE(balanced_xml(doc));
    EXPECT_EQ(count(doc, "<g class=\"box\""), 2u);
}

TEST(Model, SaveLoadIsBitIdentical) {
    const fs::path dir = temp_dir("model");
    Rng rng(3);
    std::vector<ad::Matrix> t = AttentionParams::initialize(12, 4, 3, 1).tensors();
    for (auto& m : t)
        for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
    const AttentionParams p = AttentionParams::from_tensors(t, 4);
    FilterBank bank = FilterBank::with_unit_gains({{ChannelType::gradient_magnitude, 3.0, 1.5},
                                                   {ChannelType::smoothed_intensity, 6.0, 1.0},
                                                   {ChannelType::intensity_power, 3.0, 2.0},
                                                   {ChannelType::laplacian_magnitude, 6.0, 4.0}});
    bank.raw_gains[2] = -0.375;
    io::save_model(dir / "m.bin", p, bank);
    const io::Model m = io::load_model(dir / "m.bin");
    const auto a = p.tensors(), b = m.params.tensors();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i] == b[i]);
    EXPECT_EQ(m.params.heads, 4);
    EXPECT_EQ(m.bank.raw_gains, bank.raw_gains);
    EXPECT_EQ(m.bank.channels, bank.channels);

    const auto meta = nlohmann::json::parse(slurp(io::model_meta_path(dir / "m.bin")));
    EXPECT_EQ(meta["d"], 12);
    EXPECT_EQ(meta["K"], 4);
    EXPECT_EQ(meta["heads"], 4);
    EXPECT_EQ(meta["layers"], 3);
    EXPECT_EQ(meta["version"], 1);

    io::save_model(dir / "m2.bin", m.params, m.bank);
    EXPECT_EQ(slurp(dir / "m.bin"), slurp(dir / "m2.bin"));
}

TEST(Model, CorruptFilesAreRejected) {
    const fs::path dir = temp_dir("corrupt");
    write(dir / "junk.bin", "not a model at all");
    EXPECT_THROW(io::load_model(dir / "junk.bin"), IoError);
    io::save_model(dir / "m.bin", AttentionParams::initialize(6, 2, 1), FilterBank::with_unit_gains(default_channels()));
    fs::resize_file(dir / "m.bin", fs::file_size(dir / "m.bin") - 3);
    EXPECT_THROW(io::load_model(dir / "m.bin"), IoError);
    EXPECT_THROW(io::load_model(dir / "missing.bin"), IoError);
}
