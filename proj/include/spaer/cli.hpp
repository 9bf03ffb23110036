#pragma once

#include "spaer/csv_io.hpp"
#include "spaer/errors.hpp"
#include "spaer/model_io.hpp"
#include "spaer/parallel.hpp"
#include "spaer/simulator.hpp"
#include "spaer/svg.hpp"
#include "spaer/tracker.hpp"
#include "spaer/volume_io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <toml.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

// `spaer` command line: simulate, track, train, evaluate, report.
//
// Exit codes: 0 success, 1 other failure, 2 invalid flags, configuration or
// file schema, 3 I/O failure, 4 degenerate geometry, 5 training divergence.
//
// A TOML file given with --config supplies option values; each subcommand
// reads the table of the same name ([simulate], [track], ...) and top-level
// keys set global options. Keys are option names without the leading dashes.
// Flags on the command line win over the file; unknown keys are rejected.

namespace spaer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kIoFailure = 3, kDegenerate = 4, kDivergence = 5 };

/// TOML reader for CLI11's config mechanism, backed by toml++.
class TomlConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return {}; }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        toml::table root;
        try {
            root = toml::parse(input);
        } catch (const toml::parse_error& e) {
            throw ConfigError(std::string("invalid TOML: ") + std::string(e.description()));
        }
        std::vector<CLI::ConfigItem> items;
        for (const auto& [key, node] : root) {
            if (const auto* table = node.as_table()) {
                for (const auto& [sub_key, sub_node] : *table)
                    items.push_back(item({std::string(key.str())}, std::string(sub_key.str()), sub_node));
            } else {
                items.push_back(item({}, std::string(key.str()), node));
            }
        }
        return items;
    }

private:
    static std::string scalar(const std::string& name, const toml::node& n) {
        if (const auto* v = n.as_string()) return v->get();
        if (const auto* v = n.as_integer()) return std::to_string(v->get());
        if (const auto* v = n.as_boolean()) return v->get() ? "true" : "false";
        if (const auto* v = n.as_floating_point()) {
            std::ostringstream s;
            s.precision(17);
            s << v->get();
            return s.str();
        }
        throw ConfigError("config key '" + name + "' must hold a string, number or boolean");
    }

    static CLI::ConfigItem item(std::vector<std::string> parents, const std::string& name, const toml::node& n) {
        CLI::ConfigItem it;
        it.parents = std::move(parents);
        it.name = name;
        if (const auto* arr = n.as_array()) {
            for (const auto& e : *arr) it.inputs.push_back(scalar(name, e));
        } else {
            it.inputs.push_back(scalar(name, n));
        }
        return it;
    }
};

namespace detail {

inline json simconfig_to_json(const SimConfig& c) {
    return json{{"format", "spaer-simconfig"}, {"version", 1},           {"seed", c.seed},
                {"size", c.size},              {"spacing_mm", c.spacing_mm}, {"frames", c.frames},
                {"t_max_mm", c.t_max_mm},      {"r_max_deg", c.r_max_deg}, {"noise_sigma", c.noise_sigma},
                {"contrast_drift", c.contrast_drift}, {"distortion_mm", c.distortion_mm}};
}

inline SimConfig simconfig_from_json(const json& j, const fs::path& path) {
    try {
        if (j.at("format") != "spaer-simconfig" || j.at("version") != 1)
            throw SchemaError(path.string() + " is not a version 1 simulator config");
        SimConfig c;
        c.seed = j.at("seed").get<std::uint64_t>();
        c.size = j.at("size").get<int>();
        c.spacing_mm = j.at("spacing_mm").get<double>();
        c.frames = j.at("frames").get<int>();
        c.t_max_mm = j.at("t_max_mm").get<double>();
        c.r_max_deg = j.at("r_max_deg").get<double>();
        c.noise_sigma = j.at("noise_sigma").get<double>();
        c.contrast_drift = j.at("contrast_drift").get<double>();
        c.distortion_mm = j.at("distortion_mm").get<double>();
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

inline void write_timing(const fs::path& path, const TrackTiming& timing) {
    io::write_json(path, json{{"format", "spaer-timing"},
                              {"version", 1},
                              {"pair_seconds", timing.pair_seconds},
                              {"sequence_seconds", timing.sequence_seconds}});
}

inline TrackTiming read_timing(const fs::path& path) {
    const json j = io::read_json(path);
    try {
        if (j.at("format") != "spaer-timing") throw SchemaError(path.string() + " is not a timing file");
        return {j.at("pair_seconds").get<std::vector<double>>(), j.at("sequence_seconds").get<double>()};
    } catch (const json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

inline std::vector<double> parse_split(const std::string& text) {
    std::vector<double> parts;
    std::stringstream in(text);
    std::string cell;
    while (std::getline(in, cell, ',')) parts.push_back(io::parse_number(cell));
    if (parts.size() != 3) throw ConfigError("--split needs three comma-separated fractions");
    double sum = 0.0;
    for (double p : parts) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("--split fractions must lie in [0, 1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("--split fractions must sum to 1");
    if (!(parts[0] > 0.0)) throw ConfigError("--split needs a positive training fraction");
    return parts;
}

/// A `spaer simulate` output directory loaded for training.
struct Dataset {
    fs::path dir;
    std::vector<Volume> frames;
    MotionSequence truth;
    Volume phantom;
};

inline Dataset load_dataset(const fs::path& dir) {
    Dataset d;
    d.dir = dir;
    d.frames = io::read_sequence(dir);
    d.truth = MotionSequence::from_accumulated(io::read_trajectory_csv(dir / "truth.csv"));
    const SimConfig cfg = simconfig_from_json(io::read_json(dir / "simconfig.json"), dir / "simconfig.json");
    d.phantom = make_phantom(cfg);
    if (d.frames.size() != d.truth.frames()) throw SchemaError(dir.string() + ": frame count differs from truth.csv");
    return d;
}

inline std::string report_label(const fs::path& p) {
    const std::string parent = p.parent_path().filename().string();
    return parent.empty() ? p.stem().string() : parent + "/" + p.stem().string();
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace detail

struct SimulateArgs {
    SimConfig cfg;
    std::string out;
};

inline void cmd_simulate(const SimulateArgs& a) {
    a.cfg.validate();
    const SyntheticSequence seq = simulate(a.cfg);
    io::write_sequence(a.out, seq.frames);
    io::write_trajectory_csv(fs::path(a.out) / "truth.csv", seq.truth.accumulated);
    io::write_json(fs::path(a.out) / "simconfig.json", detail::simconfig_to_json(a.cfg));
}

struct TrackArgs {
    std::string in;
    std::string model;
    bool diffeo = false;
    double presmooth_mm = TrackOptions{}.presmooth_sigma_mm;
    std::string aligned_out;
    std::string out;
    std::string timing;
};

inline void cmd_track(const TrackArgs& a, std::ostream& log) {
    const std::vector<Volume> frames = io::read_sequence(a.in);
    std::optional<io::Model> model;
    if (!a.model.empty()) model = io::load_model(a.model);
    const FilterBank bank = model ? model->bank : FilterBank::with_unit_gains(default_channels());
    TrackOptions opts;
    opts.diffeo = a.diffeo;
    opts.presmooth_sigma_mm = a.presmooth_mm;
    TrackTiming timing;
    const MotionSequence motion = track(frames, bank, model ? &model->params : nullptr, opts, &timing);
    for (std::size_t t = 0; t < timing.pair_seconds.size(); ++t)
        log << "pair " << t << ": " << timing.pair_seconds[t] << " s\n";
    log << "sequence: " << timing.sequence_seconds << " s\n";
    io::write_trajectory_csv(a.out, motion.accumulated);
    if (!a.aligned_out.empty()) io::write_sequence(a.aligned_out, align(frames, motion));
    if (!a.timing.empty()) detail::write_timing(a.timing, timing);
}

struct TrainArgs {
    std::vector<std::string> data;
    std::string split = "0.7,0.15,0.15";
    int epochs = TrainConfig{}.epochs;
    std::uint64_t seed = 0;
    double lr = TrainConfig{}.learning_rate;
    int batch = TrainConfig{}.batch_size;
    double weight_decay = TrainConfig{}.weight_decay;
    int eval_every = 1;
    std::string out;
    std::string loss_csv;
};

inline void cmd_train(const TrainArgs& a, std::ostream& log) {
    const std::vector<double> split = detail::parse_split(a.split);
    TrainConfig cfg;
    cfg.learning_rate = a.lr;
    cfg.epochs = a.epochs;
    cfg.seed = a.seed;
    cfg.batch_size = a.batch;
    cfg.weight_decay = a.weight_decay;
    cfg.eval_every = a.eval_every;
    cfg.validate();
    if (a.data.empty()) throw ConfigError("--data needs at least one sequence directory");

    // Seeded assignment of the directories to train / validation / test.
    std::vector<std::string> dirs = a.data;
    Rng rng = Rng::derived(a.seed, 0x73706c6974ULL);
    for (std::size_t i = dirs.size(); i > 1; --i) std::swap(dirs[i - 1], dirs[rng.next() % i]);
    const auto n = static_cast<double>(dirs.size());
    const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(split[0] * n)));
    const auto n_val = std::min(dirs.size() - n_train, static_cast<std::size_t>(std::llround(split[1] * n)));

    const FilterBank bank = FilterBank::with_unit_gains(default_channels());
    std::vector<TrainingSample> train_set, val_set;
    std::vector<ObjectiveSequence> val_seqs;
    std::vector<MotionSequence> val_truth;
    for (std::size_t i = 0; i < n_train + n_val; ++i) {
        const detail::Dataset d = detail::load_dataset(dirs[i]);
        TrainingSample s = make_training_sample(d.frames, d.phantom, d.truth, bank);
        if (i < n_train) {
            train_set.push_back(std::move(s));
        } else {
            val_set.push_back(std::move(s));
            val_seqs.push_back(prepare_objective_sequence(d.frames, bank));
            val_truth.push_back(d.truth);
        }
        log << "loaded " << dirs[i] << (i < n_train ? " (train)\n" : " (validation)\n");
    }

    ObjectiveFn objective, selection;
    if (!val_seqs.empty()) {
        objective = [&](const AttentionParams& p) {
            double s = 0.0;
            for (const auto& v : val_seqs) s += alignment_objective(v, &p);
            return s / static_cast<double>(val_seqs.size());
        };
        selection = [&](const AttentionParams& p) {
            double s = 0.0;
            for (std::size_t i = 0; i < val_seqs.size(); ++i) s += pose_error(val_seqs[i], &p, val_truth[i]);
            return s / static_cast<double>(val_seqs.size());
        };
    }
    const int d = train_set.front().input.dim();
    const TrainResult result = train(train_set, val_set, AttentionParams::initialize(d, 4, 3, a.seed), cfg, objective, selection);

    const fs::path loss_path = a.loss_csv.empty() ? fs::path(a.out + ".loss.csv") : fs::path(a.loss_csv);
    auto csv = io::detail::open_csv(loss_path, "epoch,learning_rate,train_loss,val_loss,objective,selection");
    for (const auto& r : result.history) {
        csv << r.epoch;
        for (double v : {r.learning_rate, r.train_loss, r.val_loss, r.objective, r.selection}) csv << ',' << io::format_number(v);
        csv << '\n';
        log << "epoch " << r.epoch << ": train " << r.train_loss << ", validation " << r.val_loss << '\n';
    }
    if (!csv) throw IoError("write failed for " + loss_path.string());
    io::save_model(a.out, result.best, bank);

    json split_json{{"train", json::array()}, {"validation", json::array()}, {"test", json::array()}};
    for (std::size_t i = 0; i < dirs.size(); ++i)
        split_json[i < n_train ? "train" : i < n_train + n_val ? "validation" : "test"].push_back(dirs[i]);
    split_json["best_epoch"] = result.best_epoch;
    io::write_json(a.out + ".split.json", split_json);
    log << "best epoch " << result.best_epoch << '\n';
}

struct EvaluateArgs {
    std::string motion;
    std::string truth;
    std::string in;
    std::string aligned;
    std::string out;
    std::string json_out;
    std::string timing;
};

inline void cmd_evaluate(const EvaluateArgs& a) {
    const MotionSequence est = MotionSequence::from_accumulated(io::read_trajectory_csv(a.motion));
    const MotionSequence truth = MotionSequence::from_accumulated(io::read_trajectory_csv(a.truth));
    if (est.frames() != truth.frames()) throw SchemaError("motion and truth CSVs differ in frame count");

    std::vector<Volume> original, aligned;
    if (!a.in.empty()) original = io::read_sequence(a.in);
    if (!a.aligned.empty()) {
        aligned = io::read_sequence(a.aligned);
    } else if (!original.empty()) {
        aligned = align(original, est);
    }
    const Volume reference = !original.empty() ? original.front() : !aligned.empty() ? aligned.front() : Volume();
    TrackingReport report = evaluate(est, truth, aligned, reference, original);
    if (!a.timing.empty()) {
        const TrackTiming timing = detail::read_timing(a.timing);
        if (timing.pair_seconds.size() != report.pairs.size()) throw SchemaError("timing file does not match the motion");
        for (std::size_t t = 0; t < report.pairs.size(); ++t) report.pairs[t].secs = timing.pair_seconds[t];
        report.sequence_seconds = timing.sequence_seconds;
    }
    io::write_report_csv(a.out, report);
    if (!a.json_out.empty()) io::write_json(a.json_out, io::report_summary(report));
}

struct ReportArgs {
    std::vector<std::string> in;
    std::string out;
};

/// Writes error_vs_pair.svg, translation_vs_pair.svg, dice_vs_length.svg and error_box.svg.
inline void cmd_report(const ReportArgs& a) {
    std::vector<std::pair<std::string, TrackingReport>> reports;
    for (const auto& p : a.in) reports.emplace_back(detail::report_label(p), io::read_report_csv(p));

    std::vector<svg::Series> ang, trans;
    std::vector<std::pair<double, double>> dice_by_length;
    std::vector<std::pair<std::string, std::vector<double>>> ang_groups;
    for (const auto& [label, r] : reports) {
        svg::Series sa{label, {}, {}}, st{label, {}, {}};
        std::vector<double> angles;
        for (std::size_t t = 0; t < r.pairs.size(); ++t) {
            sa.x.push_back(static_cast<double>(t));
            sa.y.push_back(r.pairs[t].ang_err_deg);
            st.x.push_back(static_cast<double>(t));
            st.y.push_back(r.pairs[t].trans_err_mm);
            angles.push_back(r.pairs[t].ang_err_deg);
        }
        ang.push_back(std::move(sa));
        trans.push_back(std::move(st));
        ang_groups.emplace_back(label, std::move(angles));
        dice_by_length.emplace_back(static_cast<double>(r.pairs.size() + 1), r.stat(&PairMetrics::dice).mean);
    }
    std::sort(dice_by_length.begin(), dice_by_length.end());
    svg::Series dice{"mean dice", {}, {}};
    for (const auto& [len, v] : dice_by_length) {
        dice.x.push_back(len);
        dice.y.push_back(v);
    }

    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw IoError("cannot create directory " + a.out + ": " + ec.message());
    const fs::path dir(a.out);
    detail::write_text(dir / "error_vs_pair.svg", svg::line_plot("Angular error per pair", "pair", "angular error (deg)", ang));
    detail::write_text(dir / "translation_vs_pair.svg",
                       svg::line_plot("Translation error per pair", "pair", "translation error (mm)", trans));
    detail::write_text(dir / "dice_vs_length.svg", svg::line_plot("Dice by sequence length", "frames", "dice", {dice}));
    detail::write_text(dir / "error_box.svg", svg::box_plot("Angular error", "angular error (deg)", ang_groups));
}

/// Parses and runs one subcommand. Messages go to `out` and `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Rigid motion tracking of volume sequences"};
    app.config_formatter(std::make_shared<TomlConfig>());
    app.set_config("--config", "", "TOML file with option values");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker cap (default: SPAER_THREADS or hardware)")->check(CLI::NonNegativeNumber);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "Write a synthetic sequence with ground truth");
    s->add_option("--seed", sim.cfg.seed);
    s->add_option("--frames", sim.cfg.frames);
    s->add_option("--size", sim.cfg.size);
    s->add_option("--spacing-mm", sim.cfg.spacing_mm);
    s->add_option("--tmax-mm", sim.cfg.t_max_mm);
    s->add_option("--rmax-deg", sim.cfg.r_max_deg);
    s->add_option("--noise", sim.cfg.noise_sigma);
    s->add_option("--contrast", sim.cfg.contrast_drift);
    s->add_option("--distortion", sim.cfg.distortion_mm);
    s->add_option("--out", sim.out, "Output directory")->required();

    TrackArgs tr;
    auto* t = app.add_subcommand("track", "Estimate the motion of a sequence");
    t->add_option("--in", tr.in, "Sequence directory")->required();
    t->add_option("--model", tr.model, "Trained model file");
    t->add_flag("--diffeo", tr.diffeo, "Add a deformable correction to frame 0");
    t->add_option("--presmooth-mm", tr.presmooth_mm, "Gaussian sigma applied before feature extraction")->check(CLI::NonNegativeNumber);
    t->add_option("--aligned-out", tr.aligned_out, "Write the aligned sequence here");
    t->add_option("--out", tr.out, "Motion CSV")->required();
    t->add_option("--timing", tr.timing, "Write per-pair seconds (JSON)");

    TrainArgs tn;
    auto* n = app.add_subcommand("train", "Train the attention refiner on simulated sequences");
    n->add_option("--data", tn.data, "Sequence directories written by simulate")->required();
    n->add_option("--split", tn.split, "Train, validation, test fractions");
    n->add_option("--epochs", tn.epochs);
    n->add_option("--seed", tn.seed);
    n->add_option("--lr", tn.lr);
    n->add_option("--batch", tn.batch);
    n->add_option("--weight-decay", tn.weight_decay);
    n->add_option("--eval-every", tn.eval_every, "Epochs between validation tracking runs (0: never)");
    n->add_option("--out", tn.out, "Model file")->required();
    n->add_option("--loss-csv", tn.loss_csv, "Loss curve CSV (default: <out>.loss.csv)");

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "Compare a motion CSV with ground truth");
    e->add_option("--motion", ev.motion)->required();
    e->add_option("--truth", ev.truth)->required();
    e->add_option("--in", ev.in, "Original sequence (enables ssd_pre, dice, ssd_post)");
    e->add_option("--aligned", ev.aligned, "Aligned sequence (default: align --in with --motion)");
    e->add_option("--out", ev.out, "Report CSV")->required();
    e->add_option("--json", ev.json_out, "Summary JSON");
    e->add_option("--timing", ev.timing, "Timing JSON written by track");

    ReportArgs rp;
    auto* r = app.add_subcommand("report", "Render SVG plots from report CSVs");
    r->add_option("--in", rp.in, "Report CSVs")->required();
    r->add_option("--out", rp.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ConfigError& ex) {
        const std::string what = ex.what();
        const std::string prefix = "INI was not able to parse ";
        if (what.rfind(prefix, 0) == 0)
            err << "error: unknown configuration key '" << what.substr(prefix.size()) << "'\n";
        else
            err << "error: " << what << '\n';
        return kUsage;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << "\n\n" << app.help();
        return kUsage;
    } catch (const ConfigError& ex) {
        err << "error: " << ex.what() << '\n';
        return kUsage;
    }

    const int previous_threads = threads_setting();
    if (threads > 0) set_threads(threads);
    struct RestoreThreads {
        int value;
        ~RestoreThreads() { set_threads(value); }
    } restore{previous_threads};

    try {
        if (s->parsed()) cmd_simulate(sim);
        if (t->parsed()) cmd_track(tr, err);
        if (n->parsed()) cmd_train(tn, err);
        if (e->parsed()) cmd_evaluate(ev);
        if (r->parsed()) cmd_report(rp);
        return kOk;
    } catch (const ConfigError& ex) {
        err << "error: " << ex.what() << '\n';
        return kUsage;
    } catch (const SchemaError& ex) {
        err << "error: " << ex.what() << '\n';
        return kUsage;
    } catch (const InvalidChannelSpec& ex) {
        err << "error: " << ex.what() << '\n';
        return kUsage;
    } catch (const IoError& ex) {
        err << "error: " << ex.what() << '\n';
        return kIoFailure;
    } catch (const fs::filesystem_error& ex) {
        err << "error: " << ex.what() << '\n';
        return kIoFailure;
    } catch (const DegenerateGeometry& ex) {
        err << "error: " << ex.what() << '\n';
        return kDegenerate;
    } catch (const DivergenceDetected& ex) {
        err << "error: " << ex.what() << '\n';
        return kDivergence;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kFailure;
    }
}

} // namespace spaer::cli
