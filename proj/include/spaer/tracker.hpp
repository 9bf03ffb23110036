#pragma once

#include "spaer/diffeo.hpp"
#include "spaer/eqfeatures.hpp"
#include "spaer/errors.hpp"
#include "spaer/geometry.hpp"
#include "spaer/motion.hpp"
#include "spaer/procrustes.hpp"
#include "spaer/temporal.hpp"
#include "spaer/volume.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace spaer {

struct TrackOptions {
    bool diffeo = false;
    SvfConfig svf;
    bool background_floor = true; ///< remove the robust background level before feature extraction
    double presmooth_sigma_mm = 6.0; ///< Gaussian applied before the filter bank; 0 disables
};

/// Per-pair and whole-sequence wall-clock seconds of a track() call.
struct TrackTiming {
    std::vector<double> pair_seconds;
    double sequence_seconds = 0.0;
};

namespace detail {

/// Zeroes values at or below median + 3 robust sigma (MAD based) and rescales.
inline Volume remove_background(Volume n) {
    std::vector<double> v(n.values());
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    const double median = *mid;
    for (double& x : v) x = std::abs(x - median);
    std::nth_element(v.begin(), mid, v.end());
    const double floor = median + 3.0 * 1.4826 * *mid;
    if (!(floor > 0.0)) return n;
    for (double& x : n.data()) x = std::max(0.0, x - floor);
    return normalize_intensity(n);
}

using Clock = std::chrono::steady_clock;
inline double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

} // namespace detail

/// Rescales to [0, 1] and optionally removes the background level; on volumes
/// whose background is exactly 0 that step changes nothing. A positive
/// `presmooth_sigma_mm` then applies a Gaussian: interpolation blur differs
/// from frame to frame and the nonlinear channels amplify it, so a common
/// extra blur makes the per-frame difference matter less.
inline Volume preprocess(const Volume& vol, bool background_floor, double presmooth_sigma_mm = 0.0) {
    Volume n = normalize_intensity(vol);
    if (n.size() == 0) return n;
    if (background_floor) n = detail::remove_background(std::move(n));
    if (presmooth_sigma_mm > 0.0) n = gaussian_smooth(n, presmooth_sigma_mm);
    return n;
}

/// Point clouds of every frame (preprocessed), optionally refined by attention.
inline std::vector<PointCloud> sequence_clouds(const std::vector<Volume>& prepared, const FilterBank& bank,
                                               const AttentionParams* params, std::vector<double>* frame_seconds = nullptr) {
    std::vector<PointCloud> clouds;
    clouds.reserve(prepared.size());
    for (const auto& f : prepared) {
        const auto t0 = detail::Clock::now();
        clouds.push_back(representation(bank, f));
        if (frame_seconds) frame_seconds->push_back(detail::seconds_since(t0));
    }
    if (params) {
        const Grid& g = prepared.front().grid();
        const double scale = g.half_extent();
        const TokenSequence tokens = tokens_from_clouds(clouds, g.center(), scale);
        clouds = refine_clouds(clouds, tokens, attend(tokens, *params), scale);
    }
    return clouds;
}

namespace detail {
inline RigidTransform pair_estimate(const std::vector<PointCloud>& clouds, std::size_t t) {
    try {
        return estimate_rigid(clouds[t], clouds[t + 1]).transform;
    } catch (const DegenerateGeometry& e) {
        throw DegenerateGeometry("frame " + std::to_string(t) + ": " + e.what(), static_cast<int>(t));
    }
}
} // namespace detail

/// Pairwise Kabsch estimates between consecutive clouds, accumulated to frame 0.
inline MotionSequence motion_from_clouds(const std::vector<PointCloud>& clouds) {
    if (clouds.size() < 2) throw LengthMismatch("tracking needs at least two frames");
    std::vector<RigidTransform> pairwise;
    for (std::size_t t = 0; t + 1 < clouds.size(); ++t) pairwise.push_back(detail::pair_estimate(clouds, t));
    return MotionSequence::from_pairwise(std::move(pairwise));
}

/// Training pair for the attention stack: tokens of the observed frames and, as
/// target, the clean phantom's cloud moved by the true pose of each frame.
/// Channels that are invalid in the phantom or the frame keep their input value.
/// Each frame's entries are weighted like the aligner weights its points: by
/// channel mass, normalized to mean 1 over the channels.
inline TrainingSample make_training_sample(const std::vector<Volume>& frames, const Volume& phantom,
                                          const MotionSequence& truth, const FilterBank& bank,
                                          const TrackOptions& opts = {}) {
    if (frames.size() != truth.frames()) throw LengthMismatch("frames and ground truth differ in length");
    if (frames.empty()) throw LengthMismatch("no frames");
    for (const auto& f : frames) require_same_grid(f.grid(), phantom.grid(), "make_training_sample");
    std::vector<Volume> prepared;
    for (const auto& f : frames) prepared.push_back(preprocess(f, opts.background_floor, opts.presmooth_sigma_mm));
    const auto clouds = sequence_clouds(prepared, bank, nullptr);
    const PointCloud reference = representation(bank, preprocess(phantom, opts.background_floor, opts.presmooth_sigma_mm));

    std::vector<PointCloud> targets = clouds;
    for (std::size_t t = 0; t < targets.size(); ++t)
        for (std::size_t c = 0; c < targets[t].size(); ++c)
            if (reference.valid(c) && clouds[t].valid(c)) targets[t].points[c] = apply(truth.accumulated[t], reference.points[c]);

    const Grid& g = phantom.grid();
    TrainingSample sample{tokens_from_clouds(clouds, g.center(), g.half_extent()), Matrix(), Matrix()};
    sample.target = tokens_from_clouds(targets, g.center(), g.half_extent()).tokens;
    sample.weights = Matrix::Zero(sample.target.rows(), sample.target.cols());
    for (std::size_t t = 0; t < clouds.size(); ++t) {
        double total = 0.0;
        for (std::size_t c = 0; c < clouds[t].size(); ++c)
            if (clouds[t].valid(c) && reference.valid(c)) total += clouds[t].masses[c];
        if (!(total > 0.0)) continue;
        for (std::size_t c = 0; c < clouds[t].size(); ++c)
            if (clouds[t].valid(c) && reference.valid(c))
                sample.weights.block(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(3 * c), 1, 3).setConstant(
                    clouds[t].masses[c] * static_cast<double>(clouds[t].size()) / total);
    }
    return sample;
}

/// Pairwise rigid tracking of a sequence, accumulated to frame 0. With
/// opts.diffeo, each rigidly aligned frame t >= 1 is additionally registered to
/// frame 0 and the resulting displacement stored in `residuals`.
inline MotionSequence track(const std::vector<Volume>& seq, const FilterBank& bank,
                            const AttentionParams* params = nullptr, const TrackOptions& opts = {},
                            TrackTiming* timing = nullptr) {
    const auto start = detail::Clock::now();
    if (seq.size() < 2) throw LengthMismatch("tracking needs at least two frames");
    for (const auto& f : seq) require_same_grid(f.grid(), seq.front().grid(), "track");
    bank.validate();
    if (params) params->validate();

    std::vector<double> frame_secs;
    std::vector<Volume> prepared;
    prepared.reserve(seq.size());
    for (const auto& f : seq) {
        const auto t0 = detail::Clock::now();
        prepared.push_back(preprocess(f, opts.background_floor, opts.presmooth_sigma_mm));
        frame_secs.push_back(detail::seconds_since(t0));
    }
    std::vector<double> feature_secs;
    const auto clouds = sequence_clouds(prepared, bank, params, &feature_secs);

    std::vector<double> pair_secs(seq.size() - 1, 0.0);
    std::vector<RigidTransform> pairwise;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
        const auto t0 = detail::Clock::now();
        pairwise.push_back(detail::pair_estimate(clouds, t));
        pair_secs[t] = detail::seconds_since(t0) + frame_secs[t + 1] + feature_secs[t + 1];
    }
    MotionSequence motion = MotionSequence::from_pairwise(std::move(pairwise));

    if (opts.diffeo) {
        motion.residuals.assign(seq.size(), DeformationField(seq.front().grid()));
        for (std::size_t t = 1; t < seq.size(); ++t) {
            const auto t0 = detail::Clock::now();
            const Volume rigid = resample_rigid(prepared[t], motion.accumulated[t]);
            const SvfResult reg = register_svf(rigid, prepared[0], opts.svf);
            motion.residuals[t] = exponentiate(reg.velocity, opts.svf.steps);
            pair_secs[t - 1] += detail::seconds_since(t0);
        }
    }
    if (timing) {
        timing->pair_seconds = std::move(pair_secs);
        timing->sequence_seconds = detail::seconds_since(start);
    }
    return motion;
}

inline std::vector<Volume> align(const std::vector<Volume>& seq, const MotionSequence& motion) {
    if (seq.size() != motion.frames()) throw LengthMismatch("sequence and motion differ in length");
    if (!motion.residuals.empty() && motion.residuals.size() != seq.size())
        throw LengthMismatch("residual field count does not match the sequence");
    std::vector<Volume> out(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t) {
        Volume v = resample_rigid(seq[t], motion.accumulated[t]);
        if (!motion.residuals.empty()) v = warp(v, motion.residuals[t]);
        out[t] = std::move(v);
    }
    return out;
}

/// A sequence prepared once for repeated evaluation of the image-space
/// objective: the normalized frames and their unrefined clouds.
struct ObjectiveSequence {
    std::vector<Volume> frames;
    std::vector<PointCloud> clouds;
};

inline ObjectiveSequence prepare_objective_sequence(const std::vector<Volume>& seq, const FilterBank& bank,
                                                    const TrackOptions& opts = {}) {
    if (seq.size() < 2) throw LengthMismatch("objective needs at least two frames");
    ObjectiveSequence out;
    std::vector<Volume> prepared;
    for (const auto& f : seq) {
        require_same_grid(f.grid(), seq.front().grid(), "prepare_objective_sequence");
        out.frames.push_back(normalize_intensity(f));
        prepared.push_back(preprocess(f, opts.background_floor, opts.presmooth_sigma_mm));
    }
    out.clouds = sequence_clouds(prepared, bank, nullptr);
    return out;
}

/// Motion of a prepared sequence under `params` (nullptr: no attention).
inline MotionSequence estimate_motion(const ObjectiveSequence& seq, const AttentionParams* params) {
    std::vector<PointCloud> clouds = seq.clouds;
    if (params) {
        const Grid& g = seq.frames.front().grid();
        const double scale = g.half_extent();
        const TokenSequence tokens = tokens_from_clouds(clouds, g.center(), scale);
        clouds = refine_clouds(clouds, tokens, attend(tokens, *params), scale);
    }
    return motion_from_clouds(clouds);
}

/// Mean ssd between adjacent frames after rigid alignment with the estimated motion.
inline double alignment_objective(const ObjectiveSequence& seq, const AttentionParams* params) {
    const std::vector<Volume> aligned = align(seq.frames, estimate_motion(seq, params));
    double sum = 0.0;
    for (std::size_t t = 0; t + 1 < aligned.size(); ++t) sum += ssd(aligned[t + 1], aligned[t]);
    return sum / static_cast<double>(aligned.size() - 1);
}

/// Mean pairwise translation error (mm) plus mean pairwise angular error (deg).
inline double pose_error(const ObjectiveSequence& seq, const AttentionParams* params, const MotionSequence& truth) {
    const MotionSequence est = estimate_motion(seq, params);
    if (est.transforms.size() != truth.transforms.size()) throw LengthMismatch("estimated and true motion differ in length");
    double sum = 0.0;
    for (std::size_t t = 0; t < est.transforms.size(); ++t)
        sum += (est.transforms[t].translation - truth.transforms[t].translation).norm() +
               geodesic_angle(est.transforms[t].rotation, truth.transforms[t].rotation);
    return sum / static_cast<double>(est.transforms.size());
}

struct PairMetrics {
    double trans_err_mm = 0.0;
    double ang_err_deg = 0.0;
    double acc_trans_err_mm = 0.0; ///< error of the accumulated transform to frame t+1
    double acc_ang_err_deg = 0.0;
    double dice = 0.0;             ///< aligned frame t+1 against the reference
    double ssd_pre = std::numeric_limits<double>::quiet_NaN();
    double ssd_post = 0.0;
    double ncc_pre = std::numeric_limits<double>::quiet_NaN();
    double ncc_post = 0.0;
    double secs = std::numeric_limits<double>::quiet_NaN();
};

struct Stat {
    double mean = 0.0;
    double std = 0.0; ///< sample standard deviation (n - 1); 0 for a single value
};

inline Stat mean_std(const std::vector<double>& v) {
    Stat s;
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double acc = 0.0;
        for (double x : v) acc += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(acc / static_cast<double>(v.size() - 1));
    }
    return s;
}

struct TrackingReport {
    std::vector<PairMetrics> pairs;
    double sequence_seconds = std::numeric_limits<double>::quiet_NaN();

    template <class Field>
    [[nodiscard]] Stat stat(Field field) const {
        std::vector<double> v;
        v.reserve(pairs.size());
        for (const auto& p : pairs) v.push_back(p.*field);
        return mean_std(v);
    }
};

inline constexpr double kDiceThreshold = 0.5;

/// Compares estimated and true motion pair by pair. `aligned` are the frames
/// after alignment with the estimate and `reference` the target of the dice
/// overlap (normally frame 0). When `original` frames are given, ssd_pre and
/// ncc_pre compare adjacent unaligned frames.
inline TrackingReport evaluate(const MotionSequence& estimated, const MotionSequence& truth,
                               const std::vector<Volume>& aligned, const Volume& reference,
                               const std::vector<Volume>& original = {}) {
    if (estimated.transforms.size() != truth.transforms.size() || estimated.frames() != truth.frames())
        throw LengthMismatch("estimated and true motion differ in length");
    if (!aligned.empty() && aligned.size() != estimated.frames())
        throw LengthMismatch("aligned sequence length does not match the motion");
    if (!original.empty() && original.size() != estimated.frames())
        throw LengthMismatch("original sequence length does not match the motion");

    std::vector<Volume> norm_aligned, norm_original;
    for (const auto& v : aligned) norm_aligned.push_back(normalize_intensity(v));
    for (const auto& v : original) norm_original.push_back(normalize_intensity(v));
    const Volume norm_ref = aligned.empty() ? Volume() : normalize_intensity(reference);

    TrackingReport report;
    for (std::size_t t = 0; t < estimated.transforms.size(); ++t) {
        const RigidTransform& e = estimated.transforms[t];
        const RigidTransform& g = truth.transforms[t];
        PairMetrics m;
        m.trans_err_mm = (e.translation - g.translation).norm();
        m.ang_err_deg = geodesic_angle(e.rotation, g.rotation);
        const RigidTransform& ea = estimated.accumulated[t + 1];
        const RigidTransform& ga = truth.accumulated[t + 1];
        m.acc_trans_err_mm = (ea.translation - ga.translation).norm();
        m.acc_ang_err_deg = geodesic_angle(ea.rotation, ga.rotation);
        if (!aligned.empty()) {
            m.dice = dice(norm_aligned[t + 1], norm_ref, kDiceThreshold);
            m.ssd_post = ssd(norm_aligned[t + 1], norm_aligned[t]);
            m.ncc_post = ncc(norm_aligned[t + 1], norm_aligned[t]);
        } else {
            m.dice = m.ssd_post = m.ncc_post = std::numeric_limits<double>::quiet_NaN();
        }
        if (!original.empty()) {
            m.ssd_pre = ssd(norm_original[t + 1], norm_original[t]);
            m.ncc_pre = ncc(norm_original[t + 1], norm_original[t]);
        }
        report.pairs.push_back(m);
    }
    return report;
}

} // namespace spaer
