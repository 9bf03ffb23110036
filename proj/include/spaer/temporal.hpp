#pragma once

#include "spaer/autodiff.hpp"
#include "spaer/eqfeatures.hpp"
#include "spaer/errors.hpp"
#include "spaer/parallel.hpp"
#include "spaer/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace spaer {

using ad::Matrix;

/// T x d tokens (one flattened point cloud per frame) plus the time of each frame.
struct TokenSequence {
    Matrix tokens;
    std::vector<double> frame_times;

    [[nodiscard]] Eigen::Index frames() const { return tokens.rows(); }
    [[nodiscard]] Eigen::Index dim() const { return tokens.cols(); }

    void validate() const {
        if (tokens.cols() % 3 != 0) throw ShapeMismatch("token dimension must be a multiple of 3");
        if (static_cast<Eigen::Index>(frame_times.size()) != tokens.rows())
            throw ShapeMismatch("one frame time per token row required");
    }

    /// Frame times 0, 1, ..., T-1.
    static TokenSequence indexed(Matrix tokens) {
        std::vector<double> times(static_cast<std::size_t>(tokens.rows()));
        std::iota(times.begin(), times.end(), 0.0);
        return {std::move(tokens), std::move(times)};
    }
};

/// rho(t, 2i) = sin(alpha_i t), rho(t, 2i+1) = cos(alpha_i t), alpha_i = 10^(-8i/d).
inline Matrix positional_encoding(const std::vector<double>& frame_times, Eigen::Index d) {
    if (d <= 0 || d % 2 != 0) throw ShapeMismatch("positional encoding needs an even, positive dimension");
    Matrix rho(static_cast<Eigen::Index>(frame_times.size()), d);
    for (Eigen::Index t = 0; t < rho.rows(); ++t)
        for (Eigen::Index i = 0; 2 * i < d; ++i) {
            const double alpha = std::pow(10.0, -8.0 * static_cast<double>(i) / static_cast<double>(d));
            const double x = alpha * frame_times[static_cast<std::size_t>(t)];
            rho(t, 2 * i) = std::sin(x);
            rho(t, 2 * i + 1) = std::cos(x);
        }
    return rho;
}

inline Matrix positional_encoding(Eigen::Index frames, Eigen::Index d) {
    if (frames < 1) throw ShapeMismatch("positional encoding needs at least one frame");
    std::vector<double> times(static_cast<std::size_t>(frames));
    std::iota(times.begin(), times.end(), 0.0);
    return positional_encoding(times, d);
}

struct AttentionLayer {
    Matrix wq, wk, wv, wo; ///< d x d
    Matrix w1;             ///< d x 4d
    Matrix w2;             ///< 4d x d
    Matrix ls_attn, ls_ffn; ///< 1 x d layer-scale
};

inline constexpr int kTensorsPerLayer = 8;
inline constexpr int kFeedForwardExpansion = 4;

/// Parameters of a pre-activation-free, bias-free multi-head attention stack.
struct AttentionParams {
    int heads = 4;
    std::vector<AttentionLayer> layers;

    [[nodiscard]] Eigen::Index dim() const { return layers.empty() ? 0 : layers.front().wq.rows(); }

    /// Xavier-uniform projections, zero output projections, unit layer-scale.
    /// The stack is exactly the identity map at this point.
    static AttentionParams initialize(Eigen::Index d, int heads = 4, int n_layers = 3, std::uint64_t seed = 0) {
        if (d <= 0 || heads <= 0 || d % heads != 0) throw ShapeMismatch("token dimension must be divisible by heads");
        Rng rng(seed);
        auto xavier = [&](Eigen::Index rows, Eigen::Index cols) {
            const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
            Matrix m(rows, cols);
            for (Eigen::Index c = 0; c < cols; ++c)
                for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-limit, limit);
            return m;
        };
        const Eigen::Index hidden = kFeedForwardExpansion * d;
        AttentionParams p;
        p.heads = heads;
        for (int l = 0; l < n_layers; ++l) {
            AttentionLayer layer;
            layer.wq = xavier(d, d);
            layer.wk = xavier(d, d);
            layer.wv = xavier(d, d);
            layer.wo = Matrix::Zero(d, d);
            layer.w1 = xavier(d, hidden);
            layer.w2 = Matrix::Zero(hidden, d);
            layer.ls_attn = Matrix::Ones(1, d);
            layer.ls_ffn = Matrix::Ones(1, d);
            p.layers.push_back(std::move(layer));
        }
        return p;
    }

    /// Tensors in declaration order: per layer wq, wk, wv, wo, w1, w2, ls_attn, ls_ffn.
    [[nodiscard]] std::vector<Matrix> tensors() const {
        std::vector<Matrix> out;
        out.reserve(layers.size() * kTensorsPerLayer);
        for (const auto& l : layers)
            for (const Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2, &l.ls_attn, &l.ls_ffn}) out.push_back(*m);
        return out;
    }

    static AttentionParams from_tensors(const std::vector<Matrix>& t, int heads) {
        if (t.size() % kTensorsPerLayer != 0) throw ShapeMismatch("tensor count is not a multiple of the layer size");
        AttentionParams p;
        p.heads = heads;
        for (std::size_t i = 0; i < t.size(); i += kTensorsPerLayer)
            p.layers.push_back({t[i], t[i + 1], t[i + 2], t[i + 3], t[i + 4], t[i + 5], t[i + 6], t[i + 7]});
        p.validate();
        return p;
    }

    void validate() const {
        if (layers.empty()) throw ShapeMismatch("attention stack has no layers");
        const Eigen::Index d = dim();
        if (heads <= 0 || d % heads != 0) throw ShapeMismatch("token dimension must be divisible by heads");
        const Eigen::Index h = kFeedForwardExpansion * d;
        auto expect = [](const Matrix& m, Eigen::Index r, Eigen::Index c, const char* name) {
            if (m.rows() != r || m.cols() != c) throw ShapeMismatch(std::string("attention tensor ") + name + " has the wrong shape");
            if (!m.allFinite()) throw NonFiniteInput(std::string("attention tensor ") + name + " is not finite");
        };
        for (const auto& l : layers) {
            expect(l.wq, d, d, "wq");
            expect(l.wk, d, d, "wk");
            expect(l.wv, d, d, "wv");
            expect(l.wo, d, d, "wo");
            expect(l.w1, d, h, "w1");
            expect(l.w2, h, d, "w2");
            expect(l.ls_attn, 1, d, "ls_attn");
            expect(l.ls_ffn, 1, d, "ls_ffn");
        }
    }
};

/// Residual stream of the stack on `h0` (T x d). `params` are tape leaves in
/// AttentionParams::tensors() order.
inline ad::Var attention_stack(ad::Tape& tape, ad::Var h0, const std::vector<ad::Var>& params, int heads) {
    const Eigen::Index d = h0.cols();
    const Eigen::Index dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    ad::Var h = h0;
    for (std::size_t base = 0; base + kTensorsPerLayer <= params.size(); base += kTensorsPerLayer) {
        const ad::Var q = tape.matmul(h, params[base + 0]);
        const ad::Var k = tape.matmul(h, params[base + 1]);
        const ad::Var v = tape.matmul(h, params[base + 2]);
        std::vector<ad::Var> outs;
        for (int hd = 0; hd < heads; ++hd) {
            const ad::Var qh = tape.slice_columns(q, hd * dh, dh);
            const ad::Var kh = tape.slice_columns(k, hd * dh, dh);
            const ad::Var vh = tape.slice_columns(v, hd * dh, dh);
            const ad::Var weights = tape.softmax_rows(tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt));
            outs.push_back(tape.matmul(weights, vh));
        }
        const ad::Var attn = tape.matmul(tape.hconcat(outs), params[base + 3]);
        h = tape.add(h, tape.scale_columns(attn, params[base + 6]));
        const ad::Var ffn = tape.matmul(tape.gelu(tape.matmul(h, params[base + 4])), params[base + 5]);
        h = tape.add(h, tape.scale_columns(ffn, params[base + 7]));
    }
    return h;
}

/// Refined tokens z = x + (h_L - h_0) with h_0 = x + rho. Zero output
/// projections leave every residual update exactly zero, so z == x bitwise.
inline TokenSequence attend(const TokenSequence& seq, const AttentionParams& params) {
    seq.validate();
    params.validate();
    if (seq.dim() != params.dim()) throw ShapeMismatch("token dimension does not match attention parameters");
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (auto& m : params.tensors()) leaves.push_back(tape.leaf(std::move(m)));
    const ad::Var h0 = tape.leaf(seq.tokens + positional_encoding(seq.frame_times, seq.dim()));
    const ad::Var hl = attention_stack(tape, h0, leaves, params.heads);
    return {seq.tokens + (hl.value() - h0.value()), seq.frame_times};
}

/// Flattens per-frame clouds into tokens, expressed as (p - center) / scale.
/// Invalid channels contribute their stored point (the world origin).
inline TokenSequence tokens_from_clouds(const std::vector<PointCloud>& clouds, const Vec3& center, double scale) {
    if (clouds.empty()) throw ShapeMismatch("no point clouds");
    const std::size_t k = clouds.front().size();
    Matrix x(static_cast<Eigen::Index>(clouds.size()), static_cast<Eigen::Index>(3 * k));
    for (std::size_t t = 0; t < clouds.size(); ++t) {
        if (clouds[t].size() != k) throw ShapeMismatch("point clouds differ in size");
        for (std::size_t c = 0; c < k; ++c) {
            const Vec3 u = (clouds[t].points[c] - center) / scale;
            for (int a = 0; a < 3; ++a) x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(3 * c + a)) = u[a];
        }
    }
    return TokenSequence::indexed(std::move(x));
}

/// Applies refined-token offsets back onto the original clouds: p' = p + scale * (z - x).
inline std::vector<PointCloud> refine_clouds(const std::vector<PointCloud>& clouds, const TokenSequence& input,
                                             const TokenSequence& refined, double scale) {
    std::vector<PointCloud> out = clouds;
    for (std::size_t t = 0; t < out.size(); ++t)
        for (std::size_t c = 0; c < out[t].size(); ++c)
            for (int a = 0; a < 3; ++a) {
                const auto r = static_cast<Eigen::Index>(t);
                const auto col = static_cast<Eigen::Index>(3 * c + a);
                out[t].points[c][a] += scale * (refined.tokens(r, col) - input.tokens(r, col));
            }
    return out;
}

// ---------------------------------------------------------------- training

struct TrainConfig {
    double learning_rate = 1e-5;
    int batch_size = 4;
    double beta = 0.5;          ///< weight of l_Geo in the logged image-space objective
    int epochs = 20;
    std::uint64_t seed = 0;
    bool cosine_schedule = true;
    double min_lr_fraction = 1e-3;
    double weight_decay = 1e-4;
    int eval_every = 0;          ///< epochs between image-space objective evaluations (0: never)

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
        if (!(min_lr_fraction > 0.0 && min_lr_fraction <= 1.0)) throw ConfigError("min_lr_fraction must be in (0, 1]");
        if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
    }
};

/// Learning rate for epoch e in [1, epochs]: cosine from lr0 down to lr0 * min_lr_fraction.
inline double scheduled_lr(const TrainConfig& cfg, int epoch) {
    if (!cfg.cosine_schedule || cfg.epochs <= 1) return cfg.learning_rate;
    const double lr_min = cfg.learning_rate * cfg.min_lr_fraction;
    const double progress = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs - 1);
    return lr_min + 0.5 * (cfg.learning_rate - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Adam (Kingma and Ba) over a list of tensors.
class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit Adam(const std::vector<Matrix>& like) {
        for (const auto& m : like) {
            m_.push_back(Matrix::Zero(m.rows(), m.cols()));
            v_.push_back(Matrix::Zero(m.rows(), m.cols()));
        }
    }

    void step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, t_);
        const double c2 = 1.0 - std::pow(beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1 * m_[i] + (1.0 - beta1) * grads[i];
            v_[i] = beta2 * v_[i] + (1.0 - beta2) * grads[i].cwiseProduct(grads[i]);
            params[i].array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
        }
    }

private:
    std::vector<Matrix> m_, v_;
    int t_ = 0;
};

/// One training sequence: normalized input tokens and normalized target tokens.
struct TrainingSample {
    TokenSequence input;
    Matrix target;
    Matrix weights; ///< per-entry weights of the squared error, same shape as target; empty means all 1
};

/// Surrogate data term sum_t |z_t - zhat_t|^2 (entry-weighted when the sample has weights) on the tape.
inline ad::Var surrogate_data_loss(ad::Tape& tape, const TrainingSample& s, const std::vector<ad::Var>& params,
                                   int heads) {
    const ad::Var x = tape.leaf(s.input.tokens);
    const ad::Var h0 = tape.leaf(s.input.tokens + positional_encoding(s.input.frame_times, s.input.dim()));
    const ad::Var hl = attention_stack(tape, h0, params, heads);
    const ad::Var z = tape.add(x, tape.sub(hl, h0));
    const ad::Var diff = tape.sub(z, tape.leaf(s.target));
    if (s.weights.size() == 0) return tape.sum_squares(diff);
    return tape.sum_squares(tape.hadamard(tape.leaf(s.weights.cwiseSqrt()), diff));
}

inline double surrogate_data_value(const TrainingSample& s, const AttentionParams& params) {
    const TokenSequence z = attend(s.input, params);
    if (s.weights.size() == 0) return (z.tokens - s.target).squaredNorm();
    return (s.weights.array() * (z.tokens - s.target).array().square()).sum();
}

/// Mean data term over a set of samples.
inline double mean_surrogate_loss(const std::vector<TrainingSample>& samples, const AttentionParams& params) {
    if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> each(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) { each[i] = surrogate_data_value(samples[i], params); });
    double sum = 0.0;
    for (double v : each) sum += v;
    return sum / static_cast<double>(samples.size());
}

struct EpochRecord {
    int epoch = 0;
    double learning_rate = 0.0;
    double train_loss = 0.0; ///< mean data term over the training set after the epoch
    double val_loss = 0.0;   ///< mean data term over the validation set
    double objective = std::numeric_limits<double>::quiet_NaN(); ///< image-space objective, when evaluated
    double selection = std::numeric_limits<double>::quiet_NaN(); ///< checkpoint score, when evaluated
};

struct TrainResult {
    AttentionParams best;
    int best_epoch = 0;
    std::vector<EpochRecord> history; ///< epoch 0 is the state before any update
};

/// Scalar evaluation of a parameter set; lower is better.
using ObjectiveFn = std::function<double(const AttentionParams&)>;

/// Minimizes mean_batch(sum_t |z_t - zhat_t|^2) + weight_decay * |params|^2 with
/// Adam. Every cfg.eval_every epochs (epoch 0 included) `objective` is logged
/// and `selection` scored. The returned parameters have the lowest selection
/// score when `selection` is given, else the lowest validation loss (the
/// training loss with an empty validation set). Epoch 0 takes part, so the
/// untrained stack wins unless training improved the score.
inline TrainResult train(const std::vector<TrainingSample>& train_set, const std::vector<TrainingSample>& val_set,
                         AttentionParams init, const TrainConfig& cfg, const ObjectiveFn& objective = {},
                         const ObjectiveFn& selection = {}) {
    cfg.validate();
    init.validate();
    if (train_set.empty()) throw EmptyDataset("training set is empty");
    for (const auto* set : {&train_set, &val_set})
        for (const auto& s : *set) {
            s.input.validate();
            if (s.input.dim() != init.dim() || s.target.rows() != s.input.frames() || s.target.cols() != s.input.dim())
                throw ShapeMismatch("training sample shape does not match the attention parameters");
            if (s.weights.size() != 0 && (s.weights.rows() != s.target.rows() || s.weights.cols() != s.target.cols()))
                throw ShapeMismatch("training sample weights do not match its target");
        }

    const int heads = init.heads;
    std::vector<Matrix> params = init.tensors();
    Adam adam(params);
    Rng rng = Rng::derived(cfg.seed, 0x747261696eULL);

    TrainResult result;
    double best_score = std::numeric_limits<double>::infinity();
    auto record = [&](int epoch, double lr) {
        const AttentionParams current = AttentionParams::from_tensors(params, heads);
        EpochRecord r;
        r.epoch = epoch;
        r.learning_rate = lr;
        r.train_loss = mean_surrogate_loss(train_set, current);
        r.val_loss = val_set.empty() ? r.train_loss : mean_surrogate_loss(val_set, current);
        if (!std::isfinite(r.train_loss) || !std::isfinite(r.val_loss))
            throw DivergenceDetected("training loss is not finite at epoch " + std::to_string(epoch));
        const bool evaluate = cfg.eval_every > 0 && epoch % cfg.eval_every == 0;
        if (evaluate && objective) r.objective = objective(current);
        if (evaluate && selection) {
            r.selection = selection(current);
            if (!std::isfinite(r.selection)) throw DivergenceDetected("selection score is not finite at epoch " + std::to_string(epoch));
        }
        result.history.push_back(r);
        const double score = selection && cfg.eval_every > 0 ? r.selection : r.val_loss;
        if (score < best_score) {
            best_score = score;
            result.best = current;
            result.best_epoch = epoch;
        }
    };
    record(0, 0.0);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = scheduled_lr(cfg, epoch);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next() % i]);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<ad::GradientResult> parts(end - start);
            try {
                parallel_for(parts.size(), [&](std::size_t b) {
                    const TrainingSample& s = train_set[order[start + b]];
                    parts[b] = ad::gradient(
                        [&](ad::Tape& tape, const std::vector<ad::Var>& leaves) {
                            return surrogate_data_loss(tape, s, leaves, heads);
                        },
                        params);
                });
            } catch (const NonFiniteGradient& e) {
                throw DivergenceDetected(std::string("epoch ") + std::to_string(epoch) + ": " + e.what());
            }
            const double inv = 1.0 / static_cast<double>(parts.size());
            std::vector<Matrix> grads;
            for (std::size_t i = 0; i < params.size(); ++i) {
                Matrix g = 2.0 * cfg.weight_decay * params[i];
                for (const auto& p : parts) g += inv * p.grads[i];
                grads.push_back(std::move(g));
            }
            for (const auto& p : parts)
                if (!std::isfinite(p.loss)) throw DivergenceDetected("batch loss is not finite at epoch " + std::to_string(epoch));
            adam.step(params, grads, lr);
        }
        record(epoch, lr);
    }
    return result;
}

} // namespace spaer
