#pragma once

#include "ocumesh/errors.hpp"
#include "ocumesh/features.hpp"
#include "ocumesh/gaze.hpp"
#include "ocumesh/geometry.hpp"
#include "ocumesh/labeling.hpp"
#include "ocumesh/losses.hpp"
#include "ocumesh/mesh.hpp"
#include "ocumesh/parallel.hpp"
#include "ocumesh/rng.hpp"
#include "ocumesh/synthworld.hpp"
#include "ocumesh/template.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace ocumesh {

/// Output layout: per eye (left, right) a 6-value rotation residual, a 3-value center
/// offset in units of the anchor scale and a log-scale correction; then a 3-value
/// residual for the direct gaze head.
inline constexpr int kEyeOutputs = 10;
inline constexpr int kOutputSize = 2 * kEyeOutputs + 3;

struct ModelDescriptor {
    std::vector<int> widths{kFeatureSize, 32, 32, kOutputSize};
    std::string activation = "tanh";

    void validate() const {
        if (widths.size() < 2) {
            throw ParameterError("model needs at least an input and an output layer");
        }
        for (int w : widths) {
            if (w <= 0) {
                throw ParameterError("layer widths must be positive");
            }
        }
        if (widths.front() != kFeatureSize) {
            throw ParameterError("input width must equal the feature size " + std::to_string(kFeatureSize));
        }
        if (widths.back() != kOutputSize) {
            throw ParameterError("output width must equal " + std::to_string(kOutputSize));
        }
        if (activation != "tanh" && activation != "relu") {
            throw ParameterError("activation must be 'tanh' or 'relu'");
        }
    }
};

/// Σ_l (w_l·w_{l+1} + w_{l+1}): weights then biases, layer by layer.
inline std::size_t parameter_count(const std::vector<int>& widths) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        n += static_cast<std::size_t>(widths[l]) * widths[l + 1] + widths[l + 1];
    }
    return n;
}

struct Model {
    ModelDescriptor descriptor;
    Eigen::VectorXd params;
};

/// Gaussian weights scaled by 1/sqrt(fan-in) (0.1/sqrt(fan-in) on the output layer) and
/// zero biases, so a zero feature decodes to identity-posed eyes.
inline Model init_model(const ModelDescriptor& descriptor, std::uint64_t seed) {
    descriptor.validate();
    Model m;
    m.descriptor = descriptor;
    m.params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count(descriptor.widths)));
    CounterRng rng(seed, 0, 7);
    Eigen::Index k = 0;
    const auto& w = descriptor.widths;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        const bool last = l + 2 == w.size();
        const double sigma = (last ? 0.1 : 1.0) / std::sqrt(static_cast<double>(w[l]));
        for (int i = 0; i < w[l] * w[l + 1]; ++i) {
            m.params(k++) = rng.normal(0.0, sigma);
        }
        k += w[l + 1];
    }
    return m;
}

// ---------------------------------------------------------------------------
// 6D rotation encoding

/// First two columns of R, stored as residuals from the identity's columns.
inline Eigen::Matrix<double, 6, 1> encode_rotation(const Rotation& r) {
    Eigen::Matrix<double, 6, 1> out;
    out.head<3>() = r.matrix().col(0) - Vec3::UnitX();
    out.tail<3>() = r.matrix().col(1) - Vec3::UnitY();
    return out;
}

struct RotationDecode {
    Vec3 a1, a2, u2;
    double n1 = 1.0, n2 = 1.0;
    Mat3 r;
};

/// Gram-Schmidt on (e1 + head, e2 + tail); the third column is their cross product.
inline RotationDecode decode_rotation_cached(const Eigen::Ref<const Eigen::VectorXd>& six) {
    RotationDecode d;
    d.a1 = Vec3::UnitX() + six.head<3>();
    d.a2 = Vec3::UnitY() + six.segment<3>(3);
    d.n1 = d.a1.norm();
    if (!(d.n1 > 1e-12)) {
        throw ParameterError("degenerate rotation encoding");
    }
    const Vec3 b1 = d.a1 / d.n1;
    d.u2 = d.a2 - b1.dot(d.a2) * b1;
    d.n2 = d.u2.norm();
    if (!(d.n2 > 1e-12)) {
        throw ParameterError("degenerate rotation encoding");
    }
    const Vec3 b2 = d.u2 / d.n2;
    d.r.col(0) = b1;
    d.r.col(1) = b2;
    d.r.col(2) = b1.cross(b2);
    return d;
}

inline Rotation decode_rotation(const Eigen::Matrix<double, 6, 1>& six) {
    return Rotation::unchecked(decode_rotation_cached(six).r);
}

/// Pulls ∂L/∂R back to the six encoding values.
inline Eigen::Matrix<double, 6, 1> decode_rotation_backward(const RotationDecode& d, const Mat3& g_r) {
    const Vec3 b1 = d.r.col(0), b2 = d.r.col(1);
    const Vec3 g3 = g_r.col(2);
    Vec3 g_b1 = g_r.col(0) + b2.cross(g3);
    const Vec3 g_b2 = g_r.col(1) + g3.cross(b1);
    const Vec3 g_u2 = (g_b2 - b2 * b2.dot(g_b2)) / d.n2;
    const Vec3 g_a2 = g_u2 - b1 * b1.dot(g_u2);
    g_b1 -= b1.dot(d.a2) * g_u2 + d.a2 * b1.dot(g_u2);
    const Vec3 g_a1 = (g_b1 - b1 * b1.dot(g_b1)) / d.n1;
    Eigen::Matrix<double, 6, 1> out;
    out.head<3>() = g_a1;
    out.tail<3>() = g_a2;
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct EyeDecode {
    RotationDecode rotation;
    Vec3 center = Vec3::Zero();
    double scale = 1.0;
    double frame_scale = 1.0;
};

struct ForwardPass {
    std::vector<Eigen::VectorXd> activations; ///< input, hidden..., output
    std::array<EyeDecode, 2> eyes;
    VertexPair vertices;
    Vec3 direct_raw = -Vec3::UnitZ();
};

struct Prediction {
    EyeMeshPair eyes;
    GazeVector direct;
    GazeVector gaze; ///< fused mesh + direct gaze
};

namespace detail {

struct LayerView {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w;
    Eigen::Map<const Eigen::VectorXd> b;
};

inline LayerView layer(const Model& m, std::size_t l, Eigen::Index& offset) {
    const auto& ws = m.descriptor.widths;
    const int in = ws[l], out = ws[l + 1];
    LayerView v{{m.params.data() + offset, out, in}, {m.params.data() + offset + in * out, out}};
    offset += static_cast<Eigen::Index>(in) * out + out;
    return v;
}

inline double activate(const std::string& act, double x) { return act == "relu" ? std::max(0.0, x) : std::tanh(x); }

inline double activate_grad(const std::string& act, double y) {
    return act == "relu" ? (y > 0.0 ? 1.0 : 0.0) : 1.0 - y * y;
}

} // namespace detail

inline ForwardPass run_forward(const Model& m, const ModelInput& input, const TemplatePair& shapes = {}) {
    const auto& ws = m.descriptor.widths;
    if (input.feature.size() != ws.front()) {
        throw ParameterError("feature length " + std::to_string(input.feature.size()) + " does not match model input " +
                             std::to_string(ws.front()));
    }
    ForwardPass f;
    f.activations.reserve(ws.size());
    f.activations.push_back(input.feature);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < ws.size(); ++l) {
        const auto L = detail::layer(m, l, offset);
        Eigen::VectorXd z = L.w * f.activations.back() + L.b;
        if (l + 2 < ws.size()) {
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                z(i) = detail::activate(m.descriptor.activation, z(i));
            }
        }
        f.activations.push_back(std::move(z));
    }
    const Eigen::VectorXd& out = f.activations.back();
    for (Side side : {Side::Left, Side::Right}) {
        const int e = side == Side::Left ? 0 : 1;
        const auto o = out.segment<kEyeOutputs>(e * kEyeOutputs);
        const EyeFrame& frame = input.frame(side);
        EyeDecode& d = f.eyes[e];
        d.rotation = decode_rotation_cached(o.head<6>());
        d.frame_scale = frame.scale;
        d.center = frame.center + frame.scale * o.segment<3>(6);
        d.scale = frame.scale * std::exp(o(9));
        Points v = shapes[side]->vertices * (d.scale * d.rotation.r).transpose();
        v.rowwise() += d.center.transpose();
        (side == Side::Left ? f.vertices.left : f.vertices.right) = std::move(v);
    }
    f.direct_raw = -Vec3::UnitZ() + out.tail<3>();
    return f;
}

inline Prediction predict(const Model& m, const ModelInput& input, const TemplatePair& shapes = {}) {
    const ForwardPass f = run_forward(m, input, shapes);
    auto mesh = [&](Side side) {
        const EyeDecode& d = f.eyes[side == Side::Left ? 0 : 1];
        return EyeMesh(shapes[side], EyePose{d.center, d.scale, Rotation::unchecked(d.rotation.r)});
    };
    Prediction p{{mesh(Side::Left), mesh(Side::Right)}, GazeVector(f.direct_raw), GazeVector()};
    p.gaze = fuse_gaze(gaze_from_mesh(p.eyes.left), gaze_from_mesh(p.eyes.right), p.direct);
    return p;
}

/// Adds weight·∂L/∂θ into `grad` given ∂L/∂(vertices, direct gaze) from a forward pass.
inline void backward(const Model& m, const ForwardPass& f, const Gradients& g, double weight, Eigen::VectorXd& grad,
                     const TemplatePair& shapes = {}) {
    const auto& ws = m.descriptor.widths;
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(kOutputSize);
    for (Side side : {Side::Left, Side::Right}) {
        const Points& gv = side == Side::Left ? g.left : g.right;
        if (gv.rows() == 0) {
            continue;
        }
        const int e = side == Side::Left ? 0 : 1;
        const EyeDecode& d = f.eyes[e];
        const Points& t = shapes[side]->vertices;
        const Vec3 g_center = gv.colwise().sum().transpose();
        const Mat3 gt_t = gv.transpose() * t;
        const double g_scale = (gt_t.cwiseProduct(d.rotation.r)).sum();
        const Mat3 g_rot = d.scale * gt_t;
        auto o = delta.segment<kEyeOutputs>(e * kEyeOutputs);
        o.head<6>() = decode_rotation_backward(d.rotation, g_rot);
        o.segment<3>(6) = d.frame_scale * g_center;
        o(9) = g_scale * d.scale;
    }
    delta.tail<3>() = g.gaze;
    delta *= weight;

    // layer offsets, then walk backwards
    std::vector<Eigen::Index> offsets(ws.size() - 1);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < ws.size(); ++l) {
        offsets[l] = offset;
        offset += static_cast<Eigen::Index>(ws[l]) * ws[l + 1] + ws[l + 1];
    }
    for (std::size_t l = ws.size() - 1; l-- > 0;) {
        const int in = ws[l], out = ws[l + 1];
        const Eigen::VectorXd& a_in = f.activations[l];
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
            grad.data() + offsets[l], out, in);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets[l] + static_cast<Eigen::Index>(in) * out, out);
        gw.noalias() += delta * a_in.transpose();
        gb += delta;
        if (l == 0) {
            break;
        }
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
            m.params.data() + offsets[l], out, in);
        Eigen::VectorXd prev = w.transpose() * delta;
        for (Eigen::Index i = 0; i < prev.size(); ++i) {
            prev(i) *= detail::activate_grad(m.descriptor.activation, a_in(i));
        }
        delta = std::move(prev);
    }
}

// ---------------------------------------------------------------------------
// Training data

struct SupervisedExample {
    ModelInput input;
    VertexPair target;
    Vec3 target_gaze = -Vec3::UnitZ();
};

struct PairExample {
    ModelInput view1;
    ModelInput view2;
    SimilarityTransform p;
};

struct EvalExample {
    ModelInput input;
    GazeVector gaze;
    double yaw = 0.0;
};

struct TrainingData {
    std::vector<SupervisedExample> gt;
    std::vector<SupervisedExample> pgt;
    std::vector<PairExample> mv;
    std::vector<EvalExample> validation;
};

inline SupervisedExample supervised_example(const ModelInput& input, const EyeMeshPair& target, const GazeVector& g) {
    return {input, VertexPair::of(target), g.vec()};
}

/// Ground-truth example: template fitted to the iris landmarks with the sample's gaze label.
inline SupervisedExample gt_example(const SyntheticSample& s, const TemplatePair& shapes = {}) {
    const GazeVector label = s.anchors.gaze ? *s.anchors.gaze : s.true_gaze;
    return supervised_example(make_model_input(s.anchors), fit_gt_pair(s.anchors, label.vec(), shapes), label);
}

/// Pseudo-labelled examples with the scene's label corruption applied.
inline std::vector<SupervisedExample> pgt_examples(std::span<const SyntheticSample> samples, const SceneConfig& cfg,
                                                   const TemplatePair& shapes = {}) {
    std::vector<PseudoLabel> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) {
        auto [eyes, diag] = pseudo_label(s.anchors, shapes);
        labels.push_back({eyes, pair_gaze(eyes)});
    }
    labels = corrupt_pseudo_labels(std::move(labels), cfg);
    std::vector<SupervisedExample> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out.push_back(supervised_example(make_model_input(samples[i].anchors), labels[i].eyes, labels[i].gaze));
    }
    return out;
}

inline PairExample pair_example(const ViewPair& pair) {
    return {make_model_input(pair.view1.anchors), make_model_input(pair.view2.anchors), pair.p};
}

inline EvalExample eval_example(const SyntheticSample& s) {
    return {make_model_input(s.anchors), s.true_gaze, s.head_pose.yaw};
}

// ---------------------------------------------------------------------------
// Loss over a batch

struct BatchView {
    std::span<const SupervisedExample> gt;
    std::span<const SupervisedExample> pgt;
    std::span<const PairExample> mv;
};

struct TermValue {
    double value = 0.0;
    Eigen::VectorXd grad;
};

namespace detail {

inline TermValue supervised_term(const Model& m, const SupervisedExample& ex, const LossWeights& w,
                                 const TemplatePair& shapes, bool want_grad) {
    const ForwardPass f = run_forward(m, ex.input, shapes);
    const LossValueGrad l = combined_supervised_loss(f.vertices, f.direct_raw, ex.target, ex.target_gaze, shapes, w);
    TermValue out{l.value, {}};
    if (want_grad) {
        out.grad = Eigen::VectorXd::Zero(m.params.size());
        backward(m, f, l.grad, 1.0, out.grad, shapes);
    }
    return out;
}

inline TermValue pair_term(const Model& m, const PairExample& ex, const LossWeights& w, const TemplatePair& shapes,
                           bool want_grad) {
    const ForwardPass f1 = run_forward(m, ex.view1, shapes);
    const ForwardPass f2 = run_forward(m, ex.view2, shapes);
    const PairLossValueGrad l = mv_loss(f1.vertices, f1.direct_raw, f2.vertices, f2.direct_raw, ex.p, w);
    TermValue out{l.value, {}};
    if (want_grad) {
        out.grad = Eigen::VectorXd::Zero(m.params.size());
        backward(m, f1, l.view1, 1.0, out.grad, shapes);
        backward(m, f2, l.view2, 1.0, out.grad, shapes);
    }
    return out;
}

} // namespace detail

struct BatchLoss {
    double gt = 0.0;  ///< mean L_GT over the batch's ground-truth examples
    double pgt = 0.0; ///< mean L_PGT
    double mv = 0.0;  ///< mean L_MV
    double total = 0.0;
    Eigen::VectorXd grad;
};

/// Weighted batch objective: λ_GT·mean(L_GT) + λ_PGT·mean(L_PGT) + λ_MV·mean(L_MV).
/// Per-example work may run on several threads; the reduction is in example order.
inline BatchLoss batch_loss(const Model& m, const BatchView& batch, const LossWeights& w, bool want_grad,
                            unsigned threads = 1, const TemplatePair& shapes = {}) {
    const std::size_t n_gt = batch.gt.size(), n_pgt = batch.pgt.size(), n_mv = batch.mv.size();
    std::vector<TermValue> terms(n_gt + n_pgt + n_mv);
    parallel_for(terms.size(), threads, [&](std::size_t i) {
        if (i < n_gt) {
            terms[i] = detail::supervised_term(m, batch.gt[i], w, shapes, want_grad);
        } else if (i < n_gt + n_pgt) {
            terms[i] = detail::supervised_term(m, batch.pgt[i - n_gt], w, shapes, want_grad);
        } else {
            terms[i] = detail::pair_term(m, batch.mv[i - n_gt - n_pgt], w, shapes, want_grad);
        }
    });
    BatchLoss out;
    if (want_grad) {
        out.grad = Eigen::VectorXd::Zero(m.params.size());
    }
    auto reduce = [&](std::size_t begin, std::size_t count, double lambda, double& mean) {
        if (count == 0) {
            return;
        }
        double sum = 0.0;
        const double scale = lambda / static_cast<double>(count);
        for (std::size_t i = begin; i < begin + count; ++i) {
            sum += terms[i].value;
            if (want_grad) {
                out.grad += scale * terms[i].grad;
            }
        }
        mean = sum / static_cast<double>(count);
    };
    reduce(0, n_gt, w.gt, out.gt);
    reduce(n_gt, n_pgt, w.pgt, out.pgt);
    reduce(n_gt + n_pgt, n_mv, w.mv, out.mv);
    out.total = total_loss(n_gt ? std::optional(out.gt) : std::nullopt, n_pgt ? std::optional(out.pgt) : std::nullopt,
                           n_mv ? std::optional(out.mv) : std::nullopt, w);
    return out;
}

/// Central differences (step h) against the analytic gradient on `n_params` parameters
/// chosen by `seed`. Returns max |a − n| / max(|a|, |n|, floor).
inline double grad_check(const Model& m, const BatchView& batch, const LossWeights& w, int n_params = 50,
                         std::uint64_t seed = 1, double h = 1e-5, double floor = 1e-6) {
    const BatchLoss analytic = batch_loss(m, batch, w, true);
    Model probe = m;
    CounterRng rng(seed, 0, 11);
    const auto n = static_cast<std::uint64_t>(m.params.size());
    double worst = 0.0;
    for (int k = 0; k < n_params; ++k) {
        const auto i = static_cast<Eigen::Index>(rng.below(n));
        const double x = m.params(i);
        probe.params(i) = x + h;
        const double up = batch_loss(probe, batch, w, false).total;
        probe.params(i) = x - h;
        const double down = batch_loss(probe, batch, w, false).total;
        probe.params(i) = x;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic.grad(i);
        worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Training

enum class Mixing { RoundRobin, Joint };

struct TrainConfig {
    std::uint64_t seed = 1;
    int epochs = 100;
    int batch_size = 32;
    double base_step = 1e-2;
    int warmup_epochs = 3;
    std::vector<int> decay_epochs{60, 80};
    double decay_factor = 0.1;
    double momentum = 0.9;
    LossWeights weights;
    bool use_gt = true;
    bool use_pgt = false;
    bool use_mv = false;
    /// RoundRobin: each step takes one mini-batch from one source, cycling over the enabled
    /// sources. Joint: each step takes one mini-batch from every enabled source.
    Mixing mixing = Mixing::RoundRobin;
    /// Gradient norm cap per step; 0 disables.
    double clip_norm = 0.0;
    unsigned threads = 1;
    /// Run a gradient check every this many epochs (0 = never).
    int grad_check_every = 0;

    void validate() const {
        if (epochs <= 0 || batch_size <= 0) {
            throw ParameterError("epochs and batch size must be positive");
        }
        if (!(base_step > 0.0) || warmup_epochs < 0 || !(decay_factor > 0.0 && decay_factor <= 1.0) ||
            !(momentum >= 0.0 && momentum < 1.0) || clip_norm < 0.0) {
            throw ParameterError("invalid step size schedule");
        }
        for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
            if (decay_epochs[i] < warmup_epochs || (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])) {
                throw ParameterError("decay epochs must be increasing and after warmup");
            }
        }
        weights.validate();
    }

    /// Linear warmup from base/100 to base, then multiplied by decay_factor at each decay epoch.
    double step_size(int epoch) const {
        if (epoch < warmup_epochs) {
            const double start = base_step * 0.01;
            return start + (base_step - start) * static_cast<double>(epoch) / warmup_epochs;
        }
        double lr = base_step;
        for (int d : decay_epochs) {
            if (epoch >= d) {
                lr *= decay_factor;
            }
        }
        return lr;
    }
};

struct EpochStats {
    double gt = 0.0;
    double pgt = 0.0;
    double mv = 0.0;
    double total = 0.0;
    double step_size = 0.0;
    std::optional<double> validation_error;
    std::optional<double> grad_check_error;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

/// Mean fused-gaze angular error over `examples`.
inline double mean_angular_error(const Model& m, std::span<const EvalExample> examples,
                                 const TemplatePair& shapes = {}) {
    if (examples.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (const auto& ex : examples) {
        sum += angular_error(predict(m, ex.input, shapes).gaze, ex.gaze);
    }
    return sum / static_cast<double>(examples.size());
}

namespace detail {

inline std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t epoch, std::uint64_t source) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    CounterRng rng(seed, epoch, 100 + source);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.below(i)]);
    }
    return idx;
}

} // namespace detail

/// Mini-batch gradient descent with momentum on the enabled loss terms. Deterministic
/// for a given seed, independent of the thread count.
inline std::pair<Model, TrainHistory> train(Model model, const TrainingData& data, const TrainConfig& cfg,
                                            const TemplatePair& shapes = {}) {
    cfg.validate();
    model.descriptor.validate();
    if (!cfg.use_gt && !cfg.use_pgt && !cfg.use_mv) {
        throw TrainingError("no supervision enabled");
    }
    if ((cfg.use_gt && data.gt.empty()) || (cfg.use_pgt && data.pgt.empty()) || (cfg.use_mv && data.mv.empty())) {
        throw TrainingError("an enabled supervision source has no data");
    }

    enum Source { Gt = 0, Pgt = 1, Mv = 2 };
    std::vector<int> sources;
    if (cfg.use_gt) sources.push_back(Gt);
    if (cfg.use_pgt) sources.push_back(Pgt);
    if (cfg.use_mv) sources.push_back(Mv);
    auto source_size = [&](int s) {
        return s == Gt ? data.gt.size() : (s == Pgt ? data.pgt.size() : data.mv.size());
    };
    const auto batch = static_cast<std::size_t>(cfg.batch_size);

    TrainHistory history;
    Eigen::VectorXd velocity = Eigen::VectorXd::Zero(model.params.size());
    std::vector<SupervisedExample> gt_buf, pgt_buf;
    std::vector<PairExample> mv_buf;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.step_size(epoch);
        std::map<int, std::vector<std::size_t>> order;
        std::map<int, std::size_t> cursor;
        std::size_t max_batches = 0;
        for (int s : sources) {
            order[s] = detail::shuffled(source_size(s), cfg.seed, static_cast<std::uint64_t>(epoch), s);
            max_batches = std::max(max_batches, (source_size(s) + batch - 1) / batch);
        }

        // step plan: list of source sets
        std::vector<std::vector<int>> plan;
        if (cfg.mixing == Mixing::Joint) {
            plan.assign(max_batches, sources);
        } else {
            std::map<int, std::size_t> remaining;
            for (int s : sources) {
                remaining[s] = (source_size(s) + batch - 1) / batch;
            }
            bool any = true;
            while (any) {
                any = false;
                for (int s : sources) {
                    if (remaining[s] > 0) {
                        --remaining[s];
                        plan.push_back({s});
                        any = true;
                    }
                }
            }
        }

        EpochStats stats;
        stats.step_size = lr;
        std::array<double, 3> sum{0.0, 0.0, 0.0};
        std::array<std::size_t, 3> count{0, 0, 0};
        for (std::size_t step = 0; step < plan.size(); ++step) {
            gt_buf.clear();
            pgt_buf.clear();
            mv_buf.clear();
            for (int s : plan[step]) {
                const auto& ord = order[s];
                std::size_t& c = cursor[s];
                const std::size_t n = ord.size();
                const std::size_t take = cfg.mixing == Mixing::Joint ? std::min(batch, n) : std::min(batch, n - c);
                for (std::size_t k = 0; k < take; ++k) {
                    const std::size_t idx = ord[(c + k) % n];
                    if (s == Gt) gt_buf.push_back(data.gt[idx]);
                    if (s == Pgt) pgt_buf.push_back(data.pgt[idx]);
                    if (s == Mv) mv_buf.push_back(data.mv[idx]);
                }
                c = (c + take) % std::max<std::size_t>(n, 1);
                if (cfg.mixing == Mixing::RoundRobin && c == 0 && take < batch) {
                    c = n; // exhausted for this epoch
                }
            }
            BatchLoss loss;
            try {
                loss = batch_loss(model, {gt_buf, pgt_buf, mv_buf}, cfg.weights, true, cfg.threads, shapes);
            } catch (const ParameterError& e) {
                // non-finite outputs surface as degenerate gaze or pose errors
                std::ostringstream msg;
                msg << "non-finite model output at epoch " << epoch << ", step " << step << " (step size=" << lr
                    << "): " << e.what();
                throw TrainingError(msg.str());
            }
            if (!std::isfinite(loss.total) || !loss.grad.allFinite()) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", step " << step << " (gt=" << loss.gt
                    << ", pgt=" << loss.pgt << ", mv=" << loss.mv << ", step size=" << lr << ")";
                throw TrainingError(msg.str());
            }
            sum[Gt] += loss.gt * static_cast<double>(gt_buf.size());
            sum[Pgt] += loss.pgt * static_cast<double>(pgt_buf.size());
            sum[Mv] += loss.mv * static_cast<double>(mv_buf.size());
            count[Gt] += gt_buf.size();
            count[Pgt] += pgt_buf.size();
            count[Mv] += mv_buf.size();

            Eigen::VectorXd g = loss.grad;
            if (cfg.clip_norm > 0.0) {
                const double norm = g.norm();
                if (norm > cfg.clip_norm) {
                    g *= cfg.clip_norm / norm;
                }
            }
            velocity = cfg.momentum * velocity - lr * g;
            model.params += velocity;
        }
        stats.gt = count[Gt] ? sum[Gt] / static_cast<double>(count[Gt]) : 0.0;
        stats.pgt = count[Pgt] ? sum[Pgt] / static_cast<double>(count[Pgt]) : 0.0;
        stats.mv = count[Mv] ? sum[Mv] / static_cast<double>(count[Mv]) : 0.0;
        stats.total = total_loss(count[Gt] ? std::optional(stats.gt) : std::nullopt,
                                 count[Pgt] ? std::optional(stats.pgt) : std::nullopt,
                                 count[Mv] ? std::optional(stats.mv) : std::nullopt, cfg.weights);
        if (!data.validation.empty()) {
            stats.validation_error = mean_angular_error(model, data.validation, shapes);
        }
        if (cfg.grad_check_every > 0 && (epoch + 1) % cfg.grad_check_every == 0) {
            const auto take = [](auto& v) { return std::span(v.data(), std::min<std::size_t>(v.size(), 4)); };
            const BatchView probe{cfg.use_gt ? take(data.gt) : std::span<const SupervisedExample>{},
                                  cfg.use_pgt ? take(data.pgt) : std::span<const SupervisedExample>{},
                                  cfg.use_mv ? take(data.mv) : std::span<const PairExample>{}};
            stats.grad_check_error = grad_check(model, probe, cfg.weights, 50, cfg.seed + epoch);
        }
        history.epochs.push_back(stats);
    }
    return {std::move(model), std::move(history)};
}

// ---------------------------------------------------------------------------
// Ablation

struct Scenario {
    std::string name;
    bool use_gt = true;
    bool use_pgt = false;
    bool use_mv = false;
    /// Restrict the pseudo/multi-view world to |yaw| <= cap.
    std::optional<double> pseudo_yaw_cap;
};

struct AblationSetup {
    SceneConfig gt_world;
    SceneConfig pseudo_world;
    SceneConfig test_world;
    double view_delta_sigma = 20.0;
    ModelDescriptor descriptor;
    TrainConfig train;
    std::vector<double> bins{5.0, 20.0, 40.0, 90.0};
};

struct AblationRow {
    std::string name;
    std::vector<BinRow> bins;
    double mean_error = 0.0;
    TrainHistory history;
};

/// Builds the datasets an individual scenario needs.
inline TrainingData scenario_data(const Scenario& sc, const AblationSetup& setup, const TemplatePair& shapes = {}) {
    TrainingData data;
    if (sc.use_gt) {
        for (const auto& s : generate(setup.gt_world, shapes)) {
            data.gt.push_back(gt_example(s, shapes));
        }
    }
    if (sc.use_pgt || sc.use_mv) {
        SceneConfig pw = setup.pseudo_world;
        if (sc.pseudo_yaw_cap) {
            pw.yaw_range = {-*sc.pseudo_yaw_cap, *sc.pseudo_yaw_cap};
        }
        const std::vector<ViewPair> pairs = generate_pairs(pw, setup.view_delta_sigma, shapes);
        if (sc.use_pgt) {
            std::vector<SyntheticSample> views;
            views.reserve(pairs.size());
            for (const auto& p : pairs) {
                views.push_back(p.view1);
            }
            data.pgt = pgt_examples(views, pw, shapes);
        }
        if (sc.use_mv) {
            for (const auto& p : pairs) {
                data.mv.push_back(pair_example(p));
            }
        }
    }
    return data;
}

/// Trains every scenario from the same seed and evaluates on the test world.
inline std::vector<AblationRow> run_ablation(std::span<const Scenario> scenarios, const AblationSetup& setup,
                                             const TemplatePair& shapes = {}) {
    std::vector<EvalExample> test;
    for (const auto& s : generate(setup.test_world, shapes)) {
        test.push_back(eval_example(s));
    }
    std::vector<AblationRow> rows;
    for (const auto& sc : scenarios) {
        TrainConfig cfg = setup.train;
        cfg.use_gt = sc.use_gt;
        cfg.use_pgt = sc.use_pgt;
        cfg.use_mv = sc.use_mv;
        const TrainingData data = scenario_data(sc, setup, shapes);
        auto [model, history] = train(init_model(setup.descriptor, cfg.seed), data, cfg, shapes);

        std::vector<YawError> errors;
        errors.reserve(test.size());
        double sum = 0.0;
        for (const auto& ex : test) {
            const double e = angular_error(predict(model, ex.input, shapes).gaze, ex.gaze);
            errors.push_back({ex.yaw, e});
            sum += e;
        }
        AblationRow row;
        row.name = sc.name;
        row.bins = yaw_binned_report(errors, setup.bins);
        row.mean_error = test.empty() ? 0.0 : sum / static_cast<double>(test.size());
        row.history = std::move(history);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace ocumesh
