#pragma once

#include "ocumesh/errors.hpp"
#include "ocumesh/features.hpp"
#include "ocumesh/gaze.hpp"
#include "ocumesh/geometry.hpp"
#include "ocumesh/labeling.hpp"
#include "ocumesh/mesh.hpp"
#include "ocumesh/rng.hpp"
#include "ocumesh/template.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ocumesh {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Scene distribution. Angles in degrees, lengths in pixels.
struct SceneConfig {
    std::uint64_t seed = 1;
    int n_samples = 1000;
    Range yaw_range{-90.0, 90.0};
    Range pitch_range{-20.0, 20.0};
    double gaze_cone = 25.0;
    double iris_noise_px = 0.0;
    double pitch_label_noise_deg = 0.0;
    double yaw_label_noise_deg = 0.0;
    double anchor_noise = 0.0;
    double eye_scale_px = 20.0;
    /// Snap head-relative gaze onto template vertex directions, so that the pupil lands
    /// exactly on a vertex of the face-aligned eyeball.
    bool snap_gaze_to_vertices = false;

    void validate() const {
        if (!(yaw_range.lo <= yaw_range.hi) || !(pitch_range.lo <= pitch_range.hi)) {
            throw ParameterError("scene ranges must be well ordered");
        }
        if (n_samples < 0) {
            throw ParameterError("n_samples must be non-negative");
        }
        for (double s : {iris_noise_px, pitch_label_noise_deg, yaw_label_noise_deg, anchor_noise}) {
            if (!std::isfinite(s) || s < 0.0) {
                throw ParameterError("noise sigmas must be finite and non-negative");
            }
        }
        if (pitch_label_noise_deg < yaw_label_noise_deg) {
            throw ParameterError("pitch label noise must be at least the yaw label noise");
        }
        if (!(eye_scale_px > 0.0) || !(gaze_cone >= 0.0) || gaze_cone > 90.0) {
            throw ParameterError("eye scale must be positive and gaze cone within [0, 90]");
        }
    }
};

/// Noise-free latent state of one subject in one view.
struct SubjectState {
    Vec3 head_center = Vec3::Zero();
    double yaw = 0.0;
    double pitch = 0.0;
    Vec3 gaze_in_head = -Vec3::UnitZ();
    double eye_scale = 20.0;

    Rotation head_rotation() const { return yaw_pitch_rotation(yaw, pitch); }
};

struct SyntheticSample {
    std::string id;
    GazeVector true_gaze;
    EyeMeshPair true_eyeballs;
    YawPitch head_pose;
    FaceAnchors anchors;
    Eigen::VectorXd feature;
    SubjectState state;
};

struct ViewPair {
    SyntheticSample view1;
    SyntheticSample view2;
    SimilarityTransform p;
};

/// Eye placement in the head frame, in units of the eyeball radius.
namespace world {
inline constexpr double kEyeLateral = 2.6;
inline constexpr double kEyeForward = 3.0;
inline constexpr double kCanthusForward = 0.5;
inline constexpr double kHeadDepth = 400.0;
inline constexpr double kHeadShift = 40.0;
} // namespace world

namespace detail {

inline Vec3 eye_offset_in_head(Side side, double scale) {
    return scale * Vec3(side == Side::Left ? world::kEyeLateral : -world::kEyeLateral, 0.0, -world::kEyeForward);
}

inline Vec3 snap_to_vertices(const Vec3& dir, const EyeballTemplate& t) {
    int best = 0;
    double best_dot = -2.0;
    for (int i = 0; i < t.vertex_count(); ++i) {
        const double d = t.vertices.row(i).dot(dir.transpose());
        if (d > best_dot) {
            best_dot = d;
            best = i;
        }
    }
    return t.vertices.row(best).transpose();
}

} // namespace detail

/// Noise-free eyeballs for a subject state.
inline EyeMeshPair place_eyes(const SubjectState& s, const TemplatePair& shapes = {}) {
    const Rotation head = s.head_rotation();
    const Rotation eye = head * rotation_between(-Vec3::UnitZ(), s.gaze_in_head);
    auto place = [&](Side side) {
        return EyeMesh(shapes[side], EyePose{s.head_center + head * detail::eye_offset_in_head(side, s.eye_scale),
                                             s.eye_scale, eye});
    };
    return {place(Side::Left), place(Side::Right)};
}

/// Anchors and iris landmarks observed from a subject state, with configured noise.
/// Draw order: anchors (left corners, left centroid, right corners, right centroid; xyz each),
/// then iris landmarks (left then right; xy each).
inline FaceAnchors observe(const SubjectState& s, const EyeMeshPair& eyes, const SceneConfig& cfg,
                           CounterRng& rng) {
    const Rotation head = s.head_rotation();
    const Vec3 lateral = head * Vec3::UnitX();
    const Vec3 forward = head * -Vec3::UnitZ();
    FaceAnchors a;
    auto noisy = [&](const Vec3& v) {
        Vec3 out = v;
        for (int c = 0; c < 3; ++c) {
            out(c) += rng.normal(0.0, cfg.anchor_noise);
        }
        return out;
    };
    for (Side side : {Side::Left, Side::Right}) {
        const Vec3& c = eyes[side].center();
        const double r = s.eye_scale;
        EyeAnchors& e = side == Side::Left ? a.left : a.right;
        e.corners[0] = noisy(c - r * lateral + world::kCanthusForward * r * forward);
        e.corners[1] = noisy(c + r * lateral + world::kCanthusForward * r * forward);
        e.centroid = noisy(c);
    }
    for (Side side : {Side::Left, Side::Right}) {
        const EyeMesh& eye = eyes[side];
        const auto& border = region_indices(eye.shape(), Region::IrisBorder);
        Points2 iris(static_cast<Eigen::Index>(border.size()), 2);
        for (std::size_t k = 0; k < border.size(); ++k) {
            const auto row = static_cast<Eigen::Index>(k);
            iris(row, 0) = eye.vertices()(border[k], 0) + rng.normal(0.0, cfg.iris_noise_px);
            iris(row, 1) = eye.vertices()(border[k], 1) + rng.normal(0.0, cfg.iris_noise_px);
        }
        (side == Side::Left ? a.iris_left : a.iris_right) = std::move(iris);
    }
    return a;
}

inline SyntheticSample realize(std::string id, const SubjectState& s, const SceneConfig& cfg, CounterRng& rng,
                               const TemplatePair& shapes = {}) {
    SyntheticSample out;
    out.id = std::move(id);
    out.state = s;
    out.head_pose = {s.yaw, s.pitch};
    out.true_eyeballs = place_eyes(s, shapes);
    out.true_gaze = GazeVector(s.head_rotation() * s.gaze_in_head);
    out.anchors = observe(s, out.true_eyeballs, cfg, rng);
    out.anchors.gaze = out.true_gaze;
    out.feature = make_model_input(out.anchors).feature;
    return out;
}

inline std::string sample_id(std::uint64_t seed, int index) {
    return "s" + std::to_string(seed) + "-" + std::to_string(index);
}

/// Deterministic sample `index` of a scene: head pose, head shift, gaze, then observations.
inline SyntheticSample generate_one(const SceneConfig& cfg, int index, const TemplatePair& shapes = {}) {
    CounterRng rng(cfg.seed, static_cast<std::uint64_t>(index), 0);
    SubjectState s;
    s.yaw = rng.uniform(cfg.yaw_range.lo, cfg.yaw_range.hi);
    s.pitch = rng.uniform(cfg.pitch_range.lo, cfg.pitch_range.hi);
    const double tx = rng.uniform(-world::kHeadShift, world::kHeadShift);
    const double ty = rng.uniform(-world::kHeadShift, world::kHeadShift);
    s.head_center = Vec3(tx, ty, world::kHeadDepth);
    const double cos_cone = std::cos(deg2rad(cfg.gaze_cone));
    const double cos_a = rng.uniform(cos_cone, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    const double sin_a = std::sqrt(std::max(0.0, 1.0 - cos_a * cos_a));
    s.gaze_in_head = Vec3(sin_a * std::cos(phi), sin_a * std::sin(phi), -cos_a);
    if (cfg.snap_gaze_to_vertices) {
        s.gaze_in_head = detail::snap_to_vertices(s.gaze_in_head, *shapes.left);
    }
    s.eye_scale = cfg.eye_scale_px;
    return realize(sample_id(cfg.seed, index), s, cfg, rng, shapes);
}

inline std::vector<SyntheticSample> generate(const SceneConfig& cfg, const TemplatePair& shapes = {}) {
    cfg.validate();
    std::vector<SyntheticSample> out;
    out.reserve(static_cast<std::size_t>(cfg.n_samples));
    for (int i = 0; i < cfg.n_samples; ++i) {
        out.push_back(generate_one(cfg, i, shapes));
    }
    return out;
}

/// Second view of `s` with head pose (yaw + dyaw, pitch + dpitch); yaw clamped to ±90°.
/// The subject rotates rigidly about the head center, so eyes keep their head-relative gaze.
inline ViewPair make_view_pair(const SyntheticSample& s, const SceneConfig& cfg, double dyaw, double dpitch,
                               CounterRng& rng, const TemplatePair& shapes = {}) {
    SubjectState s2 = s.state;
    s2.yaw = std::clamp(s.state.yaw + dyaw, -90.0, 90.0);
    s2.pitch = s.state.pitch + dpitch;
    Rotation delta;
    if (s2.yaw != s.state.yaw || s2.pitch != s.state.pitch) {
        delta = s2.head_rotation() * s.state.head_rotation().transpose();
    }
    const Vec3 t = s.state.head_center - delta * s.state.head_center;
    ViewPair pair;
    pair.view1 = s;
    pair.view2 = realize(s.id + "/v2", s2, cfg, rng, shapes);
    if (s2.yaw == s.state.yaw && s2.pitch == s.state.pitch) {
        pair.view2.true_eyeballs = s.true_eyeballs;
        pair.view2.true_gaze = s.true_gaze;
    } else {
        // express view 2 truth through the exact transform of view 1
        pair.view2.true_eyeballs = {s.true_eyeballs.left.transformed({1.0, delta, t}),
                                    s.true_eyeballs.right.transformed({1.0, delta, t})};
        pair.view2.true_gaze = delta * s.true_gaze;
    }
    pair.p = SimilarityTransform(1.0, delta, t);
    return pair;
}

/// Draws the view deltas from N(0, delta_sigma_deg) (yaw first, then pitch).
inline ViewPair make_view_pair(const SyntheticSample& s, const SceneConfig& cfg, double delta_sigma_deg,
                               CounterRng& rng, const TemplatePair& shapes = {}) {
    const double dyaw = rng.normal(0.0, delta_sigma_deg);
    const double dpitch = rng.normal(0.0, delta_sigma_deg);
    return make_view_pair(s, cfg, dyaw, dpitch, rng, shapes);
}

/// One view pair per generated sample; each pair uses its own stream keyed on the sample index.
inline std::vector<ViewPair> generate_pairs(const SceneConfig& cfg, double delta_sigma_deg = 20.0,
                                            const TemplatePair& shapes = {}) {
    const std::vector<SyntheticSample> samples = generate(cfg, shapes);
    std::vector<ViewPair> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CounterRng rng(cfg.seed, i, 1);
        out.push_back(make_view_pair(samples[i], cfg, delta_sigma_deg, rng, shapes));
    }
    return out;
}

/// Pseudo label: eye meshes plus the gaze they imply.
struct PseudoLabel {
    EyeMeshPair eyes;
    GazeVector gaze;
};

/// Anisotropic label noise: each label's gaze angles are perturbed by
/// (N(0, σ_yaw), N(0, σ_pitch)) and both eyes are rotated about their centers by the
/// matching rotation. Label `i` uses stream (seed, i, 2).
inline std::vector<PseudoLabel> corrupt_pseudo_labels(std::vector<PseudoLabel> labels, const SceneConfig& cfg) {
    cfg.validate();
    if (cfg.pitch_label_noise_deg == 0.0 && cfg.yaw_label_noise_deg == 0.0) {
        return labels;
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        CounterRng rng(cfg.seed, i, 2);
        const double dyaw = rng.normal(0.0, cfg.yaw_label_noise_deg);
        const double dpitch = rng.normal(0.0, cfg.pitch_label_noise_deg);
        PseudoLabel& l = labels[i];
        const YawPitch a = gaze_angles(l.gaze);
        const Rotation before = yaw_pitch_rotation(a.yaw, a.pitch);
        const Rotation after = yaw_pitch_rotation(a.yaw + dyaw, a.pitch + dpitch);
        const Rotation q = after * before.transpose();
        l.eyes = {l.eyes.left.rotated(q), l.eyes.right.rotated(q)};
        l.gaze = q * l.gaze;
    }
    return labels;
}

} // namespace ocumesh
