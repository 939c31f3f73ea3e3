#pragma once

#include "ocumesh/errors.hpp"
#include "ocumesh/gaze.hpp"
#include "ocumesh/geometry.hpp"
#include "ocumesh/mesh.hpp"
#include "ocumesh/template.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ocumesh {

/// 3D anchors of one eye region: the two canthi and the eye-region centroid.
struct EyeAnchors {
    std::array<Vec3, 2> corners{Vec3::Zero(), Vec3::Zero()};
    Vec3 centroid = Vec3::Zero();

    /// Eyeball radius used for alignment: half the canthus-to-canthus distance.
    double eyeball_scale() const { return 0.5 * (corners[0] - corners[1]).norm(); }
};

struct FaceAnchors {
    EyeAnchors left;
    EyeAnchors right;
    Points2 iris_left;
    Points2 iris_right;
    std::optional<GazeVector> gaze;

    const EyeAnchors& eye(Side side) const { return side == Side::Left ? left : right; }
    const Points2& iris(Side side) const { return side == Side::Left ? iris_left : iris_right; }
};

struct EyeDiagnostics {
    double correction_angle = 0.0; ///< degrees
    double lift_residual = 0.0;    ///< mean xy distance of lifted iris points to their vertices
};

struct PseudoLabelDiagnostics {
    EyeDiagnostics left;
    EyeDiagnostics right;
    std::vector<std::string> warnings;
};

struct LiftResult {
    std::vector<int> indices;
    Points points;
};

/// Head frame recovered from the anchors: x from the right to the left eye centroid,
/// forward (-z) from the eye centroids toward the canthi.
inline Rotation face_rotation(const FaceAnchors& a) {
    const Vec3 lateral = a.left.centroid - a.right.centroid;
    if (lateral.norm() < 1e-12) {
        throw ParameterError("eye centroids coincide");
    }
    const Vec3 x = lateral.normalized();
    const Vec3 corners = 0.25 * (a.left.corners[0] + a.left.corners[1] + a.right.corners[0] + a.right.corners[1]);
    const Vec3 forward_raw = corners - 0.5 * (a.left.centroid + a.right.centroid);
    const Vec3 forward_perp = forward_raw - forward_raw.dot(x) * x;
    if (forward_perp.norm() < 1e-12) {
        throw ParameterError("anchors do not define a forward direction");
    }
    const Vec3 z = -forward_perp.normalized();
    const Vec3 y = z.cross(x);
    Mat3 m;
    m.col(0) = x;
    m.col(1) = y;
    m.col(2) = z;
    return Rotation::unchecked(m);
}

/// Template placed on the anchors with the face orientation (stage one of pseudo-labelling).
inline EyeMesh align_to_face(const FaceAnchors& a, Side side, const TemplatePtr& shape) {
    const EyeAnchors& eye = a.eye(side);
    return {shape, EyePose{eye.centroid, eye.eyeball_scale(), face_rotation(a)}};
}

/// Nearest anterior-facing vertex (outward normal z < 0) for each 2D point by xy distance.
/// Ties go to the lowest index.
inline LiftResult lift_to_3d(const Points2& points_2d, const EyeMesh& mesh) {
    const Points& v = mesh.vertices();
    std::vector<int> candidates;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        if (v(i, 2) - mesh.center().z() < 0.0) {
            candidates.push_back(static_cast<int>(i));
        }
    }
    if (candidates.empty()) {
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            candidates.push_back(static_cast<int>(i));
        }
    }
    LiftResult out;
    out.indices.reserve(points_2d.rows());
    out.points.resize(points_2d.rows(), 3);
    for (Eigen::Index p = 0; p < points_2d.rows(); ++p) {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int i : candidates) {
            const double dx = v(i, 0) - points_2d(p, 0);
            const double dy = v(i, 1) - points_2d(p, 1);
            const double d = dx * dx + dy * dy;
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        out.indices.push_back(best);
        out.points.row(p) = v.row(best);
    }
    return out;
}

namespace detail {

inline void require_iris(const Points2& pts) {
    if (pts.rows() < 3) {
        throw FitError("at least three iris landmarks are required");
    }
    if (!pts.allFinite()) {
        throw FitError("iris landmarks must be finite");
    }
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < pts.rows(); ++j) {
            if ((pts.row(i) - pts.row(j)).squaredNorm() == 0.0) {
                throw FitError("duplicate iris landmarks");
            }
        }
    }
    const Points2 centered = pts.rowwise() - pts.colwise().mean();
    const Eigen::Matrix2d cov = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    if (!(es.eigenvalues()(1) > 0.0) || es.eigenvalues()(0) <= 1e-12 * es.eigenvalues()(1)) {
        throw FitError("iris landmarks are collinear");
    }
}

inline double rms_radius(const Points2& pts) {
    const Points2 centered = pts.rowwise() - pts.colwise().mean();
    return std::sqrt(centered.rowwise().squaredNorm().mean());
}

} // namespace detail

struct GtFitOptions {
    /// Eyeball center depth; when absent the apex is placed at z = 0.
    std::optional<double> center_depth;
    /// Face orientation used as the roll reference; when absent the eye is turned by the
    /// minimal rotation from the optical axis to the gaze.
    std::optional<Rotation> face;
};

/// Ground-truth eyeball from iris landmarks and a known gaze.
///
/// The template is oriented along the gaze; its scale makes the projected iris border
/// match the RMS radius of the landmarks, and its center puts the projected border
/// centroid on the landmark centroid.
inline EyeMesh fit_gt_eyeball(const Points2& iris_2d, const Vec3& gaze, Side side, const TemplatePtr& shape,
                              const GtFitOptions& opts = {}) {
    if (!gaze.allFinite() || std::abs(gaze.norm() - 1.0) > 1e-6) {
        throw ParameterError("gaze must be a unit vector");
    }
    if (!shape || shape->side != side) {
        throw ParameterError("template side does not match");
    }
    detail::require_iris(iris_2d);

    const Vec3 g = gaze.normalized();
    const Rotation r = opts.face ? rotation_between(*opts.face * shape->optical_axis, g) * *opts.face
                                 : rotation_between(shape->optical_axis, g);
    const auto& border = region_indices(*shape, Region::IrisBorder);
    Points2 ring(static_cast<Eigen::Index>(border.size()), 2);
    for (std::size_t k = 0; k < border.size(); ++k) {
        const Vec3 p = r * shape->vertices.row(border[k]).transpose();
        ring.row(static_cast<Eigen::Index>(k)) = p.head<2>().transpose();
    }
    const double s = detail::rms_radius(iris_2d) / detail::rms_radius(ring);
    const Vec2 ring_centroid = ring.colwise().mean().transpose();
    const Vec2 landmark_centroid = iris_2d.colwise().mean().transpose();

    EyePose pose;
    pose.scale = s;
    pose.rotation = r;
    pose.center.head<2>() = landmark_centroid - s * ring_centroid;
    pose.center.z() = opts.center_depth ? *opts.center_depth : -s * g.z();
    return {shape, pose};
}

/// Ground truth for both eyes, taking depth and roll reference from the anchors.
inline EyeMeshPair fit_gt_pair(const FaceAnchors& anchors, const Vec3& gaze, const TemplatePair& shapes = {}) {
    const Rotation face = face_rotation(anchors);
    auto fit = [&](Side side) {
        return fit_gt_eyeball(anchors.iris(side), gaze, side, shapes[side],
                              GtFitOptions{anchors.eye(side).centroid.z(), face});
    };
    return {fit(Side::Left), fit(Side::Right)};
}

/// Pseudo ground truth from face anchors and 2D iris landmarks, without gaze:
/// align the templates to the face, lift the iris to the aligned meshes, and rotate
/// each eye onto the lifted iris center.
///
/// The 2D iris center is the landmark centroid pushed out to the pupil position by the
/// orthographic ring-to-apex ratio 1/cos(iris border angle), measured from the aligned
/// eyeball center.
inline std::pair<EyeMeshPair, PseudoLabelDiagnostics> pseudo_label(const FaceAnchors& anchors,
                                                                   const TemplatePair& shapes = {}) {
    for (Side side : {Side::Left, Side::Right}) {
        const EyeAnchors& e = anchors.eye(side);
        if (!e.centroid.allFinite() || !e.corners[0].allFinite() || !e.corners[1].allFinite() ||
            !(e.eyeball_scale() > 0.0)) {
            throw ParameterError(std::string("missing or degenerate anchors for the ") +
                                 std::string(to_string(side)) + " eye");
        }
        if (anchors.iris(side).rows() < 1 || !anchors.iris(side).allFinite()) {
            throw ParameterError(std::string("missing iris landmarks for the ") + std::string(to_string(side)) +
                                 " eye");
        }
    }

    PseudoLabelDiagnostics diag;
    std::array<EyeMesh, 2> corrected;
    for (Side side : {Side::Left, Side::Right}) {
        const TemplatePtr& shape = shapes[side];
        const EyeMesh aligned = align_to_face(anchors, side, shape);
        const Points2& iris = anchors.iris(side);
        const Vec3& c = aligned.center();

        const LiftResult lifted = lift_to_3d(iris, aligned);
        double residual = 0.0;
        bool inside = false;
        for (Eigen::Index i = 0; i < iris.rows(); ++i) {
            residual += (lifted.points.row(i).head<2>() - iris.row(i)).norm();
            inside = inside || (iris.row(i).transpose() - c.head<2>()).norm() <= aligned.scale();
        }
        residual /= static_cast<double>(iris.rows());
        if (!inside) {
            diag.warnings.push_back(std::string(to_string(side)) +
                                    ": iris lies outside the eyeball footprint; nearest boundary vertex used");
        }

        const double border_angle = region_polar_angle(*shape, Region::IrisBorder);
        const Vec2 centroid = iris.colwise().mean().transpose();
        Points2 pupil(1, 2);
        pupil.row(0) = (c.head<2>() + (centroid - c.head<2>()) / std::cos(border_angle)).transpose();
        const LiftResult center_lift = lift_to_3d(pupil, aligned);

        const Vec3 d_align = gaze_from_mesh(aligned).vec();
        const Vec3 d_lift = (center_lift.points.row(0).transpose() - c).normalized();
        const Rotation correction = rotation_between(d_align, d_lift);

        EyeDiagnostics& ed = side == Side::Left ? diag.left : diag.right;
        ed.correction_angle = angular_error(GazeVector(d_align), GazeVector(d_lift));
        ed.lift_residual = residual;
        corrected[side == Side::Left ? 0 : 1] = aligned.rotated(correction);
    }
    return {EyeMeshPair{corrected[0], corrected[1]}, diag};
}

/// Gaze label implied by a labelled eye pair (sum of the per-eye gazes).
inline GazeVector pair_gaze(const EyeMeshPair& eyes) {
    return fuse_gaze(gaze_from_mesh(eyes.left), gaze_from_mesh(eyes.right));
}

/// RMS per-vertex residual of the best similarity from the template onto `vertices`.
inline double verify_rigidity(const Points& vertices, const EyeballTemplate& shape) {
    if (vertices.rows() != shape.vertex_count()) {
        throw ParameterError("vertex count does not match the template");
    }
    const SimilarityTransform p = estimate_similarity(shape.vertices, vertices);
    return residual_rms(p, shape.vertices, vertices);
}

inline double verify_rigidity(const EyeMesh& mesh, const EyeballTemplate& shape) {
    if (mesh.side() != shape.side) {
        throw ParameterError("mesh and template sides differ");
    }
    return verify_rigidity(mesh.vertices(), shape);
}

} // namespace ocumesh
