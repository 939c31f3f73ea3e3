#pragma once

#include "ocumesh/geometry.hpp"
#include "ocumesh/labeling.hpp"

namespace ocumesh {

/// Anchor-derived placement the decoder builds each eye around.
struct EyeFrame {
    Vec3 center = Vec3::Zero();
    double scale = 1.0;
};

/// What a regressor sees for one face: a fixed-length feature vector plus the
/// per-eye frames, all computed from observations only.
struct ModelInput {
    Eigen::VectorXd feature;
    EyeFrame left;
    EyeFrame right;

    const EyeFrame& frame(Side side) const { return side == Side::Left ? left : right; }
};

/// Feature layout: per eye (left, right) the normalized iris offset (2) and the unit
/// canthus axis (3), then sin/cos of the anchor head yaw and pitch (4).
inline constexpr int kFeatureSize = 14;

inline ModelInput make_model_input(const FaceAnchors& a) {
    ModelInput in;
    in.feature.resize(kFeatureSize);
    int k = 0;
    for (Side side : {Side::Left, Side::Right}) {
        const EyeAnchors& eye = a.eye(side);
        const double scale = eye.eyeball_scale();
        if (!(scale > 0.0)) {
            throw ParameterError("degenerate eye anchors");
        }
        const Points2& iris = a.iris(side);
        if (iris.rows() < 1) {
            throw ParameterError("missing iris landmarks");
        }
        const Vec2 offset = (iris.colwise().mean().transpose() - eye.centroid.head<2>()) / scale;
        const Vec3 axis = (eye.corners[1] - eye.corners[0]).normalized();
        in.feature.segment<2>(k) = offset;
        in.feature.segment<3>(k + 2) = axis;
        k += 5;
        EyeFrame& f = side == Side::Left ? in.left : in.right;
        f.center = eye.centroid;
        f.scale = scale;
    }
    const YawPitch head = euler_yaw_pitch(face_rotation(a));
    in.feature(k++) = std::sin(deg2rad(head.yaw));
    in.feature(k++) = std::cos(deg2rad(head.yaw));
    in.feature(k++) = std::sin(deg2rad(head.pitch));
    in.feature(k++) = std::cos(deg2rad(head.pitch));
    return in;
}

} // namespace ocumesh
