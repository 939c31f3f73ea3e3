#pragma once

#include "ocumesh/errors.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

namespace ocumesh {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// N x 3 coordinates, one point per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;
/// N x 2 image-plane coordinates, one point per row.
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

constexpr double kPi = std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// A proper rotation: RᵀR = I and det R = +1.
class Rotation {
public:
    Rotation() : m_(Mat3::Identity()) {}

    /// Checks orthonormality within `tol`; throws ParameterError otherwise.
    explicit Rotation(const Mat3& m, double tol = 1e-6) : m_(m) {
        if (!m.allFinite() || (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol ||
            std::abs(m.determinant() - 1.0) > tol) {
            throw ParameterError("matrix is not a proper rotation");
        }
    }

    static Rotation identity() { return {}; }

    /// Right-handed rotation by `angle` radians about a unit `axis`.
    static Rotation axis_angle(const Vec3& axis, double angle) {
        return unchecked(Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix());
    }

    const Mat3& matrix() const { return m_; }
    Rotation transpose() const { return unchecked(m_.transpose()); }
    Rotation inverse() const { return transpose(); }

    Vec3 operator*(const Vec3& v) const { return m_ * v; }
    Rotation operator*(const Rotation& other) const { return unchecked(m_ * other.m_); }

    /// Angle of the rotation in radians, in [0, π].
    double angle() const {
        return std::acos(std::clamp((m_.trace() - 1.0) * 0.5, -1.0, 1.0));
    }

    /// Wraps a matrix known to be a rotation by construction.
    static Rotation unchecked(const Mat3& m) {
        Rotation r;
        r.m_ = m;
        return r;
    }

private:
    Mat3 m_;
};

inline Rotation rot_x(double rad) {
    const double c = std::cos(rad), s = std::sin(rad);
    Mat3 m;
    m << 1, 0, 0, 0, c, -s, 0, s, c;
    return Rotation::unchecked(m);
}

inline Rotation rot_y(double rad) {
    const double c = std::cos(rad), s = std::sin(rad);
    Mat3 m;
    m << c, 0, s, 0, 1, 0, -s, 0, c;
    return Rotation::unchecked(m);
}

inline Rotation rot_z(double rad) {
    const double c = std::cos(rad), s = std::sin(rad);
    Mat3 m;
    m << c, -s, 0, s, c, 0, 0, 0, 1;
    return Rotation::unchecked(m);
}

/// Head-style rotation: yaw about y, then pitch about the rotated x (degrees).
inline Rotation yaw_pitch_rotation(double yaw_deg, double pitch_deg) {
    return rot_y(deg2rad(yaw_deg)) * rot_x(deg2rad(pitch_deg));
}

inline Mat3 skew(const Vec3& v) {
    Mat3 k;
    k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return k;
}

namespace detail {

inline void require_unit(const Vec3& v, const char* name) {
    if (!v.allFinite() || std::abs(v.norm() - 1.0) > 1e-6) {
        throw ParameterError(std::string(name) + " must be a unit vector");
    }
}

// 180 degree rotation axis for antiparallel input: (1,0,0) projected off `a`,
// or (0,1,0) when `a` is (anti)parallel to x.
inline Vec3 half_turn_axis(const Vec3& a) {
    Vec3 ref = Vec3::UnitX();
    if (std::abs(a.x()) > 1.0 - 1e-6) {
        ref = Vec3::UnitY();
    }
    return (ref - a.dot(ref) * a).normalized();
}

} // namespace detail

/// Minimal-angle rotation taking unit vector `a` onto unit vector `b`.
inline Rotation rotation_between(const Vec3& a, const Vec3& b) {
    detail::require_unit(a, "a");
    detail::require_unit(b, "b");
    const Vec3 an = a.normalized();
    const Vec3 bn = b.normalized();
    const double c = an.dot(bn);
    if (1.0 + c > 1e-6) {
        const Mat3 k = skew(an.cross(bn));
        return Rotation::unchecked(Mat3::Identity() + k + k * k / (1.0 + c));
    }
    // Nearly antiparallel: half turn onto -a, then the short remaining arc.
    const Vec3 u = detail::half_turn_axis(an);
    const Mat3 half = 2.0 * u * u.transpose() - Mat3::Identity();
    const Vec3 na = -an;
    const Mat3 k = skew(na.cross(bn));
    const Mat3 rest = Mat3::Identity() + k + k * k / (1.0 + na.dot(bn));
    return Rotation::unchecked(rest * half);
}

/// Yaw/pitch angles in degrees for R = Ry(yaw)·Rx(pitch)·Rz(roll); roll is dropped.
struct YawPitch {
    double yaw = 0.0;
    double pitch = 0.0;
};

inline YawPitch euler_yaw_pitch(const Rotation& r) {
    const Mat3& m = r.matrix();
    const double horiz = std::hypot(m(0, 2), m(2, 2));
    YawPitch out;
    out.pitch = rad2deg(std::atan2(-m(1, 2), horiz));
    if (horiz > 1e-12) {
        out.yaw = rad2deg(std::atan2(m(0, 2), m(2, 2)));
    } else {
        // gimbal lock: yaw absorbs roll
        out.yaw = rad2deg(std::atan2(-m(2, 0), m(0, 0)));
    }
    return out;
}

/// s·R·x + t, stored as its parts; `matrix()` gives P = [s·R | t].
class SimilarityTransform {
public:
    SimilarityTransform() = default;

    SimilarityTransform(double scale, Rotation rotation, Vec3 translation)
        : scale_(scale), rotation_(std::move(rotation)), translation_(std::move(translation)) {
        if (!(scale > 0.0) || !std::isfinite(scale) || !translation_.allFinite()) {
            throw ParameterError("similarity transform needs a positive finite scale and finite translation");
        }
        linear_ = scale_ * rotation_.matrix();
    }

    /// Keeps `linear` verbatim as the left block, so a decomposed matrix re-encodes bit for bit.
    static SimilarityTransform with_linear(double scale, Rotation rotation, Vec3 translation, const Mat3& linear) {
        SimilarityTransform p(scale, std::move(rotation), std::move(translation));
        p.linear_ = linear;
        return p;
    }

    static SimilarityTransform identity() { return {}; }

    double scale() const { return scale_; }
    const Rotation& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }

    /// The left 3x3 block s·R.
    const Mat3& linear() const { return linear_; }

    Mat34 matrix() const {
        Mat34 p;
        p.leftCols<3>() = linear();
        p.col(3) = translation_;
        return p;
    }

    Vec3 operator*(const Vec3& x) const { return linear() * x + translation_; }

    SimilarityTransform inverse() const {
        const Rotation rt = rotation_.transpose();
        return {1.0 / scale_, rt, -(rt * translation_) / scale_};
    }

private:
    double scale_ = 1.0;
    Rotation rotation_;
    Vec3 translation_ = Vec3::Zero();
    Mat3 linear_ = Mat3::Identity();
};

/// Splits P into (s, R, t): s = cbrt(det A), R = A / s, t = last column.
inline SimilarityTransform decompose(const Mat34& p) {
    if (!p.allFinite()) {
        throw DecompositionError("transform has non-finite entries");
    }
    const Mat3 a = p.leftCols<3>();
    const double det = a.determinant();
    if (!(det > 0.0)) {
        throw DecompositionError("left block has non-positive determinant (reflection or degenerate)");
    }
    const double s = std::cbrt(det);
    const Mat3 r = a / s;
    if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
        throw DecompositionError("left block is not a scaled rotation");
    }
    return SimilarityTransform::with_linear(s, Rotation::unchecked(r), p.col(3), a);
}

/// p2 ∘ p1: apply p1 first.
inline SimilarityTransform compose(const SimilarityTransform& p2, const SimilarityTransform& p1) {
    return {p2.scale() * p1.scale(), p2.rotation() * p1.rotation(),
            p2.linear() * p1.translation() + p2.translation()};
}

/// out_i = s·R·pts_i + t.
inline Points apply(const SimilarityTransform& p, const Points& pts) {
    Points out = pts * p.linear().transpose();
    out.rowwise() += p.translation().transpose();
    return out;
}

inline Points apply(const Rotation& r, const Points& pts) { return pts * r.matrix().transpose(); }

namespace detail {

inline void require_points(const Points& pts, const char* name) {
    if (pts.rows() < 1 || !pts.allFinite()) {
        throw EstimationError(std::string(name) + " must hold at least one finite point");
    }
}

} // namespace detail

/// Closed-form least-squares similarity from `src` to `dst` with reflection correction.
inline SimilarityTransform estimate_similarity(const Points& src, const Points& dst) {
    detail::require_points(src, "src");
    detail::require_points(dst, "dst");
    if (src.rows() != dst.rows()) {
        throw EstimationError("src and dst have different point counts");
    }
    if (src.rows() < 3) {
        throw EstimationError("at least three correspondences are required");
    }
    const auto n = static_cast<double>(src.rows());
    const Eigen::RowVector3d mu_src = src.colwise().mean();
    const Eigen::RowVector3d mu_dst = dst.colwise().mean();
    const Points xs = src.rowwise() - mu_src;
    const Points xd = dst.rowwise() - mu_dst;
    const double var_src = xs.squaredNorm() / n;

    Eigen::JacobiSVD<Points> src_svd(xs);
    const auto sv = src_svd.singularValues();
    if (!(sv(0) > 0.0) || sv(1) <= 1e-6 * sv(0)) {
        throw EstimationError("source points are degenerate (rank < 2)");
    }

    const Mat3 cov = xd.transpose() * xs / n;
    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec3 d = Vec3::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
        d(2) = -1.0;
    }
    Mat3 r = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    const double s = svd.singularValues().dot(d) / var_src;
    const Vec3 t = mu_dst.transpose() - s * r * mu_src.transpose();
    return {s, Rotation::unchecked(r), t};
}

/// Root-mean-square of per-point residuals ‖p(src_i) − dst_i‖.
inline double residual_rms(const SimilarityTransform& p, const Points& src, const Points& dst) {
    return std::sqrt((apply(p, src) - dst).rowwise().squaredNorm().mean());
}

} // namespace ocumesh
