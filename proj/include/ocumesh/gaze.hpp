#pragma once

#include "ocumesh/errors.hpp"
#include "ocumesh/geometry.hpp"
#include "ocumesh/losses.hpp"
#include "ocumesh/mesh.hpp"
#include "ocumesh/template.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace ocumesh {

/// Unit gaze direction.
class GazeVector {
public:
    GazeVector() = default;

    /// Normalizes `v`; throws when it has (near) zero length. A vector already unit to
    /// rounding is kept as given, so decoding a stored gaze is lossless.
    explicit GazeVector(const Vec3& v) {
        const double n = v.norm();
        if (!v.allFinite() || n < 1e-12) {
            throw ParameterError("gaze direction is degenerate");
        }
        v_ = std::abs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() ? v : Vec3(v / n);
    }

    const Vec3& vec() const { return v_; }
    double x() const { return v_.x(); }
    double y() const { return v_.y(); }
    double z() const { return v_.z(); }

private:
    Vec3 v_ = -Vec3::UnitZ();
};

inline GazeVector operator*(const Rotation& r, const GazeVector& g) { return GazeVector(r * g.vec()); }

/// Iris centroid minus eyeball center, normalized. The center is the stored pose center.
inline GazeVector gaze_from_mesh(const EyeMesh& mesh) {
    const auto& iris = region_indices(mesh.shape(), Region::Iris);
    Vec3 c = Vec3::Zero();
    for (int i : iris) {
        c += mesh.vertices().row(i).transpose();
    }
    c /= static_cast<double>(iris.size());
    return GazeVector(c - mesh.center());
}

/// Least-squares sphere center of a point set (algebraic fit).
inline Vec3 fit_sphere_center(const Points& pts) {
    if (pts.rows() < 4) {
        throw ParameterError("sphere fit needs at least four points");
    }
    // |x|² = 2 c·x + k  → linear in (c, k)
    Eigen::MatrixXd a(pts.rows(), 4);
    Eigen::VectorXd b(pts.rows());
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        a.row(i) << 2.0 * pts(i, 0), 2.0 * pts(i, 1), 2.0 * pts(i, 2), 1.0;
        b(i) = pts.row(i).squaredNorm();
    }
    const Eigen::Vector4d sol = a.colPivHouseholderQr().solve(b);
    return sol.head<3>();
}

/// Gaze from raw vertices alone, using a fitted sphere center (the open pole biases the centroid).
inline GazeVector gaze_from_vertices(const Points& vertices, const EyeballTemplate& shape) {
    if (vertices.rows() != shape.vertex_count()) {
        throw ParameterError("vertex count does not match the template");
    }
    const auto& iris = region_indices(shape, Region::Iris);
    Vec3 c = Vec3::Zero();
    for (int i : iris) {
        c += vertices.row(i).transpose();
    }
    c /= static_cast<double>(iris.size());
    return GazeVector(c - fit_sphere_center(vertices));
}

/// Sum of per-eye gazes, renormalized; with a direct prediction the mesh mean and the
/// direct vector are averaged with equal weight and renormalized.
inline GazeVector fuse_gaze(const GazeVector& left, const GazeVector& right,
                            const std::optional<GazeVector>& direct = std::nullopt) {
    const Vec3 sum = left.vec() + right.vec();
    if (sum.norm() < 1e-9) {
        throw ParameterError("per-eye gazes cancel out");
    }
    Vec3 fused = sum.normalized();
    if (direct) {
        fused = fused + direct->vec();
        if (fused.norm() < 1e-9) {
            throw ParameterError("mesh gaze and direct gaze cancel out");
        }
    }
    return GazeVector(fused);
}

/// Angular error in degrees; the same definition as the gaze loss value.
inline double angular_error(const GazeVector& g, const GazeVector& g_star) {
    return detail::angle_deg(g.vec(), g_star.vec(), nullptr, nullptr);
}

/// Yaw and pitch (degrees) of a direction with g = Ry(yaw)·Rx(pitch)·(0,0,-1).
inline YawPitch gaze_angles(const GazeVector& g) {
    return {rad2deg(std::atan2(-g.x(), -g.z())), rad2deg(std::asin(std::clamp(g.y(), -1.0, 1.0)))};
}

inline GazeVector gaze_from_angles(double yaw_deg, double pitch_deg) {
    return GazeVector(yaw_pitch_rotation(yaw_deg, pitch_deg) * Vec3(0.0, 0.0, -1.0));
}

struct YawError {
    double yaw = 0.0;
    double error = 0.0;
};

struct BinRow {
    double max_yaw = 0.0;
    std::optional<double> mean_error;
    std::size_t count = 0;
};

/// Mean error per cumulative bin |yaw| < threshold. Empty bins have no mean.
inline std::vector<BinRow> yaw_binned_report(std::span<const YawError> errors, std::span<const double> bins) {
    for (std::size_t i = 1; i < bins.size(); ++i) {
        if (!(bins[i] > bins[i - 1])) {
            throw ParameterError("bin thresholds must be strictly increasing");
        }
    }
    std::vector<BinRow> rows;
    rows.reserve(bins.size());
    for (double b : bins) {
        BinRow row{b, std::nullopt, 0};
        double sum = 0.0;
        for (const auto& e : errors) {
            if (std::abs(e.yaw) < b) {
                sum += e.error;
                ++row.count;
            }
        }
        if (row.count > 0) {
            row.mean_error = sum / static_cast<double>(row.count);
        }
        rows.push_back(row);
    }
    return rows;
}

} // namespace ocumesh
