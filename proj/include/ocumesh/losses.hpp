#pragma once

#include "ocumesh/errors.hpp"
#include "ocumesh/geometry.hpp"
#include "ocumesh/mesh.hpp"
#include "ocumesh/template.hpp"

#include <cmath>
#include <optional>

namespace ocumesh {

/// Loss weights. Defaults are the published values.
struct LossWeights {
    double vertex = 0.1;
    double edge = 0.1;
    double gaze = 1.0;
    double mv_vertex = 0.1;
    double mv_gaze = 1.0;
    double gt = 1.0;
    double pgt = 1.0;
    double mv = 1.0;

    void validate() const {
        for (double w : {vertex, edge, gaze, mv_vertex, mv_gaze, gt, pgt, mv}) {
            if (!std::isfinite(w) || w < 0.0) {
                throw ParameterError("loss weights must be finite and non-negative");
            }
        }
    }
};

/// Raw per-eye vertex matrices. Unlike EyeMesh, no rigidity is implied.
struct VertexPair {
    Points left;
    Points right;

    static VertexPair of(const EyeMeshPair& m) { return {m.left.vertices(), m.right.vertices()}; }
};

/// Gradients with respect to per-eye vertices and a gaze vector. Empty matrices mean "not involved".
struct Gradients {
    Points left;
    Points right;
    Vec3 gaze = Vec3::Zero();

    Gradients& add(const Gradients& other, double weight = 1.0) {
        accumulate(left, other.left, weight);
        accumulate(right, other.right, weight);
        gaze += weight * other.gaze;
        return *this;
    }

private:
    static void accumulate(Points& into, const Points& from, double weight) {
        if (from.rows() == 0) {
            return;
        }
        if (into.rows() == 0) {
            into = Points::Zero(from.rows(), 3);
        }
        into += weight * from;
    }
};

struct LossValueGrad {
    double value = 0.0;
    Gradients grad;
};

/// Loss over two views; gradients for each view's outputs.
struct PairLossValueGrad {
    double value = 0.0;
    Gradients view1;
    Gradients view2;
};

namespace detail {

inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline void require_same_shape(const VertexPair& a, const VertexPair& b) {
    if (a.left.rows() != b.left.rows() || a.right.rows() != b.right.rows() || a.left.rows() != a.right.rows() ||
        a.left.rows() == 0) {
        throw ParameterError("vertex sets do not share a topology");
    }
}

inline void require_same_topology(const EyeMeshPair& a, const EyeMeshPair& b) {
    auto same = [](const EyeMesh& x, const EyeMesh& y) {
        return x.shape_ptr() == y.shape_ptr() ||
               (x.shape().triangles == y.shape().triangles && x.shape().vertex_count() == y.shape().vertex_count());
    };
    if (a.left.side() != Side::Left || a.right.side() != Side::Right || !same(a.left, b.left) ||
        !same(a.right, b.right)) {
        throw ParameterError("meshes do not share a template topology");
    }
}

// Σ_j Σ_i ‖mapped_i − target_i‖₁ / N, where mapped = A·x + t. Writes ∂/∂residual·(1/N).
inline double l1_rows(const Points& mapped, const Points& target, Points& dres) {
    const auto n = static_cast<double>(mapped.rows());
    dres.resize(mapped.rows(), 3);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < mapped.rows(); ++i) {
        for (int c = 0; c < 3; ++c) {
            const double r = mapped(i, c) - target(i, c);
            sum += std::abs(r);
            dres(i, c) = sign0(r) / n;
        }
    }
    return sum;
}

inline double edge_term(const Points& pred, const Points& target, const EyeballTemplate& topo, Points& grad) {
    grad = Points::Zero(pred.rows(), 3);
    const double inv = 1.0 / (3.0 * static_cast<double>(topo.triangle_count()));
    double sum = 0.0;
    for (const auto& tri : topo.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = tri[k], b = tri[(k + 1) % 3];
            const Eigen::RowVector3d d = pred.row(a) - pred.row(b);
            const Eigen::RowVector3d d_star = target.row(a) - target.row(b);
            const double len = d.norm();
            const double len_star = d_star.norm();
            const double r = len - len_star;
            sum += std::abs(r);
            if (len > 0.0) {
                const Eigen::RowVector3d g = (sign0(r) * inv / len) * d;
                grad.row(a) += g;
                grad.row(b) -= g;
            }
        }
    }
    return sum * inv;
}

constexpr double kArccosClamp = 1e-12;

// Angle in degrees between raw vectors u, v (normalized here) with gradients in raw coordinates.
inline double angle_deg(const Vec3& u, const Vec3& v, Vec3* du, Vec3* dv) {
    const double nu = u.norm(), nv = v.norm();
    if (!(nu > 0.0) || !(nv > 0.0) || !u.allFinite() || !v.allFinite()) {
        throw ParameterError("gaze vectors must be non-zero and finite");
    }
    const Vec3 a = u / nu, b = v / nv;
    const double raw = a.dot(b);
    // The value saturates only at ±1 so that identical and opposite vectors give exactly
    // 0° and 180°; within ε of those the gradient is zero.
    const double value = rad2deg(std::acos(std::clamp(raw, -1.0, 1.0)));
    const double c = std::clamp(raw, -1.0 + kArccosClamp, 1.0 - kArccosClamp);
    const bool clamped = c != raw;
    if (du != nullptr) {
        *du = Vec3::Zero();
    }
    if (dv != nullptr) {
        *dv = Vec3::Zero();
    }
    if (!clamped) {
        const double dc = -(180.0 / kPi) / std::sqrt(1.0 - c * c);
        if (du != nullptr) {
            *du = dc * (b - c * a) / nu;
        }
        if (dv != nullptr) {
            *dv = dc * (a - c * b) / nv;
        }
    }
    return value;
}

} // namespace detail

/// Mean absolute vertex error: (1/N_v) Σ_{l,r} Σ_i ‖V − V*‖₁.
inline LossValueGrad vertex_loss(const VertexPair& pred, const VertexPair& target) {
    detail::require_same_shape(pred, target);
    LossValueGrad out;
    out.value = detail::l1_rows(pred.left, target.left, out.grad.left) +
                detail::l1_rows(pred.right, target.right, out.grad.right);
    out.value /= static_cast<double>(pred.left.rows());
    return out;
}

inline LossValueGrad vertex_loss(const EyeMeshPair& pred, const EyeMeshPair& target) {
    detail::require_same_topology(pred, target);
    return vertex_loss(VertexPair::of(pred), VertexPair::of(target));
}

/// Mean absolute per-triangle edge-length error: (1/3N_t) Σ_{l,r} Σ_i |E − E*|.
inline LossValueGrad edge_loss(const VertexPair& pred, const VertexPair& target, const TemplatePair& topo) {
    detail::require_same_shape(pred, target);
    if (pred.left.rows() != topo.left->vertex_count() || pred.right.rows() != topo.right->vertex_count()) {
        throw ParameterError("vertex count does not match the template");
    }
    LossValueGrad out;
    out.value = detail::edge_term(pred.left, target.left, *topo.left, out.grad.left) +
                detail::edge_term(pred.right, target.right, *topo.right, out.grad.right);
    return out;
}

inline LossValueGrad edge_loss(const EyeMeshPair& pred, const EyeMeshPair& target) {
    detail::require_same_topology(pred, target);
    return edge_loss(VertexPair::of(pred), VertexPair::of(target), {pred.left.shape_ptr(), pred.right.shape_ptr()});
}

/// Angular gaze error in degrees; inputs are renormalized and the gradient is taken
/// with respect to the raw (un-normalized) prediction `g`.
inline LossValueGrad gaze_loss(const Vec3& g, const Vec3& g_star) {
    LossValueGrad out;
    out.value = detail::angle_deg(g, g_star, &out.grad.gaze, nullptr);
    return out;
}

inline LossValueGrad combined_supervised_loss(const VertexPair& pred, const Vec3& g, const VertexPair& target,
                                              const Vec3& g_star, const TemplatePair& topo,
                                              const LossWeights& w = {}) {
    const LossValueGrad v = vertex_loss(pred, target);
    const LossValueGrad e = edge_loss(pred, target, topo);
    const LossValueGrad a = gaze_loss(g, g_star);
    LossValueGrad out;
    out.value = w.vertex * v.value + w.edge * e.value + w.gaze * a.value;
    out.grad.add(v.grad, w.vertex).add(e.grad, w.edge).add(a.grad, w.gaze);
    return out;
}

inline LossValueGrad combined_supervised_loss(const EyeMeshPair& pred, const Vec3& g, const EyeMeshPair& target,
                                              const Vec3& g_star, const LossWeights& w = {}) {
    detail::require_same_topology(pred, target);
    return combined_supervised_loss(VertexPair::of(pred), g, VertexPair::of(target), g_star,
                                    {pred.left.shape_ptr(), pred.right.shape_ptr()}, w);
}

/// Multi-view vertex consistency: (1/N_v) Σ_{l,r} Σ_i ‖P·[V1;1] − V2‖₁.
inline PairLossValueGrad mv_vertex_loss(const VertexPair& pred1, const VertexPair& pred2,
                                        const SimilarityTransform& p) {
    detail::require_same_shape(pred1, pred2);
    const Mat3 a = p.linear();
    PairLossValueGrad out;
    Points dl, dr;
    out.value = detail::l1_rows(apply(p, pred1.left), pred2.left, dl) +
                detail::l1_rows(apply(p, pred1.right), pred2.right, dr);
    out.value /= static_cast<double>(pred1.left.rows());
    out.view1.left = dl * a;
    out.view1.right = dr * a;
    out.view2.left = -dl;
    out.view2.right = -dr;
    return out;
}

inline PairLossValueGrad mv_vertex_loss(const EyeMeshPair& pred1, const EyeMeshPair& pred2,
                                        const SimilarityTransform& p) {
    detail::require_same_topology(pred1, pred2);
    return mv_vertex_loss(VertexPair::of(pred1), VertexPair::of(pred2), p);
}

/// Angle in degrees between R·g1 and g2.
inline PairLossValueGrad mv_gaze_loss(const Vec3& g1, const Vec3& g2, const Rotation& r) {
    PairLossValueGrad out;
    Vec3 d_rg1;
    out.value = detail::angle_deg(r * g1, g2, &d_rg1, &out.view2.gaze);
    out.view1.gaze = r.matrix().transpose() * d_rg1;
    return out;
}

inline PairLossValueGrad mv_loss(const VertexPair& pred1, const Vec3& g1, const VertexPair& pred2, const Vec3& g2,
                                 const SimilarityTransform& p, const LossWeights& w = {}) {
    const PairLossValueGrad v = mv_vertex_loss(pred1, pred2, p);
    const PairLossValueGrad a = mv_gaze_loss(g1, g2, p.rotation());
    PairLossValueGrad out;
    out.value = w.mv_vertex * v.value + w.mv_gaze * a.value;
    out.view1.add(v.view1, w.mv_vertex).add(a.view1, w.mv_gaze);
    out.view2.add(v.view2, w.mv_vertex).add(a.view2, w.mv_gaze);
    return out;
}

inline PairLossValueGrad mv_loss(const EyeMeshPair& pred1, const Vec3& g1, const EyeMeshPair& pred2, const Vec3& g2,
                                 const SimilarityTransform& p, const LossWeights& w = {}) {
    detail::require_same_topology(pred1, pred2);
    return mv_loss(VertexPair::of(pred1), g1, VertexPair::of(pred2), g2, p, w);
}

/// Overload taking the raw 3x4 matrix; the rotation for the gaze term comes from decompose(P).
inline PairLossValueGrad mv_loss(const EyeMeshPair& pred1, const Vec3& g1, const EyeMeshPair& pred2, const Vec3& g2,
                                 const Mat34& p, const LossWeights& w = {}) {
    return mv_loss(pred1, g1, pred2, g2, decompose(p), w);
}

/// λ_GT·L_GT + λ_PGT·L_PGT + λ_MV·L_MV; absent terms contribute 0.
inline double total_loss(std::optional<double> gt_term, std::optional<double> pgt_term,
                         std::optional<double> mv_term, const LossWeights& w = {}) {
    return w.gt * gt_term.value_or(0.0) + w.pgt * pgt_term.value_or(0.0) + w.mv * mv_term.value_or(0.0);
}

} // namespace ocumesh
