#pragma once

// Random loss cases and central-difference gradient checks shared by the unit and
// acceptance suites.

#include "oracles.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <limits>
#include <random>

namespace checks {

using namespace ocumesh;

enum class LossKind { Vertex, Edge, Gaze, Combined, MvVertex, MvGaze, Mv };

inline constexpr LossKind kAllLossKinds[] = {LossKind::Vertex,   LossKind::Edge,   LossKind::Gaze, LossKind::Combined,
                                             LossKind::MvVertex, LossKind::MvGaze, LossKind::Mv};

inline const char* name(LossKind k) {
    switch (k) {
    case LossKind::Vertex: return "vertex";
    case LossKind::Edge: return "edge";
    case LossKind::Gaze: return "gaze";
    case LossKind::Combined: return "combined";
    case LossKind::MvVertex: return "mv_vertex";
    case LossKind::MvGaze: return "mv_gaze";
    case LossKind::Mv: return "mv";
    }
    return "";
}

struct LossCase {
    VertexPair pred, target, pred2;
    Vec3 g, g_star, g2;
    SimilarityTransform p;
};

inline Points posed(std::mt19937_64& rng, Side side, double noise) {
    std::uniform_real_distribution<double> us(5.0, 15.0);
    const double s = us(rng);
    const EyeMesh m(default_template(side), EyePose{oracle::random_points(rng, 1, 20.0).row(0).transpose(), s,
                                                    oracle::random_rotation(rng)});
    return m.vertices() + oracle::random_points(rng, m.vertices().rows(), noise * s);
}

/// Offsets with magnitude in [lo, hi] and random sign in every coordinate.
inline Points offsets(std::mt19937_64& rng, Eigen::Index rows, double lo, double hi) {
    std::uniform_real_distribution<double> mag(lo, hi);
    std::bernoulli_distribution sign(0.5);
    Points o(rows, 3);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (int k = 0; k < 3; ++k) {
            o(i, k) = (sign(rng) ? 1.0 : -1.0) * mag(rng);
        }
    }
    return o;
}

inline Vec3 off_axis(std::mt19937_64& rng, const Vec3& from) {
    while (true) {
        const Vec3 v = oracle::random_unit(rng);
        if (std::abs(v.dot(from)) < 0.99) {
            return v;
        }
    }
}

/// Random case; when `non_kink` every vertex residual is at least 1e-2 in magnitude
/// and gaze pairs are at least ~8° from (anti)parallel.
inline LossCase random_case(std::mt19937_64& rng, bool non_kink = true) {
    LossCase c;
    c.pred = {posed(rng, Side::Left, 0.02), posed(rng, Side::Right, 0.02)};
    const double lo = non_kink ? 1e-2 : 0.0;
    c.target = {c.pred.left + offsets(rng, c.pred.left.rows(), lo, 0.5),
                c.pred.right + offsets(rng, c.pred.right.rows(), lo, 0.5)};
    std::uniform_real_distribution<double> us(0.5, 2.0);
    c.p = SimilarityTransform(us(rng), oracle::random_rotation(rng), oracle::random_points(rng, 1, 5.0).row(0).transpose());
    c.pred2 = {apply(c.p, c.pred.left) + offsets(rng, c.pred.left.rows(), lo, 0.5),
               apply(c.p, c.pred.right) + offsets(rng, c.pred.right.rows(), lo, 0.5)};
    std::uniform_real_distribution<double> ug(0.8, 1.25);
    c.g = oracle::random_unit(rng) * ug(rng); // raw, un-normalized prediction
    c.g_star = off_axis(rng, c.g.normalized());
    c.g2 = off_axis(rng, c.p.rotation() * c.g.normalized()) * ug(rng);
    return c;
}

struct Evaluated {
    double value = 0.0;
    Gradients view1;
    Gradients view2;
};

inline Evaluated evaluate(LossKind kind, const LossCase& c, const LossWeights& w = {}) {
    const TemplatePair topo;
    switch (kind) {
    case LossKind::Vertex: {
        const auto l = vertex_loss(c.pred, c.target);
        return {l.value, l.grad, {}};
    }
    case LossKind::Edge: {
        const auto l = edge_loss(c.pred, c.target, topo);
        return {l.value, l.grad, {}};
    }
    case LossKind::Gaze: {
        const auto l = gaze_loss(c.g, c.g_star);
        return {l.value, l.grad, {}};
    }
    case LossKind::Combined: {
        const auto l = combined_supervised_loss(c.pred, c.g, c.target, c.g_star, topo, w);
        return {l.value, l.grad, {}};
    }
    case LossKind::MvVertex: {
        const auto l = mv_vertex_loss(c.pred, c.pred2, c.p);
        return {l.value, l.view1, l.view2};
    }
    case LossKind::MvGaze: {
        const auto l = mv_gaze_loss(c.g, c.g2, c.p.rotation());
        return {l.value, l.view1, l.view2};
    }
    case LossKind::Mv: {
        const auto l = mv_loss(c.pred, c.g, c.pred2, c.g2, c.p, w);
        return {l.value, l.view1, l.view2};
    }
    }
    return {};
}

/// Smallest |‖e‖ − ‖e*‖| over the template edges incident to vertex `i` of one eye.
inline double min_edge_residual(const Points& pred, const Points& target, const EyeballTemplate& topo, int i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& tri : topo.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = tri[k], b = tri[(k + 1) % 3];
            if (a == i || b == i) {
                best = std::min(best, std::abs(oracle::distance(pred, a, b) - oracle::distance(target, a, b)));
            }
        }
    }
    return best;
}

inline double coordinate_grad(const Gradients& g, int which, Eigen::Index row, int col) {
    const Points& m = which == 0 ? g.left : g.right;
    return m.rows() == 0 ? 0.0 : m(row, col);
}

/// Max relative error over every gaze coordinate plus
/// `n_coords` random vertex coordinates of each involved view, with h = 1e-5. Vertices
/// with an incident edge residual below 1e-3 are skipped for the edge-based kinds.
/// Coordinates are grouped into blocks (gaze and vertices, per view); a block's error is
/// max |a − n| divided by the largest |a| or |n| in the block, so entries that cancel to
/// nearly zero are judged on the block's scale rather than on finite-difference roundoff.
inline double max_fd_error(LossKind kind, const LossCase& c, std::mt19937_64& rng, int n_coords = 12,
                           double h = 1e-5) {
    const Evaluated base = evaluate(kind, c);
    struct Block {
        double diff = 0.0;
        double scale = 1e-8;
    };
    std::array<Block, 4> blocks{};
    auto check = [&](int block, double analytic, const std::function<void(LossCase&, double)>& nudge) {
        LossCase up = c, down = c;
        nudge(up, h);
        nudge(down, -h);
        const double numeric = (evaluate(kind, up).value - evaluate(kind, down).value) / (2.0 * h);
        Block& b = blocks[static_cast<std::size_t>(block)];
        b.diff = std::max(b.diff, std::abs(analytic - numeric));
        b.scale = std::max({b.scale, std::abs(analytic), std::abs(numeric)});
    };
    auto worst = [&] {
        double w = 0.0;
        for (const auto& b : blocks) {
            w = std::max(w, b.diff / b.scale);
        }
        return w;
    };
    const bool pair = kind == LossKind::MvVertex || kind == LossKind::MvGaze || kind == LossKind::Mv;
    for (int k = 0; k < 3; ++k) {
        check(0, base.view1.gaze(k), [k](LossCase& x, double d) { x.g(k) += d; });
        if (pair) {
            check(1, base.view2.gaze(k), [k](LossCase& x, double d) { x.g2(k) += d; });
        }
    }
    if (kind == LossKind::Gaze || kind == LossKind::MvGaze) {
        return worst();
    }
    const Eigen::Index n = c.pred.left.rows();
    std::uniform_int_distribution<Eigen::Index> ui(0, n - 1);
    std::uniform_int_distribution<int> uk(0, 2), ue(0, 1);
    const bool edges = kind == LossKind::Edge || kind == LossKind::Combined;
    const TemplatePair topo;
    for (int t = 0; t < n_coords;) {
        const int eye = ue(rng);
        const Eigen::Index i = ui(rng);
        const int k = uk(rng);
        if (edges && min_edge_residual(eye == 0 ? c.pred.left : c.pred.right, eye == 0 ? c.target.left : c.target.right,
                                       eye == 0 ? *topo.left : *topo.right, static_cast<int>(i)) < 1e-3) {
            continue;
        }
        ++t;
        check(2, coordinate_grad(base.view1, eye, i, k), [=](LossCase& x, double d) {
            (eye == 0 ? x.pred.left : x.pred.right)(i, k) += d;
        });
        if (pair) {
            check(3, coordinate_grad(base.view2, eye, i, k), [=](LossCase& x, double d) {
                (eye == 0 ? x.pred2.left : x.pred2.right)(i, k) += d;
            });
        }
    }
    return worst();
}

} // namespace checks
