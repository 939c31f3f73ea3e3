#pragma once

#include "ocumesh/geometry.hpp"
#include "ocumesh/template.hpp"

#include <utility>

namespace ocumesh {

/// Rigid pose of a template: x = center + scale·rotation·t.
struct EyePose {
    Vec3 center = Vec3::Zero();
    double scale = 1.0;
    Rotation rotation;
};

/// A posed eyeball sharing its template's triangulation.
class EyeMesh {
public:
    EyeMesh() = default;

    EyeMesh(TemplatePtr tmpl, const EyePose& pose) : tmpl_(std::move(tmpl)), pose_(pose) {
        if (!tmpl_) {
            throw ParameterError("eye mesh needs a template");
        }
        if (!(pose.scale > 0.0) || !std::isfinite(pose.scale) || !pose.center.allFinite()) {
            throw ParameterError("eye pose needs a positive scale and finite center");
        }
        vertices_ = tmpl_->vertices * (pose.scale * pose.rotation.matrix()).transpose();
        vertices_.rowwise() += pose.center.transpose();
    }

    Side side() const { return tmpl_->side; }
    const EyeballTemplate& shape() const { return *tmpl_; }
    const TemplatePtr& shape_ptr() const { return tmpl_; }
    const EyePose& pose() const { return pose_; }
    const Vec3& center() const { return pose_.center; }
    double scale() const { return pose_.scale; }
    const Points& vertices() const { return vertices_; }

    Eigen::VectorXd edge_lengths() const { return tmpl_->edge_lengths(vertices_); }

    /// Rotates the eye about its own center.
    EyeMesh rotated(const Rotation& r) const {
        EyePose p = pose_;
        p.rotation = r * pose_.rotation;
        return {tmpl_, p};
    }

    /// Maps the whole eye through a similarity.
    EyeMesh transformed(const SimilarityTransform& t) const {
        EyePose p;
        p.center = t * pose_.center;
        p.scale = t.scale() * pose_.scale;
        p.rotation = t.rotation() * pose_.rotation;
        return {tmpl_, p};
    }

private:
    TemplatePtr tmpl_;
    EyePose pose_;
    Points vertices_;
};

struct EyeMeshPair {
    EyeMesh left;
    EyeMesh right;

    const EyeMesh& operator[](Side side) const { return side == Side::Left ? left : right; }
};

} // namespace ocumesh
