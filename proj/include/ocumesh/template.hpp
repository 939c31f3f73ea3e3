#pragma once

#include "ocumesh/errors.hpp"
#include "ocumesh/geometry.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ocumesh {

enum class Side { Left, Right };

inline std::string_view to_string(Side side) { return side == Side::Left ? "left" : "right"; }

inline Side parse_side(std::string_view text) {
    if (text == "left") {
        return Side::Left;
    }
    if (text == "right") {
        return Side::Right;
    }
    throw ParameterError("side must be 'left' or 'right', got '" + std::string(text) + "'");
}

enum class Region { Iris, IrisBorder, Cornea, Sclera, Apex };

inline constexpr std::array<Region, 5> kAllRegions = {Region::Iris, Region::IrisBorder, Region::Cornea,
                                                      Region::Sclera, Region::Apex};

inline std::string_view to_string(Region region) {
    switch (region) {
    case Region::Iris: return "iris";
    case Region::IrisBorder: return "iris_border";
    case Region::Cornea: return "cornea";
    case Region::Sclera: return "sclera";
    case Region::Apex: return "apex";
    }
    return "";
}

inline Region parse_region(std::string_view text) {
    for (Region r : kAllRegions) {
        if (to_string(r) == text) {
            return r;
        }
    }
    throw ParameterError("unknown region '" + std::string(text) + "'");
}

using Triangle = std::array<int, 3>;
using IndexSet = std::vector<int>;

/// Canonical rigid eyeball: unit sphere centered at the origin, optical axis -z,
/// opened at the posterior pole. Vertex 0 is the anterior apex, followed by rings
/// ordered anterior to posterior.
struct EyeballTemplate {
    Side side = Side::Left;
    Points vertices;
    std::vector<Triangle> triangles;
    std::map<std::string, IndexSet, std::less<>> regions;
    Vec3 optical_axis = -Vec3::UnitZ();

    int vertex_count() const { return static_cast<int>(vertices.rows()); }
    int triangle_count() const { return static_cast<int>(triangles.size()); }

    /// Three edge lengths per triangle, ordered (v0v1, v1v2, v2v0), triangle by triangle.
    template <typename Derived>
    Eigen::VectorXd edge_lengths(const Eigen::MatrixBase<Derived>& verts) const {
        Eigen::VectorXd e(3 * triangles.size());
        for (std::size_t t = 0; t < triangles.size(); ++t) {
            const auto& tri = triangles[t];
            for (int k = 0; k < 3; ++k) {
                e(3 * t + k) = (verts.row(tri[k]) - verts.row(tri[(k + 1) % 3])).norm();
            }
        }
        return e;
    }
};

using TemplatePtr = std::shared_ptr<const EyeballTemplate>;

struct TemplateShape {
    int sectors = 32;
    int stacks = 16;
};

namespace detail {

// Iris = apex + rings 1..2, iris border = ring 2, cornea = apex + rings 1..3,
// sclera = rings 4..stacks-1. Rings beyond the mesh are clamped to the last ring.
inline std::map<std::string, IndexSet, std::less<>> label_regions(int sectors, int stacks) {
    const int rings = stacks - 1;
    auto ring_indices = [&](int first, int last) {
        IndexSet out;
        for (int k = first; k <= std::min(last, rings); ++k) {
            for (int j = 0; j < sectors; ++j) {
                out.push_back(1 + (k - 1) * sectors + j);
            }
        }
        return out;
    };
    const int border_ring = std::min(2, rings);
    std::map<std::string, IndexSet, std::less<>> regions;
    regions["apex"] = {0};
    IndexSet iris = ring_indices(1, border_ring);
    iris.insert(iris.begin(), 0);
    regions["iris"] = std::move(iris);
    regions["iris_border"] = ring_indices(border_ring, border_ring);
    IndexSet cornea = ring_indices(1, 3);
    cornea.insert(cornea.begin(), 0);
    regions["cornea"] = std::move(cornea);
    regions["sclera"] = ring_indices(4, rings);
    return regions;
}

} // namespace detail

/// Open UV sphere with one apex vertex, (stacks-1) rings of `sectors` vertices,
/// an apex cap fan and (stacks-2) quad bands split in two.
inline EyeballTemplate build_template(int sectors = 32, int stacks = 16, Side side = Side::Left) {
    if (sectors < 3 || stacks < 2) {
        throw ParameterError("template needs sectors >= 3 and stacks >= 2");
    }
    const int rings = stacks - 1;
    EyeballTemplate t;
    t.side = side;
    t.vertices.resize(1 + rings * sectors, 3);
    t.vertices.row(0) = Eigen::RowVector3d(0.0, 0.0, -1.0);
    for (int k = 1; k <= rings; ++k) {
        const double theta = kPi * k / stacks;
        const double st = std::sin(theta), ct = std::cos(theta);
        for (int j = 0; j < sectors; ++j) {
            // counter-clockwise as seen from -z
            const double phi = 2.0 * kPi * j / sectors;
            t.vertices.row(1 + (k - 1) * sectors + j) =
                Eigen::RowVector3d(st * std::cos(phi), -st * std::sin(phi), -ct);
        }
    }

    auto ring_vertex = [&](int k, int j) { return 1 + (k - 1) * sectors + (j % sectors); };
    t.triangles.reserve(sectors + 2 * sectors * (rings - 1));
    for (int j = 0; j < sectors; ++j) {
        t.triangles.push_back({0, ring_vertex(1, j), ring_vertex(1, j + 1)});
    }
    for (int k = 1; k < rings; ++k) {
        for (int j = 0; j < sectors; ++j) {
            const int a0 = ring_vertex(k, j), a1 = ring_vertex(k, j + 1);
            const int b0 = ring_vertex(k + 1, j), b1 = ring_vertex(k + 1, j + 1);
            t.triangles.push_back({a0, b0, b1});
            t.triangles.push_back({a0, b1, a1});
        }
    }

    if (side == Side::Right) {
        t.vertices.col(0) = -t.vertices.col(0);
        for (auto& tri : t.triangles) {
            std::swap(tri[1], tri[2]);
        }
    }
    t.regions = detail::label_regions(sectors, stacks);
    return t;
}

/// Shared, immutable default template (32 sectors, 16 stacks) for one side.
inline TemplatePtr default_template(Side side) {
    static const TemplatePtr left = std::make_shared<const EyeballTemplate>(build_template(32, 16, Side::Left));
    static const TemplatePtr right =
        std::make_shared<const EyeballTemplate>(build_template(32, 16, Side::Right));
    return side == Side::Left ? left : right;
}

struct TemplatePair {
    TemplatePtr left = default_template(Side::Left);
    TemplatePtr right = default_template(Side::Right);

    const TemplatePtr& operator[](Side side) const { return side == Side::Left ? left : right; }
};

inline const IndexSet& region_indices(const EyeballTemplate& t, Region region) {
    const auto it = t.regions.find(to_string(region));
    if (it == t.regions.end()) {
        throw ParameterError("template has no region '" + std::string(to_string(region)) + "'");
    }
    return it->second;
}

inline const IndexSet& region_indices(const EyeballTemplate& t, std::string_view region) {
    return region_indices(t, parse_region(region));
}

struct MeshValidationReport {
    int vertex_count = 0;
    int triangle_count = 0;
    std::vector<std::vector<int>> boundary_loops;
    double max_radius_deviation = 0.0;
    bool is_mirror_consistent = false;
    /// Every interior edge is traversed once in each direction.
    bool is_consistently_wound = false;
};

namespace detail {

inline std::uint64_t edge_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

} // namespace detail

/// Traverses the mesh; never throws. Boundary loops are walked along the directed
/// boundary half-edges, each loop starting at its smallest vertex index.
inline MeshValidationReport validate(const EyeballTemplate& t) {
    MeshValidationReport report;
    report.vertex_count = t.vertex_count();
    report.triangle_count = t.triangle_count();
    for (int i = 0; i < t.vertex_count(); ++i) {
        report.max_radius_deviation =
            std::max(report.max_radius_deviation, std::abs(t.vertices.row(i).norm() - 1.0));
    }

    std::map<std::uint64_t, int> directed;
    bool indices_ok = true;
    for (const auto& tri : t.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = tri[k], b = tri[(k + 1) % 3];
            if (a < 0 || b < 0 || a >= t.vertex_count() || b >= t.vertex_count()) {
                indices_ok = false;
                continue;
            }
            ++directed[detail::edge_key(a, b)];
        }
    }

    bool wound = indices_ok;
    std::map<int, std::vector<int>> boundary_next;
    for (const auto& [key, count] : directed) {
        const int a = static_cast<int>(key >> 32);
        const int b = static_cast<int>(key & 0xffffffffu);
        const auto rev = directed.find(detail::edge_key(b, a));
        const int rev_count = rev == directed.end() ? 0 : rev->second;
        if (count > 1 || rev_count > 1) {
            wound = false;
        }
        if (rev_count == 0) {
            boundary_next[a].push_back(b);
        }
    }
    report.is_consistently_wound = wound;

    std::map<int, std::size_t> used;
    for (const auto& [start, nexts] : boundary_next) {
        while (used[start] < nexts.size()) {
            std::vector<int> loop{start};
            int current = start;
            while (true) {
                auto it = boundary_next.find(current);
                if (it == boundary_next.end() || used[current] >= it->second.size()) {
                    break;
                }
                const int next = it->second[used[current]++];
                if (next == start) {
                    break;
                }
                loop.push_back(next);
                current = next;
            }
            report.boundary_loops.push_back(std::move(loop));
        }
    }

    // Mirror check: rebuild the opposite side with the same shape when it is a generated sphere.
    const int n = t.vertex_count();
    int sectors = 0;
    if (n > 1) {
        for (const auto& loop : report.boundary_loops) {
            sectors = std::max(sectors, static_cast<int>(loop.size()));
        }
    }
    if (sectors >= 3 && (n - 1) % sectors == 0 && indices_ok) {
        const int stacks = (n - 1) / sectors + 1;
        const EyeballTemplate other =
            build_template(sectors, stacks, t.side == Side::Left ? Side::Right : Side::Left);
        bool mirrored = other.triangle_count() == t.triangle_count();
        if (mirrored) {
            Points flipped = t.vertices;
            flipped.col(0) = -flipped.col(0);
            mirrored = (flipped - other.vertices).cwiseAbs().maxCoeff() <= 1e-12;
        }
        for (int f = 0; mirrored && f < t.triangle_count(); ++f) {
            const auto& a = t.triangles[f];
            const auto& b = other.triangles[f];
            mirrored = a[0] == b[0] && a[1] == b[2] && a[2] == b[1];
        }
        report.is_mirror_consistent = mirrored;
    }
    return report;
}

/// Mean polar angle (radians) of a region's vertices measured from the optical axis.
inline double region_polar_angle(const EyeballTemplate& t, Region region) {
    const auto& idx = region_indices(t, region);
    double sum = 0.0;
    for (int i : idx) {
        sum += std::acos(std::clamp(t.vertices.row(i).dot(t.optical_axis.transpose()), -1.0, 1.0));
    }
    return sum / static_cast<double>(idx.size());
}

} // namespace ocumesh
