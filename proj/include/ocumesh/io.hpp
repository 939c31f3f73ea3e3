#pragma once

#include "ocumesh/errors.hpp"
#include "ocumesh/gaze.hpp"
#include "ocumesh/geometry.hpp"
#include "ocumesh/labeling.hpp"
#include "ocumesh/mesh.hpp"
#include "ocumesh/synthworld.hpp"
#include "ocumesh/template.hpp"
#include "ocumesh/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace ocumesh::io {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Field access

/// Location used in error messages: line (0 for whole documents) plus a dotted field path.
struct Where {
    std::size_t line = 0;
    std::string path;

    Where operator/(const std::string& key) const { return {line, path.empty() ? key : path + "." + key}; }
    Where operator/(std::size_t index) const { return {line, path + "[" + std::to_string(index) + "]"}; }

    [[noreturn]] void fail(const std::string& msg) const { throw DataError(msg, line, path); }
};

inline const json& member(const json& j, const std::string& key, const Where& w) {
    if (!j.is_object()) {
        w.fail("expected an object");
    }
    const auto it = j.find(key);
    if (it == j.end()) {
        (w / key).fail("missing");
    }
    return *it;
}

inline double number(const json& j, const Where& w) {
    if (!j.is_number()) {
        w.fail("expected a number");
    }
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
        w.fail("non-finite number");
    }
    return v;
}

inline double number(const json& j, const std::string& key, const Where& w) { return number(member(j, key, w), w / key); }

inline const json& array_of(const json& j, std::size_t n, const Where& w) {
    if (!j.is_array() || (n > 0 && j.size() != n)) {
        w.fail(n > 0 ? "expected an array of " + std::to_string(n) : "expected an array");
    }
    return j;
}

inline Vec3 vec3(const json& j, const Where& w) {
    array_of(j, 3, w);
    return {number(j[0], w / 0), number(j[1], w / 1), number(j[2], w / 2)};
}

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Mat3 mat3(const json& j, const Where& w) {
    array_of(j, 3, w);
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
        m.row(r) = vec3(j[r], w / static_cast<std::size_t>(r)).transpose();
    }
    return m;
}

inline json to_json(const Mat3& m) {
    json out = json::array();
    for (int r = 0; r < 3; ++r) {
        out.push_back(to_json(Vec3(m.row(r).transpose())));
    }
    return out;
}

inline Points points(const json& j, const Where& w) {
    array_of(j, 0, w);
    Points p(static_cast<Eigen::Index>(j.size()), 3);
    for (std::size_t i = 0; i < j.size(); ++i) {
        p.row(static_cast<Eigen::Index>(i)) = vec3(j[i], w / i).transpose();
    }
    return p;
}

inline json to_json(const Points& p) {
    json out = json::array();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        out.push_back(to_json(Vec3(p.row(i).transpose())));
    }
    return out;
}

inline Points2 points2(const json& j, const Where& w) {
    array_of(j, 0, w);
    Points2 p(static_cast<Eigen::Index>(j.size()), 2);
    for (std::size_t i = 0; i < j.size(); ++i) {
        array_of(j[i], 2, w / i);
        p(static_cast<Eigen::Index>(i), 0) = number(j[i][0], w / i / 0);
        p(static_cast<Eigen::Index>(i), 1) = number(j[i][1], w / i / 1);
    }
    return p;
}

inline json to_json(const Points2& p) {
    json out = json::array();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        out.push_back(json::array({p(i, 0), p(i, 1)}));
    }
    return out;
}

inline Rotation rotation(const json& j, const Where& w) {
    try {
        return Rotation(mat3(j, w));
    } catch (const ParameterError& e) {
        w.fail(e.what());
    }
}

inline GazeVector gaze(const json& j, const Where& w) {
    try {
        return GazeVector(vec3(j, w));
    } catch (const ParameterError& e) {
        w.fail(e.what());
    }
}

/// Copies every key of `j` not listed in `known`.
inline json extras(const json& j, std::initializer_list<const char*> known) {
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool listed = false;
        for (const char* k : known) {
            listed = listed || it.key() == k;
        }
        if (!listed) {
            out[it.key()] = it.value();
        }
    }
    return out;
}

inline void merge_extras(json& out, const json& extra) {
    for (auto it = extra.begin(); it != extra.end(); ++it) {
        if (!out.contains(it.key())) {
            out[it.key()] = it.value();
        }
    }
}

// ---------------------------------------------------------------------------
// Documents and streams

inline json parse_document(std::istream& in, const std::string& name) {
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return json::parse(buf.str());
    } catch (const json::exception& e) {
        throw DataError(e.what(), 0, {}, name);
    }
}

inline json read_document(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    return parse_document(in, path);
}

/// Calls fn(record, line) for each non-blank line.
inline void read_jsonl(std::istream& in, const std::function<void(const json&, std::size_t)>& fn) {
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw DataError(std::string("malformed JSON: ") + e.what(), line);
        }
        if (!j.is_object()) {
            throw DataError("expected an object", line);
        }
        fn(j, line);
    }
}

inline void read_jsonl_file(const std::string& path, const std::function<void(const json&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    try {
        read_jsonl(in, fn);
    } catch (const DataError& e) {
        throw e.with_source(path);
    }
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Mesh JSON

inline json encode_template(const EyeballTemplate& t) {
    json tris = json::array();
    for (const auto& tri : t.triangles) {
        tris.push_back(json::array({tri[0], tri[1], tri[2]}));
    }
    json regions = json::object();
    for (const auto& [name, idx] : t.regions) {
        regions[name] = idx;
    }
    return {{"side", std::string(to_string(t.side))},
            {"vertices", to_json(t.vertices)},
            {"triangles", tris},
            {"regions", regions},
            {"optical_axis", to_json(t.optical_axis)}};
}

inline EyeballTemplate decode_template(const json& j, const Where& w = {}) {
    EyeballTemplate t;
    const json& side = member(j, "side", w);
    try {
        t.side = parse_side(side.is_string() ? side.get<std::string>() : "");
    } catch (const ParameterError& e) {
        (w / "side").fail(e.what());
    }
    t.vertices = points(member(j, "vertices", w), w / "vertices");
    const json& tris = array_of(member(j, "triangles", w), 0, w / "triangles");
    for (std::size_t i = 0; i < tris.size(); ++i) {
        const Where wt = w / "triangles" / i;
        array_of(tris[i], 3, wt);
        Triangle tri{};
        for (int k = 0; k < 3; ++k) {
            if (!tris[i][k].is_number_integer()) {
                wt.fail("expected integer indices");
            }
            tri[k] = tris[i][k].get<int>();
            if (tri[k] < 0 || tri[k] >= t.vertex_count()) {
                wt.fail("index out of range");
            }
        }
        t.triangles.push_back(tri);
    }
    if (j.contains("regions")) {
        for (auto it = j["regions"].begin(); it != j["regions"].end(); ++it) {
            const Where wr = w / "regions" / it.key();
            array_of(it.value(), 0, wr);
            IndexSet idx;
            for (const auto& v : it.value()) {
                if (!v.is_number_integer() || v.get<int>() < 0 || v.get<int>() >= t.vertex_count()) {
                    wr.fail("expected vertex indices");
                }
                idx.push_back(v.get<int>());
            }
            t.regions[it.key()] = std::move(idx);
        }
    }
    if (j.contains("optical_axis")) {
        t.optical_axis = vec3(j["optical_axis"], w / "optical_axis");
    }
    return t;
}

inline json encode_pose(const EyePose& p) {
    return {{"center", to_json(p.center)}, {"scale", p.scale}, {"rotation", to_json(p.rotation.matrix())}};
}

inline EyePose decode_pose(const json& j, const Where& w) {
    EyePose p;
    p.center = vec3(member(j, "center", w), w / "center");
    p.scale = number(j, "scale", w);
    if (!(p.scale > 0.0)) {
        (w / "scale").fail("must be positive");
    }
    p.rotation = rotation(member(j, "rotation", w), w / "rotation");
    return p;
}

/// Posed eye: pose fields, plus the vertex array when `dense`.
inline json encode_eye(const EyeMesh& m, bool dense = false) {
    json out = encode_pose(m.pose());
    if (dense) {
        out["vertices"] = to_json(m.vertices());
    }
    return out;
}

/// A stored vertex array must agree with the pose (to 1e-9 relative to the scale).
inline EyeMesh decode_eye(const json& j, const TemplatePtr& shape, const Where& w) {
    EyeMesh m(shape, decode_pose(j, w));
    if (j.contains("vertices")) {
        const Points v = points(j["vertices"], w / "vertices");
        if (v.rows() != m.vertices().rows()) {
            (w / "vertices").fail("vertex count does not match the template");
        }
        if ((v - m.vertices()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, m.scale())) {
            (w / "vertices").fail("vertices disagree with the pose");
        }
    }
    return m;
}

inline json encode_eyes(const EyeMeshPair& eyes, bool dense = false) {
    return {{"left", encode_eye(eyes.left, dense)}, {"right", encode_eye(eyes.right, dense)}};
}

inline EyeMeshPair decode_eyes(const json& j, const Where& w, const TemplatePair& shapes = {}) {
    return {decode_eye(member(j, "left", w), shapes.left, w / "left"),
            decode_eye(member(j, "right", w), shapes.right, w / "right")};
}

// ---------------------------------------------------------------------------
// Transform JSON

inline json encode_transform(const SimilarityTransform& p) {
    const Mat34 m = p.matrix();
    json rows = json::array();
    for (int r = 0; r < 3; ++r) {
        rows.push_back(json::array({m(r, 0), m(r, 1), m(r, 2), m(r, 3)}));
    }
    return {{"P", rows}};
}

inline SimilarityTransform decode_transform(const json& j, const Where& w = {}) {
    const json& rows = array_of(member(j, "P", w), 3, w / "P");
    Mat34 m;
    for (int r = 0; r < 3; ++r) {
        const Where wr = w / "P" / static_cast<std::size_t>(r);
        array_of(rows[r], 4, wr);
        for (int c = 0; c < 4; ++c) {
            m(r, c) = number(rows[r][c], wr / static_cast<std::size_t>(c));
        }
    }
    try {
        return decompose(m);
    } catch (const DecompositionError& e) {
        (w / "P").fail(e.what());
    }
}

// ---------------------------------------------------------------------------
// Samples JSONL

/// One observed face. `extra` holds fields this version does not interpret.
struct SampleRecord {
    std::string id;
    FaceAnchors anchors;
    std::optional<YawPitch> head_pose;
    json extra = json::object();
};

inline json encode_eye_anchors(const EyeAnchors& a) {
    return {{"corners", json::array({to_json(a.corners[0]), to_json(a.corners[1])})}, {"centroid", to_json(a.centroid)}};
}

inline json encode_sample(const SampleRecord& s) {
    json out = {{"id", s.id},
                {"anchors", {{"left", encode_eye_anchors(s.anchors.left)}, {"right", encode_eye_anchors(s.anchors.right)}}},
                {"iris_2d", {{"left", to_json(s.anchors.iris_left)}, {"right", to_json(s.anchors.iris_right)}}},
                {"gaze", s.anchors.gaze ? to_json(s.anchors.gaze->vec()) : json(nullptr)},
                {"head_pose", s.head_pose ? json{{"yaw", s.head_pose->yaw}, {"pitch", s.head_pose->pitch}} : json(nullptr)}};
    merge_extras(out, s.extra);
    return out;
}

inline EyeAnchors decode_eye_anchors(const json& j, const Where& w) {
    EyeAnchors a;
    const json& corners = array_of(member(j, "corners", w), 2, w / "corners");
    a.corners[0] = vec3(corners[0], w / "corners" / 0);
    a.corners[1] = vec3(corners[1], w / "corners" / 1);
    a.centroid = vec3(member(j, "centroid", w), w / "centroid");
    return a;
}

inline std::string string_field(const json& j, const std::string& key, const Where& w) {
    const json& v = member(j, key, w);
    if (!v.is_string()) {
        (w / key).fail("expected a string");
    }
    return v.get<std::string>();
}

inline SampleRecord decode_sample(const json& j, const Where& w = {}) {
    SampleRecord s;
    s.id = string_field(j, "id", w);
    const json& anchors = member(j, "anchors", w);
    s.anchors.left = decode_eye_anchors(member(anchors, "left", w / "anchors"), w / "anchors" / "left");
    s.anchors.right = decode_eye_anchors(member(anchors, "right", w / "anchors"), w / "anchors" / "right");
    const json& iris = member(j, "iris_2d", w);
    s.anchors.iris_left = points2(member(iris, "left", w / "iris_2d"), w / "iris_2d" / "left");
    s.anchors.iris_right = points2(member(iris, "right", w / "iris_2d"), w / "iris_2d" / "right");
    if (j.contains("gaze") && !j["gaze"].is_null()) {
        s.anchors.gaze = gaze(j["gaze"], w / "gaze");
    }
    if (j.contains("head_pose") && !j["head_pose"].is_null()) {
        const Where wh = w / "head_pose";
        s.head_pose = YawPitch{number(j["head_pose"], "yaw", wh), number(j["head_pose"], "pitch", wh)};
    }
    s.extra = extras(j, {"id", "anchors", "iris_2d", "gaze", "head_pose"});
    return s;
}

/// Sample record for a synthetic view, with the truth carried as extra fields.
inline SampleRecord sample_record(const SyntheticSample& s) {
    SampleRecord r{s.id, s.anchors, s.head_pose, json::object()};
    r.anchors.gaze = s.true_gaze;
    r.extra["true_eyes"] = encode_eyes(s.true_eyeballs);
    return r;
}

inline std::vector<SampleRecord> read_samples(const std::string& path) {
    std::vector<SampleRecord> out;
    read_jsonl_file(path, [&](const json& j, std::size_t line) { out.push_back(decode_sample(j, {line, {}})); });
    return out;
}

/// Head yaw for binning: the stored pose when present, otherwise the anchor estimate.
inline double sample_yaw(const SampleRecord& s) {
    return s.head_pose ? s.head_pose->yaw : euler_yaw_pitch(face_rotation(s.anchors)).yaw;
}

// ---------------------------------------------------------------------------
// Pairs JSONL

struct PairRecord {
    std::string id;
    SampleRecord view1;
    SampleRecord view2;
    SimilarityTransform p;
    json extra = json::object();
};

inline json encode_pair(const PairRecord& r) {
    json out = {{"id", r.id}, {"view1", encode_sample(r.view1)}, {"view2", encode_sample(r.view2)}};
    out["P"] = encode_transform(r.p)["P"];
    merge_extras(out, r.extra);
    return out;
}

inline PairRecord decode_pair(const json& j, const Where& w = {}) {
    PairRecord r;
    r.id = string_field(j, "id", w);
    r.view1 = decode_sample(member(j, "view1", w), w / "view1");
    r.view2 = decode_sample(member(j, "view2", w), w / "view2");
    r.p = decode_transform(j, w);
    r.extra = extras(j, {"id", "view1", "view2", "P"});
    return r;
}

inline PairRecord pair_record(const ViewPair& p) { return {p.view1.id, sample_record(p.view1), sample_record(p.view2), p.p, json::object()}; }

inline std::vector<PairRecord> read_pairs(const std::string& path) {
    std::vector<PairRecord> out;
    read_jsonl_file(path, [&](const json& j, std::size_t line) { out.push_back(decode_pair(j, {line, {}})); });
    return out;
}

// ---------------------------------------------------------------------------
// Labels JSONL

struct LabelRecord {
    std::string id;
    EyeMeshPair eyes;
    GazeVector gaze;
    std::optional<PseudoLabelDiagnostics> diagnostics;
    json extra = json::object();
};

inline json encode_label(const LabelRecord& r) {
    json out = {{"id", r.id}, {"eyes", encode_eyes(r.eyes)}, {"gaze", to_json(r.gaze.vec())}};
    if (r.diagnostics) {
        auto eye = [](const EyeDiagnostics& d) {
            return json{{"correction_angle_deg", d.correction_angle}, {"lift_residual", d.lift_residual}};
        };
        out["diagnostics"] = {{"left", eye(r.diagnostics->left)},
                              {"right", eye(r.diagnostics->right)},
                              {"warnings", r.diagnostics->warnings}};
    }
    merge_extras(out, r.extra);
    return out;
}

inline LabelRecord decode_label(const json& j, const Where& w = {}, const TemplatePair& shapes = {}) {
    LabelRecord r;
    r.id = string_field(j, "id", w);
    r.eyes = decode_eyes(member(j, "eyes", w), w / "eyes", shapes);
    r.gaze = gaze(member(j, "gaze", w), w / "gaze");
    if (j.contains("diagnostics")) {
        const json& d = j["diagnostics"];
        const Where wd = w / "diagnostics";
        PseudoLabelDiagnostics diag;
        auto eye = [&](const char* side) {
            const json& e = member(d, side, wd);
            return EyeDiagnostics{number(e, "correction_angle_deg", wd / side), number(e, "lift_residual", wd / side)};
        };
        diag.left = eye("left");
        diag.right = eye("right");
        for (const auto& msg : array_of(member(d, "warnings", wd), 0, wd / "warnings")) {
            if (!msg.is_string()) {
                (wd / "warnings").fail("expected strings");
            }
            diag.warnings.push_back(msg.get<std::string>());
        }
        r.diagnostics = std::move(diag);
    }
    r.extra = extras(j, {"id", "eyes", "gaze", "diagnostics"});
    return r;
}

inline std::vector<LabelRecord> read_labels(const std::string& path) {
    std::vector<LabelRecord> out;
    read_jsonl_file(path, [&](const json& j, std::size_t line) { out.push_back(decode_label(j, {line, {}})); });
    return out;
}

// ---------------------------------------------------------------------------
// Model JSON

inline json encode_model(const Model& m) {
    return {{"widths", m.descriptor.widths},
            {"activation", m.descriptor.activation},
            {"params", std::vector<double>(m.params.data(), m.params.data() + m.params.size())}};
}

inline Model decode_model(const json& j, const Where& w = {}) {
    Model m;
    m.descriptor.widths.clear();
    const json& widths = array_of(member(j, "widths", w), 0, w / "widths");
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (!widths[i].is_number_integer()) {
            (w / "widths" / i).fail("expected an integer");
        }
        m.descriptor.widths.push_back(widths[i].get<int>());
    }
    m.descriptor.activation = string_field(j, "activation", w);
    try {
        m.descriptor.validate();
    } catch (const ParameterError& e) {
        (w / "widths").fail(e.what());
    }
    const json& params = array_of(member(j, "params", w), parameter_count(m.descriptor.widths), w / "params");
    m.params.resize(static_cast<Eigen::Index>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m.params(static_cast<Eigen::Index>(i)) = number(params[i], w / "params" / i);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Configuration documents. Unknown keys are rejected so typos do not pass silently.

namespace detail {

inline void only_keys(const json& j, std::initializer_list<const char*> known, const Where& w) {
    if (!j.is_object()) {
        w.fail("expected an object");
    }
    const json rest = extras(j, known);
    if (!rest.empty()) {
        (w / rest.begin().key()).fail("unknown key");
    }
}

inline void read(const json& j, const char* key, double& v, const Where& w) {
    if (j.contains(key)) {
        v = number(j[key], w / key);
    }
}

inline void read(const json& j, const char* key, int& v, const Where& w) {
    if (j.contains(key)) {
        if (!j[key].is_number_integer()) {
            (w / key).fail("expected an integer");
        }
        v = j[key].get<int>();
    }
}

inline void read(const json& j, const char* key, std::uint64_t& v, const Where& w) {
    if (j.contains(key)) {
        if (!j[key].is_number_unsigned()) {
            (w / key).fail("expected a non-negative integer");
        }
        v = j[key].get<std::uint64_t>();
    }
}

inline void read(const json& j, const char* key, bool& v, const Where& w) {
    if (j.contains(key)) {
        if (!j[key].is_boolean()) {
            (w / key).fail("expected true or false");
        }
        v = j[key].get<bool>();
    }
}

inline void read(const json& j, const char* key, Range& v, const Where& w) {
    if (j.contains(key)) {
        array_of(j[key], 2, w / key);
        v = {number(j[key][0], w / key / 0), number(j[key][1], w / key / 1)};
    }
}

template <typename Fn>
void checked(const Where& w, Fn&& fn) {
    try {
        fn();
    } catch (const ParameterError& e) {
        w.fail(e.what());
    }
}

} // namespace detail

inline LossWeights decode_weights(const json& j, const Where& w = {}) {
    detail::only_keys(j, {"vertex", "edge", "gaze", "mv_vertex", "mv_gaze", "gt", "pgt", "mv"}, w);
    LossWeights lw;
    detail::read(j, "vertex", lw.vertex, w);
    detail::read(j, "edge", lw.edge, w);
    detail::read(j, "gaze", lw.gaze, w);
    detail::read(j, "mv_vertex", lw.mv_vertex, w);
    detail::read(j, "mv_gaze", lw.mv_gaze, w);
    detail::read(j, "gt", lw.gt, w);
    detail::read(j, "pgt", lw.pgt, w);
    detail::read(j, "mv", lw.mv, w);
    detail::checked(w, [&] { lw.validate(); });
    return lw;
}

inline json encode_weights(const LossWeights& w) {
    return {{"vertex", w.vertex}, {"edge", w.edge}, {"gaze", w.gaze}, {"mv_vertex", w.mv_vertex},
            {"mv_gaze", w.mv_gaze}, {"gt", w.gt}, {"pgt", w.pgt}, {"mv", w.mv}};
}

inline SceneConfig decode_scene(const json& j, const Where& w = {}) {
    detail::only_keys(j,
                      {"seed", "n_samples", "yaw_range", "pitch_range", "gaze_cone", "iris_noise_px",
                       "pitch_label_noise_deg", "yaw_label_noise_deg", "anchor_noise", "eye_scale_px",
                       "snap_gaze_to_vertices", "view_delta_sigma"},
                      w);
    SceneConfig c;
    detail::read(j, "seed", c.seed, w);
    detail::read(j, "n_samples", c.n_samples, w);
    detail::read(j, "yaw_range", c.yaw_range, w);
    detail::read(j, "pitch_range", c.pitch_range, w);
    detail::read(j, "gaze_cone", c.gaze_cone, w);
    detail::read(j, "iris_noise_px", c.iris_noise_px, w);
    detail::read(j, "pitch_label_noise_deg", c.pitch_label_noise_deg, w);
    detail::read(j, "yaw_label_noise_deg", c.yaw_label_noise_deg, w);
    detail::read(j, "anchor_noise", c.anchor_noise, w);
    detail::read(j, "eye_scale_px", c.eye_scale_px, w);
    detail::read(j, "snap_gaze_to_vertices", c.snap_gaze_to_vertices, w);
    detail::checked(w, [&] { c.validate(); });
    return c;
}

inline ModelDescriptor decode_descriptor(const json& j, const Where& w = {}) {
    detail::only_keys(j, {"widths", "hidden", "activation"}, w);
    ModelDescriptor d;
    if (j.contains("widths") && j.contains("hidden")) {
        w.fail("give either widths or hidden, not both");
    }
    auto ints = [&](const char* key) {
        std::vector<int> out;
        for (std::size_t i = 0; i < array_of(j[key], 0, w / key).size(); ++i) {
            if (!j[key][i].is_number_integer()) {
                (w / key / i).fail("expected an integer");
            }
            out.push_back(j[key][i].get<int>());
        }
        return out;
    };
    if (j.contains("widths")) {
        d.widths = ints("widths");
    } else if (j.contains("hidden")) {
        d.widths = ints("hidden");
        d.widths.insert(d.widths.begin(), kFeatureSize);
        d.widths.push_back(kOutputSize);
    }
    if (j.contains("activation")) {
        d.activation = string_field(j, "activation", w);
    }
    detail::checked(w, [&] { d.validate(); });
    return d;
}

inline TrainConfig decode_train(const json& j, const Where& w = {}) {
    detail::only_keys(j,
                      {"seed", "epochs", "batch_size", "base_step", "warmup_epochs", "decay_epochs", "decay_factor",
                       "momentum", "weights", "use_gt", "use_pgt", "use_mv", "mixing", "clip_norm", "grad_check_every",
                       "model"},
                      w);
    TrainConfig c;
    detail::read(j, "seed", c.seed, w);
    detail::read(j, "epochs", c.epochs, w);
    detail::read(j, "batch_size", c.batch_size, w);
    detail::read(j, "base_step", c.base_step, w);
    detail::read(j, "warmup_epochs", c.warmup_epochs, w);
    if (j.contains("decay_epochs")) {
        c.decay_epochs.clear();
        for (std::size_t i = 0; i < array_of(j["decay_epochs"], 0, w / "decay_epochs").size(); ++i) {
            if (!j["decay_epochs"][i].is_number_integer()) {
                (w / "decay_epochs" / i).fail("expected an integer");
            }
            c.decay_epochs.push_back(j["decay_epochs"][i].get<int>());
        }
    }
    detail::read(j, "decay_factor", c.decay_factor, w);
    detail::read(j, "momentum", c.momentum, w);
    if (j.contains("weights")) {
        c.weights = decode_weights(j["weights"], w / "weights");
    }
    detail::read(j, "use_gt", c.use_gt, w);
    detail::read(j, "use_pgt", c.use_pgt, w);
    detail::read(j, "use_mv", c.use_mv, w);
    if (j.contains("mixing")) {
        const std::string m = string_field(j, "mixing", w);
        if (m == "round_robin") {
            c.mixing = Mixing::RoundRobin;
        } else if (m == "joint") {
            c.mixing = Mixing::Joint;
        } else {
            (w / "mixing").fail("expected 'round_robin' or 'joint'");
        }
    }
    detail::read(j, "clip_norm", c.clip_norm, w);
    detail::read(j, "grad_check_every", c.grad_check_every, w);
    detail::checked(w, [&] { c.validate(); });
    return c;
}

/// Model descriptor embedded in a train config under "model" (defaults when absent).
inline ModelDescriptor train_model_descriptor(const json& j, const Where& w = {}) {
    return j.contains("model") ? decode_descriptor(j["model"], w / "model") : ModelDescriptor{};
}

struct AblationSpec {
    AblationSetup setup;
    std::vector<Scenario> scenarios;
};

inline AblationSpec decode_ablation(const json& j, const Where& w = {}) {
    detail::only_keys(j,
                      {"gt_world", "pseudo_world", "test_world", "view_delta_sigma", "model", "train", "bins",
                       "scenarios"},
                      w);
    AblationSpec spec;
    AblationSetup& s = spec.setup;
    s.gt_world = decode_scene(member(j, "gt_world", w), w / "gt_world");
    s.pseudo_world = decode_scene(member(j, "pseudo_world", w), w / "pseudo_world");
    s.test_world = decode_scene(member(j, "test_world", w), w / "test_world");
    detail::read(j, "view_delta_sigma", s.view_delta_sigma, w);
    if (j.contains("model")) {
        s.descriptor = decode_descriptor(j["model"], w / "model");
    }
    if (j.contains("train")) {
        s.train = decode_train(j["train"], w / "train");
    }
    if (j.contains("bins")) {
        s.bins.clear();
        for (std::size_t i = 0; i < array_of(j["bins"], 0, w / "bins").size(); ++i) {
            s.bins.push_back(number(j["bins"][i], w / "bins" / i));
        }
    }
    const json& list = array_of(member(j, "scenarios", w), 0, w / "scenarios");
    for (std::size_t i = 0; i < list.size(); ++i) {
        const Where ws = w / "scenarios" / i;
        detail::only_keys(list[i], {"name", "use_gt", "use_pgt", "use_mv", "pseudo_yaw_cap"}, ws);
        Scenario sc;
        sc.name = string_field(list[i], "name", ws);
        detail::read(list[i], "use_gt", sc.use_gt, ws);
        detail::read(list[i], "use_pgt", sc.use_pgt, ws);
        detail::read(list[i], "use_mv", sc.use_mv, ws);
        if (list[i].contains("pseudo_yaw_cap") && !list[i]["pseudo_yaw_cap"].is_null()) {
            sc.pseudo_yaw_cap = number(list[i]["pseudo_yaw_cap"], ws / "pseudo_yaw_cap");
        }
        spec.scenarios.push_back(std::move(sc));
    }
    if (spec.scenarios.empty()) {
        (w / "scenarios").fail("no scenarios");
    }
    return spec;
}

// ---------------------------------------------------------------------------
// CSV reports

namespace detail {

/// Shortest text that parses back to the same double.
inline std::string number_text(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

} // namespace detail

inline void write_report(std::ostream& out, std::span<const BinRow> rows) {
    out << "bin_max_yaw,mean_error_deg,count\n";
    for (const auto& r : rows) {
        out << detail::number_text(r.max_yaw) << ',' << (r.mean_error ? detail::number_text(*r.mean_error) : "") << ','
            << r.count << '\n';
    }
}

inline std::vector<BinRow> read_report(std::istream& in) {
    std::string text;
    std::size_t line = 1;
    if (!std::getline(in, text) || text != "bin_max_yaw,mean_error_deg,count") {
        throw DataError("unexpected header", line);
    }
    std::vector<BinRow> rows;
    while (std::getline(in, text)) {
        ++line;
        if (text.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(text);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (text.back() == ',') {
            cells.emplace_back();
        }
        if (cells.size() != 3) {
            throw DataError("expected 3 columns", line);
        }
        BinRow r;
        auto parse = [&](const std::string& s, const char* field) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(s, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != s.size() || !std::isfinite(v)) {
                throw DataError("expected a finite number", line, field);
            }
            return v;
        };
        r.max_yaw = parse(cells[0], "bin_max_yaw");
        if (!cells[1].empty()) {
            r.mean_error = parse(cells[1], "mean_error_deg");
        }
        const double count = parse(cells[2], "count");
        if (count < 0 || count != std::floor(count)) {
            throw DataError("expected a non-negative integer", line, "count");
        }
        r.count = static_cast<std::size_t>(count);
        rows.push_back(r);
    }
    return rows;
}

inline void write_ablation_table(std::ostream& out, std::span<const AblationRow> rows) {
    out << "scenario,bin_max_yaw,mean_error_deg,count\n";
    for (const auto& row : rows) {
        for (const auto& b : row.bins) {
            out << row.name << ',' << detail::number_text(b.max_yaw) << ','
                << (b.mean_error ? detail::number_text(*b.mean_error) : "") << ',' << b.count << '\n';
        }
    }
}

inline void write_history(std::ostream& out, const TrainHistory& h) {
    out << "epoch,step_size,loss_gt,loss_pgt,loss_mv,loss_total,val_error_deg,grad_check\n";
    for (std::size_t e = 0; e < h.epochs.size(); ++e) {
        const auto& s = h.epochs[e];
        out << e << ',' << detail::number_text(s.step_size) << ',' << detail::number_text(s.gt) << ','
            << detail::number_text(s.pgt) << ',' << detail::number_text(s.mv) << ',' << detail::number_text(s.total)
            << ',' << (s.validation_error ? detail::number_text(*s.validation_error) : "") << ','
            << (s.grad_check_error ? detail::number_text(*s.grad_check_error) : "") << '\n';
    }
}

// ---------------------------------------------------------------------------
// Scatter SVG: predicted vs. true gaze angles, one panel each for yaw and pitch.

struct ScatterPoint {
    YawPitch truth;
    YawPitch predicted;
};

inline void write_scatter(std::ostream& out, std::span<const ScatterPoint> pts, double limit = 120.0) {
    const int panel = 320, pad = 40;
    const int width = 2 * panel + 3 * pad, height = panel + 2 * pad;
    auto fmt = [](double v) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(2) << v;
        return s.str();
    };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (int p = 0; p < 2; ++p) {
        const double x0 = pad + p * (panel + pad), y0 = pad;
        auto px = [&](double v) { return x0 + (std::clamp(v, -limit, limit) + limit) / (2 * limit) * panel; };
        auto py = [&](double v) { return y0 + panel - (std::clamp(v, -limit, limit) + limit) / (2 * limit) * panel; };
        out << "<g>\n<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << panel << "\" height=\""
            << panel << "\" fill=\"none\" stroke=\"black\"/>\n";
        out << "<line x1=\"" << fmt(px(-limit)) << "\" y1=\"" << fmt(py(-limit)) << "\" x2=\"" << fmt(px(limit))
            << "\" y2=\"" << fmt(py(limit)) << "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
        out << "<text x=\"" << fmt(x0 + panel / 2.0) << "\" y=\"" << fmt(y0 - 12) << "\" text-anchor=\"middle\">"
            << (p == 0 ? "yaw (deg): true vs predicted" : "pitch (deg): true vs predicted") << "</text>\n";
        for (const auto& s : pts) {
            const double t = p == 0 ? s.truth.yaw : s.truth.pitch;
            const double q = p == 0 ? s.predicted.yaw : s.predicted.pitch;
            out << "<circle cx=\"" << fmt(px(t)) << "\" cy=\"" << fmt(py(q)) << "\" r=\"1.5\" fill=\"#1f77b4\"/>\n";
        }
        out << "</g>\n";
    }
    out << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Run manifest

/// 64-bit FNV-1a; stable across platforms for identical bytes.
inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

struct RunManifest {
    std::string command;
    std::string config_hash;
    std::optional<std::uint64_t> seed;
    std::string tool_version = kToolVersion;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    double wall_time_s = 0.0;
};

inline json encode_manifest(const RunManifest& m) {
    return {{"command", m.command},
            {"config_hash", m.config_hash},
            {"seed", m.seed ? json(*m.seed) : json(nullptr)},
            {"tool_version", m.tool_version},
            {"inputs", m.inputs},
            {"outputs", m.outputs},
            {"wall_time_s", m.wall_time_s}};
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    out << text;
    if (!out) {
        throw DataError("failed writing " + path);
    }
}

} // namespace ocumesh::io
