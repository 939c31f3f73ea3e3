// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when all pass.

#include "checks.hpp"
#include "oracles.hpp"

#include "ocumesh/io.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace ocumesh;
namespace fs = std::filesystem;

struct Outcome {
    bool ok = false;
    std::string detail;
    std::vector<std::string> notes;
};

std::string fmt(double v, int precision = 3) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

double relative(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

/// Runs one criterion, checks its runtime budget and prints the verdict.
bool criterion(int id, const std::string& title, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what(), {}};
    }
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = t < budget_s;
    const bool pass = o.ok && in_time;
    std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << title << "  [" << o.detail
              << "; " << fmt(t, 3) << " s of " << fmt(budget_s) << " s" << (in_time ? "" : ", over budget") << "]"
              << std::endl;
    for (const auto& n : o.notes) {
        std::cout << "    " << n << std::endl;
    }
    return pass;
}

// ---------------------------------------------------------------------------

Outcome template_exactness() {
    const EyeballTemplate t = build_template();
    const MeshValidationReport r = validate(t);
    const bool one_loop = r.boundary_loops.size() == 1 && r.boundary_loops[0].size() == 32;
    Outcome o;
    o.ok = r.vertex_count == 481 && r.triangle_count == 928 && one_loop && r.max_radius_deviation < 1e-9 &&
           r.is_mirror_consistent;
    o.detail = std::to_string(r.vertex_count) + " vertices, " + std::to_string(r.triangle_count) + " triangles, " +
               std::to_string(r.boundary_loops.size()) + " boundary loop(s) of " +
               (r.boundary_loops.empty() ? "0" : std::to_string(r.boundary_loops[0].size())) +
               ", radius deviation " + fmt(r.max_radius_deviation) + ", mirror " +
               (r.is_mirror_consistent ? "consistent" : "inconsistent");
    return o;
}

Outcome loss_oracles() {
    std::mt19937_64 rng(101);
    const TemplatePair topo;
    double worst_v = 0.0, worst_e = 0.0, worst_mv = 0.0;
    for (int t = 0; t < 100; ++t) {
        const auto c = checks::random_case(rng, false);
        worst_v = std::max(worst_v, relative(vertex_loss(c.pred, c.target).value,
                                             oracle::vertex_loss(c.pred.left, c.pred.right, c.target.left,
                                                                 c.target.right)));
        worst_e = std::max(worst_e, relative(edge_loss(c.pred, c.target, topo).value,
                                             oracle::edge_loss(c.pred.left, c.pred.right, c.target.left,
                                                               c.target.right, topo.left->triangles,
                                                               topo.right->triangles)));
        worst_mv = std::max(worst_mv, relative(mv_vertex_loss(c.pred, c.pred2, c.p).value,
                                               oracle::mv_vertex_loss(c.pred.left, c.pred.right, c.pred2.left,
                                                                      c.pred2.right, c.p.matrix())));
    }
    return {std::max({worst_v, worst_e, worst_mv}) < 1e-12,
            "100 random pairs, worst relative error: vertex " + fmt(worst_v) + ", edge " + fmt(worst_e) +
                ", multi-view vertex " + fmt(worst_mv),
            {}};
}

Outcome gradient_suite() {
    std::mt19937_64 rng(202);
    std::map<std::string, double> worst;
    for (int t = 0; t < 100; ++t) {
        const auto c = checks::random_case(rng);
        for (checks::LossKind kind : checks::kAllLossKinds) {
            double& w = worst[checks::name(kind)];
            w = std::max(w, checks::max_fd_error(kind, c, rng));
        }
    }
    // the weighted objective through the model, all three supervision sources
    SceneConfig cfg;
    cfg.seed = 203;
    cfg.n_samples = 6;
    cfg.iris_noise_px = 0.5;
    cfg.pitch_label_noise_deg = 3.0;
    const auto samples = generate(cfg);
    std::vector<SupervisedExample> gt;
    for (const auto& s : samples) {
        gt.push_back(gt_example(s));
    }
    std::vector<PairExample> mv;
    for (const auto& p : generate_pairs(cfg)) {
        mv.push_back(pair_example(p));
    }
    const auto pgt = pgt_examples(samples, cfg);
    double model_worst = 0.0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Model m = init_model(ModelDescriptor{}, seed);
        std::mt19937_64 prng(seed);
        std::normal_distribution<double> nd(0.0, 0.05);
        for (Eigen::Index i = 0; i < m.params.size(); ++i) {
            m.params(i) += nd(prng);
        }
        model_worst = std::max(model_worst, grad_check(m, {gt, pgt, mv}, LossWeights{}, 60, seed));
    }
    worst["objective (model params)"] = model_worst;
    double overall = 0.0;
    std::string detail = "100 non-kink points, max relative error:";
    for (const auto& [name, w] : worst) {
        overall = std::max(overall, w);
        detail += " " + name + " " + fmt(w, 2) + ",";
    }
    detail.pop_back();
    return {overall < 1e-4, detail, {}};
}

Outcome geometry_round_trips() {
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> us(0.2, 5.0);
    double est_err = 0.0, dec_err = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const double s = us(rng);
        const Rotation r = oracle::random_rotation(rng);
        const Vec3 tr = oracle::random_points(rng, 1, 10.0).row(0).transpose();
        const SimilarityTransform p(s, r, tr);
        const Points src = oracle::random_points(rng, 20, 3.0);
        const SimilarityTransform e = estimate_similarity(src, apply(p, src));
        est_err = std::max({est_err, std::abs(e.scale() - s), (e.rotation().matrix() - r.matrix()).cwiseAbs().maxCoeff(),
                            (e.translation() - tr).cwiseAbs().maxCoeff()});
        const SimilarityTransform d = decompose(p.matrix());
        dec_err = std::max({dec_err, std::abs(d.scale() - s), (d.rotation().matrix() - r.matrix()).cwiseAbs().maxCoeff(),
                            (d.translation() - tr).cwiseAbs().maxCoeff()});
    }
    double rb_err = 0.0;
    std::vector<std::pair<Vec3, Vec3>> pairs;
    for (int t = 0; t < 1000; ++t) {
        pairs.emplace_back(oracle::random_unit(rng), oracle::random_unit(rng));
    }
    pairs.emplace_back(Vec3::UnitX(), -Vec3::UnitX());
    pairs.emplace_back(Vec3::UnitZ(), Vec3::UnitZ());
    const Vec3 a = oracle::random_unit(rng);
    pairs.emplace_back(a, -a);
    for (const auto& [u, v] : pairs) {
        rb_err = std::max(rb_err, (rotation_between(u, v) * u - v).norm());
    }
    return {est_err < 1e-8 && dec_err < 1e-8 && rb_err < 1e-9,
            "1000 transforms: estimate error " + fmt(est_err) + ", decompose error " + fmt(dec_err) +
                "; rotation_between on 1003 pairs: max |R a - b| " + fmt(rb_err),
            {}};
}

double off_camera_deg(const SyntheticSample& s) { return oracle::angle_deg(s.true_gaze.vec(), -Vec3::UnitZ()); }

Outcome pseudo_label_closed_loop() {
    Outcome o;
    SceneConfig cfg;
    cfg.n_samples = 10000;

    // iris centers on template vertices
    cfg.seed = 401;
    cfg.snap_gaze_to_vertices = true;
    double snapped_worst = 0.0, snapped_away = 0.0;
    int snapped_used = 0;
    for (const auto& s : generate(cfg)) {
        const double err = oracle::angle_deg(pair_gaze(pseudo_label(s.anchors).first).vec(), s.true_gaze.vec());
        if (off_camera_deg(s) < 90.0) {
            snapped_worst = std::max(snapped_worst, err);
            ++snapped_used;
        } else {
            snapped_away = std::max(snapped_away, err);
        }
    }

    // general noise-free samples
    cfg.seed = 402;
    cfg.snap_gaze_to_vertices = false;
    const std::vector<double> bands{10, 20, 30, 40, 50, 60, 70, 80, 90, 180};
    std::vector<double> band_worst(bands.size(), 0.0);
    std::vector<int> band_count(bands.size(), 0);
    for (const auto& s : generate(cfg)) {
        const double err = oracle::angle_deg(pair_gaze(pseudo_label(s.anchors).first).vec(), s.true_gaze.vec());
        const double off = off_camera_deg(s);
        std::size_t b = 0;
        while (off >= bands[b]) {
            ++b;
        }
        band_worst[b] = std::max(band_worst[b], err);
        ++band_count[b];
    }

    // iris landmark noise against the independent oracle
    cfg.seed = 403;
    cfg.iris_noise_px = 1.0;
    cfg.eye_scale_px = 20.0;
    const auto& tl = default_template(Side::Left)->vertices;
    const auto& tr = default_template(Side::Right)->vertices;
    double ours = 0.0, theirs = 0.0;
    for (const auto& s : generate(cfg)) {
        ours += angular_error(pair_gaze(pseudo_label(s.anchors).first), s.true_gaze);
        theirs += oracle::angle_deg(oracle::pseudo_label_gaze(s.anchors, tl, tr), s.true_gaze.vec());
    }
    const double n = static_cast<double>(cfg.n_samples);
    const double noise_rel = std::abs(ours - theirs) / theirs;
    const double near_worst = std::max({band_worst[0], band_worst[1], band_worst[2]});
    const int near_count = band_count[0] + band_count[1] + band_count[2];

    o.ok = snapped_worst < 1e-6 && snapped_used > 0 && near_worst < 6.0 && near_count > 0 && noise_rel < 0.05;
    o.detail = "vertex-aligned worst " + fmt(snapped_worst) + " deg over " + std::to_string(snapped_used) +
               " samples facing the camera; general worst " + fmt(near_worst) + " deg over " +
               std::to_string(near_count) + " samples within 30 deg of the camera axis; 1 px noise mean " +
               fmt(ours / n) + " vs oracle " + fmt(theirs / n) + " deg (" + fmt(100 * noise_rel, 2) + "%)";
    o.notes.push_back("validity domain: the xy nearest-vertex lift is exact only for gaze facing the camera; the 6 deg "
                      "bound is checked within 30 deg of the camera axis, where foreshortening of the xy lift adds up "
                      "to ~0.3 deg over the 5.84 deg covering radius of the template vertices in the gaze cone");
    o.notes.push_back("vertex-aligned samples facing away from the camera: worst " + fmt(snapped_away) + " deg");
    std::string table = "general noise-free worst error by angle off the camera axis:";
    double lo = 0.0;
    for (std::size_t b = 0; b < bands.size(); ++b) {
        table += " [" + fmt(lo) + "," + fmt(bands[b]) + ") " + fmt(band_worst[b]) + " (n=" +
                 std::to_string(band_count[b]) + ")";
        lo = bands[b];
    }
    o.notes.push_back(table);
    return o;
}

Outcome multi_view_consistency() {
    SceneConfig cfg;
    cfg.seed = 501;
    cfg.n_samples = 10000;
    cfg.iris_noise_px = 1.0;
    double vert = 0.0, gaze = 0.0;
    for (const auto& p : generate_pairs(cfg, 20.0)) {
        const auto& t1 = p.view1.true_eyeballs;
        const auto& t2 = p.view2.true_eyeballs;
        vert = std::max({vert, (apply(p.p, t1.left.vertices()) - t2.left.vertices()).cwiseAbs().maxCoeff(),
                         (apply(p.p, t1.right.vertices()) - t2.right.vertices()).cwiseAbs().maxCoeff()});
        gaze = std::max(gaze, (p.p.rotation() * p.view1.true_gaze.vec() - p.view2.true_gaze.vec()).norm());
    }
    return {vert < 1e-9 && gaze < 1e-9,
            "10000 pairs: max |apply(p, truth1) - truth2| " + fmt(vert) + ", max |R g1 - g2| " + fmt(gaze), {}};
}

AblationSetup ablation_setup() {
    AblationSetup s;
    s.gt_world.seed = 11;
    s.gt_world.n_samples = 500;
    s.gt_world.yaw_range = {-20.0, 20.0};
    s.pseudo_world.seed = 12;
    s.pseudo_world.n_samples = 500;
    s.pseudo_world.iris_noise_px = 0.5;
    s.pseudo_world.pitch_label_noise_deg = 4.0;
    s.pseudo_world.yaw_label_noise_deg = 2.0;
    s.test_world.seed = 13;
    s.test_world.n_samples = 500;
    s.descriptor.widths = {kFeatureSize, 32, 32, kOutputSize};
    s.train.seed = 14;
    s.train.epochs = 60;
    s.train.batch_size = 32;
    s.train.base_step = 1e-2;
    s.train.decay_epochs = {36, 51};
    return s;
}

std::map<std::string, double> run_scenarios(const std::vector<Scenario>& scenarios) {
    std::map<std::string, double> out;
    for (const auto& row : run_ablation(scenarios, ablation_setup())) {
        out[row.name] = row.mean_error;
    }
    return out;
}

Outcome ablation_ordering() {
    const auto e = run_scenarios({{"narrow-GT", true, false, false, {}},
                                  {"narrow-GT+wide-pseudo", true, true, false, {}},
                                  {"narrow-GT+wide-pseudo+MV", true, true, true, {}},
                                  {"pseudo-only", false, true, false, {}},
                                  {"MV-only", false, false, true, {}}});
    const double gt = e.at("narrow-GT"), pgt = e.at("narrow-GT+wide-pseudo"), all = e.at("narrow-GT+wide-pseudo+MV");
    const double pseudo = e.at("pseudo-only"), mv = e.at("MV-only");
    Outcome o;
    o.ok = gt - pgt >= 0.5 && pgt - all >= 0.5 && mv > pseudo;
    o.detail = "mean error on |yaw| <= 90: narrow-GT " + fmt(gt, 4) + " > +pseudo " + fmt(pgt, 4) + " > +MV " +
               fmt(all, 4) + " (gaps " + fmt(gt - pgt, 3) + ", " + fmt(pgt - all, 3) + "); MV-only " + fmt(mv, 4) +
               " > pseudo-only " + fmt(pseudo, 4);
    return o;
}

Outcome coverage_monotonicity() {
    const std::vector<double> caps{5.0, 20.0, 40.0, 90.0};
    std::vector<Scenario> scenarios;
    for (double c : caps) {
        scenarios.push_back({"cap" + fmt(c), true, true, true, c});
    }
    const auto e = run_scenarios(scenarios);
    int inversions = 0;
    bool small = true;
    std::string detail = "wide-pose mean error by pseudo-data yaw cap:";
    for (std::size_t i = 0; i < caps.size(); ++i) {
        const double v = e.at("cap" + fmt(caps[i]));
        detail += " " + fmt(caps[i]) + " deg " + fmt(v, 4) + (i + 1 < caps.size() ? "," : "");
        if (i > 0) {
            const double prev = e.at("cap" + fmt(caps[i - 1]));
            if (v > prev) {
                ++inversions;
                small = small && v - prev <= 0.2;
            }
        }
    }
    detail += "; inversions " + std::to_string(inversions);
    return {inversions == 0 || (inversions == 1 && small), detail, {}};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

const char* kPipeline[] = {
    "template --side left --out tmpl/left.json --report template_report.json",
    "template --side right --out tmpl/right.json",
    "synth --config gt_scene.json --out gt.jsonl",
    "synth --config pseudo_scene.json --out pseudo.jsonl --pairs pairs.jsonl",
    "synth --config test_scene.json --out test.jsonl",
    "label --world pseudo.jsonl --config label_noise.json --template-dir tmpl --out labels.jsonl",
    "--threads 2 train --world gt.jsonl --pseudo pseudo.jsonl --labels labels.jsonl --pairs pairs.jsonl "
    "--validation test.jsonl --config train.json --out model.json --history history.csv",
    "eval --model model.json --world test.jsonl --out report.csv --scatter scatter.svg --predictions pred.jsonl",
    "loss --kind gaze --a gaze.json --b gaze.json --out loss.json",
    "ablate --spec ablation.json --out table.csv",
};

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "ocumesh_acceptance";
    fs::remove_all(root);
    std::vector<std::map<std::string, std::string>> runs;
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = root / ("run" + std::to_string(run));
        fs::create_directories(dir / "tmpl");
        spit(dir / "gt_scene.json", R"({"seed": 61, "n_samples": 200, "yaw_range": [-20, 20]})");
        spit(dir / "pseudo_scene.json", R"({"seed": 62, "n_samples": 200, "iris_noise_px": 0.5})");
        spit(dir / "test_scene.json", R"({"seed": 63, "n_samples": 200})");
        spit(dir / "label_noise.json", R"({"seed": 64, "pitch_label_noise_deg": 4, "yaw_label_noise_deg": 2})");
        spit(dir / "train.json", R"({"seed": 65, "epochs": 6, "batch_size": 32, "warmup_epochs": 1,
                                     "decay_epochs": [4, 5], "use_gt": true, "use_pgt": true, "use_mv": true})");
        spit(dir / "gaze.json", R"({"gaze": [0.1, 0.2, -0.97]})");
        spit(dir / "ablation.json", R"({
          "gt_world": {"seed": 71, "n_samples": 60, "yaw_range": [-20, 20]},
          "pseudo_world": {"seed": 72, "n_samples": 60},
          "test_world": {"seed": 73, "n_samples": 60},
          "train": {"seed": 74, "epochs": 2, "batch_size": 16, "warmup_epochs": 0, "decay_epochs": []},
          "scenarios": [{"name": "gt"}, {"name": "gt+pgt+mv", "use_pgt": true, "use_mv": true}]})");
        for (const char* step : kPipeline) {
            const std::string cmd = "cd '" + dir.string() + "' && '" + OCUMESH_CLI_PATH + "' " + step +
                                    " > /dev/null 2> _stderr.txt";
            const int status = std::system(cmd.c_str());
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
                return {false, std::string("step failed: ") + step + ": " + slurp(dir / "_stderr.txt"), {}};
            }
        }
        fs::remove(dir / "_stderr.txt");
        std::map<std::string, std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(dir)) {
            if (!e.is_regular_file()) {
                continue;
            }
            std::string text = slurp(e.path());
            const std::string name = fs::relative(e.path(), dir).string();
            if (name.ends_with(".manifest.json")) {
                io::json m = io::json::parse(text);
                m.erase("wall_time_s");
                text = m.dump();
            }
            files[name] = text;
        }
        runs.push_back(std::move(files));
    }
    std::size_t differing = 0, artifacts = 0;
    std::string first_diff;
    for (const auto& [name, text] : runs[0]) {
        const auto it = runs[1].find(name);
        if (it == runs[1].end() || it->second != text) {
            ++differing;
            first_diff = first_diff.empty() ? name : first_diff;
        }
        artifacts += name.ends_with(".manifest.json") ? 0 : 1;
    }
    const bool ok = differing == 0 && runs[0].size() == runs[1].size();
    fs::remove_all(root);
    return {ok,
            std::to_string(artifacts) + " files and their manifests from a " + std::to_string(std::size(kPipeline)) +
                "-step pipeline run twice: " +
                (ok ? "byte-identical (manifest wall time excluded)"
                    : std::to_string(differing) + " differ, first " + first_diff),
            {}};
}

} // namespace

int main() {
    int failed = 0;
    failed += !criterion(1, "template exactness", 1.0, template_exactness);
    failed += !criterion(2, "loss-oracle equivalence", 10.0, loss_oracles);
    failed += !criterion(3, "gradient suite", 30.0, gradient_suite);
    failed += !criterion(4, "geometry round trips", 5.0, geometry_round_trips);
    failed += !criterion(5, "pseudo-label closed loop", 30.0, pseudo_label_closed_loop);
    failed += !criterion(6, "multi-view consistency", 10.0, multi_view_consistency);
    failed += !criterion(7, "ablation ordering", 600.0, ablation_ordering);
    failed += !criterion(8, "coverage monotonicity", 900.0, coverage_monotonicity);
    failed += !criterion(9, "determinism", 600.0, determinism);
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
