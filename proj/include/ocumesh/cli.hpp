#pragma once

#include "ocumesh/io.hpp"
#include "ocumesh/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace ocumesh::cli {

using io::json;

/// Output of a subcommand: file paths it wrote (for manifests) plus the hashed config.
struct RunContext {
    std::string command;
    json config = json::object();
    std::optional<std::uint64_t> seed;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::ostream* out = &std::cout;
    std::ostream* err = &std::cerr;
    unsigned threads = 1;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void emit(const std::string& path, const std::string& text) {
        if (path == "-") {
            *out << text;
            return;
        }
        io::write_text_file(path, text);
        outputs.push_back(path);
    }

    void write_manifests() const {
        io::RunManifest m;
        m.command = command;
        m.config_hash = io::hex64(io::fnv1a(config.dump()));
        m.seed = seed;
        m.inputs = inputs;
        m.outputs = outputs;
        m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        for (const auto& path : outputs) {
            io::write_text_file(path + ".manifest.json", io::dump(io::encode_manifest(m)));
        }
    }
};

/// Bad command line or environment; maps to exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("OCUMESH_SEED");
    if (v == nullptr || *v == '\0') {
        return std::nullopt;
    }
    std::size_t used = 0;
    unsigned long long seed = 0;
    try {
        seed = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || v[used] != '\0' || v[0] == '-') {
        throw UsageError(std::string("OCUMESH_SEED must be a non-negative integer, got '") + v + "'");
    }
    return seed;
}

/// Reads a config document and applies the seed override to the listed keys (seed, seed+1, ...).
inline json load_config(RunContext& ctx, const std::string& path, std::initializer_list<std::vector<std::string>> seed_keys) {
    json j = path.empty() ? json::object() : io::read_document(path);
    if (!path.empty()) {
        ctx.inputs.push_back(path);
    }
    if (const auto s = env_seed()) {
        std::uint64_t k = 0;
        for (const auto& keys : seed_keys) {
            json* node = &j;
            for (const auto& key : keys) {
                node = &(*node)[key];
            }
            *node = *s + k++;
        }
    }
    ctx.config = j;
    return j;
}

// ---------------------------------------------------------------------------
// Subcommands

inline void run_template(RunContext& ctx, const std::string& side, int sectors, int stacks, const std::string& out,
                         const std::string& report) {
    ctx.config = {{"side", side}, {"sectors", sectors}, {"stacks", stacks}};
    EyeballTemplate t;
    try {
        t = build_template(sectors, stacks, parse_side(side));
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    ctx.emit(out, io::dump(io::encode_template(t)));
    if (!report.empty()) {
        const MeshValidationReport r = validate(t);
        json loops = json::array();
        for (const auto& l : r.boundary_loops) {
            loops.push_back(l);
        }
        ctx.emit(report, io::dump({{"vertex_count", r.vertex_count},
                                   {"triangle_count", r.triangle_count},
                                   {"boundary_loops", loops},
                                   {"max_radius_deviation", r.max_radius_deviation},
                                   {"is_mirror_consistent", r.is_mirror_consistent},
                                   {"is_consistently_wound", r.is_consistently_wound}}));
    }
}

/// Templates from `<dir>/left.json` and `<dir>/right.json`, or the defaults when `dir` is empty.
inline TemplatePair load_templates(RunContext& ctx, const std::string& dir) {
    if (dir.empty()) {
        return {};
    }
    auto load = [&](Side side) {
        const std::string path = dir + "/" + std::string(to_string(side)) + ".json";
        ctx.inputs.push_back(path);
        EyeballTemplate t;
        try {
            t = io::decode_template(io::read_document(path));
        } catch (const DataError& e) {
            throw e.with_source(path);
        }
        if (t.side != side) {
            throw DataError("template side does not match the file name", 0, "side", path);
        }
        for (Region r : kAllRegions) {
            if (!t.regions.contains(to_string(r))) {
                throw DataError("missing region", 0, "regions." + std::string(to_string(r)), path);
            }
        }
        return std::make_shared<const EyeballTemplate>(std::move(t));
    };
    return {load(Side::Left), load(Side::Right)};
}

inline void run_label(RunContext& ctx, const std::string& world, const std::string& mode, const std::string& config,
                      const std::string& template_dir, const std::string& out) {
    const TemplatePair shapes = load_templates(ctx, template_dir);
    const json cfg_doc = load_config(ctx, config, {{"seed"}});
    std::optional<SceneConfig> noise;
    if (!cfg_doc.empty()) {
        noise = io::decode_scene(cfg_doc);
        ctx.seed = noise->seed;
    }
    ctx.inputs.push_back(world);
    const auto samples = io::read_samples(world);
    std::vector<PseudoLabel> labels;
    std::vector<PseudoLabelDiagnostics> diags;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        try {
            if (mode == "gt") {
                if (!s.anchors.gaze) {
                    throw DataError("gt labeling needs a gaze label", i + 1, "gaze", world);
                }
                const EyeMeshPair eyes = fit_gt_pair(s.anchors, s.anchors.gaze->vec(), shapes);
                labels.push_back({eyes, *s.anchors.gaze});
                diags.emplace_back();
            } else {
                auto [eyes, diag] = pseudo_label(s.anchors, shapes);
                labels.push_back({eyes, pair_gaze(eyes)});
                diags.push_back(std::move(diag));
            }
        } catch (const DataError&) {
            throw;
        } catch (const std::exception& e) {
            throw DataError("record " + s.id + ": " + e.what(), i + 1, {}, world);
        }
    }
    if (mode != "gt" && noise) {
        labels = corrupt_pseudo_labels(std::move(labels), *noise);
    }
    std::string text;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        io::LabelRecord r{samples[i].id, labels[i].eyes, labels[i].gaze, std::nullopt, json::object()};
        if (mode != "gt") {
            r.diagnostics = diags[i];
        }
        text += io::encode_label(r).dump() + "\n";
    }
    ctx.emit(out, text);
}

/// Loss input document: {"eyes": {"left": pose, "right": pose}, "gaze": [x, y, z]}; either part optional.
struct LossDoc {
    std::optional<EyeMeshPair> eyes;
    std::optional<Vec3> gaze;
};

inline LossDoc read_loss_doc(RunContext& ctx, const std::string& path) {
    ctx.inputs.push_back(path);
    const json j = io::read_document(path);
    LossDoc d;
    if (j.contains("eyes")) {
        d.eyes = io::decode_eyes(j["eyes"], io::Where{0, "eyes"});
    }
    if (j.contains("gaze")) {
        d.gaze = io::gaze(j["gaze"], io::Where{0, "gaze"}).vec();
    }
    return d;
}

inline void run_loss(RunContext& ctx, const std::string& kind, const std::string& a_path, const std::string& b_path,
                     const std::string& transform, const std::string& weights, const std::string& out) {
    const LossDoc a = read_loss_doc(ctx, a_path);
    const LossDoc b = read_loss_doc(ctx, b_path);
    LossWeights w;
    if (!weights.empty()) {
        ctx.inputs.push_back(weights);
        w = io::decode_weights(io::read_document(weights));
        ctx.config = io::encode_weights(w);
    }
    auto need_eyes = [&](const LossDoc& d, const std::string& path) -> const EyeMeshPair& {
        if (!d.eyes) {
            throw DataError("loss kind '" + kind + "' needs eyes", 0, "eyes", path);
        }
        return *d.eyes;
    };
    auto need_gaze = [&](const LossDoc& d, const std::string& path) -> const Vec3& {
        if (!d.gaze) {
            throw DataError("loss kind '" + kind + "' needs a gaze", 0, "gaze", path);
        }
        return *d.gaze;
    };
    auto norms = [](const Gradients& g) {
        return json{{"left", g.left.size() ? g.left.norm() : 0.0},
                    {"right", g.right.size() ? g.right.norm() : 0.0},
                    {"gaze", g.gaze.norm()}};
    };
    json result;
    if (kind == "mv") {
        if (transform.empty()) {
            throw UsageError("loss kind 'mv' needs --transform");
        }
        ctx.inputs.push_back(transform);
        const SimilarityTransform p = io::decode_transform(io::read_document(transform));
        const PairLossValueGrad l =
            mv_loss(need_eyes(a, a_path), need_gaze(a, a_path), need_eyes(b, b_path), need_gaze(b, b_path), p, w);
        result = {{"value", l.value}, {"grad_norm", {{"view1", norms(l.view1)}, {"view2", norms(l.view2)}}}};
    } else {
        LossValueGrad l;
        if (kind == "vertex") {
            l = vertex_loss(need_eyes(a, a_path), need_eyes(b, b_path));
        } else if (kind == "edge") {
            l = edge_loss(need_eyes(a, a_path), need_eyes(b, b_path));
        } else if (kind == "gaze") {
            l = gaze_loss(need_gaze(a, a_path), need_gaze(b, b_path));
        } else {
            l = combined_supervised_loss(need_eyes(a, a_path), need_gaze(a, a_path), need_eyes(b, b_path),
                                         need_gaze(b, b_path), w);
        }
        result = {{"value", l.value}, {"grad_norm", norms(l.grad)}};
    }
    ctx.emit(out, result.dump() + "\n");
}

inline void run_synth(RunContext& ctx, const std::string& config, const std::string& out, const std::string& pairs,
                      std::optional<double> delta_sigma) {
    json doc = load_config(ctx, config, {{"seed"}});
    double sigma = 20.0;
    if (doc.contains("view_delta_sigma")) {
        sigma = io::number(doc["view_delta_sigma"], io::Where{0, "view_delta_sigma"});
    }
    if (delta_sigma) {
        sigma = *delta_sigma;
    }
    if (!(sigma >= 0.0)) {
        throw UsageError("view delta sigma must be non-negative");
    }
    const SceneConfig cfg = io::decode_scene(doc);
    ctx.seed = cfg.seed;
    std::string text;
    if (pairs.empty()) {
        for (const auto& s : generate(cfg)) {
            text += io::encode_sample(io::sample_record(s)).dump() + "\n";
        }
        ctx.emit(out, text);
        return;
    }
    const std::vector<ViewPair> vp = generate_pairs(cfg, sigma);
    std::string pair_text;
    for (const auto& p : vp) {
        text += io::encode_sample(io::sample_record(p.view1)).dump() + "\n";
        pair_text += io::encode_pair(io::pair_record(p)).dump() + "\n";
    }
    ctx.emit(out, text);
    ctx.emit(pairs, pair_text);
}

struct TrainPaths {
    std::string world, pseudo, labels, pairs, validation, config, out, history;
};

inline void run_train(RunContext& ctx, const TrainPaths& paths) {
    const json doc = load_config(ctx, paths.config, {{"seed"}});
    TrainConfig cfg = io::decode_train(doc);
    cfg.threads = ctx.threads;
    ctx.seed = cfg.seed;
    const ModelDescriptor desc = io::train_model_descriptor(doc);

    TrainingData data;
    std::map<std::string, FaceAnchors> anchors_by_id;
    auto remember = [&](const io::SampleRecord& s) { anchors_by_id.emplace(s.id, s.anchors); };

    if (!paths.world.empty()) {
        ctx.inputs.push_back(paths.world);
        const auto world = io::read_samples(paths.world);
        for (std::size_t i = 0; i < world.size(); ++i) {
            remember(world[i]);
            if (!cfg.use_gt) {
                continue;
            }
            if (!world[i].anchors.gaze) {
                throw DataError("ground-truth sample needs a gaze label", i + 1, "gaze", paths.world);
            }
            const GazeVector& g = *world[i].anchors.gaze;
            data.gt.push_back(supervised_example(make_model_input(world[i].anchors),
                                                 fit_gt_pair(world[i].anchors, g.vec()), g));
        }
    }
    if (!paths.pseudo.empty()) {
        ctx.inputs.push_back(paths.pseudo);
        for (const auto& s : io::read_samples(paths.pseudo)) {
            remember(s);
        }
    }
    if (!paths.pairs.empty()) {
        ctx.inputs.push_back(paths.pairs);
        for (const auto& p : io::read_pairs(paths.pairs)) {
            remember(p.view1);
            remember(p.view2);
            if (cfg.use_mv) {
                data.mv.push_back({make_model_input(p.view1.anchors), make_model_input(p.view2.anchors), p.p});
            }
        }
    }
    if (!paths.labels.empty() && cfg.use_pgt) {
        ctx.inputs.push_back(paths.labels);
        std::size_t line = 0;
        for (const auto& l : io::read_labels(paths.labels)) {
            ++line;
            const auto it = anchors_by_id.find(l.id);
            if (it == anchors_by_id.end()) {
                throw DataError("no sample with this id", line, "id", paths.labels);
            }
            data.pgt.push_back(supervised_example(make_model_input(it->second), l.eyes, l.gaze));
        }
    }
    if (!paths.validation.empty()) {
        ctx.inputs.push_back(paths.validation);
        for (const auto& s : io::read_samples(paths.validation)) {
            if (s.anchors.gaze) {
                data.validation.push_back({make_model_input(s.anchors), *s.anchors.gaze, io::sample_yaw(s)});
            }
        }
    }
    if (cfg.use_gt && data.gt.empty()) {
        throw UsageError("use_gt needs --world with labelled samples");
    }
    if (cfg.use_pgt && data.pgt.empty()) {
        throw UsageError("use_pgt needs --labels (with --pseudo, --world or --pairs providing the samples)");
    }
    if (cfg.use_mv && data.mv.empty()) {
        throw UsageError("use_mv needs --pairs");
    }
    auto [model, history] = train(init_model(desc, cfg.seed), data, cfg);
    ctx.emit(paths.out, io::encode_model(model).dump() + "\n");
    if (!paths.history.empty()) {
        std::ostringstream h;
        io::write_history(h, history);
        ctx.emit(paths.history, h.str());
    }
}

struct EvalPaths {
    std::string model, world, pred, predictions, out, scatter;
};

/// Scores either a model on labelled samples (--model, --world) or stored predictions
/// ({"id", "gaze"} records, --pred) against labelled samples joined by id.
inline void run_eval(RunContext& ctx, const EvalPaths& paths, const std::vector<double>& bins) {
    if (paths.model.empty() == paths.pred.empty()) {
        throw UsageError("give exactly one of --model or --pred");
    }
    ctx.config = {{"bins", bins}};
    ctx.inputs.push_back(paths.world);
    const auto samples = io::read_samples(paths.world);

    std::map<std::string, GazeVector> stored;
    std::optional<Model> model;
    if (!paths.model.empty()) {
        ctx.inputs.push_back(paths.model);
        model = io::decode_model(io::read_document(paths.model));
    } else {
        ctx.inputs.push_back(paths.pred);
        io::read_jsonl_file(paths.pred, [&](const json& j, std::size_t line) {
            const io::Where w{line, {}};
            stored.insert_or_assign(io::string_field(j, "id", w), io::gaze(io::member(j, "gaze", w), w / "gaze"));
        });
    }

    std::vector<YawError> errors;
    std::vector<io::ScatterPoint> pts;
    std::string predictions;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (!s.anchors.gaze) {
            throw DataError("evaluation sample needs a gaze label", i + 1, "gaze", paths.world);
        }
        GazeVector pred;
        if (model) {
            pred = predict(*model, make_model_input(s.anchors)).gaze;
        } else {
            const auto it = stored.find(s.id);
            if (it == stored.end()) {
                throw DataError("no prediction for sample " + s.id, i + 1, "id", paths.world);
            }
            pred = it->second;
        }
        errors.push_back({io::sample_yaw(s), angular_error(pred, *s.anchors.gaze)});
        pts.push_back({gaze_angles(*s.anchors.gaze), gaze_angles(pred)});
        predictions += json{{"id", s.id}, {"gaze", io::to_json(pred.vec())}}.dump() + "\n";
    }
    std::ostringstream report;
    io::write_report(report, yaw_binned_report(errors, bins));
    ctx.emit(paths.out, report.str());
    if (!paths.scatter.empty()) {
        std::ostringstream svg;
        io::write_scatter(svg, pts);
        ctx.emit(paths.scatter, svg.str());
    }
    if (!paths.predictions.empty()) {
        ctx.emit(paths.predictions, predictions);
    }
}

inline void run_ablate(RunContext& ctx, const std::string& spec_path, const std::string& out) {
    const json doc =
        load_config(ctx, spec_path, {{"gt_world", "seed"}, {"pseudo_world", "seed"}, {"test_world", "seed"}, {"train", "seed"}});
    io::AblationSpec spec = io::decode_ablation(doc);
    spec.setup.train.threads = ctx.threads;
    ctx.seed = spec.setup.train.seed;
    const auto rows = run_ablation(spec.scenarios, spec.setup);
    std::ostringstream table;
    io::write_ablation_table(table, rows);
    ctx.emit(out, table.str());
    for (const auto& r : rows) {
        *ctx.err << r.name << ": mean error " << r.mean_error << " deg\n";
    }
}

// ---------------------------------------------------------------------------

/// Runs one command line. Exit codes: 0 success, 1 usage error, 2 data error.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"ocumesh: eyeball mesh geometry, labeling, losses and desk-scale training"};
    app.name("ocumesh");
    app.require_subcommand(1);
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    app.add_option("--threads", threads, "Cap on worker threads")->check(CLI::PositiveNumber);
    app.fallthrough();

    RunContext ctx;
    ctx.out = &out;
    ctx.err = &err;

    std::string side = "left", out_path, report_path;
    int sectors = 32, stacks = 16;
    auto* tmpl = app.add_subcommand("template", "Write the canonical eyeball template as mesh JSON");
    tmpl->add_option("--side", side, "left or right")->check(CLI::IsMember({"left", "right"}));
    tmpl->add_option("--sectors", sectors, "Vertices per ring");
    tmpl->add_option("--stacks", stacks, "Latitude bands");
    tmpl->add_option("--out", out_path, "Output path ('-' for standard output)")->required();
    tmpl->add_option("--report", report_path, "Also write the validation report");

    std::string world, mode = "pseudo", config;
    auto* label = app.add_subcommand("label", "Pseudo-label (or ground-truth fit) every sample");
    label->add_option("--world,--in", world, "Samples JSONL")->required();
    label->add_option("--mode", mode, "pseudo or gt")->check(CLI::IsMember({"pseudo", "gt"}));
    label->add_option("--config", config, "Scene config with label noise settings");
    std::string template_dir;
    label->add_option("--template-dir", template_dir, "Directory with left.json and right.json templates");
    label->add_option("--out", out_path, "Labels JSONL")->required();

    std::string kind, a_path, b_path, transform, weights;
    auto* loss = app.add_subcommand("loss", "Evaluate one loss between two documents");
    loss->add_option("--kind", kind, "vertex, edge, gaze, gt (alias combined) or mv")
        ->required()
        ->check(CLI::IsMember({"vertex", "edge", "gaze", "gt", "combined", "mv"}));
    loss->add_option("--a", a_path, "Prediction document")->required();
    loss->add_option("--b", b_path, "Target (or second view) document")->required();
    loss->add_option("--transform", transform, "Transform JSON for mv");
    loss->add_option("--weights", weights, "Loss weights JSON");
    loss->add_option("--out", out_path, "Output path")->default_val("-");

    std::string pairs_path;
    std::optional<double> delta_sigma;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic world (and view pairs)");
    synth->add_option("--config", config, "Scene config JSON");
    synth->add_option("--out", out_path, "Samples JSONL")->required();
    synth->add_option("--pairs", pairs_path, "Also write view pairs JSONL");
    synth->add_option("--delta-sigma", delta_sigma, "Std. dev. of the view yaw/pitch offsets (degrees)");

    TrainPaths tp;
    auto* trn = app.add_subcommand("train", "Train a model");
    trn->add_option("--world", tp.world, "Ground-truth samples JSONL");
    trn->add_option("--pseudo", tp.pseudo, "Samples the labels refer to");
    trn->add_option("--labels", tp.labels, "Pseudo labels JSONL");
    trn->add_option("--pairs", tp.pairs, "View pairs JSONL");
    trn->add_option("--validation", tp.validation, "Validation samples JSONL");
    trn->add_option("--config", tp.config, "Train config JSON");
    trn->add_option("--out", tp.out, "Model JSON")->required();
    trn->add_option("--history", tp.history, "Per-epoch history CSV");

    EvalPaths ep;
    std::vector<double> bins{5.0, 20.0, 40.0, 90.0};
    auto* eval = app.add_subcommand("eval", "Yaw-binned angular error report");
    eval->add_option("--model", ep.model, "Model JSON");
    eval->add_option("--pred", ep.pred, "Predictions JSONL ({id, gaze} records)");
    eval->add_option("--world,--gt", ep.world, "Labelled samples JSONL")->required();
    eval->add_option("--bins", bins, "Max-yaw thresholds")->delimiter(',');
    eval->add_option("--out", ep.out, "Report CSV")->required();
    eval->add_option("--scatter,--plot", ep.scatter, "Prediction scatter SVG");
    eval->add_option("--predictions", ep.predictions, "Also write the predictions JSONL");

    std::string spec_path;
    auto* ablate = app.add_subcommand("ablate", "Run an ablation study");
    ablate->add_option("--spec", spec_path, "Ablation spec JSON")->required();
    ablate->add_option("--out", out_path, "Table CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    ctx.threads = threads;
    try {
        if (*tmpl) {
            ctx.command = "template";
            run_template(ctx, side, sectors, stacks, out_path, report_path);
        } else if (*label) {
            ctx.command = "label";
            run_label(ctx, world, mode, config, template_dir, out_path);
        } else if (*loss) {
            ctx.command = "loss";
            run_loss(ctx, kind, a_path, b_path, transform, weights, out_path);
        } else if (*synth) {
            ctx.command = "synth";
            run_synth(ctx, config, out_path, pairs_path, delta_sigma);
        } else if (*trn) {
            ctx.command = "train";
            run_train(ctx, tp);
        } else if (*eval) {
            ctx.command = "eval";
            run_eval(ctx, ep, bins);
        } else if (*ablate) {
            ctx.command = "ablate";
            run_ablate(ctx, spec_path, out_path);
        }
        ctx.write_manifests();
    } catch (const UsageError& e) {
        err << "ocumesh " << ctx.command << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "ocumesh " << ctx.command << ": " << e.what() << "\n";
        return 2;
    }
    return 0;
}

inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("ocumesh");
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    return dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace ocumesh::cli
