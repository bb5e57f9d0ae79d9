// coordx: fit, benchmark, decompose and render coordinate networks.
//
//   coordx fit|bench|decompose|render --config <path> [--set key=value ...]
//
// Exit codes: 0 ok, 2 config/task error, 3 runtime or divergence, 4 I/O.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "coordx/bench.hpp"
#include "coordx/checkpoint.hpp"
#include "coordx/config.hpp"
#include "coordx/render.hpp"
#include "coordx/signals.hpp"
#include "coordx/train.hpp"

namespace fs = std::filesystem;
using namespace coordx;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitIo = 4;

struct Args {
    std::string config;
    std::vector<std::string> overrides;
    std::string checkpoint;
    std::string out;
    bool accelerated = false;
};

void log(const std::string& msg) { std::cerr << "[coordx] " << msg << "\n"; }

RunConfig load(const Args& a, const json& fallback) {
    json doc = a.config.empty() ? fallback : load_json_file(a.config);
    for (const auto& o : a.overrides) apply_override(doc, o);
    auto rc = parse_run_config(doc);
    if (!a.out.empty()) rc.io.out_dir = a.out;
    if (!a.checkpoint.empty()) rc.io.checkpoint = a.checkpoint;
    return rc;
}

fs::path prepare_out(const RunConfig& rc) {
    fs::path dir(rc.io.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    if (!os || !(os << text)) throw IoError("cannot write '" + p.string() + "'");
}

json provenance(const std::string& command, const RunConfig& rc) {
    return {{"command", command}, {"git_describe", COORDX_GIT_DESCRIBE}, {"config", rc.resolved}};
}

void write_run_config(const fs::path& dir, const std::string& command, const RunConfig& rc, json extra = json::object()) {
    json j = provenance(command, rc);
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = *it;
    write_text(dir / "run_config.json", j.dump(2) + "\n");
}

// Lattice-ordered N x O values as an H x W x O image.
Tensor<double> as_image(const Tensor<double>& values, const Shape& extents) {
    return values.reshaped({extents[0], extents[1], values.cols()});
}

void write_video_frames(const fs::path& dir, const Tensor<double>& values, const Shape& extents) {
    const std::size_t h = extents[0], w = extents[1], f = extents[2], o = values.cols();
    for (std::size_t t = 0; t < f; ++t) {
        Tensor<double> frame({h, w, o});
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                for (std::size_t ch = 0; ch < o; ++ch) frame.data()[(r * w + c) * o + ch] = values((r * w + c) * f + t, ch);
            }
        }
        char name[64];
        std::snprintf(name, sizeof name, "recon_frame_%03zu.%s", t, o == 3 ? "ppm" : "pgm");
        write_pnm((dir / name).string(), frame);
    }
}

void write_point_predictions(const fs::path& p, const Tensor<double>& points, const Labels& truth, const Labels& pred) {
    std::ofstream os(p);
    if (!os) throw IoError("cannot write '" + p.string() + "'");
    os << "x,y,z,label,predicted\n";
    os.precision(17);
    for (std::size_t i = 0; i < points.rows(); ++i) {
        os << points(i, 0) << "," << points(i, 1) << "," << points(i, 2) << "," << int(truth[i]) << "," << int(pred[i])
           << "\n";
    }
}

int cmd_fit(const Args& a) {
    RunConfig rc = load(a, json::object());
    if (a.accelerated) {
        if (!rc.model.is_split()) throw ConfigError("--accelerated needs a split model (model.split)");
        rc.train.batch = BatchMode::sampled;
    }
    const Signal signal = make_signal(rc.signal);
    const fs::path dir = prepare_out(rc);
    log("fit " + signal.name + " model=" + (rc.model.is_split() ? "coordx" : "baseline") +
        " epochs=" + std::to_string(rc.train.epochs) + " out=" + dir.string());

    auto report = fit<double>(rc.model, signal, rc.train);

    {
        std::ofstream os(dir / "report.csv");
        os << "epoch,loss," << report.metric_name << ",seconds\n";
        os.precision(10);
        for (const auto& t : report.trace) os << t.epoch << "," << t.loss << "," << t.metric << "," << t.seconds << "\n";
        if (!os) throw IoError("cannot write report.csv");
    }
    {
        std::ofstream os(dir / "epochs.csv");
        os << "epoch,loss,batch_points,batch_fc_mas,decomposable\n";
        os.precision(10);
        for (std::size_t e = 0; e < report.losses.size(); ++e) {
            os << e + 1 << "," << report.losses[e] << "," << report.batch_points[e] << "," << report.batch_fc_mas[e]
               << "," << int(report.batch_decomposable[e]) << "\n";
        }
        if (!os) throw IoError("cannot write epochs.csv");
    }
    if (rc.train.batch == BatchMode::sampled) {
        log("sampled batches: " + std::to_string(report.nondecomposable_batches) + " of " +
            std::to_string(report.losses.size()) + " not decomposable");
    }

    json meta{{"task", to_string(rc.task)},
              {"signal", signal.name},
              {"extents", signal.extents},
              {"epochs", rc.train.epochs},
              {"git_describe", COORDX_GIT_DESCRIBE}};
    save_checkpoint((dir / "model.cxck").string(), report.params, meta);

    json metrics{{report.metric_name, report.final_metric()}};
    if (signal.kind == SignalKind::occupancy3d) {
        Rng iou_rng = Rng(rc.train.seed).split(3);
        const auto sets = build_iou_sets(signal, rc.train.iou_points, rc.train.iou_band, iou_rng);
        const auto easy = labels_from_logits(evaluate_points(report.params, sets.easy));
        const auto hard = labels_from_logits(evaluate_points(report.params, sets.hard));
        metrics["easy_iou"] = iou(easy, sets.easy_labels);
        metrics["hard_iou"] = iou(hard, sets.hard_labels);
        write_point_predictions(dir / "iou_easy.csv", sets.easy, sets.easy_labels, easy);
        write_point_predictions(dir / "iou_hard.csv", sets.hard, sets.hard_labels, hard);
        write_pnm((dir / "slice_z0.pgm").string(), slice_image(report.params, 2, 0.0, 128, true));
    } else {
        const auto values = evaluate_grid(report.params, signal.canonical_grid());
        if (signal.kind == SignalKind::image2d) {
            write_pnm((dir / (signal.o == 3 ? "recon.ppm" : "recon.pgm")).string(), as_image(values, signal.extents));
        } else {
            write_video_frames(dir, values, signal.extents);
        }
    }
    write_text(dir / "metrics.json", metrics.dump(2) + "\n");
    write_run_config(dir, "fit", rc, {{"model", model_to_json(rc.model)}, {"accelerated", a.accelerated}});
    log("done: " + metrics.dump());
    return kExitOk;
}

int cmd_bench(const Args& a) {
    RunConfig rc = load(a, json::object());
    if (!rc.model.is_split()) throw ConfigError("model.split: bench compares a split model against its baseline");
    ModelSpec baseline = rc.model;
    baseline.split.reset();
    const fs::path dir = prepare_out(rc);
    BenchOptions opts{rc.bench.trials, rc.bench.warmup, rc.io.seed};
    log("bench " + std::to_string(rc.bench.extents.size()) + " lattices, " + rc.bench.precision + ", 1 thread");
    auto records = rc.bench.precision == "f32" ? run_bench<float>(baseline, rc.model, rc.bench.extents, opts)
                                               : run_bench<double>(baseline, rc.model, rc.bench.extents, opts);
    {
        std::ofstream os(dir / "bench.csv");
        write_bench_csv(os, records);
        if (!os) throw IoError("cannot write bench.csv");
    }
    bool pass = true;
    for (const auto& r : records) {
        const bool ok = r.ma_matches_gamma();
        pass = pass && ok;
        std::printf("%-12s N=%-9zu gamma=%.6f ma_uniform=%.6f ma=%.6f wall=%.3f%s %s\n", r.label.c_str(), r.points,
                    r.predicted_gamma, r.ma_ratio_uniform, r.ma_ratio, r.wall_ratio(),
                    r.overhead_dominated ? " (overhead-dominated)" : "", ok ? "PASS" : "FAIL");
    }
    std::printf("verdict: %s (multiply-add ratio vs analytic gamma)\n", pass ? "PASS" : "FAIL");
    write_run_config(dir, "bench", rc, {{"verdict", pass ? "PASS" : "FAIL"}});
    return kExitOk;
}

Checkpoint require_checkpoint(const RunConfig& rc) {
    if (rc.io.checkpoint.empty()) throw ConfigError("io.checkpoint: required (or pass --checkpoint)");
    return load_checkpoint(rc.io.checkpoint);
}

// Min-max normalized grayscale view of a feature matrix.
Tensor<double> feature_image(const Tensor<double>& f) {
    double lo = f.data()[0], hi = f.data()[0];
    for (double v : f.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor<double> img({f.rows(), f.cols(), 1});
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < f.size(); ++i) img.data()[i] = (f.data()[i] - lo) / span;
    return img;
}

int cmd_decompose(const Args& a) {
    RunConfig rc = load(a, json{{"task", "image"}});
    const Checkpoint ck = require_checkpoint(rc);
    const auto& spec = ck.params.spec;
    if (!spec.is_split()) throw TaskError("checkpoint holds a baseline model: nothing to decompose");
    Shape extents = ck.meta.contains("extents") ? ck.meta.at("extents").get<Shape>() : Shape{};
    if (extents.size() != static_cast<std::size_t>(spec.k)) {
        throw ConfigError("checkpoint has no usable lattice extents for k=" + std::to_string(spec.k));
    }
    const fs::path dir = prepare_out(rc);
    const auto dg = decompose(make_grid(extents, {}, spec.split->branch_sizes));
    const auto features = branch_features(ck.params, dg);
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto base = dir / ("factor_" + std::to_string(i));
        std::ofstream os(base.string() + ".cxt", std::ios::binary);
        if (!os) throw IoError("cannot write '" + base.string() + ".cxt'");
        write_tensor(os, features[i]);
        write_pnm(base.string() + ".pgm", feature_image(features[i]));
        log("factor " + std::to_string(i) + ": " + shape_string(features[i].shape()));
    }
    write_run_config(dir, "decompose", rc, {{"checkpoint", rc.io.checkpoint}, {"model", model_to_json(spec)}});
    return kExitOk;
}

int cmd_render(const Args& a) {
    RunConfig rc = load(a, json{{"task", "occupancy"}});
    const Checkpoint ck = require_checkpoint(rc);
    if (ck.params.spec.k != 3) {
        throw TaskError("render needs a 3D model, checkpoint has k=" + std::to_string(ck.params.spec.k));
    }
    const fs::path dir = prepare_out(rc);
    const auto& r = rc.render;
    const auto grid = precompute_grid(ck.params, {r.grid_resolution, r.grid_resolution, r.grid_resolution});
    Tensor<double> img;
    std::string name;
    if (r.mode == "slice") {
        img = slice_image(grid, r.axis, r.coordinate, r.resolution, true);
        name = "slice.pgm";
    } else {
        img = raymarch(grid, r.camera, r.march);
        name = "render.pgm";
    }
    write_pnm((dir / name).string(), img);
    write_run_config(dir, "render", rc, {{"checkpoint", rc.io.checkpoint}, {"image", name}});
    log("wrote " + (dir / name).string());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coordx: split coordinate networks"};
    app.require_subcommand(1);
    Args args;
    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", args.config, "JSON run config");
        if (config_required) opt->required();
        sub->add_option("--set", args.overrides, "override a config field, key=value (dotted keys)");
        sub->add_option("--out", args.out, "output directory (overrides io.out_dir)");
    };
    auto* fit_cmd = app.add_subcommand("fit", "train a model on a signal");
    add_common(fit_cmd, true);
    fit_cmd->add_flag("--accelerated", args.accelerated, "train on sampled decomposable batches");
    auto* bench_cmd = app.add_subcommand("bench", "time baseline vs split inference");
    add_common(bench_cmd, true);
    auto* dec_cmd = app.add_subcommand("decompose", "export per-branch factor matrices");
    add_common(dec_cmd, false);
    dec_cmd->add_option("--checkpoint", args.checkpoint, "checkpoint to read");
    auto* render_cmd = app.add_subcommand("render", "slice or raymarch a 3D model");
    add_common(render_cmd, false);
    render_cmd->add_option("--checkpoint", args.checkpoint, "checkpoint to read");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (fit_cmd->parsed()) return cmd_fit(args);
        if (bench_cmd->parsed()) return cmd_bench(args);
        if (dec_cmd->parsed()) return cmd_decompose(args);
        if (render_cmd->parsed()) return cmd_render(args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const TaskError& e) {
        std::cerr << "task error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
