// hdrhex: dataset generation, training, rendering, evaluation and gradient checks.
#include "hdrhex/error.hpp"
#include "hdrhex/evaluate.hpp"
#include "hdrhex/gradprobe.hpp"
#include "hdrhex/image.hpp"
#include "hdrhex/synthdata.hpp"
#include "hdrhex/trainer.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace hdrhex;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& s, Parse parse, const char* example) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::size_t used = 0;
        T v{};
        try {
            v = parse(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
        if (tok.empty() || used != tok.size()) {
            throw UsageError("bad list '" + s + "'; expected comma-separated numbers, e.g. " + example);
        }
        out.push_back(v);
    }
    return out;
}

std::vector<double> parse_evs(const std::string& s) {
    auto v = parse_list<double>(s, [](const std::string& t, std::size_t* n) { return std::stod(t, n); }, "--evs=-3,-1,1");
    if (v.empty()) throw UsageError("empty EV list; expected e.g. --evs=-3,-1,1");
    return v;
}

std::vector<long> parse_steps(const std::string& s) {
    if (s.empty() || s == "none") return {};
    return parse_list<long>(s, [](const std::string& t, std::size_t* n) { return std::stol(t, n); },
                            "--upsample-steps=1000,2000");
}

std::string join(const std::vector<double>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

void apply_thread_cap() {
    if (const char* env = std::getenv("HDRHEX_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) omp_set_num_threads(n);
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw ParseError(path.string(), "cannot open for writing");
    os << text;
    if (!os) throw ParseError(path.string(), "write failed");
}

Dataset open_dataset(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "manifest.json")) throw UsageError("no dataset at '" + dir + "' (manifest.json missing)");
    return read_dataset(dir);
}

// ------------------------------------------------------------------ gen-data

struct GenArgs {
    std::string scene = "lego-like";
    std::string out;
    std::string evs;
    int frames = 20;
    int cameras = 0;
    std::string res = "64x64";
    std::uint64_t seed = 0;
    int test_frames = 4;
    int gt_samples = 256;
    std::string gt_crf = "sigmoid";
};

int run_gen(const GenArgs& a) {
    int w = 0, h = 0;
    char x = 0;
    std::istringstream rs(a.res);
    if (!(rs >> w >> x >> h) || x != 'x' || w < 1 || h < 1 || rs.peek() != EOF) {
        throw UsageError("bad resolution '" + a.res + "'; expected WxH, e.g. 64x64");
    }
    const bool lego = a.scene == "lego-like";
    if (!lego && a.scene != "mutant-like") throw UsageError("unknown scene '" + a.scene + "'");
    const std::vector<double> evs = a.evs.empty() ? (lego ? std::vector<double>{-3, -1, 1} : std::vector<double>{-1, 1, 3})
                                                  : parse_evs(a.evs);
    const int cameras = a.cameras > 0 ? a.cameras : (lego ? 1 : 3);
    SceneSpec scene = SceneSpec::by_name(a.scene);
    CaptureSpec cap = CaptureSpec::arc(cameras, w, h, evs, a.frames);
    cap.test_frames = a.test_frames;
    cap.gt_samples = a.gt_samples;
    cap.crf = parse_gt_crf(a.gt_crf);
    vary(scene, cap, a.seed);
    const GeneratedDataset data = generate_dataset(scene, cap);
    write_dataset(data, a.out);
    std::printf("dataset %s\n  scene:   %s\n  frames:  %zu (%d motion x %d camera%s + %d test)\n  cameras: %d\n"
                "  EVs:     %s\n",
                a.out.c_str(), a.scene.c_str(), data.manifest.frames.size(), a.frames, cameras, cameras == 1 ? "" : "s",
                a.test_frames, cameras, join(evs).c_str());
    return kOk;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
    std::string data;
    std::string out;
    TrainConfig train{};
    ModelConfig model{};
    std::string split = "full";
    std::string crf = "sigmoid";
    bool no_exposure_mlp = false;
    std::string upsample_steps = "auto";
    int width = 0;
};

int run_train(TrainArgs a) {
    a.train.half_split = a.split == "half";
    a.train.crf_mode = a.crf == "mlp" ? CrfVariant::TrainableMlp : CrfVariant::FixedSigmoid;
    a.train.use_exposure_mlp = !a.no_exposure_mlp;
    if (a.width > 0) {
        a.model.decoder.density_hidden.assign(a.model.decoder.density_hidden.size(), a.width);
        a.model.decoder.color_hidden.assign(a.model.decoder.color_hidden.size(), a.width);
    }
    if (a.upsample_steps == "auto") {
        a.model.grid.upsample_steps.clear();
        if (a.train.steps >= 4) a.model.grid.upsample_steps = {a.train.steps / 4, a.train.steps / 2};
    } else {
        a.model.grid.upsample_steps = parse_steps(a.upsample_steps);
    }
    const Dataset data = open_dataset(a.data);
    const FitResult r = fit(data, a.train, a.model, a.out);
    if (!r.reports.empty()) {
        const LossReport& last = r.reports.back();
        std::printf("trained %ld steps: mse %.6g, batch psnr %.2f dB\n", a.train.steps, last.mse, last.psnr_batch);
    } else {
        std::printf("no training steps; wrote untrained checkpoint\n");
    }
    std::printf("checkpoint %s\n", r.checkpoint.string().c_str());
    return kOk;
}

// -------------------------------------------------------------------- render

struct RenderArgs {
    std::string ckpt;
    int camera_id = 0;
    double time = 0.5;
    std::string mode = "ldr";
    std::optional<double> ev;
    std::optional<std::size_t> image_index;
    std::string out;
    int samples = 64;
};

int run_render(const RenderArgs& a) {
    const RenderMode mode = parse_render_mode(a.mode);
    if (!(a.time >= 0.0 && a.time <= 1.0)) throw UsageError("--time must lie in [0, 1]");
    nlohmann::json extra;
    const Model model = load_checkpoint(a.ckpt, &extra);
    const CheckpointInfo info = checkpoint_info(extra, a.ckpt);
    ExposureSource src = ExposureSource::none();
    if (a.image_index) {
        src = ExposureSource::from_image(*a.image_index);
        resolve_log_exposure(model, src);
    } else if (a.ev) {
        src = ExposureSource::from_log(info.log_exposure_for_ev(*a.ev));
    } else if (mode == RenderMode::Ldr) {
        throw UsageError("ldr mode needs --ev or --image-index");
    }
    if (mode == RenderMode::Ldr && a.ev && !info.gauge_offset) {
        std::fprintf(stderr, "note: no ground-truth exposures were known at training time; using raw EV ln 2\n");
    }
    KernelOptions opt;
    opt.samples = a.samples;
    const Camera cam = info.camera(a.camera_id).at(a.time);
    const FrameImages img = render_frame(model, cam, a.time, mode, src, opt, info.near, info.far);
    if (mode == RenderMode::Hdr) {
        write_pfm(a.out, img.hdr);
    } else {
        write_png(a.out, to_bytes(img.ldr));
    }
    std::printf("wrote %s (%dx%d, %s)\n", a.out.c_str(), cam.width, cam.height, to_string(mode));
    return kOk;
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string split = "half";
    std::string out = "report.json";
    std::string histogram;
    int samples = 64;
};

int run_eval(const EvalArgs& a) {
    nlohmann::json extra;
    const Model model = load_checkpoint(a.ckpt, &extra);
    const CheckpointInfo info = checkpoint_info(extra, a.ckpt);
    const Dataset data = open_dataset(a.data);
    if (data.manifest().frames.size() != model.exposure.size()) {
        throw ParseError(a.data, "dataset frame count does not match the checkpoint's exposure table");
    }
    KernelOptions opt;
    opt.samples = a.samples;
    EvalReport rep;
    try {
        rep = evaluate(model, info, data, a.split, opt);
    } catch (const ArgumentError& e) {
        throw UsageError(e.what());
    }
    write_text(a.out, to_json(rep).dump(2) + "\n");
    const fs::path hist = a.histogram.empty() ? fs::path(a.out).replace_extension(".histogram.csv") : fs::path(a.histogram);
    write_text(hist, histogram_csv(rep.exposure));
    std::printf("split %s: LDR PSNR %.3f dB, SSIM %.4f", rep.split.c_str(), rep.ldr_psnr, rep.ldr_ssim);
    if (rep.hdr_psnr) std::printf(", tone-mapped HDR PSNR %.3f dB", *rep.hdr_psnr);
    std::printf("\n");
    if (rep.exposure.aligned_rmse) {
        std::printf("exposure: aligned RMSE %.4f over %zu images, %zu EV groups\n", *rep.exposure.aligned_rmse,
                    rep.exposure.learned.size(), rep.exposure.groups.size());
    }
    std::printf("report %s\nhistogram %s\n", a.out.c_str(), hist.string().c_str());
    return kOk;
}

// ----------------------------------------------------------------- gradcheck

struct GradArgs {
    std::string component = "all";
    std::uint64_t seed = 0;
    bool negative_control = false;
    double tolerance = 1e-4;
};

int run_gradcheck(const GradArgs& a) {
    const auto results = run_grad_probes(a.component, a.seed, a.negative_control);
    bool ok = true;
    std::printf("%-10s %-16s %8s %12s  %-28s %s\n", "component", "probe", "coords", "max_rel_err", "worst", "status");
    for (const ProbeResult& r : results) {
        const bool pass = r.check.max_rel_error < a.tolerance;
        ok = ok && pass;
        const std::string worst = r.check.worst_param.empty()
                                      ? "-"
                                      : r.check.worst_param + "[" + std::to_string(r.check.worst_index) + "]";
        std::printf("%-10s %-16s %8zu %12.3e  %-28s %s\n", r.component.c_str(), r.probe.c_str(), r.check.coordinates,
                    r.check.max_rel_error, worst.c_str(), pass ? "PASS" : "FAIL");
    }
    return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();
    CLI::App app{"HDR dynamic radiance fields from multi-exposure LDR images"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML config file; explicit flags take precedence");
    app.allow_config_extras(false);
    app.option_defaults()->always_capture_default();

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Render a synthetic multi-exposure dataset");
    g->add_option("--scene", gen.scene, "Scene preset")->check(CLI::IsMember({"lego-like", "mutant-like"}));
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--evs", gen.evs, "Comma-separated exposure values in stops (default -3,-1,1 lego-like; -1,1,3 mutant-like)");
    g->add_option("--frames", gen.frames, "Motion frames")->check(CLI::PositiveNumber);
    g->add_option("--cameras", gen.cameras, "Cameras (0: 1 for lego-like, 3 for mutant-like)")->check(CLI::NonNegativeNumber);
    g->add_option("--res", gen.res, "Image size WxH");
    g->add_option("--seed", gen.seed, "Scene variation seed");
    g->add_option("--test-frames", gen.test_frames, "Held-out frames with HDR references")->check(CLI::NonNegativeNumber);
    g->add_option("--gt-samples", gen.gt_samples, "Ray-march samples for the ground truth")->check(CLI::PositiveNumber);
    g->add_option("--gt-crf", gen.gt_crf, "Ground-truth camera response")->check(CLI::IsMember({"sigmoid", "skewed"}));

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Fit a model to a dataset");
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_option("--steps", tr.train.steps, "Optimization steps")->check(CLI::NonNegativeNumber);
    t->add_option("--split", tr.split, "Training pixels: full images or left halves")->check(CLI::IsMember({"full", "half"}));
    t->add_option("--crf", tr.crf, "Camera response: fixed sigmoid or trainable MLP with zero-point loss")
        ->check(CLI::IsMember({"sigmoid", "mlp"}));
    t->add_flag("--no-exposure-mlp", tr.no_exposure_mlp, "Learn one log-exposure scalar per image instead");
    t->add_option("--seed", tr.train.seed, "Seed");
    t->add_option("--batch-rays", tr.train.batch_rays, "Rays per step")->check(CLI::PositiveNumber);
    t->add_option("--samples", tr.train.samples, "Samples per ray")->check(CLI::PositiveNumber);
    t->add_option("--lr-grid", tr.train.lr_grid, "Feature-plane learning rate");
    t->add_option("--lr-decoder", tr.train.lr_decoder, "Decoder learning rate");
    t->add_option("--lr-embed", tr.train.lr_embed, "Exposure embedding learning rate");
    t->add_option("--lr-exposure-mlp", tr.train.lr_exposure_mlp, "Exposure network learning rate");
    t->add_option("--lr-crf", tr.train.lr_crf, "Trainable camera-response learning rate");
    t->add_option("--w-tv", tr.train.w_tv, "Total-variation weight");
    t->add_option("--lambda-u", tr.train.lambda_u, "Zero-point loss weight (mlp response only)");
    t->add_option("--spatial-res", tr.model.grid.spatial_res, "Initial spatial plane resolution");
    t->add_option("--spatial-res-final", tr.model.grid.spatial_res_final, "Final spatial plane resolution");
    t->add_option("--time-res", tr.model.grid.time_res_init, "Initial time resolution");
    t->add_option("--time-res-final", tr.model.grid.time_res_final, "Final time resolution");
    t->add_option("--upsample-steps", tr.upsample_steps, "Comma-separated upsampling steps, 'none', or 'auto' (steps/4, steps/2)");
    t->add_option("--channels", tr.model.grid.channels, "Feature channels")->check(CLI::PositiveNumber);
    t->add_option("--width", tr.width, "Decoder hidden width (0 keeps the built-in layout)")->check(CLI::NonNegativeNumber);
    t->add_option("--posenc-x", tr.model.decoder.posenc.L_x, "Position encoding frequencies")->check(CLI::NonNegativeNumber);
    t->add_option("--posenc-d", tr.model.decoder.posenc.L_d, "Direction encoding frequencies")->check(CLI::NonNegativeNumber);
    t->add_option("--posenc-t", tr.model.decoder.posenc.L_t, "Time encoding frequencies")->check(CLI::NonNegativeNumber);
    t->add_option("--occupancy-every", tr.train.occupancy_every, "Occupancy refresh interval in steps (0 disables)");
    t->add_option("--occupancy-tau", tr.train.occupancy_tau, "Occupancy density threshold");

    RenderArgs rd;
    auto* r = app.add_subcommand("render", "Render a view from a checkpoint");
    r->add_option("--ckpt", rd.ckpt, "Checkpoint file")->required();
    r->add_option("--camera-id", rd.camera_id, "Camera rig id");
    r->add_option("--time", rd.time, "Time in [0, 1]");
    r->add_option("--mode", rd.mode, "Output")->check(CLI::IsMember({"ldr", "hdr", "tonemapped"}));
    auto* ev_opt = r->add_option("--ev", rd.ev, "Exposure value in stops");
    auto* idx_opt = r->add_option("--image-index", rd.image_index, "Use the learned exposure of this training image");
    ev_opt->excludes(idx_opt);
    r->add_option("--out", rd.out, "Output file (PNG, or PFM in hdr mode)")->required();
    r->add_option("--samples", rd.samples, "Samples per ray")->check(CLI::PositiveNumber);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on held-out views");
    e->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
    e->add_option("--data", ev.data, "Dataset directory")->required();
    e->add_option("--split", ev.split, "Right halves of training frames, or test frames")->check(CLI::IsMember({"half", "test"}));
    e->add_option("--out", ev.out, "Report JSON");
    e->add_option("--histogram", ev.histogram, "Exposure histogram CSV (default: next to the report)");
    e->add_option("--samples", ev.samples, "Samples per ray")->check(CLI::PositiveNumber);

    GradArgs gc;
    auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
    c->add_option("--component", gc.component, "Component")
        ->check(CLI::IsMember({"all", "hexplane", "decoder", "exposure", "renderer"}));
    c->add_option("--seed", gc.seed, "Seed");
    c->add_flag("--negative-control", gc.negative_control, "Negate analytical gradients (must fail)");
    c->add_option("--tolerance", gc.tolerance, "Maximum relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (g->parsed()) return run_gen(gen);
        if (t->parsed()) return run_train(tr);
        if (r->parsed()) return run_render(rd);
        if (e->parsed()) return run_eval(ev);
        if (c->parsed()) return run_gradcheck(gc);
    } catch (const UsageError& err) {
        std::fprintf(stderr, "usage error: %s\n", err.what());
        return kUsage;
    } catch (const ParseError& err) {
        std::fprintf(stderr, "data error: %s\n", err.what());
        return kData;
    } catch (const NumericalError& err) {
        std::fprintf(stderr, "numerical failure: %s\n", err.what());
        return kNumerical;
    } catch (const IndexError& err) {
        std::fprintf(stderr, "usage error: %s\n", err.what());
        return kUsage;
    } catch (const ConfigError& err) {
        std::fprintf(stderr, "configuration error: %s\n", err.what());
        return kUsage;
    } catch (const ArgumentError& err) {
        std::fprintf(stderr, "usage error: %s\n", err.what());
        return kUsage;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return kData;
    }
    return kUsage;
}
