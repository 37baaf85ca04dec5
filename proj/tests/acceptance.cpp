// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
// Criteria 6-9 train three 4000-step models on the default dataset through
// the command-line tool, so a full run takes a while on a desk machine.

#include "hdrhex/gradprobe.hpp"
#include "hdrhex/hexplane.hpp"
#include "hdrhex/model.hpp"
#include "hdrhex/render.hpp"
#include "hdrhex/synthdata.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

using namespace hdrhex;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli {
public:
    explicit Cli(fs::path work) : work_(std::move(work)) {}

    /// Runs the tool; output goes to <work>/logs/<tag>.txt.
    int operator()(const std::string& tag, const std::string& args) const {
        fs::create_directories(work_ / "logs");
        const fs::path log = work_ / "logs" / (tag + ".txt");
        const std::string cmd = "'" HDRHEX_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

private:
    fs::path work_;
};

std::vector<json> read_log(const fs::path& p) {
    std::vector<json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

double window_mean(const std::vector<json>& log, const char* key, std::size_t end, std::size_t width) {
    double s = 0;
    for (std::size_t i = end - width; i < end; ++i) s += log[i].at(key).get<double>();
    return s / static_cast<double>(width);
}

double pooled_variance(const json& exposure) {
    double s = 0, n = 0;
    for (const auto& g : exposure.at("groups")) {
        s += g.at("count").get<double>() * g.at("variance").get<double>();
        n += g.at("count").get<double>();
    }
    return s / n;
}

// ---- 1 ----------------------------------------------------------------------

Verdict gradients() {
    const auto t0 = Clock::now();
    const auto results = run_grad_probes("all", 0);
    const double secs = seconds_since(t0);
    std::map<std::string, double> worst;
    for (const auto& r : results) worst[r.component] = std::max(worst[r.component], r.check.max_rel_error);
    bool ok = secs < 60.0;
    std::string d;
    for (const char* c : {"hexplane", "decoder", "exposure", "renderer"}) {
        const auto it = worst.find(c);
        ok = ok && it != worst.end() && it->second < 1e-4;
        d += std::string(c) + " " + (it == worst.end() ? "missing" : fmt("%.2e", it->second)) + ", ";
    }
    return {ok, d + fmt("%.1f s", secs)};
}

// ---- 2 ----------------------------------------------------------------------

Verdict factorization() {
    const auto t0 = Clock::now();
    struct Case {
        int S, T;
        std::array<int, 3> ranks;
        int F;
    };
    const Case cases[] = {{8, 8, {2, 2, 2}, 4}, {6, 5, {1, 2, 2}, 3}, {4, 8, {2, 1, 1}, 2}, {3, 2, {1, 1, 2}, 5}};
    SeededRng rng(2024);
    double worst = 0;
    int queries = 0;
    for (const auto& c : cases) {
        Aabb box;
        box.min = Vec3(-1.5, -0.5, -1.0);
        box.max = Vec3(1.0, 1.5, 2.0);
        HexPlaneField f = HexPlaneField::from_parts(box, c.S, c.T, c.ranks, c.F);
        for (auto* p : f.parameters()) {
            for (double& v : p->values) v = rng.uniform(-1.0, 1.0);
        }
        const testsupport::DenseField dense(f);
        for (int k = 0; k < 250; ++k) {
            const Vec3 x(rng.uniform(-1.5, 1.0), rng.uniform(-0.5, 1.5), rng.uniform(-1.0, 2.0));
            const double t = rng.uniform();
            const auto got = f.query(x, t);
            const auto want = dense.query(x, t);
            for (int i = 0; i < c.F; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
            ++queries;
        }
    }
    const double secs = seconds_since(t0);
    return {queries == 1000 && worst < 1e-9 && secs < 10.0,
            std::to_string(queries) + " queries, max |diff| " + fmt("%.2e", worst) + ", " + fmt("%.2f s", secs)};
}

// ---- 3 ----------------------------------------------------------------------

Verdict compositing() {
    SeededRng rng(31);
    double worst_pixel = 0, worst_sum = 0;
    for (int k = 0; k < 100; ++k) {
        const int n = 1 + static_cast<int>(rng.below(8));
        std::vector<Vec3> v(n);
        std::vector<double> s(n), d(n);
        for (int i = 0; i < n; ++i) {
            v[i] = Vec3(rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5));
            s[i] = rng.uniform() < 0.25 ? 0.0 : rng.uniform(0, 20);
            d[i] = rng.uniform(0, 0.4);
        }
        const CompositeResult got = volume_render(v, s, d);
        const auto want = testsupport::composite_oracle(v, s, d);
        worst_pixel = std::max(worst_pixel, (got.pixel - want.pixel).cwiseAbs().maxCoeff());
        for (int i = 0; i < n; ++i) worst_pixel = std::max(worst_pixel, std::abs(got.weights[i] - want.w[i]));
        double wsum = 0;
        for (double w : got.weights) wsum += w;
        worst_sum = std::max(worst_sum, std::abs(wsum - (1.0 - want.survive)));
    }
    return {worst_pixel < 1e-12 && worst_sum < 1e-12,
            "max |diff| " + fmt("%.2e", worst_pixel) + ", max |sum w - (1 - prod(1 - a))| " + fmt("%.2e", worst_sum)};
}

// ---- 4 ----------------------------------------------------------------------

Verdict gauge() {
    const SceneSpec scene = SceneSpec::lego_like();
    const Model m = Model::create(ModelConfig{}, scene.aabb, 6, 4);
    Model shifted = m;
    const double delta = 0.7;
    Mlp& c = shifted.decoder.color();
    for (double& b : c.bias(c.layers() - 1).values) b += delta;
    Mlp& e = shifted.exposure.mlp();
    e.bias(e.layers() - 1).values[0] -= delta;

    SeededRng rng(5);
    const CameraRig rig = CaptureSpec::arc(1, 32, 32, {-3, -1, 1}, 6).cameras.front();
    RenderOptions opt;
    opt.samples = 64;
    double worst = 0;
    double shift_seen = 0;
    for (int k = 0; k < 200; ++k) {
        const double t = rng.uniform();
        const Ray r = generate_ray(rig.at(t), static_cast<int>(rng.below(32)), static_cast<int>(rng.below(32)), t,
                                   rng.below(6), rig.radius - 2.0, rig.radius + 2.0);
        const auto src = ExposureSource::from_image(r.image_index);
        const auto a = render_pixel(m, r, RenderMode::Ldr, src, opt);
        const auto b = render_pixel(shifted, r, RenderMode::Ldr, src, opt);
        worst = std::max(worst, (a.ldr - b.ldr).cwiseAbs().maxCoeff());
        shift_seen = std::max(shift_seen, std::abs(resolve_log_exposure(shifted, src) - resolve_log_exposure(m, src)));
    }
    return {worst <= 1e-10 && std::abs(shift_seen - delta) < 1e-12,
            "200 pixels, max |LDR diff| " + fmt("%.2e", worst) + ", exposure shift " + fmt("%.3f", shift_seen)};
}

// ---- 5 ----------------------------------------------------------------------

Verdict tonemap() {
    const double m0 = tone_map(0.0), m1 = tone_map(1.0), m01 = tone_map(0.1);
    const double want = std::log(501.0) / std::log(5001.0);
    return {m0 == 0.0 && m1 == 1.0 && std::abs(m01 - want) < 1e-9,
            "M(0)=" + fmt("%.17g", m0) + " M(1)=" + fmt("%.17g", m1) + " |M(0.1) - ref| " + fmt("%.2e", std::abs(m01 - want))};
}

// ---- 6-10 -------------------------------------------------------------------

struct Runs {
    fs::path work;
    Cli cli;
    bool reuse = false;
    fs::path data;
    std::optional<double> default_train_secs;

    fs::path dataset() {
        data = work / "data";
        if (!(reuse && fs::exists(data / "manifest.json"))) {
            fs::remove_all(data);
            if (cli("gen-data", "gen-data --out '" + data.string() + "'") != 0) throw std::runtime_error("gen-data failed");
        }
        return data;
    }

    /// Trains (unless reused) and evaluates; returns the report. Half-image training is scored on the held-out
    /// halves, full-image training on the test frames.
    json train_eval(const std::string& name, const std::string& extra, double* train_secs = nullptr,
                    bool full = false) {
        const fs::path out = work / name;
        const fs::path rep = out / "report.json";
        if (!(reuse && fs::exists(rep))) {
            fs::remove_all(out);
            const auto t0 = Clock::now();
            const int rc = cli("train_" + name, "train --data '" + dataset().string() + "' --out '" + out.string() +
                                                    "' --split " + (full ? "full" : "half") + " --seed 0 " + extra);
            if (train_secs) *train_secs = seconds_since(t0);
            if (rc != 0) throw std::runtime_error("train " + name + " exited " + std::to_string(rc));
            if (cli("eval_" + name, "eval --ckpt '" + (out / "model.ckpt").string() + "' --data '" + data.string() +
                                        "' --split " + (full ? "test" : "half") + " --out '" + rep.string() + "'") != 0) {
                throw std::runtime_error("eval " + name + " failed");
            }
            if (train_secs) std::ofstream(out / "train_seconds.txt") << *train_secs << "\n";
        } else if (train_secs) {
            std::ifstream(out / "train_seconds.txt") >> *train_secs;
        }
        return json::parse(slurp(rep));
    }

    json untrained() { return train_eval("untrained", "--steps 0"); }
    json base() {
        double secs = 0;
        json r = train_eval("default", "", &secs);
        default_train_secs = secs;
        return r;
    }
};

Verdict end_to_end(Runs& runs) {
    const json u = runs.untrained();
    const json b = runs.base();
    const auto log = read_log(runs.work / "default" / "train_log.ndjson");
    const double secs = *runs.default_train_secs;
    const double pu = u.at("ldr_psnr").get<double>(), pb = b.at("ldr_psnr").get<double>();
    bool ok = log.size() == 4000 && secs < 900.0 && pb >= pu + 10.0;
    double early = 0, late = 0;
    if (log.size() >= 100) {
        early = window_mean(log, "total", 100, 20);
        late = window_mean(log, "total", log.size(), 20);
        ok = ok && late < early;
    }
    return {ok, std::to_string(log.size()) + " steps in " + fmt("%.0f s", secs) + "; held-out PSNR " +
                    fmt("%.2f", pb) + " dB vs untrained " + fmt("%.2f", pu) + " dB; loss MA20 " + fmt("%.3e", early) +
                    " @100 -> " + fmt("%.3e", late) + " @end"};
}

Verdict exposure_recovery(Runs& runs) {
    const json ex = runs.train_eval("full", "", nullptr, true).at("exposure");
    const double rmse = ex.at("aligned_rmse").get<double>();
    const double target = 2.0 * std::log(2.0);
    bool ok = rmse < 0.1 && ex.at("group_gaps").size() == 2;
    std::string gaps;
    for (const auto& g : ex.at("group_gaps")) {
        const double v = g.get<double>();
        ok = ok && std::abs(v - target) <= 0.1 * target;
        gaps += fmt("%.3f ", v);
    }
    return {ok, "aligned RMSE " + fmt("%.4f", rmse) + "; group gaps " + gaps + "(target " + fmt("%.3f", target) + ")"};
}

Verdict exposure_ablation(Runs& runs) {
    const json b = runs.base();
    const json d = runs.train_eval("direct", "--no-exposure-mlp");
    const double vb = pooled_variance(b.at("exposure")), vd = pooled_variance(d.at("exposure"));
    const double pb = b.at("ldr_psnr").get<double>(), pd = d.at("ldr_psnr").get<double>();
    return {vd > vb && pd <= pb + 0.5, "within-group variance " + fmt("%.4f", vd) + " (direct) vs " + fmt("%.4f", vb) +
                                           "; PSNR " + fmt("%.2f", pd) + " vs " + fmt("%.2f", pb) + " dB"};
}

Verdict zero_point(Runs& runs) {
    runs.train_eval("mlp_crf", "--crf mlp --lambda-u 0.1");
    const fs::path dir = runs.work / "mlp_crf";
    const Model m = load_checkpoint(dir / "model.ckpt");
    double worst = 0;
    for (int ch = 0; ch < 3; ++ch) worst = std::max(worst, std::abs(m.crf(0.0, ch) - m.crf.c0()));
    const auto log = read_log(dir / "train_log.ndjson");
    // 200-step block means of the zero-point term must never go up
    std::vector<double> blocks;
    for (std::size_t e = 200; e <= log.size(); e += 200) blocks.push_back(window_mean(log, "zero_point", e, 200));
    bool monotone = blocks.size() >= 2;
    std::size_t bad = 0;
    for (std::size_t i = 1; i < blocks.size(); ++i) {
        if (blocks[i] > blocks[i - 1]) {
            monotone = false;
            bad = i;
        }
    }
    std::string d = "max |g(0) - C0| " + fmt("%.2e", worst) + "; zero-point 200-step means " +
                    fmt("%.3e", blocks.empty() ? 0.0 : blocks.front()) + " -> " +
                    fmt("%.3e", blocks.empty() ? 0.0 : blocks.back());
    if (!monotone && bad) d += ", rises at block " + std::to_string(bad);
    return {worst < 1e-2 && monotone, d};
}

Verdict determinism(Runs& runs) {
    const fs::path dir = runs.work / "determinism";
    fs::remove_all(dir);
    const std::string data = runs.dataset().string();
    bool ok = true;
    for (const char* name : {"a", "b"}) {
        ok = ok && runs.cli(std::string("det_train_") + name, "train --data '" + data + "' --out '" +
                                                                  (dir / name).string() + "' --seed 0 --steps 10") == 0;
    }
    const std::string la = slurp(dir / "a" / "train_log.ndjson");
    const bool logs = ok && !la.empty() && la == slurp(dir / "b" / "train_log.ndjson");

    for (const char* name : {"gen_a", "gen_b"}) {
        ok = ok && runs.cli(std::string("det_") + name, "gen-data --seed 7 --res 32x32 --frames 6 --out '" +
                                                            (dir / name).string() + "'") == 0;
    }
    std::size_t files = 0, same = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "gen_a")) {
        if (!e.is_regular_file()) continue;
        ++files;
        const fs::path other = dir / "gen_b" / fs::relative(e.path(), dir / "gen_a");
        if (fs::exists(other) && slurp(e.path()) == slurp(other)) ++same;
    }
    return {ok && logs && files > 0 && same == files,
            std::string("loss logs ") + (logs ? "identical" : "differ") + "; " + std::to_string(same) + "/" +
                std::to_string(files) + " generated files identical"};
}

// ---- 11 ---------------------------------------------------------------------

Verdict occupancy() {
    const SceneSpec scene = SceneSpec::lego_like();
    const CaptureSpec cap = CaptureSpec::arc(1, 64, 64, {-3, -1, 1}, 20);
    const CameraRig& rig = cap.cameras.front();
    const double half_diag = 0.5 * (scene.aabb.max - scene.aabb.min).norm();

    OccupancyGrid grid(scene.aabb, 64, 16);
    grid.update(
        [&](const RowMatrix& q) {
            Eigen::VectorXd s(q.rows());
            for (Eigen::Index i = 0; i < q.rows(); ++i) {
                const Vec3 u(q(i, 0), q(i, 1), q(i, 2));
                s[i] = eval_scene(scene, scene.aabb.min + (scene.aabb.max - scene.aabb.min).cwiseProduct(u), q(i, 3)).sigma;
            }
            return s;
        },
        1e-3);

    SeededRng rng(11);
    double worst = 0;
    std::size_t full = 0, kept = 0;
    for (int k = 0; k < 100; ++k) {
        const int frame = static_cast<int>(rng.below(20));
        const double t = frame / 19.0;
        const Ray r = generate_ray(rig.at(t), static_cast<int>(rng.below(64)), static_cast<int>(rng.below(64)), t,
                                   0, std::max(0.05, rig.radius - half_diag), rig.radius + half_diag);
        const SceneRay a = render_scene_ray(scene, r, cap.gt_samples);
        const SceneRay b = render_scene_ray(scene, r, cap.gt_samples, &grid);
        worst = std::max(worst, (a.hdr - b.hdr).cwiseAbs().maxCoeff());
        full += static_cast<std::size_t>(cap.gt_samples);
        kept += b.active_samples;
    }
    const double removed = 1.0 - static_cast<double>(kept) / static_cast<double>(full);
    return {worst < 1e-6 && removed >= 0.2,
            "100 rays, max |diff| " + fmt("%.2e", worst) + ", samples removed " + fmt("%.1f%%", 100.0 * removed)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance run: prints one PASS/FAIL line per criterion"};
    std::string work = (fs::temp_directory_path() / "hdrhex_acceptance").string();
    std::vector<int> only;
    bool reuse = false;
    app.add_option("--work", work, "Scratch directory for datasets and training runs");
    app.add_option("--only", only, "Run only these criteria (1-11)")->delimiter(',')->check(CLI::Range(1, 11));
    app.add_flag("--reuse", reuse, "Reuse finished training runs found in the scratch directory");
    CLI11_PARSE(app, argc, argv);

    fs::create_directories(work);
    Runs runs{work, Cli(work), reuse, {}, {}};
    const std::set<int> selected(only.begin(), only.end());

    struct Criterion {
        int id;
        const char* name;
        std::function<Verdict()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "gradient correctness", gradients},
        {2, "factorization oracle", factorization},
        {3, "volume-rendering oracle", compositing},
        {4, "gauge invariance", gauge},
        {5, "tone mapping", tonemap},
        {6, "desk-scale end-to-end", [&] { return end_to_end(runs); }},
        {7, "exposure recovery", [&] { return exposure_recovery(runs); }},
        {8, "exposure-MLP ablation direction", [&] { return exposure_ablation(runs); }},
        {9, "zero-point constraint", [&] { return zero_point(runs); }},
        {10, "determinism", [&] { return determinism(runs); }},
        {11, "occupancy skipping soundness", occupancy},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        std::printf("%s [%d] %s: %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
