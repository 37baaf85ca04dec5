#include "hdrhex/gradprobe.hpp"

#include "hdrhex/error.hpp"
#include "hdrhex/kernels.hpp"
#include "hdrhex/model.hpp"

#include <algorithm>
#include <chrono>

namespace hdrhex {

namespace {

using Clock = std::chrono::steady_clock;

std::vector<ParamTensor*> concat(std::initializer_list<std::vector<ParamTensor*>> lists) {
    std::vector<ParamTensor*> out;
    for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
    return out;
}

ProbeResult check(const std::string& component, const std::string& probe, LossFn loss,
                  const std::vector<ParamTensor*>& params, bool sign_flip) {
    LossFn fn = loss;
    if (sign_flip) {
        fn = [&loss, &params] {
            const double f = loss();
            for (ParamTensor* p : params) {
                for (double& g : p->grad) g = -g;
            }
            return f;
        };
    }
    const auto t0 = Clock::now();
    ProbeResult r{component, probe, grad_check(fn, params), 0.0};
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

void randomize(ParamTensor& p, SeededRng& rng, double lo, double hi) {
    for (double& v : p.values) v = rng.uniform(lo, hi);
}

GridConfig small_grid() {
    GridConfig g;
    g.spatial_res = 5;
    g.spatial_res_final = 5;
    g.time_res_init = 4;
    g.time_res_final = 4;
    g.ranks = {1, 2, 2};
    g.channels = 3;
    return g;
}

DecoderConfig small_decoder() {
    DecoderConfig d;
    d.density_hidden = {8, 8};
    d.color_hidden = {8};
    d.posenc = {2, 2, 2, true};
    return d;
}

void hexplane_probes(std::uint64_t seed, bool flip, std::vector<ProbeResult>& out) {
    SeededRng rng(seed);
    HexPlaneField field(small_grid(), Aabb{}, rng);
    for (ParamTensor* p : field.parameters()) randomize(*p, rng, -1.0, 1.0);
    const int F = field.channels();
    std::vector<Eigen::Vector4d> qs;
    std::vector<std::vector<double>> ws;
    for (int k = 0; k < 6; ++k) {
        qs.emplace_back(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform());
        std::vector<double> w(F);
        for (double& v : w) v = rng.uniform(-1.0, 1.0);
        ws.push_back(std::move(w));
    }
    const auto params = field.parameters();
    auto loss = [&]() {
        double f = 0.0;
        std::vector<double> d(F);
        for (std::size_t k = 0; k < qs.size(); ++k) {
            field.query_unit(qs[k], d);
            for (int c = 0; c < F; ++c) f += ws[k][c] * d[c];
            field.query_backward(qs[k], ws[k]);
        }
        return f + 0.3 * field.tv_backward(0.3);
    };
    out.push_back(check("hexplane", "query+tv", loss, params, flip));
}

void decoder_probes(std::uint64_t seed, bool flip, std::vector<ProbeResult>& out) {
    SeededRng rng(seed + 1);
    const int F = 4;
    const int N = 3;
    Decoder dec(F, small_decoder(), rng);
    ParamTensor feats("features", {N, F});
    ParamTensor xs("positions", {N, 3});
    ParamTensor ts("times", {N});
    randomize(feats, rng, -1.0, 1.0);
    randomize(xs, rng, 0.05, 0.95);
    randomize(ts, rng, 0.05, 0.95);
    RowMatrix dirs(N, 3);
    for (int i = 0; i < N; ++i) {
        dirs.row(i) = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized().transpose();
    }
    RowMatrix we(N, 3);
    Eigen::VectorXd ws(N);
    for (int i = 0; i < N; ++i) {
        for (int c = 0; c < 3; ++c) we(i, c) = rng.uniform(-1.0, 1.0);
        ws[i] = rng.uniform(-1.0, 1.0);
    }
    auto params = concat({dec.parameters(), {&feats, &xs, &ts}});
    auto loss = [&]() {
        const RowMatrix fm = Eigen::Map<const RowMatrix>(feats.values.data(), N, F);
        const RowMatrix xm = Eigen::Map<const RowMatrix>(xs.values.data(), N, 3);
        const Eigen::VectorXd tm = Eigen::Map<const Eigen::VectorXd>(ts.values.data(), N);
        RowMatrix e_log;
        Eigen::VectorXd sigma;
        Decoder::Cache cache;
        dec.forward(fm, xm, dirs, tm, e_log, sigma, &cache);
        DecoderGrad g = dec.make_grad();
        RowMatrix d_f, d_x;
        Eigen::VectorXd d_t;
        dec.backward(cache, we, ws, g, &d_f, &d_x, nullptr, &d_t, &xm, &dirs, &tm);
        dec.accumulate(g);
        for (int i = 0; i < N; ++i) {
            for (int c = 0; c < F; ++c) feats.grad[i * F + c] += d_f(i, c);
            for (int c = 0; c < 3; ++c) xs.grad[i * 3 + c] += d_x(i, c);
            ts.grad[i] += d_t[i];
        }
        return (e_log.array() * we.array()).sum() + sigma.dot(ws);
    };
    out.push_back(check("decoder", "density+color", loss, params, flip));
}

void exposure_probes(std::uint64_t seed, bool flip, std::vector<ProbeResult>& out) {
    for (bool use_mlp : {true, false}) {
        SeededRng rng(seed + 2);
        ExposureConfig cfg;
        cfg.embed_dim = 3;
        cfg.hidden = {4, 4};
        cfg.use_mlp = use_mlp;
        ExposureTable table(5, cfg, rng);
        randomize(table.embeddings(), rng, -1.0, 1.0);
        std::vector<double> w(table.size());
        for (double& v : w) v = rng.uniform(-1.0, 1.0);
        auto params = concat({table.embedding_parameters(), table.network_parameters()});
        auto loss = [&]() {
            double f = 0.0;
            for (std::size_t j = 0; j < table.size(); ++j) {
                const double e = table.log_exposure(j);
                f += w[j] * e + 0.5 * e * e;
                table.backward(j, w[j] + e);
            }
            return f;
        };
        out.push_back(check("exposure", use_mlp ? "embedding+mlp" : "direct", loss, params, flip));
    }

    SeededRng rng(seed + 3);
    Crf crf = Crf::trainable(rng, {4, 4}, 0.5, 0.1);
    std::vector<double> xs;
    for (int k = 0; k < 6; ++k) xs.push_back(rng.uniform(-3.0, 3.0));
    auto params = crf.parameters();
    auto loss = [&]() {
        double f = 0.0;
        auto grads = crf.make_grads();
        for (int c = 0; c < 3; ++c) {
            for (std::size_t k = 0; k < xs.size(); ++k) {
                const double wk = 0.3 * (k + 1) - c;
                f += wk * crf(xs[k], c);
                crf.backward(xs[k], c, wk, &grads);
            }
        }
        crf.accumulate(grads);
        f += 0.7 * crf.zero_point_loss();
        crf.zero_point_backward(0.7);
        return f;
    };
    out.push_back(check("exposure", "crf+zero_point", loss, params, flip));
}

Model probe_model(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.grid = small_grid();
    cfg.decoder = small_decoder();
    cfg.exposure.embed_dim = 3;
    cfg.exposure.hidden = {4};
    cfg.crf = CrfVariant::TrainableMlp;
    cfg.crf_hidden = {4};
    Model m = Model::create(cfg, Aabb{}, 2, seed);
    SeededRng rng(seed ^ 0x5bd1e995ULL);
    randomize(m.exposure.embeddings(), rng, -0.5, 0.5);
    return m;
}

std::vector<Ray> probe_rays() {
    std::vector<Ray> rays(2);
    rays[0].o = Vec3(0.3, 0.2, 2.5);
    rays[0].d = Vec3(-0.1, -0.05, -1.0).normalized();
    rays[0].t_cap = 0.3;
    rays[0].image_index = 0;
    rays[1].o = Vec3(-0.4, 0.1, 2.5);
    rays[1].d = Vec3(0.15, 0.02, -1.0).normalized();
    rays[1].t_cap = 0.8;
    rays[1].image_index = 1;
    for (Ray& r : rays) {
        r.near = 1.6;
        r.far = 3.4;
    }
    return rays;
}

void renderer_probes(std::uint64_t seed, bool flip, std::vector<ProbeResult>& out) {
    const std::vector<Vec3> w{Vec3(0.7, -0.4, 0.9), Vec3(-0.5, 0.8, 0.3)};
    const std::vector<Ray> rays = probe_rays();
    {
        Model m = probe_model(seed + 4);
        RenderOptions opt;
        opt.samples = 4;
        auto params = m.parameters();
        auto loss = [&]() {
            double f = 0.0;
            for (std::size_t r = 0; r < rays.size(); ++r) {
                const RenderOutput o = render_pixel_backward(m, rays[r], ExposureSource::from_image(rays[r].image_index),
                                                             opt, nullptr, [&](const RenderOutput&) { return w[r]; });
                f += w[r].dot(o.ldr);
            }
            return f;
        };
        out.push_back(check("renderer", "reference", loss, params, flip));
    }
    {
        Model m = probe_model(seed + 4);
        KernelOptions opt;
        opt.samples = 4;
        auto params = m.parameters();
        auto loss = [&]() {
            const auto pred = ldr_forward_backward(m, rays, opt, 0, [&](std::size_t r, const Vec3&) { return w[r]; });
            return w[0].dot(pred[0]) + w[1].dot(pred[1]);
        };
        out.push_back(check("renderer", "kernel", loss, params, flip));
    }
}

}  // namespace

const std::vector<std::string>& probe_components() {
    static const std::vector<std::string> names{"hexplane", "decoder", "exposure", "renderer"};
    return names;
}

std::vector<ProbeResult> run_grad_probes(const std::string& component, std::uint64_t seed, bool sign_flip) {
    const auto& names = probe_components();
    if (component != "all" && std::find(names.begin(), names.end(), component) == names.end()) {
        throw ArgumentError("unknown component '" + component + "'");
    }
    std::vector<ProbeResult> out;
    const auto want = [&](const char* c) { return component == "all" || component == c; };
    if (want("hexplane")) hexplane_probes(seed, sign_flip, out);
    if (want("decoder")) decoder_probes(seed, sign_flip, out);
    if (want("exposure")) exposure_probes(seed, sign_flip, out);
    if (want("renderer")) renderer_probes(seed, sign_flip, out);
    return out;
}

}  // namespace hdrhex
