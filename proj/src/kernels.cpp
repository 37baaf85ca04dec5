#include "hdrhex/kernels.hpp"

#include "hdrhex/error.hpp"

#include <algorithm>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace hdrhex {

SeededRng ray_rng(std::uint64_t seed, std::size_t ray) { return SeededRng(seed).fork(ray); }

namespace {

// Chunk temporaries run to a few MB. Above glibc's default mmap threshold each
// one is a fresh mapping that gets page-faulted in and unmapped again, which
// costs more than the arithmetic; keep them on the heap instead.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 64 << 20);
        mallopt(M_TRIM_THRESHOLD, 128 << 20);
        return true;
    }();
    (void)once;
#endif
}

/// Active samples of a chunk of rays, flattened.
struct ChunkSamples {
    std::vector<std::size_t> offset;  // per ray, size rays + 1
    std::vector<Eigen::Vector4d> unit;
    std::vector<double> delta;
    std::vector<double> depth;
    std::size_t total = 0;
};

ChunkSamples gather_samples(const Model& model, std::span<const Ray> rays, std::size_t first, std::size_t last,
                            const KernelOptions& opt, std::uint64_t seed) {
    ChunkSamples cs;
    cs.offset.reserve(last - first + 1);
    std::vector<double> depths(opt.samples), deltas(opt.samples);
    for (std::size_t r = first; r < last; ++r) {
        cs.offset.push_back(cs.unit.size());
        const Ray& ray = rays[r];
        SeededRng rng = ray_rng(seed, r);
        sample_depths(ray.near, ray.far, opt.samples, opt.stratified ? &rng : nullptr, depths, deltas);
        for (int i = 0; i < opt.samples; ++i) {
            const Eigen::Vector4d q = model.field.normalize(ray.o + depths[i] * ray.d, ray.t_cap);
            if (opt.occupancy && !opt.occupancy->occupied_unit(q)) continue;
            cs.unit.push_back(q);
            cs.delta.push_back(deltas[i]);
            cs.depth.push_back(depths[i]);
        }
        cs.total += opt.samples;
    }
    cs.offset.push_back(cs.unit.size());
    return cs;
}

struct DecoderInputs {
    RowMatrix features;
    RowMatrix x;
    RowMatrix dirs;
    Eigen::VectorXd t;
};

DecoderInputs decoder_inputs(const Model& model, std::span<const Ray> rays, std::size_t first,
                             const ChunkSamples& cs) {
    const auto n = static_cast<Eigen::Index>(cs.unit.size());
    const int F = model.field.channels();
    DecoderInputs in;
    in.features.resize(n, F);
    in.x.resize(n, 3);
    in.dirs.resize(n, 3);
    in.t.resize(n);
    for (std::size_t r = 0; r + 1 < cs.offset.size(); ++r) {
        const Vec3& d = rays[first + r].d;
        for (std::size_t s = cs.offset[r]; s < cs.offset[r + 1]; ++s) {
            const auto i = static_cast<Eigen::Index>(s);
            model.field.query_unit(cs.unit[s], std::span<double>(in.features.row(i).data(), F));
            in.x.row(i) = cs.unit[s].head<3>().transpose();
            in.dirs.row(i) = d.transpose();
            in.t[i] = cs.unit[s][3];
        }
    }
    return in;
}

/// Composite rows [b, e) of `values` with the chunk's densities.
Vec3 composite(const RowMatrix& values, const Eigen::VectorXd& sigma, const ChunkSamples& cs, std::size_t b,
               std::size_t e, double* opacity, double* depth_sum, std::vector<double>* weights) {
    Vec3 pixel = Vec3::Zero();
    double T = 1.0;
    double op = 0.0;
    double ds = 0.0;
    for (std::size_t s = b; s < e; ++s) {
        const auto i = static_cast<Eigen::Index>(s);
        const double alpha = -std::expm1(-sigma[i] * cs.delta[s]);
        const double w = T * alpha;
        pixel += w * values.row(i).transpose();
        op += w;
        ds += w * cs.depth[s];
        if (weights) (*weights)[s] = w;
        T *= 1.0 - alpha;
    }
    if (opacity) *opacity = op;
    if (depth_sum) *depth_sum = ds;
    return pixel;
}

struct ChunkGrad {
    DecoderGrad decoder;
    std::array<MlpGrad, 3> crf;
    std::vector<double> d_exposure;  // per image
    std::vector<Eigen::Vector4d> unit;
    RowMatrix d_features;
};

}  // namespace

std::vector<Vec3> ldr_forward_backward(Model& model, std::span<const Ray> rays, const KernelOptions& opt,
                                       std::uint64_t seed, const BatchLossGrad& loss_grad, BatchStats* stats) {
    if (opt.samples < 1) throw ArgumentError("ldr_forward_backward: need at least one sample per ray");
    keep_large_blocks_on_heap();
    const std::size_t n_rays = rays.size();
    const std::size_t per = static_cast<std::size_t>(std::max(1, opt.rays_per_chunk));
    const std::size_t n_chunks = (n_rays + per - 1) / per;
    const std::vector<double> e_prime = model.exposure.log_exposures();
    for (const Ray& r : rays) {
        if (r.image_index >= e_prime.size()) throw IndexError("ldr_forward_backward: unknown image index");
    }
    const bool trainable_crf = model.crf.variant() == CrfVariant::TrainableMlp;

    std::vector<Vec3> preds(n_rays, Vec3::Zero());
    std::vector<ChunkGrad> grads(n_chunks);
    std::vector<BatchStats> chunk_stats(n_chunks);
    const Model& cmodel = model;

#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t c = 0; c < n_chunks; ++c) {
        const std::size_t first = c * per;
        const std::size_t last = std::min(n_rays, first + per);
        ChunkGrad& g = grads[c];
        g.decoder = cmodel.decoder.make_grad();
        g.crf = cmodel.crf.make_grads();
        g.d_exposure.assign(e_prime.size(), 0.0);

        ChunkSamples cs = gather_samples(cmodel, rays, first, last, opt, seed);
        chunk_stats[c] = {cs.total, cs.unit.size()};
        const auto n = static_cast<Eigen::Index>(cs.unit.size());
        if (n == 0) {
            for (std::size_t r = first; r < last; ++r) loss_grad(r, preds[r]);
            continue;
        }
        DecoderInputs in = decoder_inputs(cmodel, rays, first, cs);
        RowMatrix e_log;
        Eigen::VectorXd sigma;
        Decoder::Cache cache;
        cmodel.decoder.forward(in.features, in.x, in.dirs, in.t, e_log, sigma, &cache);

        // Per-sample exposure follows the owning ray.
        Eigen::VectorXd ep(n);
        for (std::size_t r = 0; r + 1 < cs.offset.size(); ++r) {
            for (std::size_t s = cs.offset[r]; s < cs.offset[r + 1]; ++s) ep[s] = e_prime[rays[first + r].image_index];
        }
        std::array<Crf::BatchCache, 3> crf_cache;
        RowMatrix colors(n, 3);
        for (int ch = 0; ch < 3; ++ch) {
            colors.col(ch) = cmodel.crf.forward_batch(ch, e_log.col(ch) + ep, &crf_cache[ch]);
        }

        RowMatrix d_colors(n, 3);
        Eigen::VectorXd d_sigma(n);
        std::vector<double> weights(cs.unit.size());
        std::vector<double> t_after(cs.unit.size());
        for (std::size_t r = 0; r + 1 < cs.offset.size(); ++r) {
            const std::size_t b = cs.offset[r];
            const std::size_t e = cs.offset[r + 1];
            const Vec3 pixel = composite(colors, sigma, cs, b, e, nullptr, nullptr, &weights);
            preds[first + r] = pixel;
            const Vec3 gp = loss_grad(first + r, pixel);
            // d/ds_k = T_{k+1} <g, v_k> - sum_{i>k} w_i <g, v_i>
            double T = 1.0;
            for (std::size_t s = b; s < e; ++s) {
                T *= 1.0 + std::expm1(-sigma[static_cast<Eigen::Index>(s)] * cs.delta[s]);
                t_after[s] = T;
            }
            double suffix = 0.0;
            for (std::size_t s = e; s-- > b;) {
                const auto i = static_cast<Eigen::Index>(s);
                const double gv = gp.dot(colors.row(i).transpose());
                d_colors.row(i) = (weights[s] * gp).transpose();
                d_sigma[i] = (t_after[s] * gv - suffix) * cs.delta[s];
                suffix += weights[s] * gv;
            }
        }

        RowMatrix d_e_log(n, 3);
        for (int ch = 0; ch < 3; ++ch) {
            MlpGrad* mg = trainable_crf ? &g.crf[ch] : nullptr;
            d_e_log.col(ch) = cmodel.crf.backward_batch(ch, crf_cache[ch], d_colors.col(ch), mg);
        }
        for (std::size_t r = 0; r + 1 < cs.offset.size(); ++r) {
            double acc = 0.0;
            for (std::size_t s = cs.offset[r]; s < cs.offset[r + 1]; ++s) acc += d_e_log.row(static_cast<Eigen::Index>(s)).sum();
            g.d_exposure[rays[first + r].image_index] += acc;
        }
        cmodel.decoder.backward(cache, d_e_log, d_sigma, g.decoder, &g.d_features);
        g.unit = std::move(cs.unit);
    }

    // Ordered reductions.
    DecoderGrad dec = model.decoder.make_grad();
    std::array<MlpGrad, 3> crf = model.crf.make_grads();
    std::vector<double> d_exposure(e_prime.size(), 0.0);
    BatchStats total;
    for (std::size_t c = 0; c < n_chunks; ++c) {
        dec += grads[c].decoder;
        if (trainable_crf) {
            for (int ch = 0; ch < 3; ++ch) crf[ch] += grads[c].crf[ch];
        }
        for (std::size_t j = 0; j < d_exposure.size(); ++j) d_exposure[j] += grads[c].d_exposure[j];
        total.total_samples += chunk_stats[c].total_samples;
        total.active_samples += chunk_stats[c].active_samples;
    }
    model.decoder.accumulate(dec);
    model.crf.accumulate(crf);
    for (std::size_t j = 0; j < d_exposure.size(); ++j) {
        if (d_exposure[j] != 0.0) model.exposure.backward(j, d_exposure[j]);
    }
    // Each product group owns its two planes and basis vector: no write conflicts.
#pragma omp parallel for schedule(static)
    for (int group = 0; group < 3; ++group) {
        for (std::size_t c = 0; c < n_chunks; ++c) {
            const ChunkGrad& g = grads[c];
            for (std::size_t s = 0; s < g.unit.size(); ++s) {
                const auto i = static_cast<Eigen::Index>(s);
                model.field.query_backward_group(
                    group, g.unit[s], std::span<const double>(g.d_features.row(i).data(), g.d_features.cols()));
            }
        }
    }
    if (stats) *stats = total;
    return preds;
}

std::vector<RenderOutput> render_rays(const Model& model, std::span<const Ray> rays, RenderMode mode,
                                      std::span<const ExposureSource> exposures, const KernelOptions& opt,
                                      std::uint64_t seed, BatchStats* stats) {
    if (opt.samples < 1) throw ArgumentError("render_rays: need at least one sample per ray");
    keep_large_blocks_on_heap();
    const std::size_t n_rays = rays.size();
    std::vector<double> e_prime;
    if (mode == RenderMode::Ldr) {
        if (exposures.size() != 1 && exposures.size() != n_rays) {
            throw ArgumentError("render_rays: need one exposure per ray or a single shared exposure");
        }
        e_prime.resize(exposures.size());
        for (std::size_t i = 0; i < exposures.size(); ++i) e_prime[i] = resolve_log_exposure(model, exposures[i]);
    }
    const std::size_t per = static_cast<std::size_t>(std::max(1, opt.rays_per_chunk));
    const std::size_t n_chunks = (n_rays + per - 1) / per;
    std::vector<RenderOutput> out(n_rays);
    std::vector<BatchStats> chunk_stats(n_chunks);

#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t c = 0; c < n_chunks; ++c) {
        const std::size_t first = c * per;
        const std::size_t last = std::min(n_rays, first + per);
        ChunkSamples cs = gather_samples(model, rays, first, last, opt, seed);
        chunk_stats[c] = {cs.total, cs.unit.size()};
        const auto n = static_cast<Eigen::Index>(cs.unit.size());
        RowMatrix e_log(n, 3);
        Eigen::VectorXd sigma(n);
        if (n > 0) {
            DecoderInputs in = decoder_inputs(model, rays, first, cs);
            model.decoder.forward(in.features, in.x, in.dirs, in.t, e_log, sigma, nullptr);
        }
        const RowMatrix radiance = e_log.array().exp().matrix();
        RowMatrix colors;
        if (mode == RenderMode::Ldr && n > 0) {
            Eigen::VectorXd ep(n);
            for (std::size_t r = 0; r + 1 < cs.offset.size(); ++r) {
                const double e = e_prime.size() == 1 ? e_prime[0] : e_prime[first + r];
                for (std::size_t s = cs.offset[r]; s < cs.offset[r + 1]; ++s) ep[s] = e;
            }
            colors.resize(n, 3);
            for (int ch = 0; ch < 3; ++ch) colors.col(ch) = model.crf.forward_batch(ch, e_log.col(ch) + ep, nullptr);
        }
        for (std::size_t r = 0; r + 1 < cs.offset.size(); ++r) {
            const std::size_t b = cs.offset[r];
            const std::size_t e = cs.offset[r + 1];
            RenderOutput& o = out[first + r];
            double depth_sum = 0.0;
            o.hdr = composite(radiance, sigma, cs, b, e, &o.opacity, &depth_sum, nullptr);
            o.depth = o.opacity > 1e-10 ? depth_sum / o.opacity : rays[first + r].far;
            o.active_samples = static_cast<int>(e - b);
            if (mode == RenderMode::Ldr) {
                o.ldr = composite(colors, sigma, cs, b, e, nullptr, nullptr, nullptr);
            } else if (mode == RenderMode::Tonemapped) {
                o.ldr = tone_map(o.hdr, opt.mu);
            }
        }
    }
    if (stats) {
        *stats = {};
        for (const auto& s : chunk_stats) {
            stats->total_samples += s.total_samples;
            stats->active_samples += s.active_samples;
        }
    }
    return out;
}

Eigen::VectorXd field_density(const Model& model, const RowMatrix& unit_points) {
    keep_large_blocks_on_heap();
    const Eigen::Index n = unit_points.rows();
    Eigen::VectorXd out(n);
    constexpr Eigen::Index kBlock = 4096;
    const Eigen::Index blocks = (n + kBlock - 1) / kBlock;
    const int F = model.field.channels();
#pragma omp parallel for schedule(dynamic, 1)
    for (Eigen::Index b = 0; b < blocks; ++b) {
        const Eigen::Index lo = b * kBlock;
        const Eigen::Index m = std::min(kBlock, n - lo);
        RowMatrix features(m, F);
        RowMatrix x(m, 3);
        Eigen::VectorXd t(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const Eigen::Vector4d q = unit_points.row(lo + i).transpose();
            model.field.query_unit(q, std::span<double>(features.row(i).data(), F));
            x.row(i) = q.head<3>().transpose();
            t[i] = q[3];
        }
        out.segment(lo, m) = model.decoder.density(features, x, t);
    }
    return out;
}

}  // namespace hdrhex
