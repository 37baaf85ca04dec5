// Serial reference renderer vs the batched OpenMP kernels on one training batch.
#include "hdrhex/kernels.hpp"
#include "hdrhex/synthdata.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

using namespace hdrhex;

namespace {

constexpr int kSamples = 64;

struct Fixture {
    Model model;
    std::vector<Ray> rays;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        const SceneSpec scene = SceneSpec::lego_like();
        const CaptureSpec cap = CaptureSpec::arc(1, 64, 64, {-3, -1, 1}, 20);
        const CameraRig& rig = cap.cameras.front();
        const double half_diag = 0.5 * (scene.aabb.max - scene.aabb.min).norm();
        Fixture out{Model::create(ModelConfig{}, scene.aabb, 20, 0), {}};
        SeededRng rng(1);
        for (int i = 0; i < 512; ++i) {
            const int frame = static_cast<int>(rng.uniform(0.0, 20.0));
            const double t = frame / 19.0;
            const Camera cam = rig.at(t);
            const int px = static_cast<int>(rng.uniform(0.0, 64.0)), py = static_cast<int>(rng.uniform(0.0, 64.0));
            out.rays.push_back(generate_ray(cam, px, py, t, static_cast<std::size_t>(frame),
                                            rig.radius - half_diag, rig.radius + half_diag));
        }
        return out;
    }();
    return f;
}

Vec3 half_grad(const Vec3& p) { return p - Vec3::Constant(0.5); }

void BM_RenderSerial(benchmark::State& state) {
    const Fixture& f = fixture();
    RenderOptions opt;
    opt.samples = kSamples;
    for (auto _ : state) {
        for (const Ray& r : f.rays) {
            benchmark::DoNotOptimize(
                render_pixel(f.model, r, RenderMode::Ldr, ExposureSource::from_image(r.image_index), opt));
        }
    }
    state.SetItemsProcessed(state.iterations() * f.rays.size());
}

void BM_RenderKernel(benchmark::State& state) {
    const Fixture& f = fixture();
    omp_set_num_threads(static_cast<int>(state.range(0)));
    std::vector<ExposureSource> src;
    for (const Ray& r : f.rays) src.push_back(ExposureSource::from_image(r.image_index));
    KernelOptions opt;
    opt.samples = kSamples;
    opt.rays_per_chunk = static_cast<int>(state.range(1));
    for (auto _ : state) benchmark::DoNotOptimize(render_rays(f.model, f.rays, RenderMode::Ldr, src, opt));
    state.SetItemsProcessed(state.iterations() * f.rays.size());
}

void BM_ForwardBackwardSerial(benchmark::State& state) {
    Model model = fixture().model;
    const auto& rays = fixture().rays;
    RenderOptions opt;
    opt.samples = kSamples;
    SeededRng rng(3);
    for (auto _ : state) {
        model.zero_grad();
        for (const Ray& r : rays) {
            render_pixel_backward(model, r, ExposureSource::from_image(r.image_index), opt, &rng,
                                  [](const RenderOutput& o) { return half_grad(o.ldr); });
        }
    }
    state.SetItemsProcessed(state.iterations() * rays.size());
}

void BM_ForwardBackwardKernel(benchmark::State& state) {
    Model model = fixture().model;
    const auto& rays = fixture().rays;
    omp_set_num_threads(static_cast<int>(state.range(0)));
    KernelOptions opt;
    opt.samples = kSamples;
    opt.rays_per_chunk = static_cast<int>(state.range(1));
    for (auto _ : state) {
        model.zero_grad();
        benchmark::DoNotOptimize(
            ldr_forward_backward(model, rays, opt, 3, [](std::size_t, const Vec3& p) { return half_grad(p); }));
    }
    state.SetItemsProcessed(state.iterations() * rays.size());
}

// (threads, rays per chunk)
void kernel_args(benchmark::internal::Benchmark* b) {
    std::vector<int> threads;
    for (int t = 1; t <= omp_get_num_procs(); t *= 2) threads.push_back(t);
    if (threads.back() != omp_get_num_procs()) threads.push_back(omp_get_num_procs());
    for (int t : threads) {
        for (int chunk : {1, 8, 32}) b->Args({t, chunk});
    }
}

}  // namespace

BENCHMARK(BM_RenderSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RenderKernel)->Apply(kernel_args)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ForwardBackwardSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBackwardKernel)->Apply(kernel_args)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
