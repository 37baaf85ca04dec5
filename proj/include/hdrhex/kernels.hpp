#pragma once

#include "hdrhex/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace hdrhex {

/// Batched, OpenMP-parallel counterparts of the serial reference renderer.
/// Rays are split into fixed-size chunks independent of the thread count and
/// every reduction runs in chunk order, so results are bitwise reproducible
/// for any number of threads.
struct KernelOptions {
    int samples = 64;
    bool stratified = false;
    const OccupancyGrid* occupancy = nullptr;
    double mu = kDefaultMu;
    int rays_per_chunk = 32;
};

/// Per-ray sampling stream used by the kernels: SeededRng(seed).fork(ray).
SeededRng ray_rng(std::uint64_t seed, std::size_t ray);

struct BatchStats {
    std::size_t total_samples = 0;
    std::size_t active_samples = 0;
};

/// dL/d(ldr) for ray `r` given its prediction.
using BatchLossGrad = std::function<Vec3(std::size_t r, const Vec3& pred)>;

/// LDR forward and backward over a ray batch; exposures come from each ray's
/// image index. Gradients are accumulated into `model`. Returns predictions.
std::vector<Vec3> ldr_forward_backward(Model& model, std::span<const Ray> rays, const KernelOptions& options,
                                       std::uint64_t sample_seed, const BatchLossGrad& loss_grad,
                                       BatchStats* stats = nullptr);

/// Forward-only batched render. `exposures` holds one entry per ray, or a
/// single entry shared by all rays; it is ignored outside Ldr mode.
std::vector<RenderOutput> render_rays(const Model& model, std::span<const Ray> rays, RenderMode mode,
                                      std::span<const ExposureSource> exposures, const KernelOptions& options,
                                      std::uint64_t sample_seed = 0, BatchStats* stats = nullptr);

/// Densities at rows (x, y, z, t) of unit coordinates.
Eigen::VectorXd field_density(const Model& model, const RowMatrix& unit_points);

}  // namespace hdrhex
