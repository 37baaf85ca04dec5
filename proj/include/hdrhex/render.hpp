#pragma once

#include "hdrhex/diffcore.hpp"
#include "hdrhex/hexplane.hpp"
#include "hdrhex/mlp.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace hdrhex {

/// Pinhole camera. c2w is row-major camera-to-world; the camera looks down -z
/// with +y up in the image.
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Eigen::Matrix4d c2w = Eigen::Matrix4d::Identity();
    int width = 1;
    int height = 1;

    /// Throws ConfigError when intrinsics are invalid or the rotation is not orthonormal to 1e-6.
    void validate() const;
    bool operator==(const Camera&) const = default;
};

struct Ray {
    Vec3 o = Vec3::Zero();
    Vec3 d = Vec3(0, 0, -1);
    double t_cap = 0.0;
    double near = 0.1;
    double far = 1.0;
    std::size_t image_index = 0;
};

/// Ray through the center of pixel (px, py). Throws ArgumentError outside the frame.
Ray generate_ray(const Camera& camera, int px, int py, double t_cap, std::size_t image_index, double near = 0.1,
                 double far = 1.0);

/// Sample i owns the interval between the midpoints to its neighbours (near
/// and far at the ends), so the deltas always sum to far - near.
struct SampleBatch {
    std::vector<Vec3> positions;
    std::vector<double> depths;
    std::vector<double> deltas;
    std::vector<std::uint8_t> mask;  // 1 = active

    std::size_t size() const noexcept { return depths.size(); }
    std::size_t active() const;
};

SampleBatch sample_ray(const Ray& ray, int n, SeededRng& rng, bool stratified);
/// Stratum midpoints, or one draw per stratum from `rng` when stratified.
void sample_depths(double near, double far, int n, SeededRng* rng, std::span<double> depths,
                   std::span<double> deltas);

struct CompositeResult {
    Vec3 pixel = Vec3::Zero();
    std::vector<double> weights;
    double depth = 0.0;
    double opacity = 0.0;
};

/// Front-to-back alpha compositing: w_i = T_i (1 - exp(-sigma_i delta_i)).
/// `depths` may be empty, in which case depth is not computed. Empty rays report `far`.
CompositeResult volume_render(std::span<const Vec3> values, std::span<const double> sigmas,
                              std::span<const double> deltas, std::span<const double> depths = {},
                              double far = 0.0);

/// Gradients of the composited pixel w.r.t. per-sample values and densities.
void volume_render_backward(std::span<const Vec3> values, std::span<const double> sigmas,
                            std::span<const double> deltas, const Vec3& d_pixel, std::span<Vec3> d_values,
                            std::span<double> d_sigmas);

constexpr double kDefaultMu = 5000.0;

/// log(1 + mu E) / log(1 + mu), clamped at 1. Throws ArgumentError for E < 0.
double tone_map(double radiance, double mu = kDefaultMu);
Vec3 tone_map(const Vec3& radiance, double mu = kDefaultMu);

/// Binary occupancy over a res^3 x time_res lattice aligned with the aabb and t in [0, 1].
class OccupancyGrid {
public:
    /// Evaluates densities for rows (x, y, z, t) of unit coordinates.
    using DensityFn = std::function<Eigen::VectorXd(const RowMatrix& unit_points)>;

    OccupancyGrid() = default;
    OccupancyGrid(const Aabb& aabb, int res = 32, int time_res = 8);

    int res() const noexcept { return res_; }
    int time_res() const noexcept { return time_res_; }
    const Aabb& aabb() const noexcept { return aabb_; }
    double tau() const noexcept { return tau_; }

    bool occupied_unit(const Eigen::Vector4d& q) const;
    bool occupied(const Vec3& x, double t) const;

    /// Marks every cell whose sampled density reaches tau. Density is sampled on
    /// `subdiv` points per cell edge (cell corners included); the mask is then
    /// dilated by `dilate` cells in space and time.
    void update(const DensityFn& density, double tau, int subdiv = 1, int dilate = 1);
    void fill(bool value);

    double occupied_fraction() const;
    std::vector<std::uint8_t>& cells() noexcept { return cells_; }
    const std::vector<std::uint8_t>& cells() const noexcept { return cells_; }

private:
    std::size_t cell_index(int ix, int iy, int iz, int it) const {
        return ((static_cast<std::size_t>(it) * res_ + iz) * res_ + iy) * res_ + ix;
    }

    Aabb aabb_{};
    int res_ = 1;
    int time_res_ = 1;
    double tau_ = 0.0;
    std::vector<std::uint8_t> cells_;
};

/// Masks samples that fall in unoccupied cells. Never activates a masked sample.
SampleBatch prune(const SampleBatch& batch, const OccupancyGrid& grid, double t_cap);

}  // namespace hdrhex
