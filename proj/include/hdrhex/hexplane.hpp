#pragma once

#include "hdrhex/diffcore.hpp"

#include <Eigen/Core>

#include <array>
#include <span>
#include <vector>

namespace hdrhex {

using Vec3 = Eigen::Vector3d;

/// Coordinate axes of the 4D volume.
enum class Axis : int { X = 0, Y = 1, Z = 2, T = 3 };

/// The six planes, listed so that planes 2k and 2k+1 form product k.
enum class AxisPair : int { XY = 0, ZT = 1, XZ = 2, TY = 3, YZ = 4, XT = 5 };

Axis u_axis(AxisPair p);
Axis v_axis(AxisPair p);
const char* to_string(AxisPair p);

struct Aabb {
    Vec3 min = Vec3::Constant(-1.0);
    Vec3 max = Vec3::Constant(1.0);

    bool degenerate() const { return !((max - min).array() > 0.0).all(); }
    bool contains(const Vec3& x) const { return (x.array() >= min.array()).all() && (x.array() <= max.array()).all(); }
};

/// One rank-factorized feature plane, stored node-major so that the R*F
/// channels of a node are contiguous: entry (c, i, j) lives at
/// data.values[(i * res_v + j) * depth() + c]. Node i maps to u = i / (res_u - 1).
struct PlaneGrid {
    AxisPair axes = AxisPair::XY;
    int res_u = 2;
    int res_v = 2;
    int rank = 1;
    int channels = 1;
    ParamTensor data;

    PlaneGrid() = default;
    PlaneGrid(AxisPair axes, int res_u, int res_v, int rank, int channels);

    int depth() const noexcept { return rank * channels; }
    std::size_t index(int c, int i, int j) const noexcept {
        return (static_cast<std::size_t>(i) * res_v + j) * depth() + c;
    }
    double at(int c, int i, int j) const noexcept { return data.values[index(c, i, j)]; }
    double& at(int c, int i, int j) noexcept { return data.values[index(c, i, j)]; }
};

/// Corner nodes (i * res_v + j) and weights of one bilinear lookup.
struct BilerpStencil {
    std::array<std::size_t, 4> offset{};
    std::array<double, 4> weight{};
};

/// Coordinates are clamped to [0, 1] before the lookup.
BilerpStencil bilerp_stencil(int res_u, int res_v, double u, double v);

/// Interpolated feature vector of length rank * channels.
std::vector<double> bilerp(const PlaneGrid& plane, double u, double v);

struct GridConfig {
    int spatial_res = 32;
    int spatial_res_final = 64;
    int time_res_init = 8;
    int time_res_final = 8;
    std::array<int, 3> ranks{2, 2, 2};
    int channels = 16;
    std::vector<long> upsample_steps{};
    double init_mean = 0.1;
    double init_spread = 0.05;

    /// Throws ConfigError on an invalid combination.
    void validate() const;
};

/// Six feature planes plus three basis-vector sets. Query output
///   D[f] = sum_k sum_r A_k,r[f] * B_k,r[f] * v_k[r, f]
/// with (A, B) = (XY, ZT), (XZ, TY), (YZ, XT).
class HexPlaneField {
public:
    HexPlaneField() = default;
    HexPlaneField(const GridConfig& config, const Aabb& aabb, SeededRng& rng);

    int channels() const noexcept { return channels_; }
    std::array<int, 3> ranks() const noexcept { return ranks_; }
    int spatial_res() const noexcept { return spatial_res_; }
    int time_res() const noexcept { return time_res_; }
    const Aabb& aabb() const noexcept { return aabb_; }

    std::array<PlaneGrid, 6>& planes() noexcept { return planes_; }
    const std::array<PlaneGrid, 6>& planes() const noexcept { return planes_; }
    std::array<ParamTensor, 3>& vectors() noexcept { return vectors_; }
    const std::array<ParamTensor, 3>& vectors() const noexcept { return vectors_; }

    /// World position and time to clamped unit coordinates (x, y, z, t).
    Eigen::Vector4d normalize(const Vec3& x, double t) const;

    /// Query at a world position. Throws ArgumentError on non-finite input.
    std::vector<double> query(const Vec3& x, double t) const;
    /// Query at unit coordinates; `out` must hold channels() values.
    void query_unit(const Eigen::Vector4d& q, std::span<double> out) const;

    /// Accumulate dL/d(planes, vectors) of product `group` given dL/dD.
    void query_backward_group(int group, const Eigen::Vector4d& q, std::span<const double> d_out);
    void query_backward(const Eigen::Vector4d& q, std::span<const double> d_out);

    double tv_loss() const;
    /// Adds weight * dTV/dθ to the plane gradients and returns the TV value.
    double tv_backward(double weight);

    /// Corner-aligned bilinear resampling onto a finer lattice.
    HexPlaneField upsampled(int new_spatial_res, int new_time_res) const;

    std::vector<ParamTensor*> parameters();
    std::vector<const ParamTensor*> parameters() const;

    /// Rebuild from explicit parts (checkpoint loading, tests).
    static HexPlaneField from_parts(const Aabb& aabb, int spatial_res, int time_res, std::array<int, 3> ranks,
                                    int channels);

private:
    void allocate();

    Aabb aabb_{};
    int spatial_res_ = 2;
    int time_res_ = 2;
    std::array<int, 3> ranks_{1, 1, 1};
    int channels_ = 1;
    std::array<PlaneGrid, 6> planes_{};
    std::array<ParamTensor, 3> vectors_{};
};

}  // namespace hdrhex
