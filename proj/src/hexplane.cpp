#include "hdrhex/hexplane.hpp"

#include "hdrhex/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hdrhex {

namespace {

constexpr std::array<Axis, 6> kUAxis{Axis::X, Axis::Z, Axis::X, Axis::T, Axis::Y, Axis::X};
constexpr std::array<Axis, 6> kVAxis{Axis::Y, Axis::T, Axis::Z, Axis::Y, Axis::Z, Axis::T};

double clamp01(double s) { return std::clamp(s, 0.0, 1.0); }

int axis_res(Axis a, int spatial, int time) { return a == Axis::T ? time : spatial; }

}  // namespace

Axis u_axis(AxisPair p) { return kUAxis[static_cast<int>(p)]; }
Axis v_axis(AxisPair p) { return kVAxis[static_cast<int>(p)]; }

const char* to_string(AxisPair p) {
    static constexpr std::array<const char*, 6> names{"XY", "ZT", "XZ", "TY", "YZ", "XT"};
    return names[static_cast<int>(p)];
}

PlaneGrid::PlaneGrid(AxisPair axes_, int res_u_, int res_v_, int rank_, int channels_)
    : axes(axes_), res_u(res_u_), res_v(res_v_), rank(rank_), channels(channels_) {
    if (res_u < 2 || res_v < 2) throw ConfigError("PlaneGrid: resolution must be >= 2");
    if (rank < 1 || channels < 1) throw ConfigError("PlaneGrid: rank and channels must be >= 1");
    data = ParamTensor(std::string("plane_") + to_string(axes),
                       {static_cast<std::size_t>(res_u), static_cast<std::size_t>(res_v),
                        static_cast<std::size_t>(rank * channels)});
}

BilerpStencil bilerp_stencil(int res_u, int res_v, double u, double v) {
    const double gu = clamp01(u) * (res_u - 1);
    const double gv = clamp01(v) * (res_v - 1);
    const int i0 = std::min(static_cast<int>(gu), res_u - 2);
    const int j0 = std::min(static_cast<int>(gv), res_v - 2);
    const double fu = gu - i0;
    const double fv = gv - j0;
    BilerpStencil s;
    const auto base = static_cast<std::size_t>(i0) * res_v + j0;
    s.offset = {base, base + 1, base + res_v, base + res_v + 1};
    s.weight = {(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv};
    return s;
}

std::vector<double> bilerp(const PlaneGrid& plane, double u, double v) {
    if (!std::isfinite(u) || !std::isfinite(v)) throw ArgumentError("bilerp: non-finite coordinate");
    const BilerpStencil s = bilerp_stencil(plane.res_u, plane.res_v, u, v);
    const int depth = plane.depth();
    std::vector<double> out(depth, 0.0);
    for (int k = 0; k < 4; ++k) {
        const double* d = plane.data.values.data() + s.offset[k] * depth;
        for (int c = 0; c < depth; ++c) out[c] += s.weight[k] * d[c];
    }
    return out;
}

void GridConfig::validate() const {
    if (spatial_res < 2) throw ConfigError("GridConfig: spatial_res must be >= 2");
    if (spatial_res_final < spatial_res) throw ConfigError("GridConfig: spatial_res_final < spatial_res");
    if (time_res_init < 2) throw ConfigError("GridConfig: time_res_init must be >= 2");
    if (time_res_final < time_res_init) throw ConfigError("GridConfig: time_res_final < time_res_init");
    for (int r : ranks) {
        if (r < 1) throw ConfigError("GridConfig: ranks must be >= 1");
    }
    if (channels < 1) throw ConfigError("GridConfig: channels must be >= 1");
}

HexPlaneField HexPlaneField::from_parts(const Aabb& aabb, int spatial_res, int time_res, std::array<int, 3> ranks,
                                        int channels) {
    if (aabb.degenerate()) throw ConfigError("HexPlaneField: degenerate aabb");
    HexPlaneField f;
    f.aabb_ = aabb;
    f.spatial_res_ = spatial_res;
    f.time_res_ = time_res;
    f.ranks_ = ranks;
    f.channels_ = channels;
    f.allocate();
    return f;
}

void HexPlaneField::allocate() {
    for (int k = 0; k < 6; ++k) {
        const auto pair = static_cast<AxisPair>(k);
        planes_[k] = PlaneGrid(pair, axis_res(u_axis(pair), spatial_res_, time_res_),
                               axis_res(v_axis(pair), spatial_res_, time_res_), ranks_[k / 2], channels_);
    }
    for (int g = 0; g < 3; ++g) {
        vectors_[g] = ParamTensor("basis_" + std::to_string(g + 1),
                                  {static_cast<std::size_t>(ranks_[g]), static_cast<std::size_t>(channels_)}, 1.0);
    }
}

HexPlaneField::HexPlaneField(const GridConfig& config, const Aabb& aabb, SeededRng& rng) {
    config.validate();
    *this = from_parts(aabb, config.spatial_res, config.time_res_init, config.ranks, config.channels);
    for (auto& p : planes_) {
        for (double& v : p.data.values) v = rng.uniform(config.init_mean - config.init_spread,
                                                         config.init_mean + config.init_spread);
    }
}

Eigen::Vector4d HexPlaneField::normalize(const Vec3& x, double t) const {
    Eigen::Vector4d q;
    for (int a = 0; a < 3; ++a) q[a] = clamp01((x[a] - aabb_.min[a]) / (aabb_.max[a] - aabb_.min[a]));
    q[3] = clamp01(t);
    return q;
}

std::vector<double> HexPlaneField::query(const Vec3& x, double t) const {
    if (!x.allFinite() || !std::isfinite(t)) throw ArgumentError("HexPlaneField::query: non-finite position or time");
    std::vector<double> out(channels_);
    query_unit(normalize(x, t), out);
    return out;
}

namespace {

struct Corners {
    std::array<const double*, 4> ptr{};
    std::array<double, 4> w{};
};

Corners corners(const PlaneGrid& p, const Eigen::Vector4d& q) {
    const BilerpStencil s =
        bilerp_stencil(p.res_u, p.res_v, q[static_cast<int>(u_axis(p.axes))], q[static_cast<int>(v_axis(p.axes))]);
    Corners c;
    for (int k = 0; k < 4; ++k) {
        c.ptr[k] = p.data.values.data() + s.offset[k] * p.depth();
        c.w[k] = s.weight[k];
    }
    return c;
}

inline double lerp4(const Corners& s, int c) {
    return s.w[0] * s.ptr[0][c] + s.w[1] * s.ptr[1][c] + s.w[2] * s.ptr[2][c] + s.w[3] * s.ptr[3][c];
}

}  // namespace

void HexPlaneField::query_unit(const Eigen::Vector4d& q, std::span<double> out) const {
    const int F = channels_;
    std::fill(out.begin(), out.end(), 0.0);
    for (int g = 0; g < 3; ++g) {
        const Corners sa = corners(planes_[2 * g], q);
        const Corners sb = corners(planes_[2 * g + 1], q);
        const double* vec = vectors_[g].values.data();
        for (int r = 0; r < ranks_[g]; ++r) {
            for (int f = 0; f < F; ++f) {
                const int c = r * F + f;
                out[f] += lerp4(sa, c) * lerp4(sb, c) * vec[c];
            }
        }
    }
}

void HexPlaneField::query_backward_group(int g, const Eigen::Vector4d& q, std::span<const double> d_out) {
    const int F = channels_;
    PlaneGrid& a = planes_[2 * g];
    PlaneGrid& b = planes_[2 * g + 1];
    const Corners sa = corners(a, q);
    const Corners sb = corners(b, q);
    std::array<double*, 4> ga{}, gb{};
    for (int k = 0; k < 4; ++k) {
        ga[k] = a.data.grad.data() + (sa.ptr[k] - a.data.values.data());
        gb[k] = b.data.grad.data() + (sb.ptr[k] - b.data.values.data());
    }
    const double* vec = vectors_[g].values.data();
    double* dvec = vectors_[g].grad.data();
    for (int r = 0; r < ranks_[g]; ++r) {
        for (int f = 0; f < F; ++f) {
            const double go = d_out[f];
            const int c = r * F + f;
            const double fa = lerp4(sa, c);
            const double fb = lerp4(sb, c);
            dvec[c] += go * fa * fb;
            const double da = go * fb * vec[c];
            const double db = go * fa * vec[c];
            for (int k = 0; k < 4; ++k) {
                ga[k][c] += da * sa.w[k];
                gb[k][c] += db * sb.w[k];
            }
        }
    }
}

void HexPlaneField::query_backward(const Eigen::Vector4d& q, std::span<const double> d_out) {
    for (int g = 0; g < 3; ++g) query_backward_group(g, q, d_out);
}

namespace {

// Mean over all adjacent pairs (both axes, every channel) of the squared difference.
double plane_tv(const PlaneGrid& p, double weight, double* grad) {
    const int depth = p.depth();
    const std::size_t pairs = static_cast<std::size_t>(depth) *
                              (static_cast<std::size_t>(p.res_u - 1) * p.res_v +
                               static_cast<std::size_t>(p.res_u) * (p.res_v - 1));
    const double inv = 1.0 / static_cast<double>(pairs);
    const double scale = 2.0 * weight * inv;
    const double* d = p.data.values.data();
    double sum = 0.0;
    auto pair = [&](std::size_t k, std::size_t k2) {
        for (int c = 0; c < depth; ++c) {
            const double diff = d[k2 + c] - d[k + c];
            sum += diff * diff;
            if (grad) {
                grad[k2 + c] += scale * diff;
                grad[k + c] -= scale * diff;
            }
        }
    };
    for (int i = 0; i < p.res_u; ++i) {
        for (int j = 0; j < p.res_v; ++j) {
            const std::size_t k = p.index(0, i, j);
            if (i + 1 < p.res_u) pair(k, p.index(0, i + 1, j));
            if (j + 1 < p.res_v) pair(k, p.index(0, i, j + 1));
        }
    }
    return sum * inv;
}

}  // namespace

double HexPlaneField::tv_loss() const {
    double total = 0.0;
    for (const auto& p : planes_) total += plane_tv(p, 0.0, nullptr);
    return total;
}

double HexPlaneField::tv_backward(double weight) {
    double total = 0.0;
    for (auto& p : planes_) total += plane_tv(p, weight, p.data.grad.data());
    return total;
}

HexPlaneField HexPlaneField::upsampled(int new_spatial_res, int new_time_res) const {
    if (new_spatial_res < spatial_res_ || new_time_res < time_res_) {
        throw ArgumentError("HexPlaneField::upsampled: resolution may not shrink");
    }
    HexPlaneField out = from_parts(aabb_, new_spatial_res, new_time_res, ranks_, channels_);
    for (int k = 0; k < 6; ++k) {
        const PlaneGrid& src = planes_[k];
        PlaneGrid& dst = out.planes_[k];
        if (src.res_u == dst.res_u && src.res_v == dst.res_v) {
            dst.data.values = src.data.values;
            continue;
        }
        for (int i = 0; i < dst.res_u; ++i) {
            const double u = static_cast<double>(i) / (dst.res_u - 1);
            for (int j = 0; j < dst.res_v; ++j) {
                const double v = static_cast<double>(j) / (dst.res_v - 1);
                const std::vector<double> vals = bilerp(src, u, v);
                std::copy(vals.begin(), vals.end(), dst.data.values.begin() + dst.index(0, i, j));
            }
        }
    }
    for (int g = 0; g < 3; ++g) out.vectors_[g].values = vectors_[g].values;
    return out;
}

std::vector<ParamTensor*> HexPlaneField::parameters() {
    std::vector<ParamTensor*> out;
    for (auto& p : planes_) out.push_back(&p.data);
    for (auto& v : vectors_) out.push_back(&v);
    return out;
}

std::vector<const ParamTensor*> HexPlaneField::parameters() const {
    std::vector<const ParamTensor*> out;
    for (const auto& p : planes_) out.push_back(&p.data);
    for (const auto& v : vectors_) out.push_back(&v);
    return out;
}

}  // namespace hdrhex
