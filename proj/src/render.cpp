#include "hdrhex/render.hpp"

#include "hdrhex/error.hpp"

#include <algorithm>
#include <cmath>

namespace hdrhex {

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("Camera: focal lengths must be positive");
    if (width < 1 || height < 1) throw ConfigError("Camera: empty image");
    const Eigen::Matrix3d r = c2w.topLeftCorner<3, 3>();
    if (((r.transpose() * r) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
        throw ConfigError("Camera: rotation block is not orthonormal");
    }
}

Ray generate_ray(const Camera& camera, int px, int py, double t_cap, std::size_t image_index, double near,
                 double far) {
    if (px < 0 || px >= camera.width || py < 0 || py >= camera.height) {
        throw ArgumentError("generate_ray: pixel outside the frame");
    }
    if (!(near > 0.0) || !(far > near)) throw ArgumentError("generate_ray: need 0 < near < far");
    const Vec3 dir_cam((px + 0.5 - camera.cx) / camera.fx, -(py + 0.5 - camera.cy) / camera.fy, -1.0);
    Ray ray;
    ray.d = (camera.c2w.topLeftCorner<3, 3>() * dir_cam).normalized();
    ray.o = camera.c2w.topRightCorner<3, 1>();
    ray.t_cap = t_cap;
    ray.near = near;
    ray.far = far;
    ray.image_index = image_index;
    return ray;
}

std::size_t SampleBatch::active() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void sample_depths(double near, double far, int n, SeededRng* rng, std::span<double> depths,
                   std::span<double> deltas) {
    const double width = (far - near) / n;
    for (int i = 0; i < n; ++i) {
        const double u = rng ? rng->uniform() : 0.5;
        depths[i] = near + (i + u) * width;
    }
    double lo = near;
    for (int i = 0; i < n; ++i) {
        const double hi = (i + 1 < n) ? 0.5 * (depths[i] + depths[i + 1]) : far;
        deltas[i] = hi - lo;
        lo = hi;
    }
}

SampleBatch sample_ray(const Ray& ray, int n, SeededRng& rng, bool stratified) {
    if (n < 1) throw ArgumentError("sample_ray: need at least one sample");
    SampleBatch b;
    b.depths.resize(n);
    b.deltas.resize(n);
    sample_depths(ray.near, ray.far, n, stratified ? &rng : nullptr, b.depths, b.deltas);
    b.positions.resize(n);
    for (int i = 0; i < n; ++i) b.positions[i] = ray.o + b.depths[i] * ray.d;
    b.mask.assign(n, 1);
    return b;
}

CompositeResult volume_render(std::span<const Vec3> values, std::span<const double> sigmas,
                              std::span<const double> deltas, std::span<const double> depths, double far) {
    const std::size_t n = sigmas.size();
    if (values.size() != n || deltas.size() != n || (!depths.empty() && depths.size() != n)) {
        throw ArgumentError("volume_render: length mismatch");
    }
    CompositeResult out;
    out.weights.assign(n, 0.0);
    double transmittance = 1.0;
    double depth_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(sigmas[i] >= 0.0) || !(deltas[i] >= 0.0)) {
            throw ArgumentError("volume_render: negative density or segment length");
        }
        const double alpha = -std::expm1(-sigmas[i] * deltas[i]);
        const double w = transmittance * alpha;
        out.weights[i] = w;
        out.pixel += w * values[i];
        out.opacity += w;
        if (!depths.empty()) depth_sum += w * depths[i];
        transmittance *= 1.0 - alpha;
    }
    if (!depths.empty()) out.depth = out.opacity > 1e-10 ? depth_sum / std::max(out.opacity, 1e-10) : far;
    return out;
}

void volume_render_backward(std::span<const Vec3> values, std::span<const double> sigmas,
                            std::span<const double> deltas, const Vec3& d_pixel, std::span<Vec3> d_values,
                            std::span<double> d_sigmas) {
    const std::size_t n = sigmas.size();
    std::vector<double> t_after(n);
    std::vector<double> w(n);
    double transmittance = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double alpha = -std::expm1(-sigmas[i] * deltas[i]);
        w[i] = transmittance * alpha;
        transmittance *= 1.0 - alpha;
        t_after[i] = transmittance;
    }
    double suffix = 0.0;  // sum_{i > k} w_i <g, v_i>
    for (std::size_t k = n; k-- > 0;) {
        const double gv = d_pixel.dot(values[k]);
        d_values[k] = w[k] * d_pixel;
        d_sigmas[k] = (t_after[k] * gv - suffix) * deltas[k];
        suffix += w[k] * gv;
    }
}

double tone_map(double radiance, double mu) {
    if (!(radiance >= 0.0)) throw ArgumentError("tone_map: radiance must be non-negative");
    if (!(mu > 0.0)) throw ArgumentError("tone_map: mu must be positive");
    return std::min(1.0, std::log1p(mu * radiance) / std::log1p(mu));
}

Vec3 tone_map(const Vec3& radiance, double mu) {
    return Vec3(tone_map(radiance[0], mu), tone_map(radiance[1], mu), tone_map(radiance[2], mu));
}

OccupancyGrid::OccupancyGrid(const Aabb& aabb, int res, int time_res)
    : aabb_(aabb), res_(res), time_res_(time_res) {
    if (res < 1 || time_res < 1) throw ConfigError("OccupancyGrid: resolution must be >= 1");
    cells_.assign(static_cast<std::size_t>(res) * res * res * time_res, 1);
}

bool OccupancyGrid::occupied_unit(const Eigen::Vector4d& q) const {
    auto cell = [](double u, int n) { return std::clamp(static_cast<int>(u * n), 0, n - 1); };
    return cells_[cell_index(cell(q[0], res_), cell(q[1], res_), cell(q[2], res_), cell(q[3], time_res_))] != 0;
}

bool OccupancyGrid::occupied(const Vec3& x, double t) const {
    Eigen::Vector4d q;
    for (int a = 0; a < 3; ++a) q[a] = std::clamp((x[a] - aabb_.min[a]) / (aabb_.max[a] - aabb_.min[a]), 0.0, 1.0);
    q[3] = std::clamp(t, 0.0, 1.0);
    return occupied_unit(q);
}

void OccupancyGrid::fill(bool value) { std::fill(cells_.begin(), cells_.end(), value ? 1 : 0); }

void OccupancyGrid::update(const DensityFn& density, double tau, int subdiv, int dilate) {
    if (subdiv < 1 || dilate < 0) throw ArgumentError("OccupancyGrid::update: bad sampling parameters");
    tau_ = tau;
    const int ns = res_ * subdiv + 1;  // spatial lattice nodes per axis
    const int nt = time_res_ + 1;
    std::vector<double> node_sigma(static_cast<std::size_t>(ns) * ns * ns * nt);

    // Evaluate one time slice at a time to bound memory.
    const std::size_t slice = static_cast<std::size_t>(ns) * ns * ns;
    for (int it = 0; it < nt; ++it) {
        RowMatrix pts(static_cast<Eigen::Index>(slice), 4);
        std::size_t k = 0;
        for (int iz = 0; iz < ns; ++iz) {
            for (int iy = 0; iy < ns; ++iy) {
                for (int ix = 0; ix < ns; ++ix, ++k) {
                    pts(k, 0) = static_cast<double>(ix) / (ns - 1);
                    pts(k, 1) = static_cast<double>(iy) / (ns - 1);
                    pts(k, 2) = static_cast<double>(iz) / (ns - 1);
                    pts(k, 3) = static_cast<double>(it) / (nt - 1);
                }
            }
        }
        const Eigen::VectorXd s = density(pts);
        std::copy(s.data(), s.data() + slice, node_sigma.begin() + it * slice);
    }

    auto node = [&](int ix, int iy, int iz, int it) {
        return node_sigma[((static_cast<std::size_t>(it) * ns + iz) * ns + iy) * ns + ix];
    };
    std::vector<std::uint8_t> raw(cells_.size(), 0);
#pragma omp parallel for schedule(static)
    for (int it = 0; it < time_res_; ++it) {
        for (int cz = 0; cz < res_; ++cz) {
            for (int cy = 0; cy < res_; ++cy) {
                for (int cx = 0; cx < res_; ++cx) {
                    double m = 0.0;
                    for (int dt = 0; dt <= 1; ++dt) {
                        for (int z = cz * subdiv; z <= (cz + 1) * subdiv; ++z) {
                            for (int y = cy * subdiv; y <= (cy + 1) * subdiv; ++y) {
                                for (int x = cx * subdiv; x <= (cx + 1) * subdiv; ++x) {
                                    m = std::max(m, node(x, y, z, it + dt));
                                }
                            }
                        }
                    }
                    raw[cell_index(cx, cy, cz, it)] = m >= tau ? 1 : 0;
                }
            }
        }
    }

    if (dilate == 0) {
        cells_ = std::move(raw);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int it = 0; it < time_res_; ++it) {
        for (int cz = 0; cz < res_; ++cz) {
            for (int cy = 0; cy < res_; ++cy) {
                for (int cx = 0; cx < res_; ++cx) {
                    std::uint8_t v = 0;
                    for (int t = std::max(0, it - dilate); t <= std::min(time_res_ - 1, it + dilate) && !v; ++t) {
                        for (int z = std::max(0, cz - dilate); z <= std::min(res_ - 1, cz + dilate) && !v; ++z) {
                            for (int y = std::max(0, cy - dilate); y <= std::min(res_ - 1, cy + dilate) && !v; ++y) {
                                for (int x = std::max(0, cx - dilate); x <= std::min(res_ - 1, cx + dilate); ++x) {
                                    if (raw[cell_index(x, y, z, t)]) {
                                        v = 1;
                                        break;
                                    }
                                }
                            }
                        }
                    }
                    cells_[cell_index(cx, cy, cz, it)] = v;
                }
            }
        }
    }
}

double OccupancyGrid::occupied_fraction() const {
    if (cells_.empty()) return 0.0;
    return static_cast<double>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1})) /
           static_cast<double>(cells_.size());
}

SampleBatch prune(const SampleBatch& batch, const OccupancyGrid& grid, double t_cap) {
    SampleBatch out = batch;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out.mask[i] && !grid.occupied(out.positions[i], t_cap)) out.mask[i] = 0;
    }
    return out;
}

}  // namespace hdrhex
