#include "hdrhex/synthdata.hpp"

#include "hdrhex/decoder.hpp"
#include "hdrhex/error.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace hdrhex {

using nlohmann::json;

Vec3 Trajectory::at(double t) const {
    if (kind == Kind::Linear) return base + motion * t;
    return base + motion * std::sin(2.0 * std::numbers::pi * frequency * t + phase);
}

bool Primitive::contains(const Vec3& x, double t) const {
    const Vec3 rel = x - center.at(t);
    if (shape == Shape::Sphere) return rel.squaredNorm() <= extent.x() * extent.x();
    return (rel.cwiseAbs().array() <= extent.array()).all();
}

Vec3 Primitive::half_bound() const {
    return shape == Shape::Sphere ? Vec3::Constant(extent.x()) : extent;
}

void SceneSpec::validate() const {
    if (aabb.degenerate()) throw ConfigError("SceneSpec: degenerate aabb");
    bool bright = false;
    bool dark = false;
    for (std::size_t i = 0; i < primitives.size(); ++i) {
        const Primitive& p = primitives[i];
        if (!(p.density >= 0.0) || !(p.radiance.minCoeff() >= 0.0) || !(p.extent.minCoeff() > 0.0)) {
            throw ConfigError("SceneSpec: primitive " + std::to_string(i) + " has negative parameters");
        }
        for (int k = 0; k <= 200; ++k) {
            const double t = k / 200.0;
            const Vec3 c = p.center.at(t);
            const Vec3 h = p.half_bound();
            if (!aabb.contains(c - h) || !aabb.contains(c + h)) {
                throw ConfigError("SceneSpec: primitive " + std::to_string(i) + " leaves the aabb");
            }
        }
        bright = bright || p.radiance.maxCoeff() > 1.0;
        dark = dark || p.radiance.maxCoeff() < 0.05;
    }
    if (!bright || !dark) throw ConfigError("SceneSpec: need one radiance above 1 and one primitive below 0.05");
}

namespace {

Primitive sphere(Trajectory c, double r, Vec3 radiance, double density = 40.0) {
    return {Primitive::Shape::Sphere, c, Vec3::Constant(r), radiance, density};
}

Primitive box(Trajectory c, Vec3 half, Vec3 radiance, double density = 40.0) {
    return {Primitive::Shape::Box, c, half, radiance, density};
}

Trajectory fixed(Vec3 p) { return {Trajectory::Kind::Linear, p, Vec3::Zero(), 1.0, 0.0}; }
Trajectory linear(Vec3 p, Vec3 v) { return {Trajectory::Kind::Linear, p, v, 1.0, 0.0}; }
Trajectory wave(Vec3 p, Vec3 amp, double f, double phase) { return {Trajectory::Kind::Sinusoidal, p, amp, f, phase}; }

}  // namespace

// Rigid motion: a lamp, a dark base, a sliding block and a bobbing ball.
SceneSpec SceneSpec::lego_like() {
    SceneSpec s;
    s.name = "lego-like";
    s.primitives = {
        box(fixed({0.0, -0.55, 0.0}), {0.75, 0.08, 0.6}, {0.03, 0.035, 0.045}),
        box(fixed({-0.45, 0.3, -0.25}), {0.2, 0.2, 0.2}, {40.0, 36.0, 30.0}),
        box(linear({0.55, -0.27, 0.2}, {-0.6, 0.0, 0.0}), {0.2, 0.2, 0.2}, {0.9, 0.35, 0.12}),
        sphere(wave({0.1, 0.2, 0.3}, {0.0, 0.2, 0.0}, 1.0, 0.0), 0.22, {0.2, 0.6, 1.5}),
        sphere(fixed({0.35, 0.45, -0.35}), 0.18, {0.5, 2.5, 0.6}),
    };
    s.validate();
    return s;
}

// Non-rigid: a body whose limbs and head move independently.
SceneSpec SceneSpec::mutant_like() {
    SceneSpec s;
    s.name = "mutant-like";
    s.primitives = {
        box(fixed({0.0, -0.6, 0.0}), {0.7, 0.07, 0.6}, {0.025, 0.03, 0.04}),
        sphere(fixed({0.0, -0.05, 0.0}), 0.33, {1.2, 0.8, 0.6}),
        sphere(wave({0.0, 0.42, 0.0}, {0.12, 0.05, 0.0}, 1.0, 0.0), 0.17, {2.0, 1.6, 1.3}),
        box(wave({0.0, 0.47, 0.14}, {0.12, 0.05, 0.0}, 1.0, 0.0), {0.05, 0.03, 0.04}, {50.0, 45.0, 38.0}, 60.0),
        sphere(wave({-0.5, 0.0, 0.1}, {0.0, 0.25, 0.1}, 1.0, 0.0), 0.13, {0.3, 1.1, 0.4}),
        sphere(wave({0.5, 0.0, 0.1}, {0.0, 0.25, -0.1}, 1.0, std::numbers::pi), 0.13, {0.3, 0.4, 1.2}),
        box(fixed({0.55, 0.35, -0.45}), {0.15, 0.15, 0.15}, {30.0, 28.0, 24.0}),
    };
    s.validate();
    return s;
}

SceneSpec SceneSpec::by_name(const std::string& name) {
    if (name == "lego-like") return lego_like();
    if (name == "mutant-like") return mutant_like();
    throw ArgumentError("unknown scene '" + name + "' (expected lego-like or mutant-like)");
}

SceneSample eval_scene(const SceneSpec& spec, const Vec3& x, double t) {
    SceneSample out;
    bool hit = false;
    for (const Primitive& p : spec.primitives) {
        if (p.contains(x, t) && (!hit || p.density > out.sigma)) {
            out.radiance = p.radiance;
            out.sigma = p.density;
            hit = true;
        }
    }
    return out;
}

Eigen::Matrix4d look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    const Vec3 z = (eye - target).normalized();
    const Vec3 x = up.cross(z).normalized();
    const Vec3 y = z.cross(x);
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 1>(0, 0) = x;
    m.block<3, 1>(0, 1) = y;
    m.block<3, 1>(0, 2) = z;
    m.block<3, 1>(0, 3) = eye;
    return m;
}

Camera CameraRig::at(double t) const {
    const double az = azimuth0 + sweep * (t - 0.5);
    const Vec3 eye = target + radius * Vec3(std::cos(elevation) * std::sin(az), std::sin(elevation),
                                            std::cos(elevation) * std::cos(az));
    Camera c;
    c.width = width;
    c.height = height;
    c.fx = 0.5 * width / std::tan(0.5 * fov_x);
    c.fy = c.fx;
    c.cx = 0.5 * width;
    c.cy = 0.5 * height;
    c.c2w = look_at(eye, target);
    return c;
}

GtCrf parse_gt_crf(const std::string& s) {
    if (s == "sigmoid") return GtCrf::Sigmoid;
    if (s == "skewed") return GtCrf::Skewed;
    throw ArgumentError("unknown ground-truth response '" + s + "' (expected sigmoid or skewed)");
}

const char* to_string(GtCrf c) { return c == GtCrf::Sigmoid ? "sigmoid" : "skewed"; }

double gt_response(GtCrf crf, double x) {
    if (crf == GtCrf::Sigmoid) return sigmoid(x);
    // Steeper and asymmetric; only used for the mismatched-response variant.
    return std::pow(sigmoid(1.4 * x), 0.8);
}

void CaptureSpec::validate() const {
    if (cameras.empty()) throw ConfigError("CaptureSpec: no cameras");
    if (motion_frames < 1 || test_frames < 0) throw ConfigError("CaptureSpec: bad frame counts");
    std::vector<double> distinct = evs;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw ConfigError("CaptureSpec: need at least two distinct exposure values");
    for (double e : evs) {
        if (!std::isfinite(e)) throw ConfigError("CaptureSpec: exposure values must be finite");
    }
    if (gt_samples < 1) throw ConfigError("CaptureSpec: gt_samples must be positive");
}

double CaptureSpec::ev_for(int camera, int frame) const {
    return evs[static_cast<std::size_t>(frame + camera) % evs.size()];
}

CaptureSpec CaptureSpec::arc(int cameras, int width, int height, std::vector<double> evs, int frames) {
    if (cameras < 1) throw ConfigError("CaptureSpec: need at least one camera");
    CaptureSpec c;
    c.motion_frames = frames;
    c.evs = std::move(evs);
    const double spacing = 0.6;
    for (int k = 0; k < cameras; ++k) {
        CameraRig rig;
        rig.id = k;
        rig.width = width;
        rig.height = height;
        rig.azimuth0 = spacing * (k - 0.5 * (cameras - 1));
        rig.sweep = cameras == 1 ? 1.0 : 0.5;
        c.cameras.push_back(rig);
    }
    return c;
}

void vary(SceneSpec& scene, CaptureSpec& capture, std::uint64_t seed) {
    SeededRng rng(seed);
    for (Primitive& p : scene.primitives) {
        if (p.center.kind == Trajectory::Kind::Sinusoidal) p.center.phase += rng.uniform(-0.3, 0.3);
    }
    for (CameraRig& r : capture.cameras) r.azimuth0 += rng.uniform(-0.05, 0.05);
    scene.validate();
}

double safe_log(double e) { return e > 0.0 ? std::max(std::log(e), -40.0) : -40.0; }

SceneRay render_scene_ray(const SceneSpec& spec, const Ray& ray, int samples, const OccupancyGrid* occupancy) {
    SeededRng unused(0);
    SampleBatch batch = sample_ray(ray, samples, unused, false);
    if (occupancy) batch = prune(batch, *occupancy, ray.t_cap);
    std::vector<Vec3> values(batch.size(), Vec3::Zero());
    std::vector<double> sigmas(batch.size(), 0.0);
    SceneRay out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!batch.mask[i]) continue;
        const SceneSample s = eval_scene(spec, batch.positions[i], ray.t_cap);
        values[i] = s.radiance;
        sigmas[i] = s.sigma;
        ++out.active_samples;
    }
    const CompositeResult r = volume_render(values, sigmas, batch.deltas);
    out.hdr = r.pixel;
    out.opacity = r.opacity;
    return out;
}

GtImages render_gt(const SceneSpec& spec, const Camera& camera, double t_cap, double ev, double near, double far,
                   int samples, GtCrf crf) {
    if (!std::isfinite(ev)) throw ArgumentError("render_gt: exposure value must be finite");
    camera.validate();
    GtImages out{Image(camera.width, camera.height), Image(camera.width, camera.height)};
    const double shift = ev * std::numbers::ln2;
    for (int y = 0; y < camera.height; ++y) {
        for (int x = 0; x < camera.width; ++x) {
            const Ray ray = generate_ray(camera, x, y, t_cap, 0, near, far);
            const SceneRay r = render_scene_ray(spec, ray, samples);
            for (int c = 0; c < 3; ++c) {
                out.hdr.at(x, y, c) = r.hdr[c];
                out.ldr.at(x, y, c) = quantize(gt_response(crf, safe_log(r.hdr[c]) + shift)) / 255.0;
            }
        }
    }
    return out;
}

std::vector<std::size_t> DatasetManifest::frames_in_split(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i].split == split) out.push_back(i);
    }
    return out;
}

const CameraRig& DatasetManifest::camera(int id) const {
    for (const CameraRig& r : cameras) {
        if (r.id == id) return r;
    }
    throw IndexError("no camera with id " + std::to_string(id));
}

bool DatasetManifest::operator==(const DatasetManifest& o) const {
    return version == o.version && scene == o.scene && gt_crf == o.gt_crf && aabb.min == o.aabb.min &&
           aabb.max == o.aabb.max && near == o.near && far == o.far && evs == o.evs && cameras == o.cameras &&
           frames == o.frames;
}

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

json to_json(const Camera& c) {
    json rows = json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({c.c2w(r, 0), c.c2w(r, 1), c.c2w(r, 2), c.c2w(r, 3)});
    return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height},
            {"c2w", rows}};
}

Camera camera_from_json(const json& j) {
    Camera c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    const json& rows = j.at("c2w");
    if (!rows.is_array() || rows.size() != 4) throw std::invalid_argument("c2w must be 4x4");
    for (int r = 0; r < 4; ++r) {
        if (!rows[r].is_array() || rows[r].size() != 4) throw std::invalid_argument("c2w must be 4x4");
        for (int k = 0; k < 4; ++k) c.c2w(r, k) = rows[r][k].get<double>();
    }
    return c;
}

json to_json(const CameraRig& r) {
    return {{"id", r.id},
            {"radius", r.radius},
            {"elevation", r.elevation},
            {"azimuth0", r.azimuth0},
            {"sweep", r.sweep},
            {"target", vec_json(r.target)},
            {"fov_x", r.fov_x},
            {"width", r.width},
            {"height", r.height}};
}

CameraRig rig_from_json(const json& j) {
    CameraRig r;
    r.id = j.at("id").get<int>();
    r.radius = j.at("radius").get<double>();
    r.elevation = j.at("elevation").get<double>();
    r.azimuth0 = j.at("azimuth0").get<double>();
    r.sweep = j.at("sweep").get<double>();
    r.target = vec_from(j.at("target"));
    r.fov_x = j.at("fov_x").get<double>();
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
    return r;
}

json to_json(const DatasetManifest& m) {
    json frames = json::array();
    for (const FrameRecord& f : m.frames) {
        json jf = {{"image_index", f.image_index}, {"camera_id", f.camera_id}, {"time", f.time},
                   {"camera", to_json(f.camera)},   {"ldr_path", f.ldr_path},   {"split", f.split}};
        jf["ev"] = f.ev ? json(*f.ev) : json(nullptr);
        if (!f.hdr_path.empty()) jf["hdr_path"] = f.hdr_path;
        frames.push_back(std::move(jf));
    }
    json rigs = json::array();
    for (const CameraRig& r : m.cameras) rigs.push_back(to_json(r));
    return {{"version", m.version},
            {"scene", m.scene},
            {"gt_crf", m.gt_crf},
            {"aabb", {{"min", vec_json(m.aabb.min)}, {"max", vec_json(m.aabb.max)}}},
            {"near", m.near},
            {"far", m.far},
            {"evs", m.evs},
            {"cameras", rigs},
            {"frames", frames}};
}

DatasetManifest manifest_from_json(const json& j, const std::string& source) {
    DatasetManifest m;
    try {
        m.version = j.at("version").get<int>();
        if (m.version != DatasetManifest::kVersion) {
            throw ParseError(source, "unsupported manifest version " + std::to_string(m.version));
        }
        m.scene = j.at("scene").get<std::string>();
        m.gt_crf = j.value("gt_crf", std::string("sigmoid"));
        m.aabb.min = vec_from(j.at("aabb").at("min"));
        m.aabb.max = vec_from(j.at("aabb").at("max"));
        m.near = j.at("near").get<double>();
        m.far = j.at("far").get<double>();
        m.evs = j.at("evs").get<std::vector<double>>();
        for (const json& r : j.at("cameras")) m.cameras.push_back(rig_from_json(r));
        for (const json& jf : j.at("frames")) {
            FrameRecord f;
            f.image_index = jf.at("image_index").get<std::size_t>();
            f.camera_id = jf.at("camera_id").get<int>();
            f.time = jf.at("time").get<double>();
            if (jf.contains("ev") && !jf.at("ev").is_null()) f.ev = jf.at("ev").get<double>();
            f.camera = camera_from_json(jf.at("camera"));
            f.ldr_path = jf.at("ldr_path").get<std::string>();
            f.hdr_path = jf.value("hdr_path", std::string());
            f.split = jf.value("split", std::string("train"));
            m.frames.push_back(std::move(f));
        }
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(source, std::string("malformed manifest: ") + e.what());
    }
    for (std::size_t i = 0; i < m.frames.size(); ++i) {
        if (m.frames[i].image_index != i) throw ParseError(source, "image indices must be dense 0..M-1 in order");
    }
    if (!(m.near > 0.0) || !(m.far > m.near)) throw ParseError(source, "need 0 < near < far");
    return m;
}

Dataset::Dataset(std::filesystem::path root, DatasetManifest manifest)
    : root_(std::move(root)), manifest_(std::move(manifest)) {}

Image Dataset::load_ldr(std::size_t frame) const {
    if (frame >= manifest_.frames.size()) throw IndexError("frame " + std::to_string(frame) + " out of range");
    const FrameRecord& f = manifest_.frames[frame];
    const ByteImage bytes = read_png(root_ / f.ldr_path);
    if (bytes.width != f.camera.width || bytes.height != f.camera.height) {
        throw ParseError((root_ / f.ldr_path).string(), "image size does not match the camera");
    }
    return from_bytes(bytes);
}

std::optional<Image> Dataset::load_hdr(std::size_t frame) const {
    if (frame >= manifest_.frames.size()) throw IndexError("frame " + std::to_string(frame) + " out of range");
    const FrameRecord& f = manifest_.frames[frame];
    if (f.hdr_path.empty()) return std::nullopt;
    return read_pfm(root_ / f.hdr_path);
}

GeneratedDataset generate_dataset(const SceneSpec& spec, const CaptureSpec& capture) {
    spec.validate();
    capture.validate();
    GeneratedDataset out;
    DatasetManifest& m = out.manifest;
    m.scene = spec.name;
    m.gt_crf = to_string(capture.crf);
    m.aabb = spec.aabb;
    m.evs = capture.evs;
    m.cameras = capture.cameras;
    const double half_diag = 0.5 * (spec.aabb.max - spec.aabb.min).norm();
    double r_min = capture.cameras.front().radius;
    double r_max = r_min;
    for (const CameraRig& r : capture.cameras) {
        r_min = std::min(r_min, r.radius);
        r_max = std::max(r_max, r.radius);
    }
    m.near = std::max(0.05, r_min - half_diag);
    m.far = r_max + half_diag;

    const int ncam = static_cast<int>(capture.cameras.size());
    auto add = [&](int cam, int k, double t, const std::string& split) {
        FrameRecord f;
        f.image_index = m.frames.size();
        f.camera_id = capture.cameras[static_cast<std::size_t>(cam)].id;
        f.time = t;
        f.ev = capture.ev_for(cam, k);
        f.camera = capture.cameras[static_cast<std::size_t>(cam)].at(t);
        f.split = split;
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04zu", split.c_str(), f.image_index);
        f.ldr_path = std::string("ldr/") + name + ".png";
        if (split == "test") f.hdr_path = std::string("hdr/") + name + ".pfm";
        m.frames.push_back(std::move(f));
    };
    for (int k = 0; k < capture.motion_frames; ++k) {
        const double t = capture.motion_frames == 1 ? 0.0 : static_cast<double>(k) / (capture.motion_frames - 1);
        for (int c = 0; c < ncam; ++c) add(c, k, t, "train");
    }
    for (int k = 0; k < capture.test_frames; ++k) add(k % ncam, k, (k + 0.5) / capture.test_frames, "test");

    const std::size_t n = m.frames.size();
    out.ldr.resize(n);
    out.hdr.resize(n);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        const FrameRecord& f = m.frames[i];
        GtImages img = render_gt(spec, f.camera, f.time, *f.ev, m.near, m.far, capture.gt_samples, capture.crf);
        out.ldr[i] = to_bytes(img.ldr);
        if (!f.hdr_path.empty()) out.hdr[i] = std::move(img.hdr);
    }
    return out;
}

void write_dataset(const GeneratedDataset& data, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "ldr", ec);
    fs::create_directories(dir / "hdr", ec);
    if (ec) throw ParseError(dir.string(), "cannot create dataset directory: " + ec.message());
    const DatasetManifest& m = data.manifest;
    for (std::size_t i = 0; i < m.frames.size(); ++i) {
        write_png(dir / m.frames[i].ldr_path, data.ldr[i]);
        if (!m.frames[i].hdr_path.empty()) write_pfm(dir / m.frames[i].hdr_path, data.hdr[i]);
    }
    const fs::path manifest = dir / "manifest.json";
    std::ofstream os(manifest);
    if (!os) throw ParseError(manifest.string(), "cannot open for writing");
    os << to_json(m).dump(2) << '\n';
    if (!os) throw ParseError(manifest.string(), "write failed");
}

Dataset read_dataset(const std::filesystem::path& dir) {
    const std::filesystem::path path = dir / "manifest.json";
    std::ifstream is(path);
    if (!is) throw ParseError(path.string(), "cannot open manifest");
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string(), std::string("malformed JSON: ") + e.what());
    }
    DatasetManifest m = manifest_from_json(j, path.string());
    for (const FrameRecord& f : m.frames) {
        if (!std::filesystem::exists(dir / f.ldr_path)) throw ParseError((dir / f.ldr_path).string(), "missing file");
        if (!f.hdr_path.empty() && !std::filesystem::exists(dir / f.hdr_path)) {
            throw ParseError((dir / f.hdr_path).string(), "missing file");
        }
    }
    return Dataset(dir, std::move(m));
}

}  // namespace hdrhex
