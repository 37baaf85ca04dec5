#pragma once

#include "hdrhex/hexplane.hpp"
#include "hdrhex/image.hpp"
#include "hdrhex/render.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hdrhex {

struct Trajectory {
    enum class Kind { Linear, Sinusoidal };

    Kind kind = Kind::Linear;
    Vec3 base = Vec3::Zero();
    /// Linear: velocity per unit time. Sinusoidal: amplitude per axis.
    Vec3 motion = Vec3::Zero();
    double frequency = 1.0;
    double phase = 0.0;

    Vec3 at(double t) const;
    bool operator==(const Trajectory&) const = default;
};

struct Primitive {
    enum class Shape { Sphere, Box };

    Shape shape = Shape::Sphere;
    Trajectory center{};
    /// Sphere radius in x; box half-sizes.
    Vec3 extent = Vec3::Constant(0.1);
    Vec3 radiance = Vec3::Ones();
    double density = 40.0;

    bool contains(const Vec3& x, double t) const;
    /// Half-size of the axis-aligned bound around the center.
    Vec3 half_bound() const;
    bool operator==(const Primitive&) const = default;
};

struct SceneSpec {
    std::string name;
    std::vector<Primitive> primitives;
    Aabb aabb{};

    /// Throws ConfigError when a primitive leaves the aabb or the radiance
    /// range lacks either a component above 1 or a primitive below 0.05.
    void validate() const;

    static SceneSpec lego_like();
    static SceneSpec mutant_like();
    static SceneSpec by_name(const std::string& name);
};

struct SceneSample {
    Vec3 radiance = Vec3::Zero();
    double sigma = 0.0;
};

/// Radiance and density of the densest primitive containing x at time t.
SceneSample eval_scene(const SceneSpec& spec, const Vec3& x, double t);

/// Camera on an arc around `target`, sweeping in azimuth over time.
struct CameraRig {
    int id = 0;
    double radius = 2.7;
    double elevation = 0.3;  // radians
    double azimuth0 = 0.0;   // radians, at t = 0.5
    double sweep = 1.0;      // radians over t in [0, 1]
    Vec3 target = Vec3::Zero();
    double fov_x = 0.75;  // radians
    int width = 64;
    int height = 64;

    Camera at(double t) const;
    bool operator==(const CameraRig&) const = default;
};

/// Camera-to-world pose at `eye` looking at `target`, +y up.
Eigen::Matrix4d look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitY());

enum class GtCrf { Sigmoid, Skewed };

GtCrf parse_gt_crf(const std::string& s);
const char* to_string(GtCrf c);
/// Ground-truth response used to synthesize LDR values from log(E) + ev ln 2.
double gt_response(GtCrf crf, double x);

struct CaptureSpec {
    std::vector<CameraRig> cameras;
    int motion_frames = 20;
    int test_frames = 4;
    std::vector<double> evs{-3.0, -1.0, 1.0};
    int gt_samples = 256;
    GtCrf crf = GtCrf::Sigmoid;

    void validate() const;
    /// Exposure value of (camera, frame): evs[(frame + camera) % |evs|].
    double ev_for(int camera, int frame) const;

    /// Arc rig with `cameras` views spaced around the front of the scene.
    static CaptureSpec arc(int cameras, int width, int height, std::vector<double> evs, int frames);
};

/// Seed-dependent variation of a preset: sinusoid phases shift by up to
/// 0.3 rad and each rig's azimuth by up to 0.05 rad.
void vary(SceneSpec& scene, CaptureSpec& capture, std::uint64_t seed);

/// Ray-marched ground truth of one ray through the analytic scene, using the
/// same quadrature as the learned renderer.
struct SceneRay {
    Vec3 hdr = Vec3::Zero();
    double opacity = 0.0;
    int active_samples = 0;
};
SceneRay render_scene_ray(const SceneSpec& spec, const Ray& ray, int samples, const OccupancyGrid* occupancy = nullptr);

/// log(E) floored at -40 for zero radiance.
double safe_log(double e);

struct GtImages {
    Image ldr;  // quantized to bytes / 255
    Image hdr;
};

GtImages render_gt(const SceneSpec& spec, const Camera& camera, double t_cap, double ev, double near, double far,
                   int samples = 256, GtCrf crf = GtCrf::Sigmoid);

struct FrameRecord {
    std::size_t image_index = 0;
    int camera_id = 0;
    double time = 0.0;
    std::optional<double> ev;
    Camera camera{};
    std::string ldr_path;
    std::string hdr_path;  // empty when no reference is stored
    std::string split = "train";

    bool operator==(const FrameRecord&) const = default;
};

struct DatasetManifest {
    static constexpr int kVersion = 1;

    int version = kVersion;
    std::string scene;
    std::string gt_crf = "sigmoid";
    Aabb aabb{};
    double near = 0.1;
    double far = 1.0;
    std::vector<double> evs;
    std::vector<CameraRig> cameras;
    std::vector<FrameRecord> frames;

    std::vector<std::size_t> frames_in_split(const std::string& split) const;
    const CameraRig& camera(int id) const;
    bool operator==(const DatasetManifest&) const;
};

nlohmann::json to_json(const DatasetManifest& m);
/// Throws ParseError naming `source` for missing or mistyped fields.
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::string& source);

nlohmann::json to_json(const Camera& c);
Camera camera_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CameraRig& r);
CameraRig rig_from_json(const nlohmann::json& j);

/// Manifest plus lazily loaded images.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::filesystem::path root, DatasetManifest manifest);

    const DatasetManifest& manifest() const noexcept { return manifest_; }
    const std::filesystem::path& root() const noexcept { return root_; }

    /// LDR values as byte / 255.
    Image load_ldr(std::size_t frame) const;
    std::optional<Image> load_hdr(std::size_t frame) const;

private:
    std::filesystem::path root_;
    DatasetManifest manifest_;
};

struct GeneratedDataset {
    DatasetManifest manifest;
    std::vector<ByteImage> ldr;
    std::vector<Image> hdr;  // empty images where no reference is kept
};

/// Renders every frame of the capture. Training frames sit at t = f / (F - 1),
/// test frames at t = (k + 0.5) / K and keep HDR references.
GeneratedDataset generate_dataset(const SceneSpec& spec, const CaptureSpec& capture);

void write_dataset(const GeneratedDataset& data, const std::filesystem::path& dir);
/// Throws ParseError for a missing manifest, malformed JSON or missing image files.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace hdrhex
