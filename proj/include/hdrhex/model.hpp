#pragma once

#include "hdrhex/decoder.hpp"
#include "hdrhex/exposure.hpp"
#include "hdrhex/hexplane.hpp"
#include "hdrhex/render.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hdrhex {

struct ModelConfig {
    GridConfig grid{};
    DecoderConfig decoder{};
    ExposureConfig exposure{};
    CrfVariant crf = CrfVariant::FixedSigmoid;
    std::vector<int> crf_hidden{16, 16};
    double c0 = 0.5;
    double lambda_u = 0.1;
};

/// Radiance field, decoder, exposure table and camera response trained jointly.
struct Model {
    ModelConfig config{};
    HexPlaneField field;
    Decoder decoder;
    ExposureTable exposure;
    Crf crf;

    static Model create(const ModelConfig& config, const Aabb& aabb, std::size_t images, std::uint64_t seed);

    std::vector<ParamTensor*> parameters();
    std::vector<const ParamTensor*> parameters() const;
    void zero_grad();
    /// Name of the first tensor holding a non-finite value or gradient, if any.
    std::optional<std::string> first_non_finite() const;
};

enum class RenderMode { Ldr, Hdr, Tonemapped };

const char* to_string(RenderMode m);
RenderMode parse_render_mode(const std::string& s);

/// Where the log-exposure of an LDR render comes from.
struct ExposureSource {
    std::optional<std::size_t> image;
    double log_exposure = 0.0;

    static ExposureSource from_image(std::size_t j) { return {j, 0.0}; }
    static ExposureSource from_log(double e) { return {std::nullopt, e}; }
    static ExposureSource none() { return {}; }
};

struct RenderOptions {
    int samples = 64;
    bool stratified = false;
    const OccupancyGrid* occupancy = nullptr;
    double mu = kDefaultMu;
};

/// `ldr` holds the camera-response composite in Ldr mode and the tone-mapped
/// HDR value in Tonemapped mode; it is zero in Hdr mode.
struct RenderOutput {
    Vec3 ldr = Vec3::Zero();
    Vec3 hdr = Vec3::Zero();
    double depth = 0.0;
    double opacity = 0.0;
    int active_samples = 0;
};

/// Resolve the log-exposure for an LDR render. Throws IndexError for unknown images.
double resolve_log_exposure(const Model& model, const ExposureSource& source);

/// Serial reference renderer for one ray.
RenderOutput render_pixel(const Model& model, const Ray& ray, RenderMode mode, const ExposureSource& exposure,
                          const RenderOptions& options, SeededRng* rng = nullptr);

/// Serial reference backward for the LDR path. `loss_grad` maps the rendered
/// output to dL/d(ldr); gradients are accumulated into the model.
using PixelLossGrad = std::function<Vec3(const RenderOutput&)>;
RenderOutput render_pixel_backward(Model& model, const Ray& ray, const ExposureSource& exposure,
                                   const RenderOptions& options, SeededRng* rng, const PixelLossGrad& loss_grad);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Header line, JSON header length, JSON header, then every tensor as
/// little-endian float64 in header order. `extra` is stored under "extra".
void save_checkpoint(const Model& model, const std::filesystem::path& path, const nlohmann::json& extra = {});
Model load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace hdrhex
