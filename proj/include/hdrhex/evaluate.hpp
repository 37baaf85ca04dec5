#pragma once

#include "hdrhex/image.hpp"
#include "hdrhex/kernels.hpp"
#include "hdrhex/metrics.hpp"
#include "hdrhex/model.hpp"
#include "hdrhex/synthdata.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace hdrhex {

/// Rendered frame. `ldr` holds the display image of the mode (camera response
/// for Ldr, tone-mapped radiance for Tonemapped); `hdr` the linear radiance.
struct FrameImages {
    Image ldr;
    Image hdr;
};

/// Renders columns [x0, x1) of the camera's frame (x1 < 0 means the full width).
FrameImages render_frame(const Model& model, const Camera& camera, double t_cap, RenderMode mode,
                         const ExposureSource& exposure, const KernelOptions& options, double near, double far,
                         int x0 = 0, int x1 = -1);

/// Scene metadata stored alongside a trained model.
struct CheckpointInfo {
    double near = 0.1;
    double far = 1.0;
    std::vector<CameraRig> cameras;
    std::optional<double> gauge_offset;

    const CameraRig& camera(int id) const;
    /// e' for a novel exposure value: ev ln 2 plus the gauge offset when known.
    double log_exposure_for_ev(double ev) const;
};

/// Throws ParseError naming `source` when fields are missing.
CheckpointInfo checkpoint_info(const nlohmann::json& extra, const std::string& source);

struct FrameScore {
    std::size_t frame = 0;
    double ldr_psnr = 0.0;
    double ldr_ssim = 0.0;
    std::optional<double> hdr_psnr;  // on tone-mapped, gauge-aligned radiance
};

struct EvalReport {
    std::string split;
    std::vector<FrameScore> frames;
    double ldr_psnr = 0.0;  // mean over frames
    double ldr_ssim = 0.0;
    std::optional<double> hdr_psnr;
    ExposureReport exposure;
};

/// Held-out evaluation. "half": right halves of the training frames, each with
/// its learned exposure. "test": test frames at ev ln 2 plus the gauge offset,
/// and HDR references where present. Predictions are quantized to 8 bits like
/// the references. Throws ArgumentError when the split has no frames.
EvalReport evaluate(const Model& model, const CheckpointInfo& info, const Dataset& data, const std::string& split,
                    const KernelOptions& options);

/// Learned versus ground-truth exposures over the training frames.
ExposureReport training_exposure_report(const Model& model, const DatasetManifest& manifest, int bins = 50);

nlohmann::json to_json(const EvalReport& r);

}  // namespace hdrhex
