#pragma once

#include "hdrhex/kernels.hpp"
#include "hdrhex/model.hpp"
#include "hdrhex/synthdata.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hdrhex {

enum class ParamGroup : int { Grid = 0, Decoder, Embed, ExposureMlp, Crf };
constexpr int kParamGroups = 5;
const char* to_string(ParamGroup g);

struct TrainConfig {
    long steps = 4000;
    int batch_rays = 512;
    double lr_grid = 2e-2;
    double lr_decoder = 1e-3;
    double lr_embed = 2e-2;
    double lr_exposure_mlp = 1e-3;
    double lr_crf = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double w_tv = 1e-3;
    double lambda_u = 0.1;
    std::uint64_t seed = 0;
    CrfVariant crf_mode = CrfVariant::FixedSigmoid;
    bool use_exposure_mlp = true;
    bool half_split = false;

    int samples = 64;
    bool stratified = true;
    int occupancy_every = 500;
    double occupancy_tau = 1e-3;
    int occupancy_res = 32;
    int occupancy_time_res = 8;

    /// Learning rates may be zero (a frozen group) but not negative.
    void validate() const;
    std::array<double, kParamGroups> base_lrs() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
void apply_json(TrainConfig& c, const nlohmann::json& j);

struct LossReport {
    long step = 0;
    double mse = 0.0;
    double tv = 0.0;
    double zero_point = 0.0;
    double total = 0.0;
    double psnr_batch = 0.0;
    std::array<double, kParamGroups> lrs{};
    std::size_t active_samples = 0;
    std::size_t total_samples = 0;
};

nlohmann::json to_json(const LossReport& r);

/// mse over all channels, the field's TV and the camera-response zero-point
/// term, recombined as total = mse + w_tv * tv + lambda_u * zero_point.
/// Throws ArgumentError on an empty batch, a size mismatch or gt outside [0, 1].
LossReport total_loss(std::span<const Vec3> pred, std::span<const Vec3> gt, const Model& model, double w_tv,
                      double lambda_u);

/// Spatial and time resolution after `events` of the configured upsampling steps.
std::pair<int, int> grid_resolution(const GridConfig& grid, std::size_t events);

/// Pixels available for training and the ray bundle they define.
class PixelPool {
public:
    PixelPool() = default;
    /// Training frames only; with `half` only columns x < width / 2.
    PixelPool(const Dataset& data, bool half);

    std::size_t size() const noexcept { return total_; }
    /// Ray and target color of pool entry `k`.
    std::pair<Ray, Vec3> at(std::size_t k) const;

private:
    struct Frame {
        std::size_t image_index = 0;
        double time = 0.0;
        Camera camera;
        int cols = 0;
        Image ldr;
    };
    std::vector<Frame> frames_;
    std::vector<std::size_t> offsets_;
    std::size_t total_ = 0;
    double near_ = 0.1;
    double far_ = 1.0;
};

/// One optimization run over a dataset.
class Trainer {
public:
    Trainer(const Dataset& data, const TrainConfig& config, ModelConfig model_config);

    Model& model() noexcept { return model_; }
    const Model& model() const noexcept { return model_; }
    const TrainConfig& config() const noexcept { return config_; }
    const OccupancyGrid* occupancy() const noexcept { return occupancy_ ? &*occupancy_ : nullptr; }
    long step_index() const noexcept { return step_; }

    /// Samples a batch, renders it, backpropagates the loss and applies Adam.
    /// Throws NumericalError naming the first non-finite tensor.
    LossReport step();

    /// Runs the remaining steps, applying upsampling and occupancy refreshes on
    /// schedule. Each report is written to `log` as one JSON line when given.
    std::vector<LossReport> fit(std::ostream* log = nullptr);

    void refresh_occupancy();
    void upsample_to(int spatial_res, int time_res);

    /// Mean of learned minus ground-truth log-exposure over training frames, if
    /// the manifest carries exposure values.
    std::optional<double> gauge_offset() const;
    /// Checkpoint metadata: rigs, near/far, frame table and gauge offset.
    nlohmann::json checkpoint_extra() const;

private:
    void build_groups();

    const Dataset* data_;
    TrainConfig config_;
    Model model_;
    PixelPool pool_;
    std::optional<OccupancyGrid> occupancy_;
    std::array<std::vector<ParamTensor*>, kParamGroups> groups_;
    std::array<std::vector<AdamState>, kParamGroups> adam_;
    std::size_t upsample_events_ = 0;
    long step_ = 0;
};

/// Writes `model.ckpt`, `train_log.ndjson` and `exposures.csv` into `out_dir`.
struct FitResult {
    std::vector<LossReport> reports;
    std::filesystem::path checkpoint;
};
FitResult fit(const Dataset& data, const TrainConfig& config, const ModelConfig& model_config,
              const std::filesystem::path& out_dir);

}  // namespace hdrhex
