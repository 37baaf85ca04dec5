#include "hdrhex/trainer.hpp"

#include "hdrhex/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>

namespace hdrhex {

using nlohmann::json;

const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::Grid: return "grid";
        case ParamGroup::Decoder: return "decoder";
        case ParamGroup::Embed: return "embed";
        case ParamGroup::ExposureMlp: return "exposure_mlp";
        case ParamGroup::Crf: return "crf";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (batch_rays < 1) throw ConfigError("batch_rays must be positive");
    for (double lr : base_lrs()) {
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rates must be finite and non-negative");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in (0, 1)");
    if (!(w_tv >= 0.0) || !(lambda_u >= 0.0)) throw ConfigError("loss weights must be non-negative");
    if (samples < 1) throw ConfigError("samples must be positive");
    if (occupancy_every < 0 || !(occupancy_tau >= 0.0)) throw ConfigError("bad occupancy settings");
    if (occupancy_res < 1 || occupancy_time_res < 1) throw ConfigError("bad occupancy resolution");
}

std::array<double, kParamGroups> TrainConfig::base_lrs() const {
    return {lr_grid, lr_decoder, lr_embed, lr_exposure_mlp, lr_crf};
}

json to_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"batch_rays", c.batch_rays},
            {"lr_grid", c.lr_grid},
            {"lr_decoder", c.lr_decoder},
            {"lr_embed", c.lr_embed},
            {"lr_exposure_mlp", c.lr_exposure_mlp},
            {"lr_crf", c.lr_crf},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"w_tv", c.w_tv},
            {"lambda_u", c.lambda_u},
            {"seed", c.seed},
            {"crf", c.crf_mode == CrfVariant::FixedSigmoid ? "sigmoid" : "mlp"},
            {"use_exposure_mlp", c.use_exposure_mlp},
            {"split", c.half_split ? "half" : "full"},
            {"samples", c.samples},
            {"stratified", c.stratified},
            {"occupancy_every", c.occupancy_every},
            {"occupancy_tau", c.occupancy_tau},
            {"occupancy_res", c.occupancy_res},
            {"occupancy_time_res", c.occupancy_time_res}};
}

void apply_json(TrainConfig& c, const json& j) {
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "steps") c.steps = v.get<long>();
            else if (key == "batch_rays") c.batch_rays = v.get<int>();
            else if (key == "lr_grid") c.lr_grid = v.get<double>();
            else if (key == "lr_decoder") c.lr_decoder = v.get<double>();
            else if (key == "lr_embed") c.lr_embed = v.get<double>();
            else if (key == "lr_exposure_mlp") c.lr_exposure_mlp = v.get<double>();
            else if (key == "lr_crf") c.lr_crf = v.get<double>();
            else if (key == "beta1") c.beta1 = v.get<double>();
            else if (key == "beta2") c.beta2 = v.get<double>();
            else if (key == "w_tv") c.w_tv = v.get<double>();
            else if (key == "lambda_u") c.lambda_u = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "crf") {
                const auto s = v.get<std::string>();
                if (s != "sigmoid" && s != "mlp") throw ConfigError("crf must be sigmoid or mlp");
                c.crf_mode = s == "mlp" ? CrfVariant::TrainableMlp : CrfVariant::FixedSigmoid;
            } else if (key == "use_exposure_mlp") c.use_exposure_mlp = v.get<bool>();
            else if (key == "split") {
                const auto s = v.get<std::string>();
                if (s != "full" && s != "half") throw ConfigError("split must be full or half");
                c.half_split = s == "half";
            } else if (key == "samples") c.samples = v.get<int>();
            else if (key == "stratified") c.stratified = v.get<bool>();
            else if (key == "occupancy_every") c.occupancy_every = v.get<int>();
            else if (key == "occupancy_tau") c.occupancy_tau = v.get<double>();
            else if (key == "occupancy_res") c.occupancy_res = v.get<int>();
            else if (key == "occupancy_time_res") c.occupancy_time_res = v.get<int>();
            else throw ConfigError("unknown training option '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad training option: ") + e.what());
    }
}

json to_json(const LossReport& r) {
    json lrs = json::object();
    for (int g = 0; g < kParamGroups; ++g) lrs[to_string(static_cast<ParamGroup>(g))] = r.lrs[g];
    return {{"step", r.step},
            {"mse", r.mse},
            {"tv", r.tv},
            {"zero_point", r.zero_point},
            {"total", r.total},
            {"psnr_batch", r.psnr_batch},
            {"lr", lrs},
            {"active_samples", r.active_samples},
            {"total_samples", r.total_samples}};
}

LossReport total_loss(std::span<const Vec3> pred, std::span<const Vec3> gt, const Model& model, double w_tv,
                      double lambda_u) {
    if (pred.empty()) throw ArgumentError("total_loss: empty batch");
    if (pred.size() != gt.size()) throw ArgumentError("total_loss: prediction and target sizes differ");
    double sse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (gt[i].minCoeff() < 0.0 || gt[i].maxCoeff() > 1.0) throw ArgumentError("total_loss: target outside [0, 1]");
        sse += (pred[i] - gt[i]).squaredNorm();
    }
    LossReport r;
    r.mse = sse / (3.0 * static_cast<double>(pred.size()));
    r.tv = model.field.tv_loss();
    r.zero_point = model.crf.zero_point_loss();
    r.total = r.mse + w_tv * r.tv + lambda_u * r.zero_point;
    r.psnr_batch = r.mse > 0.0 ? -10.0 * std::log10(r.mse) : std::numeric_limits<double>::infinity();
    return r;
}

std::pair<int, int> grid_resolution(const GridConfig& grid, std::size_t events) {
    const std::size_t total = grid.upsample_steps.size();
    if (total == 0 || events == 0) return {grid.spatial_res, grid.time_res_init};
    const double f = static_cast<double>(std::min(events, total)) / static_cast<double>(total);
    const auto lerp = [f](int a, int b) { return static_cast<int>(std::lround(a + f * (b - a))); };
    return {lerp(grid.spatial_res, grid.spatial_res_final), lerp(grid.time_res_init, grid.time_res_final)};
}

PixelPool::PixelPool(const Dataset& data, bool half) {
    const DatasetManifest& m = data.manifest();
    near_ = m.near;
    far_ = m.far;
    offsets_.push_back(0);
    for (std::size_t i : m.frames_in_split("train")) {
        const FrameRecord& f = m.frames[i];
        Frame fr;
        fr.image_index = f.image_index;
        fr.time = f.time;
        fr.camera = f.camera;
        fr.cols = half ? f.camera.width / 2 : f.camera.width;
        fr.ldr = data.load_ldr(i);
        total_ += static_cast<std::size_t>(fr.cols) * f.camera.height;
        offsets_.push_back(total_);
        frames_.push_back(std::move(fr));
    }
}

std::pair<Ray, Vec3> PixelPool::at(std::size_t k) const {
    if (k >= total_) throw IndexError("pixel pool index out of range");
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), k);
    const std::size_t fi = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    const Frame& f = frames_[fi];
    const std::size_t local = k - offsets_[fi];
    const int px = static_cast<int>(local % static_cast<std::size_t>(f.cols));
    const int py = static_cast<int>(local / static_cast<std::size_t>(f.cols));
    const Vec3 color(f.ldr.at(px, py, 0), f.ldr.at(px, py, 1), f.ldr.at(px, py, 2));
    return {generate_ray(f.camera, px, py, f.time, f.image_index, near_, far_), color};
}

Trainer::Trainer(const Dataset& data, const TrainConfig& config, ModelConfig model_config)
    : data_(&data), config_(config) {
    config_.validate();
    model_config.grid.validate();
    for (std::size_t i = 0; i < model_config.grid.upsample_steps.size(); ++i) {
        const long s = model_config.grid.upsample_steps[i];
        if (s <= 0 || (config_.steps > 0 && s >= config_.steps) ||
            (i > 0 && s <= model_config.grid.upsample_steps[i - 1])) {
            throw ConfigError("upsample steps must be increasing and inside (0, steps)");
        }
    }
    model_config.crf = config_.crf_mode;
    model_config.exposure.use_mlp = config_.use_exposure_mlp;
    model_config.lambda_u = config_.lambda_u;
    model_ = Model::create(model_config, data.manifest().aabb, data.manifest().frames.size(), config_.seed);
    pool_ = PixelPool(data, config_.half_split);
    if (pool_.size() == 0) throw ConfigError("dataset has no training pixels");
    build_groups();
}

void Trainer::build_groups() {
    groups_[static_cast<int>(ParamGroup::Grid)] = model_.field.parameters();
    groups_[static_cast<int>(ParamGroup::Decoder)] = model_.decoder.parameters();
    groups_[static_cast<int>(ParamGroup::Embed)] = model_.exposure.embedding_parameters();
    groups_[static_cast<int>(ParamGroup::ExposureMlp)] = model_.exposure.network_parameters();
    groups_[static_cast<int>(ParamGroup::Crf)] = model_.crf.parameters();
    for (int g = 0; g < kParamGroups; ++g) {
        adam_[g].clear();
        for (const ParamTensor* p : groups_[g]) adam_[g].emplace_back(p->size(), config_.beta1, config_.beta2);
    }
}

void Trainer::upsample_to(int spatial_res, int time_res) {
    model_.field = model_.field.upsampled(spatial_res, time_res);
    auto& grid = groups_[static_cast<int>(ParamGroup::Grid)];
    grid = model_.field.parameters();
    auto& states = adam_[static_cast<int>(ParamGroup::Grid)];
    states.clear();
    for (const ParamTensor* p : grid) states.emplace_back(p->size(), config_.beta1, config_.beta2);
}

void Trainer::refresh_occupancy() {
    OccupancyGrid grid(model_.field.aabb(), config_.occupancy_res, config_.occupancy_time_res);
    grid.update([this](const RowMatrix& q) { return field_density(model_, q); }, config_.occupancy_tau);
    occupancy_ = std::move(grid);
}

LossReport Trainer::step() {
    const long total = std::max<long>(config_.steps, 1);
    if (step_ >= total) throw ConfigError("training already finished");
    const std::size_t B = static_cast<std::size_t>(config_.batch_rays);
    SeededRng rng = SeededRng(config_.seed).fork(static_cast<std::uint64_t>(step_));
    std::vector<Ray> rays(B);
    std::vector<Vec3> gt(B);
    for (std::size_t b = 0; b < B; ++b) std::tie(rays[b], gt[b]) = pool_.at(rng.below(pool_.size()));

    KernelOptions opt;
    opt.samples = config_.samples;
    opt.stratified = config_.stratified;
    opt.occupancy = occupancy();
    const double scale = 2.0 / (3.0 * static_cast<double>(B));
    BatchStats stats;
    model_.zero_grad();
    const std::vector<Vec3> pred = ldr_forward_backward(
        model_, rays, opt, rng.next_u64(), [&](std::size_t r, const Vec3& p) -> Vec3 { return scale * (p - gt[r]); },
        &stats);

    LossReport rep = total_loss(pred, gt, model_, config_.w_tv, config_.lambda_u);
    if (config_.w_tv > 0.0) model_.field.tv_backward(config_.w_tv);
    if (model_.crf.variant() == CrfVariant::TrainableMlp && config_.lambda_u > 0.0) {
        model_.crf.zero_point_backward(config_.lambda_u);
    }
    rep.step = step_;
    rep.active_samples = stats.active_samples;
    rep.total_samples = stats.total_samples;
    if (!std::isfinite(rep.total)) {
        const auto bad = model_.first_non_finite();
        throw NumericalError("non-finite loss at step " + std::to_string(step_) +
                             (bad ? "; first non-finite tensor: " + *bad : std::string("; parameters are finite")));
    }
    if (const auto bad = model_.first_non_finite()) {
        throw NumericalError("non-finite tensor at step " + std::to_string(step_) + ": " + *bad);
    }

    const auto base = config_.base_lrs();
    for (int g = 0; g < kParamGroups; ++g) {
        if (base[g] == 0.0) continue;  // frozen group
        rep.lrs[g] = lr_schedule(step_, total, base[g]);
        for (std::size_t k = 0; k < groups_[g].size(); ++k) adam_step(*groups_[g][k], adam_[g][k], rep.lrs[g]);
    }
    ++step_;
    return rep;
}

std::vector<LossReport> Trainer::fit(std::ostream* log) {
    std::vector<LossReport> reports;
    const auto& schedule = model_.config.grid.upsample_steps;
    while (step_ < config_.steps) {
        while (upsample_events_ < schedule.size() && schedule[upsample_events_] == step_) {
            ++upsample_events_;
            const auto [s, t] = grid_resolution(model_.config.grid, upsample_events_);
            upsample_to(s, t);
        }
        if (config_.occupancy_every > 0 && step_ > 0 && step_ % config_.occupancy_every == 0) refresh_occupancy();
        reports.push_back(step());
        if (log) *log << to_json(reports.back()).dump() << '\n';
    }
    if (log) log->flush();
    return reports;
}

std::optional<double> Trainer::gauge_offset() const {
    const DatasetManifest& m = data_->manifest();
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i : m.frames_in_split("train")) {
        const FrameRecord& f = m.frames[i];
        if (!f.ev) continue;
        sum += model_.exposure.log_exposure(f.image_index) - *f.ev * std::numbers::ln2;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

json Trainer::checkpoint_extra() const {
    const DatasetManifest& m = data_->manifest();
    json rigs = json::array();
    for (const CameraRig& r : m.cameras) rigs.push_back(to_json(r));
    json frames = json::array();
    for (const FrameRecord& f : m.frames) {
        frames.push_back({{"image_index", f.image_index},
                          {"camera_id", f.camera_id},
                          {"time", f.time},
                          {"ev", f.ev ? json(*f.ev) : json(nullptr)},
                          {"split", f.split}});
    }
    const auto offset = gauge_offset();
    return {{"scene", m.scene},
            {"near", m.near},
            {"far", m.far},
            {"evs", m.evs},
            {"cameras", rigs},
            {"frames", frames},
            {"gauge_offset", offset ? json(*offset) : json(nullptr)},
            {"train", to_json(config_)},
            {"steps_done", step_}};
}

FitResult fit(const Dataset& data, const TrainConfig& config, const ModelConfig& model_config,
              const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw ParseError(out_dir.string(), "cannot create output directory: " + ec.message());
    Trainer trainer(data, config, model_config);
    const auto log_path = out_dir / "train_log.ndjson";
    std::ofstream log(log_path);
    if (!log) throw ParseError(log_path.string(), "cannot open for writing");
    FitResult result;
    result.reports = trainer.fit(&log);
    result.checkpoint = out_dir / "model.ckpt";
    save_checkpoint(trainer.model(), result.checkpoint, trainer.checkpoint_extra());

    const auto csv_path = out_dir / "exposures.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw ParseError(csv_path.string(), "cannot open for writing");
    csv << "image_index,split,learned_log_exposure,gt_log_exposure\n" << std::setprecision(17);
    for (const FrameRecord& f : data.manifest().frames) {
        csv << f.image_index << ',' << f.split << ',' << trainer.model().exposure.log_exposure(f.image_index) << ',';
        if (f.ev) csv << *f.ev * std::numbers::ln2;
        csv << '\n';
    }
    return result;
}

}  // namespace hdrhex
