#include "hdrhex/evaluate.hpp"

#include "hdrhex/error.hpp"

#include <cmath>
#include <numbers>

namespace hdrhex {

using nlohmann::json;

FrameImages render_frame(const Model& model, const Camera& camera, double t_cap, RenderMode mode,
                         const ExposureSource& exposure, const KernelOptions& options, double near, double far,
                         int x0, int x1) {
    if (x1 < 0) x1 = camera.width;
    if (x0 < 0 || x1 > camera.width || x0 >= x1) throw ArgumentError("render_frame: bad column range");
    camera.validate();
    const int w = x1 - x0;
    std::vector<Ray> rays;
    rays.reserve(static_cast<std::size_t>(w) * camera.height);
    const std::size_t j = exposure.image.value_or(0);
    for (int y = 0; y < camera.height; ++y) {
        for (int x = x0; x < x1; ++x) rays.push_back(generate_ray(camera, x, y, t_cap, j, near, far));
    }
    const std::vector<RenderOutput> out = render_rays(model, rays, mode, std::span(&exposure, 1), options);
    FrameImages img{Image(w, camera.height), Image(w, camera.height)};
    for (int y = 0; y < camera.height; ++y) {
        for (int x = 0; x < w; ++x) {
            const RenderOutput& o = out[static_cast<std::size_t>(y) * w + x];
            for (int c = 0; c < 3; ++c) {
                img.ldr.at(x, y, c) = o.ldr[c];
                img.hdr.at(x, y, c) = o.hdr[c];
            }
        }
    }
    return img;
}

const CameraRig& CheckpointInfo::camera(int id) const {
    for (const CameraRig& r : cameras) {
        if (r.id == id) return r;
    }
    throw IndexError("checkpoint has no camera with id " + std::to_string(id));
}

double CheckpointInfo::log_exposure_for_ev(double ev) const {
    return ev * std::numbers::ln2 + gauge_offset.value_or(0.0);
}

CheckpointInfo checkpoint_info(const json& extra, const std::string& source) {
    CheckpointInfo info;
    try {
        info.near = extra.at("near").get<double>();
        info.far = extra.at("far").get<double>();
        for (const json& r : extra.at("cameras")) info.cameras.push_back(rig_from_json(r));
        if (extra.contains("gauge_offset") && !extra.at("gauge_offset").is_null()) {
            info.gauge_offset = extra.at("gauge_offset").get<double>();
        }
    } catch (const std::exception& e) {
        throw ParseError(source, std::string("checkpoint lacks scene metadata: ") + e.what());
    }
    return info;
}

namespace {

Image quantized(const Image& img) { return from_bytes(to_bytes(img)); }

Image tone_mapped(const Image& img, double scale) {
    Image out(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = tone_map(std::max(0.0, scale * img.data[i]));
    return out;
}

}  // namespace

ExposureReport training_exposure_report(const Model& model, const DatasetManifest& manifest, int bins) {
    std::vector<double> learned;
    std::vector<double> evs;
    bool all_ev = true;
    for (std::size_t i : manifest.frames_in_split("train")) {
        const FrameRecord& f = manifest.frames[i];
        learned.push_back(model.exposure.log_exposure(f.image_index));
        if (f.ev) {
            evs.push_back(*f.ev);
        } else {
            all_ev = false;
        }
    }
    std::optional<std::vector<double>> gt;
    if (all_ev) gt = std::move(evs);
    return exposure_report(learned, gt, bins);
}

EvalReport evaluate(const Model& model, const CheckpointInfo& info, const Dataset& data, const std::string& split,
                    const KernelOptions& options) {
    if (split != "half" && split != "test") throw ArgumentError("split must be half or test");
    const DatasetManifest& m = data.manifest();
    const std::vector<std::size_t> frames = m.frames_in_split(split == "half" ? "train" : "test");
    if (frames.empty()) throw ArgumentError("dataset has no held-out frames for split '" + split + "'");

    EvalReport rep;
    rep.split = split;
    rep.exposure = training_exposure_report(model, m);
    const double offset = info.gauge_offset.value_or(rep.exposure.mean_offset.value_or(0.0));
    double hdr_sum = 0.0;
    std::size_t hdr_count = 0;
    for (std::size_t fi : frames) {
        const FrameRecord& f = m.frames[fi];
        FrameScore s;
        s.frame = fi;
        const Image gt = data.load_ldr(fi);
        if (split == "half") {
            const int x0 = f.camera.width / 2;
            const FrameImages img = render_frame(model, f.camera, f.time, RenderMode::Ldr,
                                                 ExposureSource::from_image(f.image_index), options, m.near, m.far, x0);
            const Image ref = gt.crop_columns(x0, f.camera.width - x0);
            const Image pred = quantized(img.ldr);
            s.ldr_psnr = psnr(pred, ref);
            s.ldr_ssim = ssim(pred, ref);
        } else {
            const double e = f.ev ? *f.ev * std::numbers::ln2 + offset : 0.0;
            const FrameImages img = render_frame(model, f.camera, f.time, RenderMode::Ldr, ExposureSource::from_log(e),
                                                 options, m.near, m.far);
            const Image pred = quantized(img.ldr);
            s.ldr_psnr = psnr(pred, gt);
            s.ldr_ssim = ssim(pred, gt);
            if (const auto ref = data.load_hdr(fi)) {
                s.hdr_psnr = psnr(tone_mapped(img.hdr, std::exp(offset)), tone_mapped(*ref, 1.0));
                hdr_sum += *s.hdr_psnr;
                ++hdr_count;
            }
        }
        rep.ldr_psnr += s.ldr_psnr;
        rep.ldr_ssim += s.ldr_ssim;
        rep.frames.push_back(s);
    }
    rep.ldr_psnr /= static_cast<double>(frames.size());
    rep.ldr_ssim /= static_cast<double>(frames.size());
    if (hdr_count > 0) rep.hdr_psnr = hdr_sum / static_cast<double>(hdr_count);
    return rep;
}

json to_json(const EvalReport& r) {
    json frames = json::array();
    for (const FrameScore& s : r.frames) {
        json f = {{"frame", s.frame}, {"ldr_psnr", metric_json(s.ldr_psnr)}, {"ldr_ssim", s.ldr_ssim}};
        f["hdr_psnr"] = s.hdr_psnr ? metric_json(*s.hdr_psnr) : json(nullptr);
        frames.push_back(std::move(f));
    }
    return {{"schema", "hdrhex-eval/1"},
            {"split", r.split},
            {"ldr_psnr", metric_json(r.ldr_psnr)},
            {"ldr_ssim", r.ldr_ssim},
            {"hdr_psnr", r.hdr_psnr ? metric_json(*r.hdr_psnr) : json(nullptr)},
            {"frames", frames},
            {"exposure", to_json(r.exposure)}};
}

}  // namespace hdrhex
