#include "hdrhex/error.hpp"
#include "hdrhex/trainer.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace hdrhex;
namespace fs = std::filesystem;

namespace {

const Dataset& small_data() {
    static const Dataset d = [] {
        SceneSpec scene = SceneSpec::lego_like();
        CaptureSpec cap = CaptureSpec::arc(1, 24, 24, {-3, -1, 1}, 6);
        cap.test_frames = 2;
        cap.gt_samples = 64;
        vary(scene, cap, 0);
        const fs::path dir = testsupport::scratch_dir("trainer_small");
        write_dataset(generate_dataset(scene, cap), dir);
        return read_dataset(dir);
    }();
    return d;
}

TrainConfig quick(long steps) {
    TrainConfig c;
    c.steps = steps;
    c.batch_rays = 128;
    c.samples = 24;
    c.occupancy_every = 0;
    return c;
}

double smoothed(const std::vector<LossReport>& r, std::size_t end, std::size_t window = 20) {
    double s = 0;
    for (std::size_t i = end - window; i < end; ++i) s += r[i].mse;
    return s / window;
}

}  // namespace

TEST_CASE("total_loss") {
    const Model m = Model::create(testsupport::tiny_config(), testsupport::unit_box(), 2, 1);
    std::vector<Vec3> gt{Vec3(0.1, 0.2, 0.3), Vec3(0.4, 0.5, 0.6), Vec3(0.7, 0.8, 0.9), Vec3(0.0, 0.5, 1.0)};
    std::vector<Vec3> pred = gt;

    Model flat = m;
    for (auto& p : flat.field.planes()) std::fill(p.data.values.begin(), p.data.values.end(), 0.1);
    auto r = total_loss(pred, gt, flat, 1e-4, 0.1);
    CHECK(r.total == 0.0);

    for (auto& p : pred) p = (p.array() + 0.1).matrix();
    r = total_loss(pred, gt, m, 0.0, 0.0);
    CHECK(std::abs(r.mse - 0.01) < 1e-15);
    CHECK(r.total == r.mse);
    CHECK(std::abs(r.psnr_batch - 20.0) < 1e-9);

    r = total_loss(pred, gt, m, 1e-2, 0.1);
    CHECK(r.tv > 0);
    CHECK(r.total == r.mse + 1e-2 * r.tv + 0.1 * r.zero_point);

    ModelConfig mc = testsupport::tiny_config();
    mc.crf = CrfVariant::TrainableMlp;
    const Model t = Model::create(mc, testsupport::unit_box(), 2, 3);
    r = total_loss(pred, gt, t, 1e-3, 0.1);
    CHECK(r.zero_point > 0);
    CHECK(r.total == r.mse + 1e-3 * r.tv + 0.1 * r.zero_point);

    CHECK_THROWS_AS(total_loss({}, {}, m, 0, 0), ArgumentError);
    CHECK_THROWS_AS(total_loss(std::span(pred).first(2), gt, m, 0, 0), ArgumentError);
    std::vector<Vec3> bad = gt;
    bad[0][0] = 1.5;
    CHECK_THROWS_AS(total_loss(pred, bad, m, 0, 0), ArgumentError);
}

TEST_CASE("identical seeds give identical loss streams") {
    const TrainConfig c = quick(6);
    Trainer a(small_data(), c, testsupport::tiny_config());
    Trainer b(small_data(), c, testsupport::tiny_config());
    for (int i = 0; i < 6; ++i) {
        const auto ra = a.step();
        const auto rb = b.step();
        CHECK(ra.total == rb.total);
        CHECK(ra.mse == rb.mse);
    }
    TrainConfig other = c;
    other.seed = 1;
    Trainer d(small_data(), other, testsupport::tiny_config());
    Trainer e(small_data(), c, testsupport::tiny_config());
    CHECK(d.step().mse != e.step().mse);
}

TEST_CASE("zero learning rates freeze the model") {
    TrainConfig c = quick(4);
    c.lr_grid = c.lr_decoder = c.lr_embed = c.lr_exposure_mlp = c.lr_crf = 0.0;
    c.crf_mode = CrfVariant::TrainableMlp;
    Trainer t(small_data(), c, testsupport::tiny_config());
    std::vector<std::vector<double>> before;
    for (const auto* p : t.model().parameters()) before.push_back(p->values);

    std::vector<Ray> rays;
    std::vector<Vec3> gt;
    PixelPool pool(small_data(), false);
    for (std::size_t k = 0; k < 64; ++k) {
        const auto [r, g] = pool.at(k * 37 % pool.size());
        rays.push_back(r);
        gt.push_back(g);
    }
    auto fixed_loss = [&] {
        KernelOptions ko;
        ko.samples = 16;
        std::vector<ExposureSource> src;
        for (const auto& r : rays) src.push_back(ExposureSource::from_image(r.image_index));
        const auto out = render_rays(t.model(), rays, RenderMode::Ldr, src, ko);
        std::vector<Vec3> pred;
        for (const auto& o : out) pred.push_back(o.ldr);
        return total_loss(pred, gt, t.model(), c.w_tv, c.lambda_u).total;
    };
    const double l0 = fixed_loss();
    for (int i = 0; i < 4; ++i) t.step();
    std::size_t k = 0;
    for (const auto* p : t.model().parameters()) CHECK(p->values == before[k++]);
    CHECK(fixed_loss() == l0);

    TrainConfig neg = quick(1);
    neg.lr_grid = -1e-3;
    CHECK_THROWS_AS(Trainer(small_data(), neg, testsupport::tiny_config()), ConfigError);
}

TEST_CASE("non-finite parameters abort with the tensor name") {
    Trainer t(small_data(), quick(3), testsupport::tiny_config());
    for (double& v : t.model().field.planes()[2].data.values) v = std::nan("");
    try {
        t.step();
        FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
        INFO(std::string(e.what()));
        CHECK(std::string(e.what()).find("plane_XZ") != std::string::npos);
    }
}

TEST_CASE("upsampling schedule") {
    ModelConfig mc = testsupport::tiny_config();
    CHECK(grid_resolution(mc.grid, 0) == std::pair{6, 4});
    mc.grid.upsample_steps = {10, 20};
    CHECK(grid_resolution(mc.grid, 2) == std::pair{8, 5});

    TrainConfig c = quick(12);
    mc.grid.upsample_steps = {};
    Trainer still(small_data(), c, mc);
    still.fit();
    CHECK(still.model().field.spatial_res() == 6);
    CHECK(still.model().field.time_res() == 4);

    mc.grid.upsample_steps = {15};
    c.steps = 10;
    CHECK_THROWS_AS(Trainer(small_data(), c, mc), ConfigError);
}

TEST_CASE("an upsampling event does not disturb the loss") {
    ModelConfig mc = testsupport::tiny_config();
    mc.grid.spatial_res = 8;
    mc.grid.spatial_res_final = 16;
    mc.grid.time_res_init = 4;
    mc.grid.time_res_final = 6;
    mc.grid.upsample_steps = {80};
    TrainConfig c = quick(90);
    c.batch_rays = 512;
    Trainer t(small_data(), c, mc);
    const auto r = t.fit();
    CHECK(t.model().field.spatial_res() == 16);
    CHECK(t.model().field.time_res() == 6);
    CHECK(r[81].mse < 2.0 * r[79].mse);
    CHECK(r[81].mse > 0.5 * r[79].mse);
}

TEST_CASE("training reduces the loss on the default scene") {
    SceneSpec scene = SceneSpec::lego_like();
    CaptureSpec cap = CaptureSpec::arc(1, 64, 64, {-3, -1, 1}, 20);
    vary(scene, cap, 0);
    const fs::path dir = testsupport::scratch_dir("trainer_default");
    write_dataset(generate_dataset(scene, cap), dir);
    const Dataset data = read_dataset(dir);
    TrainConfig c;
    c.steps = 200;
    ModelConfig mc;
    mc.grid.upsample_steps = {};
    Trainer t(data, c, mc);
    const auto r = t.fit();
    CHECK(smoothed(r, 200) < smoothed(r, 20));
}

TEST_CASE("half split exposes only left columns") {
    const PixelPool full(small_data(), false), half(small_data(), true);
    const auto train = small_data().manifest().frames_in_split("train").size();
    CHECK(full.size() == train * 24 * 24);
    CHECK(half.size() == train * 12 * 24);
    for (std::size_t k = 0; k < half.size(); k += 7) {
        const auto [ray, color] = half.at(k);
        const auto& f = small_data().manifest().frames[ray.image_index];
        // back-project: the ray must leave through a left-half pixel
        const Eigen::Matrix3d R = f.camera.c2w.topLeftCorner<3, 3>();
        const Vec3 dc = R.transpose() * ray.d;
        const double px = -dc.x() / dc.z() * f.camera.fx + f.camera.cx - 0.5;
        CHECK(px < 12.0 - 0.5 + 1e-9);
    }
    CHECK_THROWS_AS(half.at(half.size()), IndexError);
}

TEST_CASE("fit writes checkpoint, log and exposure table") {
    const fs::path out = testsupport::scratch_dir("fit_out");
    const TrainConfig c = quick(5);
    const auto r = fit(small_data(), c, testsupport::tiny_config(), out);
    CHECK(r.reports.size() == 5);
    CHECK(fs::exists(out / "model.ckpt"));
    std::ifstream log(out / "train_log.ndjson");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("step") == lines);
        CHECK(j.at("total").get<double>() == j.at("mse").get<double>() + c.w_tv * j.at("tv").get<double>() +
                                                 0.1 * j.at("zero_point").get<double>());
        ++lines;
    }
    CHECK(lines == 5);
    std::ifstream csv(out / "exposures.csv");
    std::getline(csv, line);
    CHECK(line == "image_index,split,learned_log_exposure,gt_log_exposure");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == static_cast<int>(small_data().manifest().frames.size()));

    nlohmann::json extra;
    const Model m = load_checkpoint(out / "model.ckpt", &extra);
    CHECK(extra.at("steps_done") == 5);
    CHECK(m.exposure.size() == small_data().manifest().frames.size());
}

TEST_CASE("train config json") {
    TrainConfig c;
    apply_json(c, {{"steps", 12}, {"crf", "mlp"}, {"split", "half"}, {"lr_grid", 0.5}});
    CHECK(c.steps == 12);
    CHECK(c.crf_mode == CrfVariant::TrainableMlp);
    CHECK(c.half_split);
    CHECK(c.lr_grid == 0.5);
    TrainConfig back;
    apply_json(back, to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK_THROWS_AS(apply_json(c, {{"stepz", 3}}), ConfigError);
}
