#include "hdrhex/model.hpp"

#include "hdrhex/error.hpp"

#include <bit>
#include <cmath>
#include <fstream>

namespace hdrhex {

Model Model::create(const ModelConfig& config, const Aabb& aabb, std::size_t images, std::uint64_t seed) {
    SeededRng rng(seed);
    Model m;
    m.config = config;
    m.field = HexPlaneField(config.grid, aabb, rng);
    m.decoder = Decoder(config.grid.channels, config.decoder, rng);
    m.exposure = ExposureTable(images, config.exposure, rng);
    m.crf = config.crf == CrfVariant::FixedSigmoid ? Crf::fixed_sigmoid()
                                                    : Crf::trainable(rng, config.crf_hidden, config.c0, config.lambda_u);
    if (config.crf == CrfVariant::FixedSigmoid) {
        m.crf.set_c0(config.c0);
        m.crf.set_lambda_u(config.lambda_u);
    }
    return m;
}

std::vector<ParamTensor*> Model::parameters() {
    std::vector<ParamTensor*> out = field.parameters();
    for (auto* p : decoder.parameters()) out.push_back(p);
    for (auto* p : exposure.embedding_parameters()) out.push_back(p);
    for (auto* p : exposure.network_parameters()) out.push_back(p);
    for (auto* p : crf.parameters()) out.push_back(p);
    return out;
}

std::vector<const ParamTensor*> Model::parameters() const {
    std::vector<const ParamTensor*> out = field.parameters();
    for (auto* p : decoder.parameters()) out.push_back(p);
    for (auto* p : exposure.parameters()) out.push_back(p);
    for (auto* p : crf.parameters()) out.push_back(p);
    return out;
}

void Model::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

std::optional<std::string> Model::first_non_finite() const {
    // Values first: a bad value poisons every gradient downstream of it.
    const auto params = parameters();
    for (const auto* p : params) {
        for (double v : p->values) {
            if (!std::isfinite(v)) return p->name;
        }
    }
    for (const auto* p : params) {
        for (double g : p->grad) {
            if (!std::isfinite(g)) return p->name + ".grad";
        }
    }
    return std::nullopt;
}

const char* to_string(RenderMode m) {
    switch (m) {
        case RenderMode::Ldr: return "ldr";
        case RenderMode::Hdr: return "hdr";
        case RenderMode::Tonemapped: return "tonemapped";
    }
    return "?";
}

RenderMode parse_render_mode(const std::string& s) {
    if (s == "ldr") return RenderMode::Ldr;
    if (s == "hdr") return RenderMode::Hdr;
    if (s == "tonemapped") return RenderMode::Tonemapped;
    throw ArgumentError("unknown render mode '" + s + "'");
}

double resolve_log_exposure(const Model& model, const ExposureSource& source) {
    if (source.image) return model.exposure.log_exposure(*source.image);
    return source.log_exposure;
}

namespace {

struct RayEval {
    std::vector<double> depths;
    std::vector<double> deltas;
    std::vector<Eigen::Vector4d> unit;  // active samples only
    std::vector<double> active_deltas;
    std::vector<double> active_depths;
    RowMatrix features;
    RowMatrix x;
    RowMatrix dirs;
    Eigen::VectorXd t;
    RowMatrix e_log;
    Eigen::VectorXd sigma;
    Decoder::Cache cache;
};

RayEval eval_ray(const Model& model, const Ray& ray, const RenderOptions& options, SeededRng* rng, bool keep_cache) {
    if (options.samples < 1) throw ArgumentError("render: need at least one sample per ray");
    if (options.stratified && !rng) throw ArgumentError("render: stratified sampling needs an rng");
    RayEval ev;
    ev.depths.resize(options.samples);
    ev.deltas.resize(options.samples);
    sample_depths(ray.near, ray.far, options.samples, options.stratified ? rng : nullptr, ev.depths, ev.deltas);
    for (int i = 0; i < options.samples; ++i) {
        const Vec3 p = ray.o + ev.depths[i] * ray.d;
        const Eigen::Vector4d q = model.field.normalize(p, ray.t_cap);
        if (options.occupancy && !options.occupancy->occupied_unit(q)) continue;
        ev.unit.push_back(q);
        ev.active_deltas.push_back(ev.deltas[i]);
        ev.active_depths.push_back(ev.depths[i]);
    }
    const auto n = static_cast<Eigen::Index>(ev.unit.size());
    const int F = model.field.channels();
    ev.features.resize(n, F);
    ev.x.resize(n, 3);
    ev.dirs.resize(n, 3);
    ev.t.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        model.field.query_unit(ev.unit[i], std::span<double>(ev.features.row(i).data(), F));
        ev.x.row(i) = ev.unit[i].head<3>().transpose();
        ev.dirs.row(i) = ray.d.transpose();
        ev.t[i] = ev.unit[i][3];
    }
    if (n > 0) model.decoder.forward(ev.features, ev.x, ev.dirs, ev.t, ev.e_log, ev.sigma, keep_cache ? &ev.cache : nullptr);
    return ev;
}

std::vector<Vec3> rows_to_vec3(const RowMatrix& m) {
    std::vector<Vec3> out(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[i] = m.row(i).transpose();
    return out;
}

}  // namespace

RenderOutput render_pixel(const Model& model, const Ray& ray, RenderMode mode, const ExposureSource& exposure,
                          const RenderOptions& options, SeededRng* rng) {
    const double e_prime = mode == RenderMode::Ldr ? resolve_log_exposure(model, exposure) : 0.0;
    const RayEval ev = eval_ray(model, ray, options, rng, false);
    const auto n = static_cast<Eigen::Index>(ev.unit.size());
    std::vector<Vec3> radiance(n);
    for (Eigen::Index i = 0; i < n; ++i) radiance[i] = ev.e_log.row(i).transpose().array().exp();
    std::span<const double> sig(ev.sigma.data(), static_cast<std::size_t>(n));

    RenderOutput out;
    out.active_samples = static_cast<int>(n);
    const CompositeResult hdr = volume_render(radiance, sig, ev.active_deltas, ev.active_depths, ray.far);
    out.hdr = hdr.pixel;
    out.depth = hdr.depth;
    out.opacity = hdr.opacity;
    if (mode == RenderMode::Ldr) {
        std::vector<Vec3> colors(n);
        for (Eigen::Index i = 0; i < n; ++i) colors[i] = ldr_color(model.crf, ev.e_log.row(i).transpose(), e_prime);
        out.ldr = volume_render(colors, sig, ev.active_deltas).pixel;
    } else if (mode == RenderMode::Tonemapped) {
        out.ldr = tone_map(out.hdr, options.mu);
    }
    return out;
}

RenderOutput render_pixel_backward(Model& model, const Ray& ray, const ExposureSource& exposure,
                                   const RenderOptions& options, SeededRng* rng, const PixelLossGrad& loss_grad) {
    const double e_prime = resolve_log_exposure(model, exposure);
    RayEval ev = eval_ray(model, ray, options, rng, true);
    const auto n = static_cast<Eigen::Index>(ev.unit.size());

    RenderOutput out;
    out.active_samples = static_cast<int>(n);
    if (n == 0) {
        out.depth = ray.far;
        loss_grad(out);
        return out;
    }

    std::array<Crf::BatchCache, 3> crf_cache;
    RowMatrix colors(n, 3);
    for (int c = 0; c < 3; ++c) {
        const Eigen::VectorXd x = ev.e_log.col(c).array() + e_prime;
        colors.col(c) = model.crf.forward_batch(c, x, &crf_cache[c]);
    }
    const std::vector<Vec3> color_vec = rows_to_vec3(colors);
    std::span<const double> sig(ev.sigma.data(), static_cast<std::size_t>(n));
    const CompositeResult ldr = volume_render(color_vec, sig, ev.active_deltas, ev.active_depths, ray.far);
    out.ldr = ldr.pixel;
    out.depth = ldr.depth;
    out.opacity = ldr.opacity;
    std::vector<Vec3> radiance(n);
    for (Eigen::Index i = 0; i < n; ++i) radiance[i] = ev.e_log.row(i).transpose().array().exp();
    out.hdr = volume_render(radiance, sig, ev.active_deltas).pixel;

    const Vec3 d_pixel = loss_grad(out);
    std::vector<Vec3> d_colors(n);
    std::vector<double> d_sigma_vec(n);
    volume_render_backward(color_vec, sig, ev.active_deltas, d_pixel, d_colors, d_sigma_vec);

    std::array<MlpGrad, 3> crf_grads = model.crf.make_grads();
    RowMatrix d_e_log(n, 3);
    double d_e_prime = 0.0;
    for (int c = 0; c < 3; ++c) {
        Eigen::VectorXd dc(n);
        for (Eigen::Index i = 0; i < n; ++i) dc[i] = d_colors[i][c];
        MlpGrad* g = model.crf.variant() == CrfVariant::TrainableMlp ? &crf_grads[c] : nullptr;
        const Eigen::VectorXd dx = model.crf.backward_batch(c, crf_cache[c], dc, g);
        d_e_log.col(c) = dx;
        d_e_prime += dx.sum();
    }
    model.crf.accumulate(crf_grads);

    const Eigen::VectorXd d_sigma = Eigen::Map<const Eigen::VectorXd>(d_sigma_vec.data(), n);
    DecoderGrad dgrad = model.decoder.make_grad();
    RowMatrix d_features;
    model.decoder.backward(ev.cache, d_e_log, d_sigma, dgrad, &d_features);
    model.decoder.accumulate(dgrad);
    for (Eigen::Index i = 0; i < n; ++i) {
        model.field.query_backward(ev.unit[i],
                                   std::span<const double>(d_features.row(i).data(), d_features.cols()));
    }
    if (exposure.image) model.exposure.backward(*exposure.image, d_e_prime);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

nlohmann::json to_json(const ModelConfig& c) {
    using nlohmann::json;
    return json{
        {"grid",
         {{"spatial_res", c.grid.spatial_res},
          {"spatial_res_final", c.grid.spatial_res_final},
          {"time_res_init", c.grid.time_res_init},
          {"time_res_final", c.grid.time_res_final},
          {"ranks", c.grid.ranks},
          {"channels", c.grid.channels},
          {"upsample_steps", c.grid.upsample_steps},
          {"init_mean", c.grid.init_mean},
          {"init_spread", c.grid.init_spread}}},
        {"decoder",
         {{"density_hidden", c.decoder.density_hidden},
          {"color_hidden", c.decoder.color_hidden},
          {"L_x", c.decoder.posenc.L_x},
          {"L_d", c.decoder.posenc.L_d},
          {"L_t", c.decoder.posenc.L_t},
          {"include_input", c.decoder.posenc.include_input},
          {"density_bias_init", c.decoder.density_bias_init}}},
        {"exposure",
         {{"embed_dim", c.exposure.embed_dim},
          {"hidden", c.exposure.hidden},
          {"use_mlp", c.exposure.use_mlp},
          {"hidden_bias_init", c.exposure.hidden_bias_init}}},
        {"crf",
         {{"variant", c.crf == CrfVariant::FixedSigmoid ? "sigmoid" : "mlp"},
          {"hidden", c.crf_hidden},
          {"c0", c.c0},
          {"lambda_u", c.lambda_u}}},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    const auto& g = j.at("grid");
    c.grid.spatial_res = g.at("spatial_res");
    c.grid.spatial_res_final = g.at("spatial_res_final");
    c.grid.time_res_init = g.at("time_res_init");
    c.grid.time_res_final = g.at("time_res_final");
    c.grid.ranks = g.at("ranks").get<std::array<int, 3>>();
    c.grid.channels = g.at("channels");
    c.grid.upsample_steps = g.at("upsample_steps").get<std::vector<long>>();
    c.grid.init_mean = g.at("init_mean");
    c.grid.init_spread = g.at("init_spread");
    const auto& d = j.at("decoder");
    c.decoder.density_hidden = d.at("density_hidden").get<std::vector<int>>();
    c.decoder.color_hidden = d.at("color_hidden").get<std::vector<int>>();
    c.decoder.posenc.L_x = d.at("L_x");
    c.decoder.posenc.L_d = d.at("L_d");
    c.decoder.posenc.L_t = d.at("L_t");
    c.decoder.posenc.include_input = d.at("include_input");
    c.decoder.density_bias_init = d.at("density_bias_init");
    const auto& e = j.at("exposure");
    c.exposure.embed_dim = e.at("embed_dim");
    c.exposure.hidden = e.at("hidden").get<std::vector<int>>();
    c.exposure.use_mlp = e.at("use_mlp");
    c.exposure.hidden_bias_init = e.at("hidden_bias_init");
    const auto& r = j.at("crf");
    const std::string variant = r.at("variant");
    if (variant == "sigmoid") {
        c.crf = CrfVariant::FixedSigmoid;
    } else if (variant == "mlp") {
        c.crf = CrfVariant::TrainableMlp;
    } else {
        throw ConfigError("unknown crf variant '" + variant + "'");
    }
    c.crf_hidden = r.at("hidden").get<std::vector<int>>();
    c.c0 = r.at("c0");
    c.lambda_u = r.at("lambda_u");
    return c;
}

namespace {

constexpr const char* kMagic = "HDRHEXCKPT1";

void write_f64_le(std::ostream& os, const std::vector<double>& values) {
    static_assert(sizeof(double) == 8);
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 8));
    } else {
        for (double v : values) {
            auto bits = std::bit_cast<std::uint64_t>(v);
            char buf[8];
            for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
            os.write(buf, 8);
        }
    }
}

void read_f64_le(std::istream& is, std::vector<double>& values, const std::string& path) {
    std::vector<unsigned char> raw(values.size() * 8);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw ParseError(path, "truncated tensor data");
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[i * 8 + b]) << (8 * b);
        values[i] = std::bit_cast<double>(bits);
    }
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path, const nlohmann::json& extra) {
    using nlohmann::json;
    json header;
    header["format"] = kMagic;
    header["version"] = 1;
    header["model"] = to_json(model.config);
    const Aabb& box = model.field.aabb();
    header["field"] = {{"aabb_min", {box.min[0], box.min[1], box.min[2]}},
                       {"aabb_max", {box.max[0], box.max[1], box.max[2]}},
                       {"spatial_res", model.field.spatial_res()},
                       {"time_res", model.field.time_res()},
                       {"ranks", model.field.ranks()},
                       {"channels", model.field.channels()}};
    header["images"] = model.exposure.size();
    json tensors = json::array();
    for (const auto* p : model.parameters()) tensors.push_back({{"name", p->name}, {"shape", p->shape}});
    header["tensors"] = tensors;
    header["extra"] = extra.is_null() ? json::object() : extra;

    const std::string text = header.dump(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError(path.string(), "cannot open checkpoint for writing");
    os << kMagic << '\n' << text.size() << '\n' << text;
    for (const auto* p : model.parameters()) write_f64_le(os, p->values);
    if (!os) throw ParseError(path.string(), "write failed");
}

Model load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra) {
    using nlohmann::json;
    const std::string p = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(p, "cannot open checkpoint");
    std::string magic;
    std::getline(is, magic);
    if (magic != kMagic) throw ParseError(p, "not a checkpoint (bad magic)");
    std::string len_line;
    std::getline(is, len_line);
    std::size_t len = 0;
    try {
        len = std::stoull(len_line);
    } catch (const std::exception&) {
        throw ParseError(p, "bad header length");
    }
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::size_t>(is.gcount()) != len) throw ParseError(p, "truncated header");
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(p, std::string("malformed header: ") + e.what());
    }

    Model m;
    try {
        m.config = model_config_from_json(header.at("model"));
        const auto& f = header.at("field");
        Aabb box;
        for (int a = 0; a < 3; ++a) {
            box.min[a] = f.at("aabb_min").at(a);
            box.max[a] = f.at("aabb_max").at(a);
        }
        const std::size_t images = header.at("images");
        m = Model::create(m.config, box, images, 0);
        m.field = HexPlaneField::from_parts(box, f.at("spatial_res"), f.at("time_res"),
                                            f.at("ranks").get<std::array<int, 3>>(), f.at("channels"));
        if (extra) *extra = header.value("extra", json::object());
    } catch (const json::exception& e) {
        throw ParseError(p, std::string("bad header: ") + e.what());
    }
    const auto params = m.parameters();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size()) throw ParseError(p, "tensor count does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
        if (tensors[i].at("name").get<std::string>() != params[i]->name || shape != params[i]->shape) {
            throw ParseError(p, "tensor '" + params[i]->name + "' does not match the header");
        }
        read_f64_le(is, params[i]->values, p);
    }
    return m;
}

}  // namespace hdrhex
