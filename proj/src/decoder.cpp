#include "hdrhex/decoder.hpp"

#include "hdrhex/error.hpp"

#include <cmath>

namespace hdrhex {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

int posenc_dim(int n, int frequencies, bool include_input) {
    return n * ((include_input ? 1 : 0) + 2 * frequencies);
}

void posenc(std::span<const double> v, int frequencies, bool include_input, std::span<double> out) {
    const std::size_t n = v.size();
    std::size_t k = 0;
    if (include_input) {
        for (std::size_t i = 0; i < n; ++i) out[k++] = v[i];
    }
    if (frequencies == 0) return;
    // One sin/cos per component; higher octaves via double-angle identities.
    for (std::size_t i = 0; i < n; ++i) {
        double s = std::sin(M_PI * v[i]);
        double c = std::cos(M_PI * v[i]);
        for (int l = 0; l < frequencies; ++l) {
            const std::size_t base = k + 2 * n * static_cast<std::size_t>(l);
            out[base + i] = s;
            out[base + n + i] = c;
            const double s2 = 2.0 * s * c;
            c = (c - s) * (c + s);
            s = s2;
        }
    }
}

std::vector<double> posenc(std::span<const double> v, int frequencies, bool include_input) {
    if (frequencies < 0) throw ArgumentError("posenc: negative frequency count");
    std::vector<double> out(posenc_dim(static_cast<int>(v.size()), frequencies, include_input));
    posenc(v, frequencies, include_input, out);
    return out;
}

void posenc_backward(std::span<const double> v, int frequencies, bool include_input, std::span<const double> d_out,
                     std::span<double> d_v) {
    const std::size_t n = v.size();
    std::size_t k = 0;
    if (include_input) {
        for (std::size_t i = 0; i < n; ++i) d_v[i] += d_out[k++];
    }
    if (frequencies == 0) return;
    for (std::size_t i = 0; i < n; ++i) {
        double s = std::sin(M_PI * v[i]);
        double c = std::cos(M_PI * v[i]);
        double freq = M_PI;
        double acc = 0.0;
        for (int l = 0; l < frequencies; ++l, freq *= 2.0) {
            const std::size_t base = k + 2 * n * static_cast<std::size_t>(l);
            acc += freq * (d_out[base + i] * c - d_out[base + n + i] * s);
            const double s2 = 2.0 * s * c;
            c = (c - s) * (c + s);
            s = s2;
        }
        d_v[i] += acc;
    }
}

DecoderGrad& DecoderGrad::operator+=(const DecoderGrad& other) {
    trunk += other.trunk;
    density_head += other.density_head;
    color += other.color;
    return *this;
}

void DecoderGrad::zero() {
    trunk.zero();
    density_head.zero();
    color.zero();
}

Decoder::Decoder(int feature_dim, const DecoderConfig& config, SeededRng& rng)
    : feature_dim_(feature_dim), config_(config) {
    if (feature_dim < 1) throw ConfigError("Decoder: feature_dim must be >= 1");
    if (config.density_hidden.empty()) throw ConfigError("Decoder: density branch needs a hidden layer");
    const PosEncConfig& pe = config.posenc;
    if (pe.L_x < 0 || pe.L_d < 0 || pe.L_t < 0) throw ConfigError("Decoder: negative posenc frequency");

    std::vector<int> trunk_widths{trunk_input_dim()};
    trunk_widths.insert(trunk_widths.end(), config.density_hidden.begin(), config.density_hidden.end());
    trunk_ = Mlp("decoder.trunk", trunk_widths, rng, /*relu_output=*/true);
    density_head_ = Mlp("decoder.sigma", {trunk_.out_dim(), 1}, rng);
    density_head_.bias(0).values[0] = config.density_bias_init;

    std::vector<int> color_widths{trunk_.out_dim() + posenc_dim(3, pe.L_d, pe.include_input)};
    color_widths.insert(color_widths.end(), config.color_hidden.begin(), config.color_hidden.end());
    color_widths.push_back(3);
    color_ = Mlp("decoder.color", color_widths, rng);
}

int Decoder::trunk_input_dim() const {
    const PosEncConfig& pe = config_.posenc;
    return feature_dim_ + posenc_dim(3, pe.L_x, pe.include_input) + posenc_dim(1, pe.L_t, pe.include_input);
}

RowMatrix Decoder::trunk_input(const RowMatrix& features, const RowMatrix& x, const Eigen::VectorXd& t) const {
    const PosEncConfig& pe = config_.posenc;
    const Eigen::Index n = features.rows();
    const int px = posenc_dim(3, pe.L_x, pe.include_input);
    const int pt = posenc_dim(1, pe.L_t, pe.include_input);
    RowMatrix in(n, trunk_input_dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        double* row = in.row(i).data();
        for (int f = 0; f < feature_dim_; ++f) row[f] = features(i, f);
        const double xi[3] = {x(i, 0), x(i, 1), x(i, 2)};
        posenc(std::span<const double>(xi, 3), pe.L_x, pe.include_input, std::span<double>(row + feature_dim_, px));
        const double ti = t[i];
        posenc(std::span<const double>(&ti, 1), pe.L_t, pe.include_input,
               std::span<double>(row + feature_dim_ + px, pt));
    }
    return in;
}

void Decoder::forward(const RowMatrix& features, const RowMatrix& x, const RowMatrix& dirs, const Eigen::VectorXd& t,
                      RowMatrix& e_log, Eigen::VectorXd& sigma, Cache* cache) const {
    const PosEncConfig& pe = config_.posenc;
    const Eigen::Index n = features.rows();
    Mlp::Cache* trunk_cache = cache ? &cache->trunk : nullptr;
    const RowMatrix hidden = trunk_.forward(trunk_input(features, x, t), trunk_cache);
    const RowMatrix raw = density_head_.forward(hidden, cache ? &cache->density_head : nullptr);
    sigma.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) sigma[i] = softplus(raw(i, 0));
    if (cache) cache->raw_sigma = raw.col(0);

    const int pd = posenc_dim(3, pe.L_d, pe.include_input);
    const int h = trunk_.out_dim();
    RowMatrix color_in(n, h + pd);
    color_in.leftCols(h) = hidden;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double di[3] = {dirs(i, 0), dirs(i, 1), dirs(i, 2)};
        posenc(std::span<const double>(di, 3), pe.L_d, pe.include_input,
               std::span<double>(color_in.row(i).data() + h, pd));
    }
    e_log = color_.forward(color_in, cache ? &cache->color : nullptr);
}

void Decoder::backward(const Cache& cache, const RowMatrix& d_e_log, const Eigen::VectorXd& d_sigma,
                       DecoderGrad& grad, RowMatrix* d_features, RowMatrix* d_x, RowMatrix* d_dirs,
                       Eigen::VectorXd* d_t, const RowMatrix* x, const RowMatrix* dirs,
                       const Eigen::VectorXd* t) const {
    const PosEncConfig& pe = config_.posenc;
    const Eigen::Index n = d_e_log.rows();
    const int h = trunk_.out_dim();

    const RowMatrix d_color_in = color_.backward(cache.color, d_e_log, grad.color);
    RowMatrix d_raw(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) d_raw(i, 0) = d_sigma[i] * sigmoid(cache.raw_sigma[i]);
    RowMatrix d_hidden = density_head_.backward(cache.density_head, d_raw, grad.density_head);
    d_hidden += d_color_in.leftCols(h);
    const RowMatrix d_in = trunk_.backward(cache.trunk, d_hidden, grad.trunk);

    if (d_features) *d_features = d_in.leftCols(feature_dim_);
    const int px = posenc_dim(3, pe.L_x, pe.include_input);
    const int pt = posenc_dim(1, pe.L_t, pe.include_input);
    const int pd = posenc_dim(3, pe.L_d, pe.include_input);
    if (d_x) {
        if (!x) throw ArgumentError("Decoder::backward: positions required for d_x");
        d_x->setZero(n, 3);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double xi[3] = {(*x)(i, 0), (*x)(i, 1), (*x)(i, 2)};
            posenc_backward(std::span<const double>(xi, 3), pe.L_x, pe.include_input,
                            std::span<const double>(d_in.row(i).data() + feature_dim_, px),
                            std::span<double>(d_x->row(i).data(), 3));
        }
    }
    if (d_t) {
        if (!t) throw ArgumentError("Decoder::backward: times required for d_t");
        d_t->setZero(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double ti = (*t)[i];
            posenc_backward(std::span<const double>(&ti, 1), pe.L_t, pe.include_input,
                            std::span<const double>(d_in.row(i).data() + feature_dim_ + px, pt),
                            std::span<double>(d_t->data() + i, 1));
        }
    }
    if (d_dirs) {
        if (!dirs) throw ArgumentError("Decoder::backward: directions required for d_dirs");
        d_dirs->setZero(n, 3);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double di[3] = {(*dirs)(i, 0), (*dirs)(i, 1), (*dirs)(i, 2)};
            posenc_backward(std::span<const double>(di, 3), pe.L_d, pe.include_input,
                            std::span<const double>(d_color_in.row(i).data() + h, pd),
                            std::span<double>(d_dirs->row(i).data(), 3));
        }
    }
}

RadianceSample Decoder::decode(std::span<const double> features, const Vec3& x, const Vec3& d, double t) const {
    if (std::abs(d.norm() - 1.0) > 1e-6) throw ArgumentError("Decoder::decode: view direction is not normalized");
    if (static_cast<int>(features.size()) != feature_dim_) throw ConfigError("Decoder::decode: feature width mismatch");
    RowMatrix f(1, feature_dim_);
    for (int i = 0; i < feature_dim_; ++i) f(0, i) = features[i];
    RowMatrix xm(1, 3), dm(1, 3);
    xm.row(0) = x.transpose();
    dm.row(0) = d.transpose();
    Eigen::VectorXd tm(1);
    tm[0] = t;
    RowMatrix e;
    Eigen::VectorXd s;
    forward(f, xm, dm, tm, e, s, nullptr);
    return RadianceSample{e.row(0).transpose(), s[0]};
}

Eigen::VectorXd Decoder::density(const RowMatrix& features, const RowMatrix& x, const Eigen::VectorXd& t) const {
    const RowMatrix raw = density_head_.forward(trunk_.forward(trunk_input(features, x, t)));
    Eigen::VectorXd sigma(raw.rows());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) sigma[i] = softplus(raw(i, 0));
    return sigma;
}

DecoderGrad Decoder::make_grad() const {
    DecoderGrad g;
    g.trunk = MlpGrad(trunk_);
    g.density_head = MlpGrad(density_head_);
    g.color = MlpGrad(color_);
    return g;
}

void Decoder::accumulate(const DecoderGrad& grad) {
    trunk_.accumulate(grad.trunk);
    density_head_.accumulate(grad.density_head);
    color_.accumulate(grad.color);
}

std::vector<ParamTensor*> Decoder::parameters() {
    std::vector<ParamTensor*> out = trunk_.parameters();
    for (auto* p : density_head_.parameters()) out.push_back(p);
    for (auto* p : color_.parameters()) out.push_back(p);
    return out;
}

std::vector<const ParamTensor*> Decoder::parameters() const {
    std::vector<const ParamTensor*> out = trunk_.parameters();
    for (auto* p : density_head_.parameters()) out.push_back(p);
    for (auto* p : color_.parameters()) out.push_back(p);
    return out;
}

}  // namespace hdrhex
