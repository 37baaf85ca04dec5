#include "hdrhex/exposure.hpp"

#include "hdrhex/decoder.hpp"
#include "hdrhex/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hdrhex {

ExposureTable::ExposureTable(std::size_t images, const ExposureConfig& config, SeededRng& rng)
    : images_(images), config_(config) {
    if (images == 0) throw ConfigError("ExposureTable: need at least one image");
    if (config.use_mlp) {
        if (config.embed_dim < 1) throw ConfigError("ExposureTable: embed_dim must be >= 1");
        embeddings_ = ParamTensor("exposure.embed", {images, static_cast<std::size_t>(config.embed_dim)});
        std::vector<int> widths{config.embed_dim};
        widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
        widths.push_back(1);
        mlp_ = Mlp("exposure.mlp", widths, rng);
        for (int l = 0; l + 1 < mlp_.layers(); ++l) {
            std::fill(mlp_.bias(l).values.begin(), mlp_.bias(l).values.end(), config.hidden_bias_init);
        }
    } else {
        embeddings_ = ParamTensor("exposure.direct", {images});
    }
}

Eigen::RowVectorXd ExposureTable::embedding_row(std::size_t j) const {
    const int k = config_.embed_dim;
    return Eigen::Map<const Eigen::RowVectorXd>(embeddings_.values.data() + j * k, k);
}

double ExposureTable::log_exposure(std::size_t j) const {
    if (j >= images_) throw IndexError("ExposureTable: unknown image index " + std::to_string(j));
    if (!config_.use_mlp) return embeddings_.values[j];
    return mlp_.forward_one(embedding_row(j))[0];
}

std::vector<double> ExposureTable::log_exposures() const {
    std::vector<double> out(images_);
    if (!config_.use_mlp) {
        std::copy(embeddings_.values.begin(), embeddings_.values.end(), out.begin());
        return out;
    }
    const RowMatrix all = Eigen::Map<const RowMatrix>(embeddings_.values.data(), static_cast<Eigen::Index>(images_),
                                                      config_.embed_dim);
    const RowMatrix e = mlp_.forward(all);
    for (std::size_t j = 0; j < images_; ++j) out[j] = e(static_cast<Eigen::Index>(j), 0);
    return out;
}

void ExposureTable::backward(std::size_t j, double d_log_exposure) {
    if (j >= images_) throw IndexError("ExposureTable: unknown image index " + std::to_string(j));
    if (!config_.use_mlp) {
        embeddings_.grad[j] += d_log_exposure;
        return;
    }
    Mlp::Cache cache;
    mlp_.forward(RowMatrix(embedding_row(j)), &cache);
    MlpGrad g(mlp_);
    RowMatrix d(1, 1);
    d(0, 0) = d_log_exposure;
    const RowMatrix d_embed = mlp_.backward(cache, d, g);
    mlp_.accumulate(g);
    const int k = config_.embed_dim;
    for (int i = 0; i < k; ++i) embeddings_.grad[j * k + i] += d_embed(0, i);
}

std::vector<ParamTensor*> ExposureTable::network_parameters() {
    if (!config_.use_mlp) return {};
    return mlp_.parameters();
}

std::vector<const ParamTensor*> ExposureTable::parameters() const {
    std::vector<const ParamTensor*> out{&embeddings_};
    if (config_.use_mlp) {
        for (auto* p : mlp_.parameters()) out.push_back(p);
    }
    return out;
}

double crf_sigmoid(double x) { return sigmoid(std::clamp(x, -Crf::kClamp, Crf::kClamp)); }

Crf Crf::fixed_sigmoid() { return Crf{}; }

Crf Crf::trainable(SeededRng& rng, std::vector<int> hidden, double c0, double lambda_u) {
    Crf crf;
    crf.variant_ = CrfVariant::TrainableMlp;
    crf.c0_ = c0;
    crf.lambda_u_ = lambda_u;
    std::vector<int> widths{1};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(1);
    for (int c = 0; c < 3; ++c) {
        Mlp& m = crf.mlps_[c];
        m = Mlp("crf.mlp" + std::to_string(c), widths, rng);
        // Zero biases would put every first-layer kink exactly at x = 0, where
        // the zero-point term is evaluated.
        for (double& b : m.bias(0).values) b = rng.uniform(-1.0, 1.0);
        for (int l = 1; l + 1 < m.layers(); ++l) std::fill(m.bias(l).values.begin(), m.bias(l).values.end(), 0.1);
    }
    return crf;
}

double Crf::operator()(double x, int channel) const {
    const double xc = std::clamp(x, -kClamp, kClamp);
    if (variant_ == CrfVariant::FixedSigmoid) return sigmoid(xc);
    Eigen::RowVectorXd in(1);
    in[0] = xc;
    return sigmoid(mlps_[channel].forward_one(in)[0]);
}

double Crf::backward(double x, int channel, double d_out, std::array<MlpGrad, 3>* grads) const {
    const bool inside = x > -kClamp && x < kClamp;
    const double xc = std::clamp(x, -kClamp, kClamp);
    if (variant_ == CrfVariant::FixedSigmoid) {
        const double s = sigmoid(xc);
        return inside ? s * (1.0 - s) * d_out : 0.0;
    }
    Mlp::Cache cache;
    RowMatrix in(1, 1);
    in(0, 0) = xc;
    const RowMatrix pre = mlps_[channel].forward(in, &cache);
    const double s = sigmoid(pre(0, 0));
    RowMatrix d_pre(1, 1);
    d_pre(0, 0) = d_out * s * (1.0 - s);
    MlpGrad local(mlps_[channel]);
    const RowMatrix d_in = mlps_[channel].backward(cache, d_pre, local);
    if (grads) (*grads)[channel] += local;
    return inside ? d_in(0, 0) : 0.0;
}

Eigen::VectorXd Crf::forward_batch(int channel, const Eigen::VectorXd& x, BatchCache* cache) const {
    const Eigen::VectorXd xc = x.cwiseMax(-kClamp).cwiseMin(kClamp);
    Eigen::VectorXd out(x.size());
    if (variant_ == CrfVariant::FixedSigmoid) {
        for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = sigmoid(xc[i]);
        if (cache) cache->x = x;
        return out;
    }
    RowMatrix in = xc;
    const RowMatrix pre = mlps_[channel].forward(in, cache ? &cache->mlp : nullptr);
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = sigmoid(pre(i, 0));
    if (cache) {
        cache->pre = pre.col(0);
        cache->x = x;
    }
    return out;
}

Eigen::VectorXd Crf::backward_batch(int channel, const BatchCache& cache, const Eigen::VectorXd& d_out,
                                    MlpGrad* grad) const {
    const Eigen::Index n = d_out.size();
    Eigen::VectorXd d_x(n);
    if (variant_ == CrfVariant::FixedSigmoid) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double x = cache.x[i];
            const double s = sigmoid(std::clamp(x, -kClamp, kClamp));
            d_x[i] = (x > -kClamp && x < kClamp) ? s * (1.0 - s) * d_out[i] : 0.0;
        }
        return d_x;
    }
    RowMatrix d_pre(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s = sigmoid(cache.pre[i]);
        d_pre(i, 0) = d_out[i] * s * (1.0 - s);
    }
    const RowMatrix d_in = mlps_[channel].backward(cache.mlp, d_pre, *grad);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = cache.x[i];
        d_x[i] = (x > -kClamp && x < kClamp) ? d_in(i, 0) : 0.0;
    }
    return d_x;
}

double Crf::zero_point_loss() const {
    if (variant_ == CrfVariant::FixedSigmoid) return 0.0;
    double total = 0.0;
    for (int c = 0; c < 3; ++c) total += std::abs((*this)(0.0, c) - c0_);
    return total;
}

void Crf::zero_point_backward(double weight) {
    if (variant_ == CrfVariant::FixedSigmoid) return;
    std::array<MlpGrad, 3> grads = make_grads();
    for (int c = 0; c < 3; ++c) {
        const double dev = (*this)(0.0, c) - c0_;
        const double sign = dev > 0.0 ? 1.0 : (dev < 0.0 ? -1.0 : 0.0);
        if (sign != 0.0) backward(0.0, c, weight * sign, &grads);
    }
    accumulate(grads);
}

std::array<MlpGrad, 3> Crf::make_grads() const {
    if (variant_ == CrfVariant::FixedSigmoid) return {};
    return {MlpGrad(mlps_[0]), MlpGrad(mlps_[1]), MlpGrad(mlps_[2])};
}

void Crf::accumulate(const std::array<MlpGrad, 3>& grads) {
    if (variant_ == CrfVariant::FixedSigmoid) return;
    for (int c = 0; c < 3; ++c) mlps_[c].accumulate(grads[c]);
}

std::vector<ParamTensor*> Crf::parameters() {
    std::vector<ParamTensor*> out;
    if (variant_ == CrfVariant::FixedSigmoid) return out;
    for (auto& m : mlps_) {
        for (auto* p : m.parameters()) out.push_back(p);
    }
    return out;
}

std::vector<const ParamTensor*> Crf::parameters() const {
    std::vector<const ParamTensor*> out;
    if (variant_ == CrfVariant::FixedSigmoid) return out;
    for (const auto& m : mlps_) {
        for (auto* p : m.parameters()) out.push_back(p);
    }
    return out;
}

Vec3 ldr_color(const Crf& crf, const Vec3& e_log, double e_prime) {
    return Vec3(crf(e_log[0] + e_prime, 0), crf(e_log[1] + e_prime, 1), crf(e_log[2] + e_prime, 2));
}

}  // namespace hdrhex
