#pragma once

#include "hdrhex/hexplane.hpp"
#include "hdrhex/mlp.hpp"

#include <array>
#include <cstddef>
#include <vector>

namespace hdrhex {

struct ExposureConfig {
    int embed_dim = 8;
    std::vector<int> hidden{16, 16};
    /// false: every image owns a directly learned log-exposure scalar.
    bool use_mlp = true;
    /// Positive hidden biases keep the ReLUs alive at the all-zero initial embedding.
    double hidden_bias_init = 0.1;
};

/// Per-image embeddings a_j and the shared map a_j -> e'_j (log-exposure).
class ExposureTable {
public:
    ExposureTable() = default;
    ExposureTable(std::size_t images, const ExposureConfig& config, SeededRng& rng);

    std::size_t size() const noexcept { return images_; }
    bool uses_mlp() const noexcept { return config_.use_mlp; }
    const ExposureConfig& config() const noexcept { return config_; }

    /// Throws IndexError for j >= size().
    double log_exposure(std::size_t j) const;
    std::vector<double> log_exposures() const;
    /// Accumulates d e'_j into the embedding and network gradients.
    void backward(std::size_t j, double d_log_exposure);

    ParamTensor& embeddings() noexcept { return embeddings_; }
    const ParamTensor& embeddings() const noexcept { return embeddings_; }
    Mlp& mlp() noexcept { return mlp_; }
    const Mlp& mlp() const noexcept { return mlp_; }

    std::vector<ParamTensor*> embedding_parameters() { return {&embeddings_}; }
    std::vector<ParamTensor*> network_parameters();
    std::vector<const ParamTensor*> parameters() const;

private:
    Eigen::RowVectorXd embedding_row(std::size_t j) const;

    std::size_t images_ = 0;
    ExposureConfig config_{};
    ParamTensor embeddings_;
    Mlp mlp_;
};

enum class CrfVariant { FixedSigmoid, TrainableMlp };

/// Camera response g. The fixed variant is the logistic sigmoid; the trainable
/// variant is sigmoid(mlp_c(x)) with one small network per color channel.
class Crf {
public:
    static constexpr double kClamp = 40.0;

    struct BatchCache {
        Mlp::Cache mlp;
        Eigen::VectorXd pre;  // network output before the sigmoid
        Eigen::VectorXd x;    // clamped inputs
    };

    Crf() = default;
    static Crf fixed_sigmoid();
    static Crf trainable(SeededRng& rng, std::vector<int> hidden = {16, 16}, double c0 = 0.5, double lambda_u = 0.1);

    CrfVariant variant() const noexcept { return variant_; }
    double c0() const noexcept { return c0_; }
    double lambda_u() const noexcept { return lambda_u_; }
    void set_lambda_u(double v) noexcept { lambda_u_ = v; }
    void set_c0(double v) noexcept { c0_ = v; }

    double operator()(double x, int channel = 0) const;
    /// d g / d x, and parameter gradients scaled by d_out added to `grads` (trainable only).
    double backward(double x, int channel, double d_out, std::array<MlpGrad, 3>* grads) const;

    /// Batched over samples for one channel.
    Eigen::VectorXd forward_batch(int channel, const Eigen::VectorXd& x, BatchCache* cache) const;
    /// Returns d/dx per sample; accumulates parameter gradients.
    Eigen::VectorXd backward_batch(int channel, const BatchCache& cache, const Eigen::VectorXd& d_out,
                                   MlpGrad* grad) const;

    /// Sum over channels of |g_c(0) - C0|; zero for the fixed sigmoid.
    double zero_point_loss() const;
    /// Adds weight * d(zero_point_loss) to the CRF parameter gradients.
    void zero_point_backward(double weight);

    std::array<Mlp, 3>& mlps() noexcept { return mlps_; }
    const std::array<Mlp, 3>& mlps() const noexcept { return mlps_; }
    std::array<MlpGrad, 3> make_grads() const;
    void accumulate(const std::array<MlpGrad, 3>& grads);

    std::vector<ParamTensor*> parameters();
    std::vector<const ParamTensor*> parameters() const;

private:
    CrfVariant variant_ = CrfVariant::FixedSigmoid;
    double c0_ = 0.5;
    double lambda_u_ = 0.1;
    std::array<Mlp, 3> mlps_{};
};

/// Per channel c = g(E'_c + e').
Vec3 ldr_color(const Crf& crf, const Vec3& e_log, double e_prime);

/// Fixed-sigmoid crf evaluated with the input clamp.
double crf_sigmoid(double x);

}  // namespace hdrhex
