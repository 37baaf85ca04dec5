#pragma once

#include "hdrhex/hexplane.hpp"
#include "hdrhex/mlp.hpp"

#include <span>
#include <vector>

namespace hdrhex {

/// Output width of posenc for an n-vector.
int posenc_dim(int n, int frequencies, bool include_input);

/// [v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)],
/// each block element-wise over v. `out` must hold posenc_dim values.
void posenc(std::span<const double> v, int frequencies, bool include_input, std::span<double> out);
std::vector<double> posenc(std::span<const double> v, int frequencies, bool include_input = true);
/// Accumulates dL/dv into `d_v`.
void posenc_backward(std::span<const double> v, int frequencies, bool include_input, std::span<const double> d_out,
                     std::span<double> d_v);

struct PosEncConfig {
    int L_x = 6;
    int L_d = 4;
    int L_t = 0;
    bool include_input = true;
};

struct DecoderConfig {
    std::vector<int> density_hidden{32, 32};
    std::vector<int> color_hidden{32};
    PosEncConfig posenc{};
    /// Initial bias of the raw density output; negative starts the scene mostly transparent.
    double density_bias_init = 0.0;
};

/// Log-radiance E' per channel and density sigma >= 0.
struct RadianceSample {
    Vec3 e_log = Vec3::Zero();
    double sigma = 0.0;
};

struct DecoderGrad {
    MlpGrad trunk;
    MlpGrad density_head;
    MlpGrad color;
    DecoderGrad() = default;
    DecoderGrad& operator+=(const DecoderGrad& other);
    void zero();
};

/// Density branch: [D, posenc(x), posenc(t)] -> hidden features h -> softplus(raw sigma).
/// Color branch: [h, posenc(d)] -> linear E'. Positions are the field's unit coordinates.
class Decoder {
public:
    struct Cache {
        Mlp::Cache trunk;
        Mlp::Cache density_head;
        Mlp::Cache color;
        Eigen::VectorXd raw_sigma;
    };

    Decoder() = default;
    Decoder(int feature_dim, const DecoderConfig& config, SeededRng& rng);

    int feature_dim() const noexcept { return feature_dim_; }
    const DecoderConfig& config() const noexcept { return config_; }
    int trunk_input_dim() const;
    int hidden_dim() const { return trunk_.out_dim(); }

    Mlp& trunk() { return trunk_; }
    Mlp& density_head() { return density_head_; }
    Mlp& color() { return color_; }
    const Mlp& trunk() const { return trunk_; }
    const Mlp& density_head() const { return density_head_; }
    const Mlp& color() const { return color_; }

    /// Throws ArgumentError if |‖d‖ - 1| > 1e-6.
    RadianceSample decode(std::span<const double> features, const Vec3& x, const Vec3& d, double t) const;

    /// Batched forward. Rows of `features`, `x`, `dirs`, `t` describe one sample each.
    void forward(const RowMatrix& features, const RowMatrix& x, const RowMatrix& dirs, const Eigen::VectorXd& t,
                 RowMatrix& e_log, Eigen::VectorXd& sigma, Cache* cache) const;

    /// Backward of `forward`. Optional outputs receive input gradients.
    void backward(const Cache& cache, const RowMatrix& d_e_log, const Eigen::VectorXd& d_sigma, DecoderGrad& grad,
                  RowMatrix* d_features, RowMatrix* d_x = nullptr, RowMatrix* d_dirs = nullptr,
                  Eigen::VectorXd* d_t = nullptr, const RowMatrix* x = nullptr, const RowMatrix* dirs = nullptr,
                  const Eigen::VectorXd* t = nullptr) const;

    /// Density only (occupancy refresh).
    Eigen::VectorXd density(const RowMatrix& features, const RowMatrix& x, const Eigen::VectorXd& t) const;

    DecoderGrad make_grad() const;
    void accumulate(const DecoderGrad& grad);

    std::vector<ParamTensor*> parameters();
    std::vector<const ParamTensor*> parameters() const;

private:
    RowMatrix trunk_input(const RowMatrix& features, const RowMatrix& x, const Eigen::VectorXd& t) const;

    int feature_dim_ = 0;
    DecoderConfig config_{};
    Mlp trunk_;
    Mlp density_head_;
    Mlp color_;
};

double softplus(double x);
double sigmoid(double x);

}  // namespace hdrhex
