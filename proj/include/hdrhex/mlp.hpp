#pragma once

#include "hdrhex/diffcore.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace hdrhex {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Mlp;

/// Gradient buffers laid out like an Mlp's parameters. Kept separate from
/// ParamTensor::grad so that worker threads can accumulate privately.
struct MlpGrad {
    std::vector<RowMatrix> dW;
    std::vector<Eigen::RowVectorXd> db;

    MlpGrad() = default;
    explicit MlpGrad(const Mlp& mlp);
    void zero();
    MlpGrad& operator+=(const MlpGrad& other);
};

/// Fully connected network. Hidden layers use ReLU; the last layer is linear
/// unless `relu_output` is set. Weights of layer l are stored as an
/// [in, out] row-major matrix so that a batch is processed as X * W + b.
class Mlp {
public:
    struct Cache {
        // activations[0] is the input, activations[l] the output of layer l.
        std::vector<RowMatrix> activations;
    };

    Mlp() = default;
    Mlp(std::string name, std::vector<int> widths, SeededRng& rng, bool relu_output = false);

    int in_dim() const { return widths_.front(); }
    int out_dim() const { return widths_.back(); }
    int layers() const { return static_cast<int>(widths_.size()) - 1; }
    const std::vector<int>& widths() const noexcept { return widths_; }
    bool relu_output() const noexcept { return relu_output_; }

    ParamTensor& weight(int l) { return weights_[l]; }
    const ParamTensor& weight(int l) const { return weights_[l]; }
    ParamTensor& bias(int l) { return biases_[l]; }
    const ParamTensor& bias(int l) const { return biases_[l]; }

    /// Row i of X is one sample. `cache` may be null for inference.
    RowMatrix forward(const RowMatrix& x, Cache* cache = nullptr) const;
    /// Returns dL/dX and accumulates parameter gradients into `grad`.
    RowMatrix backward(const Cache& cache, const RowMatrix& d_out, MlpGrad& grad) const;
    /// Single-sample convenience wrapper.
    Eigen::RowVectorXd forward_one(const Eigen::RowVectorXd& x) const;

    /// Adds `grad` into the ParamTensor gradients.
    void accumulate(const MlpGrad& grad);

    std::vector<ParamTensor*> parameters();
    std::vector<const ParamTensor*> parameters() const;

private:
    std::string name_;
    std::vector<int> widths_;
    bool relu_output_ = false;
    std::vector<ParamTensor> weights_;
    std::vector<ParamTensor> biases_;
};

}  // namespace hdrhex
