#include "hdrhex/mlp.hpp"

#include "hdrhex/error.hpp"

#include <cmath>

namespace hdrhex {

namespace {

using ConstWeightMap = Eigen::Map<const RowMatrix>;
using WeightMap = Eigen::Map<RowMatrix>;
using ConstBiasMap = Eigen::Map<const Eigen::RowVectorXd>;
using BiasMap = Eigen::Map<Eigen::RowVectorXd>;

}  // namespace

MlpGrad::MlpGrad(const Mlp& mlp) {
    for (int l = 0; l < mlp.layers(); ++l) {
        dW.push_back(RowMatrix::Zero(mlp.widths()[l], mlp.widths()[l + 1]));
        db.push_back(Eigen::RowVectorXd::Zero(mlp.widths()[l + 1]));
    }
}

void MlpGrad::zero() {
    for (auto& w : dW) w.setZero();
    for (auto& b : db) b.setZero();
}

MlpGrad& MlpGrad::operator+=(const MlpGrad& other) {
    for (std::size_t l = 0; l < dW.size(); ++l) {
        dW[l] += other.dW[l];
        db[l] += other.db[l];
    }
    return *this;
}

Mlp::Mlp(std::string name, std::vector<int> widths, SeededRng& rng, bool relu_output)
    : name_(std::move(name)), widths_(std::move(widths)), relu_output_(relu_output) {
    if (widths_.size() < 2) throw ConfigError("Mlp '" + name_ + "': need at least input and output widths");
    for (int w : widths_) {
        if (w < 1) throw ConfigError("Mlp '" + name_ + "': layer widths must be >= 1");
    }
    for (int l = 0; l < layers(); ++l) {
        const auto in = static_cast<std::size_t>(widths_[l]);
        const auto out = static_cast<std::size_t>(widths_[l + 1]);
        ParamTensor w(name_ + ".w" + std::to_string(l), {in, out});
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        for (double& v : w.values) v = rng.uniform(-bound, bound);
        weights_.push_back(std::move(w));
        biases_.emplace_back(name_ + ".b" + std::to_string(l), std::vector<std::size_t>{out});
    }
}

RowMatrix Mlp::forward(const RowMatrix& x, Cache* cache) const {
    if (x.cols() != in_dim()) throw ConfigError("Mlp '" + name_ + "': input width mismatch");
    if (cache) {
        cache->activations.resize(layers() + 1);
        cache->activations[0] = x;
    }
    RowMatrix h = x;
    for (int l = 0; l < layers(); ++l) {
        ConstWeightMap w(weights_[l].values.data(), widths_[l], widths_[l + 1]);
        ConstBiasMap b(biases_[l].values.data(), widths_[l + 1]);
        RowMatrix z = h * w;
        z.rowwise() += b;
        if (l + 1 < layers() || relu_output_) z = z.cwiseMax(0.0);
        h = std::move(z);
        if (cache) cache->activations[l + 1] = h;
    }
    return h;
}

RowMatrix Mlp::backward(const Cache& cache, const RowMatrix& d_out, MlpGrad& grad) const {
    RowMatrix g = d_out;
    for (int l = layers() - 1; l >= 0; --l) {
        const RowMatrix& out = cache.activations[l + 1];
        if (l + 1 < layers() || relu_output_) g = g.cwiseProduct((out.array() > 0.0).cast<double>().matrix());
        const RowMatrix& in = cache.activations[l];
        grad.dW[l].noalias() += in.transpose() * g;
        grad.db[l] += g.colwise().sum();
        ConstWeightMap w(weights_[l].values.data(), widths_[l], widths_[l + 1]);
        RowMatrix gin = g * w.transpose();
        g = std::move(gin);
    }
    return g;
}

Eigen::RowVectorXd Mlp::forward_one(const Eigen::RowVectorXd& x) const {
    RowMatrix m = x;
    return forward(m).row(0);
}

void Mlp::accumulate(const MlpGrad& grad) {
    for (int l = 0; l < layers(); ++l) {
        WeightMap(weights_[l].grad.data(), widths_[l], widths_[l + 1]) += grad.dW[l];
        BiasMap(biases_[l].grad.data(), widths_[l + 1]) += grad.db[l];
    }
}

std::vector<ParamTensor*> Mlp::parameters() {
    std::vector<ParamTensor*> out;
    for (int l = 0; l < layers(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

std::vector<const ParamTensor*> Mlp::parameters() const {
    std::vector<const ParamTensor*> out;
    for (int l = 0; l < layers(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

}  // namespace hdrhex
