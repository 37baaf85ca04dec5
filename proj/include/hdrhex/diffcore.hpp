#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hdrhex {

/// Trainable parameter storage with an accumulated gradient of the same shape.
struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;

    ParamTensor() = default;
    ParamTensor(std::string name, std::vector<std::size_t> shape, double fill = 0.0);

    std::size_t size() const noexcept { return values.size(); }
    void zero_grad();
};

std::size_t shape_numel(std::span<const std::size_t> shape);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n, double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-8);
};

/// Bias-corrected Adam update. Zeroes `param.grad` and increments `state.step`.
/// Throws ConfigError when the moment buffers do not match the parameter.
void adam_step(ParamTensor& param, AdamState& state, double lr);

/// Exponential decay to a tenth of `lr0` over `total_steps`.
double lr_schedule(long step, long total_steps, double lr0);

/// Deterministic 64-bit generator. Uniforms are built from raw engine bits so
/// the stream does not depend on the standard library's distributions.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();

    /// Independent child stream keyed by `key`.
    SeededRng fork(std::uint64_t key) const { return SeededRng(mix(seed_ ^ mix(key + 0x632be59bd9b4e019ULL))); }

    static std::uint64_t mix(std::uint64_t x);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

/// Evaluates the loss and accumulates its analytical gradient into the
/// `grad` members of the parameters handed to grad_check.
using LossFn = std::function<double()>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
};

/// Compares analytical gradients against central differences, coordinate by
/// coordinate. Relative error uses max(|a|, |n|, 1e-8) as denominator.
/// Throws NumericalError if the loss is non-finite at any probe point.
GradCheckResult grad_check(const LossFn& loss_fn, std::span<ParamTensor* const> params, double h = 1e-5);

}  // namespace hdrhex
