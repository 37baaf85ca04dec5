#include "hdrhex/diffcore.hpp"

#include "hdrhex/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hdrhex {

std::size_t shape_numel(std::span<const std::size_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ParamTensor::ParamTensor(std::string name_, std::vector<std::size_t> shape_, double fill)
    : name(std::move(name_)), shape(std::move(shape_)) {
    const std::size_t n = shape_numel(shape);
    values.assign(n, fill);
    grad.assign(n, 0.0);
}

void ParamTensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

AdamState::AdamState(std::size_t n, double b1, double b2, double e)
    : m(n, 0.0), v(n, 0.0), beta1(b1), beta2(b2), eps(e) {}

void adam_step(ParamTensor& param, AdamState& state, double lr) {
    const std::size_t n = param.values.size();
    if (param.grad.size() != n || state.m.size() != n || state.v.size() != n) {
        throw ConfigError("adam_step: state/gradient shape does not match parameter '" + param.name + "'");
    }
    // lr == 0 is accepted so that a frozen optimizer is expressible.
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
        throw ArgumentError("adam_step: learning rate must be finite and non-negative");
    }
    state.step += 1;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    double* p = param.values.data();
    double* g = param.grad.data();
    double* m = state.m.data();
    double* v = state.v.data();
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        g[i] = 0.0;
    }
}

double lr_schedule(long step, long total_steps, double lr0) {
    if (total_steps < 1) throw ArgumentError("lr_schedule: total_steps must be >= 1");
    if (step < 0 || step > total_steps) throw ArgumentError("lr_schedule: step out of range");
    if (!(lr0 > 0.0)) throw ArgumentError("lr_schedule: lr0 must be positive");
    return lr0 * std::pow(0.1, static_cast<double>(step) / static_cast<double>(total_steps));
}

std::uint64_t SeededRng::mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t SeededRng::below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("SeededRng::below: empty range");
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

double SeededRng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

GradCheckResult grad_check(const LossFn& loss_fn, std::span<ParamTensor* const> params, double h) {
    if (!(h > 0.0)) throw ArgumentError("grad_check: step size must be positive");

    for (auto* p : params) p->zero_grad();
    const double f0 = loss_fn();
    if (!std::isfinite(f0)) throw NumericalError("grad_check: non-finite loss at the base point");

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) analytic.push_back(p->grad);

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        ParamTensor& p = *params[pi];
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            const double saved = p.values[i];
            p.values[i] = saved + h;
            const double fp = loss_fn();
            p.values[i] = saved - h;
            const double fm = loss_fn();
            p.values[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericalError("grad_check: non-finite loss while perturbing '" + p.name + "'");
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            ++result.coordinates;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = p.name;
                result.worst_index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    for (auto* p : params) p->zero_grad();
    return result;
}

}  // namespace hdrhex
