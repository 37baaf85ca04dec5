#pragma once

#include "hdrhex/diffcore.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hdrhex {

/// Finite-difference checks of every analytical backward pass on small,
/// randomly initialized components.
struct ProbeResult {
    std::string component;  // hexplane | decoder | exposure | renderer
    std::string probe;
    GradCheckResult check;
    double seconds = 0.0;
};

const std::vector<std::string>& probe_components();

/// Runs the probes of `component` ("all" for every component). With
/// `sign_flip` the analytical gradients are negated, which must fail.
/// Throws ArgumentError for an unknown component.
std::vector<ProbeResult> run_grad_probes(const std::string& component, std::uint64_t seed, bool sign_flip = false);

}  // namespace hdrhex
