#pragma once

// JSON experiment / estimation configs. Unknown keys are rejected with the
// offending key path and its line in the source text.

#include "deconf/simulation.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace deconf::config {

struct ConfigError : ValidationError {
    using ValidationError::ValidationError;
};

struct RunConfig {
    sim::ExperimentGrid grid;
    std::uint64_t seed = 20240601;
    int threads = 1;
    sim::CovariateTransform covariate_transform = sim::CovariateTransform::standardize;  // estimate command
    bool export_datasets = false;
    std::optional<std::uint64_t> fit_seed;  // estimate command; default derive_seed(seed, 2)
};

/// Parses a config document. `source` names the input in diagnostics.
RunConfig parse(const std::string& text, const std::string& source = "<config>");
RunConfig load(const std::string& path);

/// Re-derives seeds after a --seed override (coefficient seeds that were not
/// given explicitly follow the base seed).
void override_seed(RunConfig& cfg, std::uint64_t seed);

/// Human-readable key reference printed by --print-schema.
std::string schema();

} // namespace deconf::config
