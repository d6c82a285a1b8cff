#pragma once

// Self-test oracles shared by `deconf verify` and the acceptance suite.

#include <cstdint>
#include <string>
#include <vector>

namespace deconf::verify {

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0;
};

/// Enumeration identity tau_d - tau = covariance expression, in both the
/// outcome/treatment form and the m_t/e form, on a seeded corpus that starts
/// with the two-point model.
Check bias_formula_corpus(int models = 25, std::uint64_t seed = 7);

/// The X in {0,1} model: bias 0.5 exactly.
Check two_point_bias();

/// gamma(-1) = alpha, gamma(+1) = beta for random pairs.
Check hyperbola_endpoints(int pairs = 100, std::uint64_t seed = 11);

/// |alpha'gamma gamma'beta - rho| on a w grid.
Check hyperbola_residual(int pairs = 100, int grid = 101, std::uint64_t seed = 11);

/// Dropping the null component and renormalizing breaks the constraint at
/// every interior grid w.
Check truncated_direction(int pairs = 100, int grid = 101, std::uint64_t seed = 11);

/// 64-node quadrature against stratified Monte Carlo for e_d.
Check quadrature_vs_monte_carlo(int pairs = 50, int draws = 1000000, std::uint64_t seed = 13);

std::vector<Check> run_all();

} // namespace deconf::verify
