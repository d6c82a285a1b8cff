#include "deconf/verify.hpp"

#include "deconf/estimators.hpp"
#include "deconf/scorefamily.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

namespace deconf::verify {
namespace {

std::string fmt(const char* f, double a, double b = 0, double c = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Check timed(std::string name, const std::function<void(Check&)>& body)
{
    Check c;
    c.name = std::move(name);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.passed = false;
        c.detail = std::string("exception: ") + e.what();
    }
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return c;
}

Vec<double> random_unit(std::mt19937_64& rng, Index p)
{
    std::normal_distribution<double> nd;
    Vec<double> v(p);
    for (Index i = 0; i < p; ++i) v(i) = nd(rng);
    return v / v.norm();
}

struct Pair {
    Vec<double> alpha, beta;
    double rho;
};

// Unit alpha, beta with alpha'beta = rho drawn from (0.05, 0.95).
std::vector<Pair> random_pairs(int count, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(3, 30);
    std::uniform_real_distribution<double> rd(0.05, 0.95);
    std::vector<Pair> out;
    for (int k = 0; k < count; ++k) {
        const Index p = dim(rng);
        Pair pr;
        pr.alpha = random_unit(rng, p);
        Vec<double> v = random_unit(rng, p);
        v -= pr.alpha.dot(v) * pr.alpha;
        v /= v.norm();
        pr.rho = rd(rng);
        pr.beta = pr.rho * pr.alpha + std::sqrt(1 - pr.rho * pr.rho) * v;
        out.push_back(std::move(pr));
    }
    return out;
}

std::vector<double> w_grid(int grid)
{
    std::vector<double> w(grid);
    for (int i = 0; i < grid; ++i) w[i] = -1.0 + 2.0 * i / (grid - 1);
    return w;
}

} // namespace

Check bias_formula_corpus(int models, std::uint64_t seed)
{
    return timed("bias_formula_corpus", [&](Check& c) {
        const auto corpus = discrete_corpus<double>(models, seed);
        double worst_outcomes = 0, worst_scores = 0, worst_forms = 0;
        for (const auto& m : corpus) {
            const auto r = verify_bias_formula(m);
            worst_outcomes = std::max(worst_outcomes, std::abs(r.lhs - r.rhs_outcomes));
            worst_scores = std::max(worst_scores, std::abs(r.lhs - r.rhs_scores));
            worst_forms = std::max(worst_forms, std::abs(r.rhs_outcomes - r.rhs_scores));
        }
        c.passed = static_cast<int>(corpus.size()) >= 20 && worst_outcomes <= 1e-12 && worst_scores <= 1e-12 &&
                   worst_forms <= 1e-12;
        c.detail = std::to_string(corpus.size()) + " models; max |lhs-outcome form| " + fmt("%.3g", worst_outcomes) +
                   ", max |lhs-score form| " + fmt("%.3g", worst_scores) + ", max |outcome-score| " +
                   fmt("%.3g", worst_forms);
    });
}

Check two_point_bias()
{
    return timed("two_point_bias", [&](Check& c) {
        const auto r = verify_bias_formula(two_point_model<double>());
        c.passed = std::abs(r.tau) <= 1e-15 && std::abs(r.lhs - 0.5) <= 1e-12 && std::abs(r.rhs_outcomes - 0.5) <= 1e-12 &&
                   std::abs(r.rhs_scores - 0.5) <= 1e-12;
        c.detail = fmt("tau %.17g, tau_d - tau %.17g, expression %.17g", r.tau, r.lhs, r.rhs_outcomes);
    });
}

Check hyperbola_endpoints(int pairs, std::uint64_t seed)
{
    return timed("hyperbola_endpoints", [&](Check& c) {
        double worst = 0;
        for (const auto& pr : random_pairs(pairs, seed)) {
            const auto fam = build_family(pr.alpha, pr.beta);
            const auto lo = gamma_of_w(fam, -1.0), hi = gamma_of_w(fam, 1.0);
            worst = std::max(worst, (lo.gamma - fam.alpha).cwiseAbs().maxCoeff());
            worst = std::max(worst, (hi.gamma - fam.beta).cwiseAbs().maxCoeff());
        }
        c.passed = worst <= 1e-10;
        c.detail = std::to_string(pairs) + " pairs; max componentwise error " + fmt("%.3g", worst);
    });
}

Check hyperbola_residual(int pairs, int grid, std::uint64_t seed)
{
    return timed("hyperbola_residual", [&](Check& c) {
        double worst = 0, worst_norm = 0;
        for (const auto& pr : random_pairs(pairs, seed)) {
            const auto fam = build_family(pr.alpha, pr.beta);
            for (double w : w_grid(grid)) {
                const auto s = gamma_of_w(fam, w);
                worst = std::max(worst, constraint_residual(fam, s.gamma));
                worst_norm = std::max(worst_norm, std::abs(s.gamma.norm() - 1));
            }
        }
        c.passed = worst <= 1e-10 && worst_norm <= 1e-10;
        c.detail = std::to_string(pairs) + " pairs x " + std::to_string(grid) + " w; max residual " + fmt("%.3g", worst) +
                   ", max | |gamma| - 1 | " + fmt("%.3g", worst_norm);
    });
}

Check truncated_direction(int pairs, int grid, std::uint64_t seed)
{
    return timed("truncated_direction", [&](Check& c) {
        double smallest = INFINITY;
        int violations = 0, interior = 0;
        for (const auto& pr : random_pairs(pairs, seed)) {
            const auto fam = build_family(pr.alpha, pr.beta);
            const auto ws = w_grid(grid);
            for (std::size_t i = 1; i + 1 < ws.size(); ++i) {
                const auto s = gamma_of_w(fam, ws[i]);
                Vec<double> g = s.w1 * fam.u1 + s.w2 * fam.u2;
                g /= g.norm();
                const double r = constraint_residual(fam, g);
                ++interior;
                if (r > 1e-10) ++violations;
                smallest = std::min(smallest, r);
            }
        }
        c.passed = violations == interior;
        c.detail = std::to_string(violations) + "/" + std::to_string(interior) +
                   " interior directions violate the bound; smallest residual " + fmt("%.3g", smallest);
    });
}

Check quadrature_vs_monte_carlo(int pairs, int draws, std::uint64_t seed)
{
    return timed("quadrature_vs_monte_carlo", [&](Check& c) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> dim(3, 30);
        std::normal_distribution<double> nd;
        std::uniform_real_distribution<double> scale(0.5, 3.0);
        double worst = 0;
        for (int k = 0; k < pairs; ++k) {
            const Index p = dim(rng);
            const Vec<double> gamma = random_unit(rng, p);
            const Vec<double> b = scale(rng) * random_unit(rng, p);
            const double b0 = nd(rng);
            const ReducedPropensity<double> quad(gamma, b0, b);
            ReducedPropensityOptions mc_opt;
            mc_opt.method = Integration::monte_carlo;
            mc_opt.draws = draws;
            mc_opt.scheme = McScheme::stratified;
            mc_opt.seed = derive_seed(seed, 1, static_cast<std::uint64_t>(k));
            const ReducedPropensity<double> mc(gamma, b0, b, mc_opt);
            for (int j = 0; j <= 8; ++j) {
                const double d = -3.0 + 0.75 * j;
                worst = std::max(worst, std::abs(quad(d) - mc(d)));
            }
        }
        c.passed = worst <= 1e-4;
        c.detail = std::to_string(pairs) + " (b, gamma) pairs x 9 d values, " + std::to_string(draws) +
                   " stratified draws; max |quadrature - MC| " + fmt("%.3g", worst);
    });
}

std::vector<Check> run_all()
{
    return {bias_formula_corpus(), two_point_bias(), hyperbola_endpoints(), hyperbola_residual(),
            truncated_direction(), quadrature_vs_monte_carlo()};
}

} // namespace deconf::verify
