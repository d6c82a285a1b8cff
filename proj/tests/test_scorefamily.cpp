#include "deconf/scorefamily.hpp"
#include "deconf/regmodels.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace deconf;

namespace {

Vec<double> v3(double a, double b, double c)
{
    Vec<double> v(3);
    v << a, b, c;
    return v;
}

double max_abs(const Vec<double>& a, const Vec<double>& b) { return (a - b).cwiseAbs().maxCoeff(); }

} // namespace

TEST_CASE("family for alpha = e1, beta at 60 degrees")
{
    const auto fam = build_family(v3(1, 0, 0), v3(0.5, std::sqrt(3.0) / 2, 0));
    CHECK(fam.rho == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(max_abs(fam.u1, v3(std::sqrt(3.0) / 2, 0.5, 0)) <= 1e-12);
    CHECK(max_abs(fam.u2, v3(0.5, -std::sqrt(3.0) / 2, 0)) <= 1e-12);
    REQUIRE(fam.has_null_direction());
    CHECK(max_abs(fam.null_direction, v3(0, 0, 1)) <= 1e-12);
    CHECK(std::abs(fam.u1.dot(fam.u2)) <= 1e-12);
    CHECK(!fam.sign_flipped);

    const auto mid = gamma_of_w(fam, 0.0);
    CHECK(mid.w2 == 0.0);
    CHECK(mid.w1 == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-14));
    CHECK(max_abs(mid.gamma, v3(std::sqrt(0.5), std::sqrt(1.0 / 6.0), std::sqrt(1.0 / 3.0))) <= 1e-12);
    CHECK(fam.alpha.dot(mid.gamma) == doctest::Approx(std::sqrt(0.5)));
    CHECK(fam.beta.dot(mid.gamma) == doctest::Approx(std::sqrt(0.5)));
    CHECK(constraint_residual(fam, mid.gamma) <= 1e-15);

    CHECK(max_abs(gamma_of_w(fam, -1.0).gamma, fam.alpha) <= 1e-10);
    CHECK(max_abs(gamma_of_w(fam, 1.0).gamma, fam.beta) <= 1e-10);
}

TEST_CASE("negative correlation flips alpha")
{
    const auto fam = build_family(v3(-2, 0, 0), v3(0.5, std::sqrt(3.0) / 2, 0));
    CHECK(fam.sign_flipped);
    CHECK(fam.rho == doctest::Approx(0.5));
    CHECK(max_abs(fam.alpha, v3(1, 0, 0)) <= 1e-15);
    // gamma(-1) spans the same line as the raw alpha.
    CHECK(std::abs(std::abs(gamma_of_w(fam, -1.0).gamma.dot(v3(-1, 0, 0))) - 1) <= 1e-12);
}

TEST_CASE("build_family errors")
{
    CHECK_THROWS_AS(build_family(v3(1, 2, 3), v3(2, 4, 6)), NumericalError);
    CHECK_THROWS_AS(build_family(v3(0, 0, 0), v3(1, 0, 0)), ValidationError);
    CHECK_THROWS_AS(build_family(v3(1, 0, 0), Vec<double>(Vec<double>::Ones(2))), ValidationError);
    const auto orth = build_family(v3(1, 0, 0), v3(0, 1, 0));
    CHECK_THROWS_AS(gamma_of_w(orth, 0.0), NumericalError);
    const auto fam = build_family(v3(1, 0, 0), v3(1, 1, 0));
    CHECK_THROWS_AS(gamma_of_w(fam, 1.5), ValidationError);
    CHECK_THROWS_AS(gamma_of_w(fam, -1.0000001), ValidationError);
}

TEST_CASE("family invariants on random pairs, both null completions")
{
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 50; ++rep) {
        const Index p = 3 + rep % 10;
        Vec<double> a(p), b(p);
        for (Index i = 0; i < p; ++i) a(i) = nd(rng), b(i) = nd(rng) + 0.5 * a(i);
        for (auto mode : {NullCompletion::first_basis, NullCompletion::seeded_random}) {
            const auto fam = build_family(a, b, mode, 5);
            CHECK(fam.rho >= 0.0);
            CHECK(std::abs(fam.u1.norm() - 1) <= 1e-10);
            CHECK(std::abs(fam.u2.norm() - 1) <= 1e-10);
            CHECK(std::abs(fam.u1.dot(fam.u2)) <= 1e-10);
            REQUIRE(fam.has_null_direction());
            CHECK(std::abs(fam.null_direction.norm() - 1) <= 1e-10);
            CHECK(std::abs(fam.null_direction.dot(fam.alpha)) <= 1e-10);
            CHECK(std::abs(fam.null_direction.dot(fam.beta)) <= 1e-10);
            if (fam.rho <= 1e-6) continue;
            for (int k = 0; k <= 100; ++k) {
                const auto s = gamma_of_w(fam, -1.0 + 0.02 * k);
                CHECK(std::abs(s.gamma.norm() - 1) <= 1e-10);
                CHECK(constraint_residual(fam, s.gamma) <= 1e-10);
                CHECK(s.w1 * s.w1 + s.w2 * s.w2 <= 1 + 1e-12);
                CHECK(std::abs(conditional_covariance(fam.alpha, fam.beta, s.gamma,
                                                      Mat<double>(Mat<double>::Identity(p, p)))) <= 1e-10);
            }
        }
    }
}

TEST_CASE("conditional covariance formula")
{
    Vec<double> a(2), b(2), g(2);
    a << 1, 0;
    b << 0, 1;
    g << std::sqrt(0.5), std::sqrt(0.5);
    const Mat<double> id = Mat<double>::Identity(2, 2);
    CHECK(conditional_covariance(a, b, g, id) == doctest::Approx(-0.5));
    Vec<double> b2(2);
    b2 << 0.6, 0.8;
    CHECK(std::abs(conditional_covariance(a, b2, a, id)) <= 1e-15);
    CHECK_THROWS_AS(conditional_covariance(a, b, Vec<double>(Vec<double>::Zero(2)), id), NumericalError);
}

TEST_CASE("Gauss-Hermite moments and the normal quantile")
{
    const GaussHermite<double> gh(64);
    CHECK(gh.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(gh.weights.dot(gh.nodes)) <= 1e-13);
    CHECK(gh.weights.dot(gh.nodes.array().square().matrix()) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(gh.weights.dot(gh.nodes.array().pow(4).matrix()) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-9));
    CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-8));
}

TEST_CASE("reduced propensity special cases")
{
    Vec<double> g = v3(0.6, 0.8, 0);
    // b parallel to gamma: no residual, plain logistic along d.
    const ReducedPropensity<double> par(g, 0.2, Vec<double>(2.0 * g));
    CHECK(par.residual_norm() == doctest::Approx(0.0).scale(1));
    CHECK(par.m() == doctest::Approx(1.0));
    for (double d : {-2.0, 0.0, 1.5}) CHECK(par(d) == doctest::Approx(inv_logit(0.2 + 2.0 * d)).epsilon(1e-14));

    // b orthogonal to gamma and zero intercept: 1/2 everywhere.
    const ReducedPropensity<double> orth(g, 0.0, v3(0, 0, 3));
    for (double d : {-2.0, 0.0, 1.5}) CHECK(orth(d) == doctest::Approx(0.5).epsilon(1e-14));

    const Vec<double> b = v3(1, -2, 0.5);
    const ReducedPropensity<double> gen(g, -0.3, b);
    CHECK(max_abs(gen.slope() * g + gen.residual(), b) <= 1e-12);
    CHECK(std::abs(gen.residual().dot(g)) <= 1e-12);
    for (double d = -5; d <= 5; d += 0.5) {
        CHECK(gen(d) > 0.0);
        CHECK(gen(d) < 1.0);
    }

    FittedGLM<double> lin;
    lin.coefficients = b;
    lin.link = Link::identity;
    CHECK_THROWS_AS(reduced_propensity(g, lin), ValidationError);
    CHECK_THROWS_AS(ReducedPropensity<double>(v3(1, 1, 0), 0.0, b), ValidationError);
}

TEST_CASE("quadrature agrees with Monte Carlo and with a brute-force integral")
{
    const Vec<double> g = v3(0, 1, 0);
    const Vec<double> b = v3(1.5, -0.7, 2.0);
    const ReducedPropensity<double> quad(g, 0.4, b);
    ReducedPropensityOptions mc;
    mc.method = Integration::monte_carlo;
    mc.draws = 200000;
    mc.scheme = McScheme::stratified;
    mc.seed = 3;
    const ReducedPropensity<double> strat(g, 0.4, b, mc);
    mc.scheme = McScheme::iid;
    const ReducedPropensity<double> iid(g, 0.4, b, mc);
    const double r = quad.residual_norm();
    for (double d : {-2.0, -0.5, 0.0, 1.0, 3.0}) {
        // Midpoint rule on [-10, 10].
        double s = 0;
        const int m = 200000;
        for (int k = 0; k < m; ++k) {
            const double z = -10 + 20.0 * (k + 0.5) / m;
            s += inv_logit(0.4 - 0.7 * d + r * z) * std::exp(-0.5 * z * z);
        }
        s *= 20.0 / m / std::sqrt(2 * M_PI);
        // The logistic's complex poles cap Gauss-Hermite convergence near 1e-8 at 64 nodes.
        CHECK(std::abs(quad(d) - s) <= 1e-7);
        CHECK(std::abs(strat(d) - s) <= 1e-5);
        CHECK(std::abs(iid(d) - s) <= 5e-3);
    }
}
