#include "deconf/estimators.hpp"

#include <doctest.h>

#include <random>

using namespace deconf;

namespace {

Vec<double> vec(std::initializer_list<double> v)
{
    Vec<double> out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

Dataset<double> tiny(std::initializer_list<double> t, std::initializer_list<double> y)
{
    const Index n = static_cast<Index>(t.size());
    Mat<double> x(n, 1);
    for (Index i = 0; i < n; ++i) x(i, 0) = double(i);
    return Dataset<double>(DesignMatrix<double>(x), vec(t), vec(y));
}

// X uniform on {0..3}, e(X) and m_t(X) given; returns a large sample.
struct Sample {
    Dataset<double> data;
    Vec<double> e, m0, m1;
    double att = 0;
};

Sample discrete_sample(Index n, std::uint64_t seed, double noise)
{
    const double e_of[4] = {0.2, 0.4, 0.6, 0.8};
    const double m0_of[4] = {0.0, 1.0, 1.5, 3.0};
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 3);
    std::uniform_real_distribution<double> u;
    std::normal_distribution<double> nd;
    Mat<double> x(n, 1);
    Vec<double> t(n), y(n), y0(n), y1(n);
    Sample s;
    s.e.resize(n);
    s.m0.resize(n);
    s.m1.resize(n);
    for (Index i = 0; i < n; ++i) {
        const int k = pick(rng);
        x(i, 0) = k;
        s.e(i) = e_of[k];
        s.m0(i) = m0_of[k];
        s.m1(i) = m0_of[k] + 1 + 0.5 * k;
        t(i) = u(rng) < s.e(i) ? 1 : 0;
        y0(i) = s.m0(i) + noise * nd(rng);
        y1(i) = s.m1(i) + noise * nd(rng);
        y(i) = t(i) == 1 ? y1(i) : y0(i);
    }
    s.data = Dataset<double>(DesignMatrix<double>(x), t, y, y0, y1);
    s.att = s.data.sample_att();
    return s;
}

} // namespace

TEST_CASE("two-unit hand evaluations")
{
    const auto d = tiny({1, 0}, {3, 1});
    CHECK(naive(d).estimate == 2.0);
    const Vec<double> half = vec({0.5, 0.5});
    CHECK(ipw_att(d, half, false).estimate == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(ipw_att(d, half, true).estimate == doctest::Approx(2.0).epsilon(1e-15));

    const auto a = tiny({1, 0}, {1, 0});
    CHECK(ipw_ate(a, half, false).estimate == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(ipw_ate(a, half, true).estimate == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("regression and AIPW algebra")
{
    const auto s = discrete_sample(400, 1, 0.0);
    const Vec<double> zero = Vec<double>::Zero(400);

    // m0 = 0: regression is the treated mean.
    double treated = 0;
    for (Index i = 0; i < 400; ++i) treated += s.data.treatment(i) * s.data.outcome(i);
    treated /= double(s.data.treated_count());
    CHECK(regression_att(s.data, zero).estimate == doctest::Approx(treated).epsilon(1e-14));

    // Noiseless and exact m0: both the regression and AIPW give the sample ATT.
    CHECK(std::abs(regression_att(s.data, s.m0).estimate - s.att) <= 1e-12);
    CHECK(std::abs(aipw_att(s.data, s.e, s.m0).estimate - regression_att(s.data, s.m0).estimate) <= 1e-12);

    // m0 = 0: AIPW is the treated mean minus the normalized e/(1-e) control mean.
    double num = 0, den = 0;
    for (Index i = 0; i < 400; ++i)
        if (s.data.treatment(i) == 0) {
            const double w = s.e(i) / (1 - s.e(i));
            num += w * s.data.outcome(i);
            den += w;
        }
    CHECK(std::abs(aipw_att(s.data, s.e, zero).estimate - (treated - num / den)) <= 1e-12);
    CHECK(std::abs(aipw_att(s.data, s.e, zero).estimate - ipw_att(s.data, s.e).estimate) <= 1e-12);

    // AIPW-ATE with exact outcome models and no noise equals the plug-in.
    CHECK(std::abs(aipw_ate(s.data, s.e, s.m0, s.m1).estimate - (s.m1 - s.m0).mean()) <= 1e-12);
}

TEST_CASE("IPW-ATE against a direct transcription")
{
    const auto s = discrete_sample(64, 2, 1.0);
    double ht = 0, t_sum = 0, c_sum = 0, t_w = 0, c_w = 0;
    for (Index i = 0; i < 64; ++i) {
        const double tt = s.data.treatment(i), y = s.data.outcome(i), e = s.e(i);
        ht += tt * y / e - (1 - tt) * y / (1 - e);
        t_sum += tt * y / e;
        t_w += tt / e;
        c_sum += (1 - tt) * y / (1 - e);
        c_w += (1 - tt) / (1 - e);
    }
    CHECK(std::abs(ipw_ate(s.data, s.e, false).estimate - ht / 64) <= 1e-12);
    CHECK(std::abs(ipw_ate(s.data, s.e, true).estimate - (t_sum / t_w - c_sum / c_w)) <= 1e-12);
}

TEST_CASE("weights, clipping, flooring and errors")
{
    const auto s = discrete_sample(300, 3, 1.0);
    const auto rep = ipw_att(s.data, s.e, true);
    double csum = 0;
    for (Index i = 0; i < 300; ++i)
        if (s.data.treatment(i) == 0) csum += rep.weights(i);
    CHECK(csum == doctest::Approx(double(s.data.treated_count())).epsilon(1e-13));
    CHECK(rep.diagnostics.fraction_extreme == 0.0);

    const Vec<double> c = clip_propensities(vec({0.05, 0.5, 0.99}), 0.1, 0.9);
    CHECK(c(0) == 0.1);
    CHECK(c(1) == 0.5);
    CHECK(c(2) == 0.9);
    CHECK((clip_propensities(c, 0.1, 0.9) - c).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(clip_propensities(c, 0.5, 0.4), ValidationError);

    const auto d = tiny({1, 0, 0}, {3, 1, 2});
    CHECK_THROWS_AS(ipw_att(d, vec({0.5, 1.0, 0.5})), ValidationError);
    CHECK_THROWS_AS(ipw_att(d, vec({0.5, 1.2, 0.5})), ValidationError);
    const auto floored = ipw_att(d, vec({0.5, 1e-14, 0.5}));
    CHECK(floored.diagnostics.floored == 1);
    CHECK_THROWS_AS(naive(tiny({1, 1}, {1, 2})), ValidationError);
}

TEST_CASE("enumeration oracle examples")
{
    const auto two = verify_bias_formula(two_point_model<double>());
    CHECK(two.tau == 0.0);
    CHECK(two.tau_d == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(two.rhs_outcomes == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(two.rhs_scores == doctest::Approx(0.5).epsilon(1e-15));

    auto full = two_point_model<double>();
    full.score = {0, 1};
    const auto f = verify_bias_formula(full);
    CHECK(std::abs(f.rhs_outcomes) <= 1e-15);
    CHECK(std::abs(f.tau_d - f.tau) <= 1e-15);

    auto rnd = two_point_model<double>();
    rnd.propensity = {0.3, 0.3};
    CHECK(std::abs(verify_bias_formula(rnd).rhs_outcomes) <= 1e-15);

    for (const auto& m : discrete_corpus<double>(30, 17)) {
        const auto r = verify_bias_formula(m);
        CHECK(std::abs(r.lhs - r.rhs_outcomes) <= 1e-12);
        CHECK(std::abs(r.rhs_outcomes - r.rhs_scores) <= 1e-12);
    }

    auto bad = two_point_model<double>();
    bad.prob = {0.7, 0.7};
    CHECK_THROWS_AS(verify_bias_formula(bad), ValidationError);
}

TEST_CASE("stratified bias diagnostic")
{
    // Conditioning on the propensity itself removes all covariance.
    const auto s = discrete_sample(20000, 4, 1.0);
    const auto on_e = bias_diagnostic(s.data.treatment, s.e, s.m0, s.m1, s.e, 8);
    CHECK(std::abs(on_e.att) <= 1e-12);
    CHECK(std::abs(on_e.ate) <= 1e-12);

    // Two-point model with a constant score: ATE-form bias 0.5.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u;
    const Index n = 100000;
    Vec<double> t(n), x(n), e(n);
    for (Index i = 0; i < n; ++i) {
        x(i) = u(rng) < 0.5 ? 1 : 0;
        e(i) = x(i) == 1 ? 0.75 : 0.25;
        t(i) = u(rng) < e(i) ? 1 : 0;
    }
    const auto flat = bias_diagnostic(t, Vec<double>(Vec<double>::Zero(n)), x, x, e, 10);
    CHECK(flat.strata == 1);
    CHECK(flat.ate == doctest::Approx(0.5).epsilon(0.02));
    CHECK(default_strata(500) == 8);
}
