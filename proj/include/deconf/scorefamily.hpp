#pragma once

// Deconfounding-score directions for Gaussian covariates with single-index
// outcome and treatment models. For unit prognostic direction alpha and unit
// propensity direction beta (alpha'beta = rho > 0), every unit gamma with
//     (alpha'gamma) (gamma'beta) = rho
// zeroes Cov(alpha'X, beta'X | gamma'X) when X ~ N(0, I). Writing
//     gamma = w1 u1 + w2 u2 + sqrt(1 - w1^2 - w2^2) n,
//     u1 = (alpha + beta) / sqrt(2 + 2 rho),  u2 = (alpha - beta) / sqrt(2 - 2 rho),
// the constraint becomes the hyperbola
//     (rho + 1)/(2 rho) w1^2 + (rho - 1)/(2 rho) w2^2 = 1.
// The family is indexed by w in [-1, 1] via w2 = -w sqrt((1 - rho) / 2), so
// that gamma(-1) = alpha (prognostic score) and gamma(+1) = beta (propensity).

#include "deconf/regmodels.hpp"
#include "deconf/types.hpp"

#include <random>
#include <vector>

namespace deconf {

inline constexpr double kCollinearEps = 1e-6;

enum class NullCompletion { first_basis, seeded_random };

template <class Scalar = double>
struct ScoreFamily {
    Vec<Scalar> alpha;
    Vec<Scalar> beta;
    Scalar rho = 0;
    Vec<Scalar> u1;
    Vec<Scalar> u2;
    Vec<Scalar> null_direction;  // empty when span{alpha, beta} is the whole space
    bool sign_flipped = false;

    Index dim() const { return alpha.size(); }
    bool has_null_direction() const { return null_direction.size() == alpha.size(); }

    /// Half-width of the admissible w2 range.
    Scalar w2_limit() const { return std::sqrt((Scalar(1) - rho) / Scalar(2)); }
};

template <class Scalar = double>
struct DeconfoundingScore {
    Vec<Scalar> gamma;
    Scalar w = 0;
    Scalar w1 = 0;
    Scalar w2 = 0;
    Scalar null_coefficient = 0;
    Scalar rho = 0;

    template <class Derived>
    Vec<Scalar> score(const Eigen::MatrixBase<Derived>& x) const
    {
        require(x.cols() == gamma.size(), "score: covariate dimension mismatch");
        return x * gamma;
    }
};

template <class Scalar>
ScoreFamily<Scalar> build_family(const Vec<Scalar>& alpha_raw, const Vec<Scalar>& beta_raw,
                                 NullCompletion completion = NullCompletion::first_basis,
                                 std::uint64_t seed = 0)
{
    require(alpha_raw.size() == beta_raw.size(), "alpha and beta must have the same length");
    require(alpha_raw.size() >= 2, "score family needs dimension p >= 2");
    require(all_finite(alpha_raw) && all_finite(beta_raw), "alpha and beta must be finite");
    const Scalar na = alpha_raw.norm(), nb = beta_raw.norm();
    if (!(na > Scalar(0)) || !(nb > Scalar(0))) throw ValidationError("alpha and beta must be nonzero vectors");

    ScoreFamily<Scalar> fam;
    fam.alpha = alpha_raw / na;
    fam.beta = beta_raw / nb;
    fam.rho = fam.alpha.dot(fam.beta);
    if (fam.rho < Scalar(0)) {
        fam.alpha = -fam.alpha;
        fam.rho = -fam.rho;
        fam.sign_flipped = true;
    }
    if (fam.rho > Scalar(1) - Scalar(kCollinearEps))
        throw NumericalError("alpha and beta are collinear (|alpha'beta| > 1 - 1e-6); the score family degenerates");

    fam.u1 = (fam.alpha + fam.beta) / std::sqrt(Scalar(2) + Scalar(2) * fam.rho);
    fam.u2 = (fam.alpha - fam.beta) / std::sqrt(Scalar(2) - Scalar(2) * fam.rho);

    const Index p = fam.dim();
    auto project_out = [&](Vec<Scalar> x) {
        for (int pass = 0; pass < 2; ++pass) {
            x -= fam.u1.dot(x) * fam.u1;
            x -= fam.u2.dot(x) * fam.u2;
        }
        return x;
    };
    if (completion == NullCompletion::first_basis) {
        for (Index k = 0; k < p; ++k) {
            Vec<Scalar> e = Vec<Scalar>::Unit(p, k);
            e = project_out(std::move(e));
            const Scalar len = e.norm();
            if (len > Scalar(1e-6)) {
                fam.null_direction = e / len;
                break;
            }
        }
    } else if (p > 2) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> nd;
        for (int attempt = 0; attempt < 100 && !fam.has_null_direction(); ++attempt) {
            Vec<Scalar> g(p);
            for (Index i = 0; i < p; ++i) g(i) = static_cast<Scalar>(nd(rng));
            g = project_out(std::move(g));
            const Scalar len = g.norm();
            if (len > Scalar(1e-6)) fam.null_direction = g / len;
        }
    }
    return fam;
}

/// The member of the family with similarity parameter w.
template <class Scalar>
DeconfoundingScore<Scalar> gamma_of_w(const ScoreFamily<Scalar>& fam, Scalar w)
{
    if (!(w >= Scalar(-1) && w <= Scalar(1))) throw ValidationError("w must lie in [-1, 1]");
    if (!(fam.rho > Scalar(kCollinearEps)))
        throw NumericalError("alpha'beta is (numerically) zero; the hyperbola constraint is undefined");

    DeconfoundingScore<Scalar> s;
    s.w = w;
    s.rho = fam.rho;
    s.w2 = -w * fam.w2_limit();
    const Scalar w1sq = (Scalar(2) * fam.rho + (Scalar(1) - fam.rho) * s.w2 * s.w2) / (Scalar(1) + fam.rho);
    s.w1 = std::sqrt(std::max(Scalar(0), w1sq));
    // 1 - w1^2 - w2^2 in closed form; the subtraction loses ~1e-8 at the endpoints
    s.null_coefficient = std::sqrt((Scalar(1) - fam.rho) * (Scalar(1) - w * w) / (Scalar(1) + fam.rho));
    s.gamma = s.w1 * fam.u1 + s.w2 * fam.u2;
    if (s.null_coefficient > Scalar(1e-12)) {
        if (!fam.has_null_direction())
            throw NumericalError("interior w needs a direction orthogonal to alpha and beta (p = 2)");
        s.gamma += s.null_coefficient * fam.null_direction;
    }
    return s;
}

/// |alpha'gamma * gamma'beta - rho|
template <class Scalar>
Scalar constraint_residual(const ScoreFamily<Scalar>& fam, const Vec<Scalar>& gamma)
{
    return std::abs(fam.alpha.dot(gamma) * gamma.dot(fam.beta) - fam.rho);
}

/// Cov(alpha'X, beta'X | gamma'X) for X ~ N(0, sigma).
template <class Scalar>
Scalar conditional_covariance(const Vec<Scalar>& alpha, const Vec<Scalar>& beta, const Vec<Scalar>& gamma,
                              const Mat<Scalar>& sigma)
{
    const Index p = alpha.size();
    require(beta.size() == p && gamma.size() == p, "conditional_covariance: vector length mismatch");
    require(sigma.rows() == p && sigma.cols() == p, "conditional_covariance: sigma must be p x p");
    require((sigma - sigma.transpose()).cwiseAbs().maxCoeff() <= Scalar(1e-10) * std::max(Scalar(1), sigma.cwiseAbs().maxCoeff()),
            "conditional_covariance: sigma must be symmetric");
    const Scalar gg = gamma.dot(sigma * gamma);
    if (!(gg > Scalar(1e-12))) throw NumericalError("conditional_covariance: gamma'Sigma gamma is not positive");
    return alpha.dot(sigma * beta) - alpha.dot(sigma * gamma) * gamma.dot(sigma * beta) / gg;
}

// ---------------------------------------------------------------------------
// Quadrature and normal utilities.

/// Nodes and weights for E[f(Z)], Z ~ N(0, 1) (probabilists' Gauss-Hermite,
/// Golub-Welsch). Weights sum to one.
template <class Scalar = double>
struct GaussHermite {
    Vec<Scalar> nodes;
    Vec<Scalar> weights;

    explicit GaussHermite(int n = 64)
    {
        require(n >= 1, "Gauss-Hermite needs at least one node");
        Vec<Scalar> diag = Vec<Scalar>::Zero(n);
        Vec<Scalar> sub(std::max(0, n - 1));
        for (int k = 1; k < n; ++k) sub(k - 1) = std::sqrt(Scalar(k));
        Eigen::SelfAdjointEigenSolver<Mat<Scalar>> eig;
        eig.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
        nodes = eig.eigenvalues();
        weights = eig.eigenvectors().row(0).transpose().array().square();
        weights /= weights.sum();
    }

    template <class F>
    Scalar expect(F&& f) const
    {
        Scalar s = 0;
        for (Index k = 0; k < nodes.size(); ++k) s += weights(k) * f(nodes(k));
        return s;
    }
};

/// Standard normal quantile: Acklam's rational approximation refined by one
/// Halley step against erfc.
inline double normal_quantile(double p)
{
    require(p > 0.0 && p < 1.0, "normal_quantile: p must be in (0, 1)");
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p <= 1 - plow) {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        const double q = std::sqrt(-2 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
    return x - u / (1 + x * u / 2);
}

// ---------------------------------------------------------------------------
// Reduced propensity e_d(x) = P(T = 1 | gamma'x).

enum class Integration { quadrature, monte_carlo };
enum class McScheme { iid, stratified };

struct ReducedPropensityOptions {
    Integration method = Integration::quadrature;
    int nodes = 64;
    int draws = 10000;
    std::uint64_t seed = 0;
    McScheme scheme = McScheme::iid;
};

/// With propensity logit^{-1}(b0 + b'x) and X ~ N(0, I), split
/// b = (b'gamma) gamma + r z with z unit and orthogonal to gamma. Then z'X is a
/// standard normal independent of gamma'X and
///     e_d(d) = E_Z[logit^{-1}(b0 + (b'gamma) d + r Z)].
template <class Scalar = double>
class ReducedPropensity {
public:
    ReducedPropensity(const Vec<Scalar>& gamma, Scalar intercept, const Vec<Scalar>& coefficients,
                      const ReducedPropensityOptions& opt = {})
        : gamma_(gamma), intercept_(intercept), coefficients_(coefficients), method_(opt.method)
    {
        require(gamma.size() == coefficients.size(), "reduced_propensity: gamma and coefficients differ in length");
        require(std::abs(gamma.norm() - Scalar(1)) <= Scalar(1e-8), "reduced_propensity: gamma must be a unit vector");
        require(all_finite(coefficients) && std::isfinite(static_cast<double>(intercept)),
                "reduced_propensity: coefficients must be finite");
        slope_ = coefficients.dot(gamma);
        residual_ = coefficients - slope_ * gamma;
        residual_norm_ = residual_.norm();
        const Scalar bn = coefficients.norm();
        m_ = bn > Scalar(0) ? slope_ / bn : Scalar(0);
        if (method_ == Integration::quadrature) {
            GaussHermite<Scalar> gh(opt.nodes);
            points_ = gh.nodes;
            weights_ = gh.weights;
        } else {
            require(opt.draws >= 1, "reduced_propensity: Monte Carlo needs at least one draw");
            points_.resize(opt.draws);
            std::mt19937_64 rng(opt.seed);
            if (opt.scheme == McScheme::iid) {
                std::normal_distribution<double> nd;
                for (int i = 0; i < opt.draws; ++i) points_(i) = static_cast<Scalar>(nd(rng));
            } else {
                std::uniform_real_distribution<double> ud(0.0, 1.0);
                for (int i = 0; i < opt.draws; ++i) {
                    double u = ud(rng);
                    if (u <= 0.0) u = 0.5;
                    points_(i) = static_cast<Scalar>(normal_quantile((i + u) / opt.draws));
                }
            }
            weights_ = Vec<Scalar>::Constant(opt.draws, Scalar(1) / Scalar(opt.draws));
        }
    }

    Scalar operator()(Scalar d) const
    {
        const Scalar base = intercept_ + slope_ * d;
        if (residual_norm_ == Scalar(0)) return inv_logit(base);
        Scalar s = 0;
        for (Index k = 0; k < points_.size(); ++k) s += weights_(k) * inv_logit(base + residual_norm_ * points_(k));
        return clamp_open(s);
    }

    Vec<Scalar> evaluate(const Vec<Scalar>& d) const { return d.unaryExpr([this](Scalar x) { return (*this)(x); }); }

    template <class Derived>
    Vec<Scalar> evaluate_design(const Eigen::MatrixBase<Derived>& x) const
    {
        return evaluate(Vec<Scalar>(x * gamma_));
    }

    const Vec<Scalar>& gamma() const { return gamma_; }
    Scalar intercept() const { return intercept_; }
    const Vec<Scalar>& coefficients() const { return coefficients_; }
    Scalar slope() const { return slope_; }               // b'gamma
    Scalar m() const { return m_; }                       // (b / |b|)'gamma
    Scalar residual_norm() const { return residual_norm_; }
    const Vec<Scalar>& residual() const { return residual_; }
    const Vec<Scalar>& points() const { return points_; }
    const Vec<Scalar>& weights() const { return weights_; }
    Integration method() const { return method_; }

private:
    static Scalar clamp_open(Scalar p)
    {
        constexpr Scalar lo = std::numeric_limits<Scalar>::min();
        constexpr Scalar hi = Scalar(1) - std::numeric_limits<Scalar>::epsilon() / Scalar(2);
        return p < lo ? lo : (p > hi ? hi : p);
    }

    Vec<Scalar> gamma_;
    Scalar intercept_;
    Vec<Scalar> coefficients_;
    Integration method_;
    Scalar slope_ = 0;
    Scalar m_ = 0;
    Vec<Scalar> residual_;
    Scalar residual_norm_ = 0;
    Vec<Scalar> points_;
    Vec<Scalar> weights_;
};

template <class Scalar>
ReducedPropensity<Scalar> reduced_propensity(const Vec<Scalar>& gamma, const FittedGLM<Scalar>& propensity,
                                             const ReducedPropensityOptions& opt = {})
{
    if (propensity.link != Link::logit) throw ValidationError("reduced_propensity needs a logit-link propensity model");
    return ReducedPropensity<Scalar>(gamma, propensity.intercept, propensity.coefficients, opt);
}

} // namespace deconf
