#pragma once

// ATE / ATT weighting and doubly robust estimators, propensity clipping, the
// stratified reduction-bias diagnostic and its exact enumeration counterpart
// on finite covariate supports.

#include "deconf/regmodels.hpp"
#include "deconf/types.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace deconf {

enum class Estimand { ATE, ATT };
inline std::string_view to_string(Estimand e) { return e == Estimand::ATE ? "ATE" : "ATT"; }

inline constexpr double kPropensityFloor = 1e-12;

template <class Scalar = double>
struct Dataset {
    DesignMatrix<Scalar> design;
    Vec<Scalar> treatment;
    Vec<Scalar> outcome;
    std::optional<Vec<Scalar>> y0;
    std::optional<Vec<Scalar>> y1;

    Dataset() = default;
    Dataset(DesignMatrix<Scalar> x, Vec<Scalar> t, Vec<Scalar> y, std::optional<Vec<Scalar>> po0 = std::nullopt,
            std::optional<Vec<Scalar>> po1 = std::nullopt)
        : design(std::move(x)), treatment(std::move(t)), outcome(std::move(y)), y0(std::move(po0)), y1(std::move(po1))
    {
        const Index n = design.rows();
        require(treatment.size() == n && outcome.size() == n, "dataset: T, Y and X must have the same length");
        for (Index i = 0; i < n; ++i)
            require(treatment(i) == 0 || treatment(i) == 1, "dataset: treatment must be 0/1 (row " + std::to_string(i + 1) + ")");
        require(all_finite(outcome), "dataset: outcome has non-finite entries");
        if (y0) require(y0->size() == n, "dataset: Y(0) length mismatch");
        if (y1) require(y1->size() == n, "dataset: Y(1) length mismatch");
    }

    Index size() const { return treatment.size(); }
    Index treated_count() const { return static_cast<Index>(treatment.sum()); }
    Index control_count() const { return size() - treated_count(); }
    bool has_potential_outcomes() const { return y0.has_value() && y1.has_value(); }

    /// mean(Y(1) - Y(0) | T = 1) from stored potential outcomes.
    Scalar sample_att() const
    {
        require(has_potential_outcomes(), "sample_att needs potential outcomes");
        Scalar s = 0;
        for (Index i = 0; i < size(); ++i)
            if (treatment(i) == 1) s += (*y1)(i) - (*y0)(i);
        return s / Scalar(treated_count());
    }

    Scalar sample_ate() const
    {
        require(has_potential_outcomes(), "sample_ate needs potential outcomes");
        return (*y1 - *y0).mean();
    }
};

template <class Scalar = double>
struct WeightDiagnostics {
    Scalar weight_variance = 0;
    Scalar max_weight = 0;
    Scalar effective_sample_size = 0;
    Scalar fraction_extreme = 0;  // propensities outside [0.1, 0.9]
    int floored = 0;              // propensities moved to [1e-12, 1 - 1e-12]
};

template <class Scalar = double>
struct EstimateReport {
    Estimand estimand = Estimand::ATT;
    std::string estimator;
    Scalar estimate = 0;
    Vec<Scalar> weights;
    WeightDiagnostics<Scalar> diagnostics;
};

namespace detail {

template <class Scalar>
void require_arms(const Dataset<Scalar>& data)
{
    if (data.treated_count() == 0 || data.control_count() == 0)
        throw ValidationError("both treatment arms must be non-empty");
}

template <class Scalar>
Vec<Scalar> prepare_propensities(const Dataset<Scalar>& data, const Vec<Scalar>& e, Estimand target, int& floored)
{
    require(e.size() == data.size(), "propensity vector length does not match the data");
    Vec<Scalar> out = e;
    floored = 0;
    const Scalar lo = Scalar(kPropensityFloor), hi = Scalar(1) - Scalar(kPropensityFloor);
    for (Index i = 0; i < e.size(); ++i) {
        const Scalar v = e(i);
        if (!(v >= Scalar(0) && v <= Scalar(1)))
            throw ValidationError("propensities must lie in [0, 1] (row " + std::to_string(i + 1) + ")");
        const bool treated = data.treatment(i) == 1;
        if (v == Scalar(1) && !treated)
            throw ValidationError("propensity = 1 on a control unit gives an infinite weight (row " + std::to_string(i + 1) + ")");
        if (v == Scalar(0) && treated && target == Estimand::ATE)
            throw ValidationError("propensity = 0 on a treated unit gives an infinite weight (row " + std::to_string(i + 1) + ")");
        if (v < lo) {
            out(i) = lo;
            ++floored;
        } else if (v > hi) {
            out(i) = hi;
            ++floored;
        }
    }
    return out;
}

template <class Scalar>
WeightDiagnostics<Scalar> diagnose(const Vec<Scalar>& weights, const Vec<Scalar>& e, int floored)
{
    WeightDiagnostics<Scalar> d;
    const Scalar mean = weights.mean();
    d.weight_variance = (weights.array() - mean).square().mean();
    d.max_weight = weights.maxCoeff();
    const Scalar s2 = weights.squaredNorm();
    d.effective_sample_size = s2 > Scalar(0) ? weights.sum() * weights.sum() / s2 : Scalar(0);
    d.fraction_extreme = Scalar((e.array() < Scalar(0.1) || e.array() > Scalar(0.9)).count()) / Scalar(e.size());
    d.floored = floored;
    return d;
}

template <class Scalar>
Scalar treated_mean(const Dataset<Scalar>& data, const Vec<Scalar>& v)
{
    Scalar s = 0;
    for (Index i = 0; i < data.size(); ++i)
        if (data.treatment(i) == 1) s += v(i);
    return s / Scalar(data.treated_count());
}

// Treated units get weight 1; controls e/(1-e), rescaled to sum to the
// treated count when normalized.
template <class Scalar>
Vec<Scalar> att_weights(const Dataset<Scalar>& data, const Vec<Scalar>& e, bool normalize)
{
    Vec<Scalar> w(data.size());
    Scalar csum = 0;
    for (Index i = 0; i < data.size(); ++i) {
        if (data.treatment(i) == 1) {
            w(i) = 1;
        } else {
            w(i) = e(i) / (Scalar(1) - e(i));
            csum += w(i);
        }
    }
    if (normalize) {
        if (!(csum > Scalar(0))) throw NumericalError("control weights sum to zero");
        const Scalar scale = Scalar(data.treated_count()) / csum;
        for (Index i = 0; i < data.size(); ++i)
            if (data.treatment(i) == 0) w(i) *= scale;
    }
    return w;
}

} // namespace detail

/// mean(Y | T = 1) - mean(Y | T = 0)
template <class Scalar>
EstimateReport<Scalar> naive(const Dataset<Scalar>& data)
{
    detail::require_arms(data);
    Scalar s1 = 0, s0 = 0;
    for (Index i = 0; i < data.size(); ++i) (data.treatment(i) == 1 ? s1 : s0) += data.outcome(i);
    EstimateReport<Scalar> rep;
    rep.estimand = Estimand::ATT;
    rep.estimator = "naive";
    rep.estimate = s1 / Scalar(data.treated_count()) - s0 / Scalar(data.control_count());
    rep.weights = Vec<Scalar>::Ones(data.size());
    rep.diagnostics.effective_sample_size = Scalar(data.size());
    rep.diagnostics.max_weight = 1;
    return rep;
}

/// mean over treated of (Y - m0_hat(X)), given control-arm predictions.
template <class Scalar>
EstimateReport<Scalar> regression_att(const Dataset<Scalar>& data, const Vec<Scalar>& m0_pred)
{
    require(m0_pred.size() == data.size(), "m0 prediction length does not match the data");
    if (data.treated_count() == 0) throw ValidationError("regression_att needs treated units");
    EstimateReport<Scalar> rep;
    rep.estimand = Estimand::ATT;
    rep.estimator = "regression";
    rep.estimate = detail::treated_mean(data, Vec<Scalar>(data.outcome - m0_pred));
    rep.weights = data.treatment;
    rep.diagnostics.max_weight = 1;
    rep.diagnostics.effective_sample_size = Scalar(data.treated_count());
    return rep;
}

template <class Scalar>
EstimateReport<Scalar> regression_att(const Dataset<Scalar>& data, const FittedGLM<Scalar>& m0_hat)
{
    return regression_att(data, Vec<Scalar>(m0_hat.predict(data.design.values())));
}

/// ATT by inverse probability weighting. normalize=false is the literal
/// sample average (1/n) sum [T - (1 - T) e/(1 - e)] Y; normalize=true rescales
/// the control weights to sum to the treated count.
template <class Scalar>
EstimateReport<Scalar> ipw_att(const Dataset<Scalar>& data, const Vec<Scalar>& propensities, bool normalize = true)
{
    detail::require_arms(data);
    int floored = 0;
    const Vec<Scalar> e = detail::prepare_propensities(data, propensities, Estimand::ATT, floored);
    const Vec<Scalar> w = detail::att_weights(data, e, normalize);
    Scalar treated = 0, control = 0;
    for (Index i = 0; i < data.size(); ++i) {
        if (data.treatment(i) == 1) treated += data.outcome(i);
        else control += w(i) * data.outcome(i);
    }
    EstimateReport<Scalar> rep;
    rep.estimand = Estimand::ATT;
    rep.estimator = "ipw";
    rep.estimate = normalize ? (treated - control) / Scalar(data.treated_count()) : (treated - control) / Scalar(data.size());
    rep.weights = w;
    rep.diagnostics = detail::diagnose(w, e, floored);
    return rep;
}

/// Doubly robust ATT: regression_att minus the weighted control-residual
/// correction, with the same weight normalization option as ipw_att.
template <class Scalar>
EstimateReport<Scalar> aipw_att(const Dataset<Scalar>& data, const Vec<Scalar>& propensities,
                                const Vec<Scalar>& m0_pred, bool normalize = true)
{
    detail::require_arms(data);
    require(m0_pred.size() == data.size(), "m0 prediction length does not match the data");
    int floored = 0;
    const Vec<Scalar> e = detail::prepare_propensities(data, propensities, Estimand::ATT, floored);
    const Vec<Scalar> w = detail::att_weights(data, e, normalize);
    const Vec<Scalar> resid = data.outcome - m0_pred;
    Scalar correction = 0;
    for (Index i = 0; i < data.size(); ++i)
        if (data.treatment(i) == 0) correction += w(i) * resid(i);
    correction /= normalize ? Scalar(data.treated_count()) : Scalar(data.size());
    EstimateReport<Scalar> rep;
    rep.estimand = Estimand::ATT;
    rep.estimator = "aipw";
    rep.estimate = detail::treated_mean(data, resid) - correction;
    rep.weights = w;
    rep.diagnostics = detail::diagnose(w, e, floored);
    return rep;
}

template <class Scalar>
EstimateReport<Scalar> aipw_att(const Dataset<Scalar>& data, const Vec<Scalar>& propensities,
                                const FittedGLM<Scalar>& m0_hat, bool normalize = true)
{
    return aipw_att(data, propensities, Vec<Scalar>(m0_hat.predict(data.design.values())), normalize);
}

namespace detail {

template <class Scalar>
struct AteWeights {
    Vec<Scalar> w;  // 1/e for treated, 1/(1-e) for controls (normalized per arm to sum to n)
    Scalar treated_total = 0;
    Scalar control_total = 0;
};

template <class Scalar>
AteWeights<Scalar> ate_weights(const Dataset<Scalar>& data, const Vec<Scalar>& e, bool normalize)
{
    AteWeights<Scalar> a;
    a.w.resize(data.size());
    for (Index i = 0; i < data.size(); ++i) {
        if (data.treatment(i) == 1) {
            a.w(i) = Scalar(1) / e(i);
            a.treated_total += a.w(i);
        } else {
            a.w(i) = Scalar(1) / (Scalar(1) - e(i));
            a.control_total += a.w(i);
        }
    }
    if (normalize) {
        const Scalar n = Scalar(data.size());
        for (Index i = 0; i < data.size(); ++i) a.w(i) *= n / (data.treatment(i) == 1 ? a.treated_total : a.control_total);
    }
    return a;
}

} // namespace detail

/// (1/n) sum [T/e - (1-T)/(1-e)] Y, or its per-arm normalized form.
template <class Scalar>
EstimateReport<Scalar> ipw_ate(const Dataset<Scalar>& data, const Vec<Scalar>& propensities, bool normalize = true)
{
    detail::require_arms(data);
    int floored = 0;
    const Vec<Scalar> e = detail::prepare_propensities(data, propensities, Estimand::ATE, floored);
    const auto a = detail::ate_weights(data, e, normalize);
    Scalar s = 0;
    for (Index i = 0; i < data.size(); ++i) s += (data.treatment(i) == 1 ? a.w(i) : -a.w(i)) * data.outcome(i);
    EstimateReport<Scalar> rep;
    rep.estimand = Estimand::ATE;
    rep.estimator = "ipw";
    rep.estimate = s / Scalar(data.size());
    rep.weights = a.w;
    rep.diagnostics = detail::diagnose(a.w, e, floored);
    return rep;
}

template <class Scalar>
EstimateReport<Scalar> aipw_ate(const Dataset<Scalar>& data, const Vec<Scalar>& propensities, const Vec<Scalar>& m0_pred,
                                const Vec<Scalar>& m1_pred, bool normalize = true)
{
    detail::require_arms(data);
    require(m0_pred.size() == data.size() && m1_pred.size() == data.size(), "outcome prediction length mismatch");
    int floored = 0;
    const Vec<Scalar> e = detail::prepare_propensities(data, propensities, Estimand::ATE, floored);
    const auto a = detail::ate_weights(data, e, normalize);
    Scalar s = 0;
    for (Index i = 0; i < data.size(); ++i) {
        if (data.treatment(i) == 1) s += a.w(i) * (data.outcome(i) - m1_pred(i));
        else s -= a.w(i) * (data.outcome(i) - m0_pred(i));
    }
    EstimateReport<Scalar> rep;
    rep.estimand = Estimand::ATE;
    rep.estimator = "aipw";
    rep.estimate = m1_pred.mean() - m0_pred.mean() + s / Scalar(data.size());
    rep.weights = a.w;
    rep.diagnostics = detail::diagnose(a.w, e, floored);
    return rep;
}

template <class Scalar>
Vec<Scalar> clip_propensities(const Vec<Scalar>& e, Scalar lo, Scalar hi)
{
    require(Scalar(0) < lo && lo < hi && hi < Scalar(1), "clip bounds must satisfy 0 < lo < hi < 1");
    return e.cwiseMax(lo).cwiseMin(hi);
}

// ---------------------------------------------------------------------------
// Reduction-bias diagnostic.

template <class Scalar = double>
struct BiasDiagnostic {
    Scalar att = 0;  // E[Cov(m0, e | d) / (1 - e_d)]
    Scalar ate = 0;  // E[Cov(m1, e | d) / e_d + Cov(m0, e | d) / (1 - e_d)]
    int strata = 0;
};

inline int default_strata(Index n) { return static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n)) - 1e-9)); }

/// Stratified plug-in estimate of the reduction bias. Strata are quantile bins
/// of d (ties never split); bins with fewer than 3 units or without both arms
/// are merged into a neighbour. Within-stratum covariances use divisor n_s
/// and e_d is the stratum treatment rate. strata <= 0 selects ceil(n^(1/3)).
template <class Scalar>
BiasDiagnostic<Scalar> bias_diagnostic(const Vec<Scalar>& treatment, const Vec<Scalar>& d, const Vec<Scalar>& m0,
                                       const Vec<Scalar>& m1, const Vec<Scalar>& e, int strata = 0)
{
    const Index n = treatment.size();
    require(d.size() == n && m0.size() == n && m1.size() == n && e.size() == n, "bias_diagnostic: length mismatch");
    require(n >= 3, "bias_diagnostic needs at least 3 units");
    require(all_finite(d), "bias_diagnostic: non-finite score values");
    if (strata <= 0) strata = std::max(2, default_strata(n));
    require(strata >= 2, "bias_diagnostic needs at least 2 strata");
    const Scalar tsum = treatment.sum();
    if (!(tsum > 0 && tsum < Scalar(n))) throw ValidationError("bias_diagnostic needs both treatment arms");

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index(0));
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return d(a) < d(b); });

    // Boundaries [start_k, start_{k+1}) in sorted order.
    std::vector<Index> starts{0};
    if (d(order.back()) > d(order.front())) {
        for (int k = 1; k < strata; ++k) {
            Index b = static_cast<Index>((static_cast<long long>(k) * n) / strata);
            while (b < n && b > 0 && d(order[static_cast<std::size_t>(b)]) == d(order[static_cast<std::size_t>(b - 1)])) ++b;
            if (b > starts.back() && b < n) starts.push_back(b);
        }
    }
    starts.push_back(n);

    struct Stratum {
        Index size = 0;
        Scalar treated = 0;
    };
    auto stats = [&](Index a, Index b) {
        Stratum s;
        s.size = b - a;
        for (Index k = a; k < b; ++k) s.treated += treatment(order[static_cast<std::size_t>(k)]);
        return s;
    };
    auto ok = [](const Stratum& s) { return s.size >= 3 && s.treated > 0 && s.treated < Scalar(s.size); };
    bool merged = true;
    while (merged && starts.size() > 2) {
        merged = false;
        for (std::size_t k = 0; k + 1 < starts.size(); ++k) {
            if (ok(stats(starts[k], starts[k + 1]))) continue;
            // Merge with the smaller neighbour.
            std::size_t drop;
            if (k == 0) drop = 1;
            else if (k + 2 == starts.size()) drop = k;
            else drop = (starts[k] - starts[k - 1] <= starts[k + 2] - starts[k + 1]) ? k : k + 1;
            starts.erase(starts.begin() + static_cast<std::ptrdiff_t>(drop));
            merged = true;
            break;
        }
    }

    BiasDiagnostic<Scalar> out;
    out.strata = static_cast<int>(starts.size() - 1);
    for (std::size_t k = 0; k + 1 < starts.size(); ++k) {
        const Index a = starts[k], b = starts[k + 1];
        const Scalar ns = Scalar(b - a);
        Scalar mt = 0, me = 0, mm0 = 0, mm1 = 0;
        for (Index j = a; j < b; ++j) {
            const Index i = order[static_cast<std::size_t>(j)];
            mt += treatment(i);
            me += e(i);
            mm0 += m0(i);
            mm1 += m1(i);
        }
        mt /= ns;
        me /= ns;
        mm0 /= ns;
        mm1 /= ns;
        Scalar c0 = 0, c1 = 0;
        for (Index j = a; j < b; ++j) {
            const Index i = order[static_cast<std::size_t>(j)];
            c0 += (m0(i) - mm0) * (e(i) - me);
            c1 += (m1(i) - mm1) * (e(i) - me);
        }
        c0 /= ns;
        c1 /= ns;
        const Scalar share = ns / Scalar(n);
        out.att += share * c0 / (Scalar(1) - mt);
        out.ate += share * (c1 / mt + c0 / (Scalar(1) - mt));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exact enumeration on a finite covariate support.

/// X takes values 0..K-1 with probabilities prob. Given X = k:
/// T ~ Bern(propensity[k]) and Y(t) = mu_t[k] + s_t * noise[k], with s_0, s_1
/// independent signs (+1/-1 w.p. 1/2) independent of T. score[k] is the value
/// of the reduction d at X = k.
template <class Scalar = double>
struct DiscreteModel {
    std::vector<Scalar> prob;
    std::vector<Scalar> propensity;
    std::vector<Scalar> mu0;
    std::vector<Scalar> mu1;
    std::vector<int> score;
    std::vector<Scalar> noise;
};

template <class Scalar = double>
struct BiasFormulaCheck {
    Scalar tau = 0;
    Scalar tau_d = 0;
    Scalar lhs = 0;             // tau_d - tau
    Scalar rhs_outcomes = 0;    // E[Cov(Y(1), T | d)/e_d + Cov(Y(0), T | d)/(1 - e_d)]
    Scalar rhs_scores = 0;      // same with m_t(X), e(X) in place of Y(t), T
};

template <class Scalar>
BiasFormulaCheck<Scalar> verify_bias_formula(const DiscreteModel<Scalar>& model)
{
    const std::size_t k = model.prob.size();
    require(k >= 1 && k <= 32, "discrete model support must have 1..32 points");
    require(model.propensity.size() == k && model.mu0.size() == k && model.mu1.size() == k && model.score.size() == k,
            "discrete model arrays must have equal length");
    require(model.noise.empty() || model.noise.size() == k, "discrete model noise must be empty or match the support");
    Scalar total = 0;
    for (std::size_t i = 0; i < k; ++i) {
        require(model.prob[i] >= 0 && model.prob[i] <= 1, "discrete model: probabilities must lie in [0, 1]");
        require(model.propensity[i] >= 0 && model.propensity[i] <= 1, "discrete model: propensities must lie in [0, 1]");
        total += model.prob[i];
    }
    require(std::abs(total - Scalar(1)) <= Scalar(1e-12), "discrete model: probabilities must sum to 1");

    // Joint states (x, t, s0, s1).
    struct State {
        std::size_t x;
        int t;
        Scalar p, y0, y1;
    };
    std::vector<State> states;
    for (std::size_t i = 0; i < k; ++i) {
        const Scalar nz = model.noise.empty() ? Scalar(0) : model.noise[i];
        for (int t = 0; t < 2; ++t) {
            const Scalar pt = t == 1 ? model.propensity[i] : Scalar(1) - model.propensity[i];
            for (int s0 = -1; s0 <= 1; s0 += 2)
                for (int s1 = -1; s1 <= 1; s1 += 2)
                    states.push_back({i, t, model.prob[i] * pt / Scalar(4), model.mu0[i] + Scalar(s0) * nz,
                                      model.mu1[i] + Scalar(s1) * nz});
        }
    }

    BiasFormulaCheck<Scalar> out;
    for (const auto& s : states) out.tau += s.p * (s.y1 - s.y0);

    std::map<int, std::vector<const State*>> groups;
    for (const auto& s : states) groups[model.score[s.x]].push_back(&s);
    for (const auto& [label, members] : groups) {
        Scalar pd = 0, pt1 = 0;
        Scalar ey1t1 = 0, ey0t0 = 0;       // E[Y 1{T=t}] pieces
        Scalar ey1 = 0, ey0 = 0, ey1t = 0, ey0t = 0;
        Scalar em1 = 0, em0 = 0, ee = 0, em1e = 0, em0e = 0;
        for (const State* s : members) {
            pd += s->p;
            if (s->t == 1) {
                pt1 += s->p;
                ey1t1 += s->p * s->y1;
            } else {
                ey0t0 += s->p * s->y0;
            }
            ey1 += s->p * s->y1;
            ey0 += s->p * s->y0;
            ey1t += s->p * s->y1 * Scalar(s->t);
            ey0t += s->p * s->y0 * Scalar(s->t);
            const Scalar e = model.propensity[s->x];
            em1 += s->p * model.mu1[s->x];
            em0 += s->p * model.mu0[s->x];
            ee += s->p * e;
            em1e += s->p * model.mu1[s->x] * e;
            em0e += s->p * model.mu0[s->x] * e;
        }
        if (pd == Scalar(0)) continue;
        const Scalar ed = pt1 / pd;
        if (!(ed > 0 && ed < 1))
            throw ValidationError("discrete model: e_d must lie strictly inside (0, 1) for every score value");
        out.tau_d += pd * (ey1t1 / pt1 - ey0t0 / (pd - pt1));
        const Scalar c1 = ey1t / pd - (ey1 / pd) * ed;
        const Scalar c0 = ey0t / pd - (ey0 / pd) * ed;
        out.rhs_outcomes += pd * (c1 / ed + c0 / (Scalar(1) - ed));
        const Scalar s1 = em1e / pd - (em1 / pd) * (ee / pd);
        const Scalar s0 = em0e / pd - (em0 / pd) * (ee / pd);
        out.rhs_scores += pd * (s1 / ed + s0 / (Scalar(1) - ed));
    }
    out.lhs = out.tau_d - out.tau;
    return out;
}

/// X uniform on {0, 1}, e = (0.25, 0.75), Y(t) = X, d constant: bias 0.5.
template <class Scalar = double>
DiscreteModel<Scalar> two_point_model()
{
    DiscreteModel<Scalar> m;
    m.prob = {Scalar(0.5), Scalar(0.5)};
    m.propensity = {Scalar(0.25), Scalar(0.75)};
    m.mu0 = {Scalar(0), Scalar(1)};
    m.mu1 = {Scalar(0), Scalar(1)};
    m.score = {0, 0};
    return m;
}

/// Seeded corpus of random discrete models (support 2..32, 1..6 score
/// values, propensities in [0.05, 0.95], optional outcome noise), preceded by
/// the two-point model.
template <class Scalar = double>
std::vector<DiscreteModel<Scalar>> discrete_corpus(int count, std::uint64_t seed)
{
    std::vector<DiscreteModel<Scalar>> out;
    out.push_back(two_point_model<Scalar>());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> nd;
    while (static_cast<int>(out.size()) < count) {
        const int k = std::uniform_int_distribution<int>(2, 32)(rng);
        const int labels = std::uniform_int_distribution<int>(1, std::min(6, k))(rng);
        DiscreteModel<Scalar> m;
        Scalar total = 0;
        for (int i = 0; i < k; ++i) {
            const Scalar w = Scalar(0.05 + unit(rng));
            m.prob.push_back(w);
            total += w;
            m.propensity.push_back(Scalar(0.05 + 0.9 * unit(rng)));
            const double base = nd(rng);
            m.mu0.push_back(Scalar(base + 0.5 * nd(rng)));
            m.mu1.push_back(Scalar(base + 1.0 + 0.5 * nd(rng)));
            m.score.push_back(std::uniform_int_distribution<int>(0, labels - 1)(rng));
            m.noise.push_back(Scalar(unit(rng)));
        }
        for (auto& w : m.prob) w /= total;
        // Renormalize so the probabilities sum to one in the working precision.
        Scalar s = 0;
        for (std::size_t i = 0; i + 1 < m.prob.size(); ++i) s += m.prob[i];
        m.prob.back() = Scalar(1) - s;
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace deconf
