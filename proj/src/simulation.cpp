#include "deconf/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <numeric>
#include <thread>

namespace deconf::sim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t hash_double(std::uint64_t h, double x) { return mix_seed(h ^ std::bit_cast<std::uint64_t>(x)); }

} // namespace

void DGPConfig::validate() const
{
    require(n >= 2, "dgp: n must be at least 2");
    require(p >= 1, "dgp: p must be at least 1");
    require(sigma >= 0, "dgp: sigma must be nonnegative");
    require(std::isfinite(s_T) && std::isfinite(s_Y) && std::isfinite(tau) && std::isfinite(alpha0) &&
                std::isfinite(beta0),
            "dgp: parameters must be finite");
    require(support_overlap >= 0 && support_overlap <= 1, "dgp: support_overlap must lie in [0, 1]");
    require(active >= 1 && active <= p, "dgp: active must lie in [1, p]");
    if (alpha_true.size()) {
        require(alpha_true.size() == p && beta_true.size() == p, "dgp: alpha_true / beta_true must have length p");
        require(std::abs(alpha_true.norm() - 1) <= 1e-10 && std::abs(beta_true.norm() - 1) <= 1e-10,
                "dgp: alpha_true and beta_true must be unit vectors");
    }
}

DGPConfig resolve(DGPConfig cfg)
{
    cfg.validate();
    if (cfg.alpha_true.size() == cfg.p && cfg.beta_true.size() == cfg.p) return cfg;
    const int k = cfg.active;
    const int shared = static_cast<int>(std::lround(cfg.support_overlap * k));
    require(cfg.p >= 2 * k - shared, "dgp: p too small for the requested supports");
    std::mt19937_64 rng(cfg.coef_seed);
    std::vector<int> idx(static_cast<std::size_t>(cfg.p));
    std::iota(idx.begin(), idx.end(), 0);
    const int need = 2 * k - shared;
    for (int i = 0; i < need; ++i) {
        std::uniform_int_distribution<int> pick(i, cfg.p - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    std::bernoulli_distribution coin(0.5);
    const double mag = 1.0 / std::sqrt(static_cast<double>(k));
    cfg.alpha_true = VecD::Zero(cfg.p);
    cfg.beta_true = VecD::Zero(cfg.p);
    for (int i = 0; i < k; ++i) cfg.alpha_true(idx[static_cast<std::size_t>(i)]) = coin(rng) ? mag : -mag;
    for (int i = 0; i < shared; ++i) cfg.beta_true(idx[static_cast<std::size_t>(i)]) = cfg.alpha_true(idx[static_cast<std::size_t>(i)]);
    for (int i = k; i < need; ++i) cfg.beta_true(idx[static_cast<std::size_t>(i)]) = coin(rng) ? mag : -mag;
    return cfg;
}

Dataset<double> generate(const DGPConfig& cfg, std::mt19937_64& rng)
{
    require(cfg.alpha_true.size() == cfg.p && cfg.beta_true.size() == cfg.p, "generate: resolve the config first");
    cfg.validate();
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    MatD x(cfg.n, cfg.p);
    for (int i = 0; i < cfg.n; ++i)
        for (int j = 0; j < cfg.p; ++j) x(i, j) = nd(rng);
    const VecD lin_t = x * cfg.beta_true;
    const VecD lin_y = x * cfg.alpha_true;
    VecD t(cfg.n), y(cfg.n), y0(cfg.n), y1(cfg.n);
    for (int i = 0; i < cfg.n; ++i) {
        const double e = inv_logit(cfg.beta0 + cfg.s_T * lin_t(i));
        t(i) = ud(rng) < e ? 1.0 : 0.0;
        const double mu = cfg.alpha0 + cfg.s_Y * lin_y(i);
        y0(i) = mu + cfg.sigma * nd(rng);
        y1(i) = mu + cfg.tau + cfg.sigma * nd(rng);
        y(i) = t(i) == 1.0 ? y1(i) : y0(i);
    }
    return Dataset<double>(DesignMatrix<double>(std::move(x)), std::move(t), std::move(y), std::move(y0), std::move(y1));
}

OracleScores oracle_scores(const DGPConfig& cfg, const Dataset<double>& data)
{
    require(cfg.alpha_true.size() == cfg.p, "oracle_scores: resolve the config first");
    const MatD& x = data.design.values();
    OracleScores o;
    o.intercept = cfg.beta0;
    o.coefficients = cfg.s_T * cfg.beta_true;
    o.propensity = ((x * o.coefficients).array() + cfg.beta0).unaryExpr([](double v) { return inv_logit(v); });
    o.prognostic = (cfg.s_Y * (x * cfg.alpha_true)).array() + cfg.alpha0;
    o.family = build_family(cfg.alpha_true, cfg.beta_true);
    return o;
}

// ---------------------------------------------------------------------------

std::string family_name(Family f)
{
    switch (f) {
    case Family::naive: return "naive";
    case Family::regression: return "regression";
    case Family::ipw: return "ipw";
    case Family::aipw: return "aipw";
    case Family::ipw_clip: return "ipw_clip";
    case Family::aipw_clip: return "aipw_clip";
    case Family::ipw_d: return "ipw_d";
    case Family::aipw_d: return "aipw_d";
    case Family::ipw_ridge: return "ipw_ridge";
    case Family::aipw_ridge: return "aipw_ridge";
    case Family::ipw_clipvm: return "ipw_clipvm";
    case Family::aipw_clipvm: return "aipw_clipvm";
    case Family::ipw_d_oracle: return "ipw_d_oracle";
    }
    return "?";
}

Family parse_family(const std::string& s)
{
    static const Family all[] = {Family::naive,     Family::regression, Family::ipw,        Family::aipw,
                                 Family::ipw_clip,  Family::aipw_clip,  Family::ipw_d,      Family::aipw_d,
                                 Family::ipw_ridge, Family::aipw_ridge, Family::ipw_clipvm, Family::aipw_clipvm,
                                 Family::ipw_d_oracle};
    for (Family f : all)
        if (family_name(f) == s) return f;
    throw ValidationError("unknown estimator '" + s + "'");
}

bool is_w_indexed(Family f)
{
    switch (f) {
    case Family::ipw_d:
    case Family::aipw_d:
    case Family::ipw_ridge:
    case Family::aipw_ridge:
    case Family::ipw_clipvm:
    case Family::aipw_clipvm:
    case Family::ipw_d_oracle: return true;
    default: return false;
    }
}

std::string format_w(double w)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, w);
    return std::string(buf, r.ptr);
}

std::string estimator_name(Family f, double w)
{
    return is_w_indexed(f) ? family_name(f) + "(" + format_w(w) + ")" : family_name(f);
}

std::vector<Family> default_roster()
{
    return {Family::naive, Family::regression, Family::ipw,   Family::aipw,
            Family::ipw_clip, Family::aipw_clip, Family::ipw_d, Family::aipw_d};
}

CovariateTransform parse_transform(const std::string& s)
{
    if (s == "none") return CovariateTransform::none;
    if (s == "standardize") return CovariateTransform::standardize;
    if (s == "whiten") return CovariateTransform::whiten;
    throw ValidationError("unknown covariate_transform '" + s + "' (expected none|standardize|whiten)");
}

std::string to_string(CovariateTransform t)
{
    switch (t) {
    case CovariateTransform::none: return "none";
    case CovariateTransform::standardize: return "standardize";
    default: return "whiten";
    }
}

MatD transform_covariates(const MatD& x, CovariateTransform t)
{
    if (t == CovariateTransform::none) return x;
    const Index n = x.rows();
    MatD xc = x.rowwise() - x.colwise().mean();
    if (t == CovariateTransform::standardize) {
        for (Index j = 0; j < xc.cols(); ++j) {
            const double sd = std::sqrt(xc.col(j).squaredNorm() / static_cast<double>(n));
            if (sd > 0) xc.col(j) /= sd;
        }
        return xc;
    }
    require(n > x.cols(), "whitening needs more rows than columns");
    const MatD cov = xc.transpose() * xc / static_cast<double>(n);
    Eigen::LLT<MatD> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("whitening: sample covariance is not positive definite");
    // Rows z_i = L^{-1} x_i, so that the sample covariance of z is the identity.
    return llt.matrixL().solve(xc.transpose()).transpose();
}

void EstimationSettings::validate() const
{
    require(cv_folds >= 2, "cv_folds must be at least 2");
    require(!w_grid.empty(), "w_grid must not be empty");
    for (double w : w_grid) require(w >= -1.0 && w <= 1.0, "w values must lie in [-1, 1] (got " + format_w(w) + ")");
    require(0 < clip_lo && clip_lo < clip_hi && clip_hi < 1, "clip bounds must satisfy 0 < lo < hi < 1");
    require(integration.nodes >= 1 && integration.draws >= 1, "integration nodes/draws must be positive");
    require(!roster.empty(), "estimator roster must not be empty");
}

bool EstimationSettings::wants(Family f) const { return std::find(roster.begin(), roster.end(), f) != roster.end(); }

const NamedEstimate* EstimationResult::find(const std::string& name) const
{
    for (const auto& e : estimates)
        if (e.name == name) return &e;
    return nullptr;
}

double population_variance(const VecD& v)
{
    const double m = v.mean();
    return (v.array() - m).square().mean();
}

// ---------------------------------------------------------------------------

RidgeMatch match_ridge_variance(const DesignMatrix<double>& design, const VecD& treatment, double target,
                                double lambda_start, const FitOptions& opt, double rel_tol)
{
    RidgeMatch out;
    out.target = target;
    struct Eval {
        double lambda;
        double var;
        VecD scores;
    };
    auto eval = [&](double lam) -> std::optional<Eval> {
        try {
            const auto fit = fit_logistic(design, treatment, Penalty::ridge, lam, opt);
            VecD s = fit.predict(design.values());
            const double v = population_variance(s);
            return Eval{lam, v, std::move(s)};
        } catch (const NumericalError&) {
            return std::nullopt;
        }
    };
    auto finish = [&](const Eval& e, bool attainable) {
        out.lambda = e.lambda;
        out.achieved = e.var;
        out.scores = e.scores;
        out.attainable = attainable;
        return out;
    };
    auto close = [&](const Eval& e) { return std::abs(e.var - target) <= rel_tol * target; };

    double start = lambda_start > 0 ? lambda_start : 1.0;
    auto at_start = eval(start);
    if (!at_start) throw NumericalError("variance matching: ridge fit failed at the starting penalty");
    if (close(*at_start)) return finish(*at_start, true);

    Eval lo{0, 0, {}}, hi{0, 0, {}};
    if (at_start->var > target) {
        lo = *at_start;
        double lam = start;
        bool found = false;
        for (int k = 0; k < 60; ++k) {
            lam *= 10;
            auto e = eval(lam);
            if (!e) throw NumericalError("variance matching: ridge fit failed");
            if (close(*e)) return finish(*e, true);
            if (e->var < target) {
                hi = *e;
                found = true;
                break;
            }
            lo = *e;
        }
        if (!found) return finish(lo, false);
    } else {
        hi = *at_start;
        double lam = start;
        bool found = false;
        for (int k = 0; k < 10; ++k) {
            lam /= 10;
            auto e = eval(lam);
            if (!e) break;
            if (close(*e)) return finish(*e, true);
            if (e->var > target) {
                lo = *e;
                found = true;
                break;
            }
            hi = *e;
        }
        if (!found) {
            // Target above what the least-penalized fit reaches: floor at 0.
            if (auto zero = eval(0.0)) {
                if (close(*zero)) return finish(*zero, true);
                if (zero->var < target) return finish(*zero, false);
                lo = *zero;
            } else {
                return finish(hi, false);
            }
        }
    }
    Eval best = std::abs(lo.var - target) < std::abs(hi.var - target) ? lo : hi;
    for (int it = 0; it < 200; ++it) {
        const double mid = lo.lambda > 0 ? std::sqrt(lo.lambda * hi.lambda) : hi.lambda / 16;
        auto e = eval(mid);
        if (!e) throw NumericalError("variance matching: ridge fit failed during bisection");
        if (std::abs(e->var - target) < std::abs(best.var - target)) best = *e;
        if (close(*e)) break;
        if (e->var > target) lo = std::move(*e);
        else hi = std::move(*e);
        if (hi.lambda - lo.lambda <= 1e-14 * hi.lambda) break;
    }
    return finish(best, close(best));
}

ClipMatch match_clip_variance(const VecD& propensities, double target, double rel_tol)
{
    ClipMatch out;
    out.target = target;
    auto clipped = [&](double c) { return VecD(propensities.cwiseMax(c).cwiseMin(1.0 - c)); };
    const double v0 = population_variance(propensities);
    if (target >= v0 * (1 - rel_tol)) {
        out.bound = 0;
        out.scores = propensities;
        out.achieved = v0;
        out.attainable = target <= v0 * (1 + rel_tol);
        return out;
    }
    double lo = 0, hi = 0.5;
    for (int it = 0; it < 200; ++it) {
        const double c = 0.5 * (lo + hi);
        const double v = population_variance(clipped(c));
        out.bound = c;
        out.achieved = v;
        if (std::abs(v - target) <= rel_tol * target) break;
        if (v > target) lo = c;
        else hi = c;
    }
    out.scores = clipped(out.bound);
    out.attainable = std::abs(out.achieved - target) <= rel_tol * target;
    return out;
}

// ---------------------------------------------------------------------------

namespace {

template <class F>
void add_estimate(EstimationResult& res, Family f, double w, F&& compute)
{
    NamedEstimate ne;
    ne.family = f;
    ne.w = is_w_indexed(f) ? w : kNaN;
    ne.name = estimator_name(f, w);
    try {
        ne.report = compute();
        ne.report->estimator = ne.name;
    } catch (const std::exception& ex) {
        ne.error = ex.what();
    }
    res.estimates.push_back(std::move(ne));
}

void add_failure(EstimationResult& res, Family f, double w, const std::string& why)
{
    add_estimate(res, f, w, [&]() -> EstimateReport<double> { throw NumericalError(why); });
}

std::vector<Index> arm_rows(const VecD& t, double arm)
{
    std::vector<Index> ids;
    for (Index i = 0; i < t.size(); ++i)
        if (t(i) == arm) ids.push_back(i);
    return ids;
}

VecD gather(const VecD& v, const std::vector<Index>& ids)
{
    VecD out(static_cast<Index>(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) out(static_cast<Index>(i)) = v(ids[i]);
    return out;
}

} // namespace

EstimationResult estimate_all(const Dataset<double>& data, const EstimationSettings& s, std::uint64_t fit_seed,
                              const OracleScores* oracle, bool keep_traces)
{
    s.validate();
    detail::require_arms(data);
    EstimationResult res;
    const MatD& x = data.design.values();
    const auto controls = arm_rows(data.treatment, 0.0);
    const auto treated = arm_rows(data.treatment, 1.0);

    const bool want_d = s.wants(Family::ipw_d) || s.wants(Family::aipw_d) || s.wants(Family::ipw_ridge) ||
                        s.wants(Family::aipw_ridge) || s.wants(Family::ipw_clipvm) || s.wants(Family::aipw_clipvm) ||
                        s.bias_diagnostics;
    const bool want_ridge = s.wants(Family::ipw_ridge) || s.wants(Family::aipw_ridge);
    const bool want_clipvm = s.wants(Family::ipw_clipvm) || s.wants(Family::aipw_clipvm);

    // Outcome model on the control arm: one_se for predictions, lambda_min for the direction.
    const auto d0 = data.design.subset(controls);
    const auto cv0 = cv_path(d0, gather(data.outcome, controls), Link::identity, s.outcome_penalty, s.cv_folds,
                             derive_seed(fit_seed, 11), s.fit);
    res.m0_predict = cv0.fit(CvRule::one_se);
    res.m0_direction = cv0.fit(CvRule::lambda_min);
    const VecD m0 = res.m0_predict->predict(x);

    const auto cve = cv_path(data.design, data.treatment, Link::logit, s.propensity_penalty, s.cv_folds,
                             derive_seed(fit_seed, 12), s.fit);
    res.propensity = cve.fit(CvRule::lambda_min);
    const VecD e_hat = res.propensity->predict(x);
    res.propensity_scores = e_hat;

    if (want_ridge) {
        if (s.propensity_penalty == Penalty::ridge) {
            res.ridge_propensity = res.propensity;
        } else {
            res.ridge_propensity = cv_path(data.design, data.treatment, Link::logit, Penalty::ridge, s.cv_folds,
                                           derive_seed(fit_seed, 13), s.fit)
                                       .fit(CvRule::lambda_min);
        }
    }
    std::optional<VecD> m1;
    if (s.bias_diagnostics) {
        const auto d1 = data.design.subset(treated);
        res.m1_predict = cross_validate(d1, gather(data.outcome, treated), s.outcome_penalty, Link::identity,
                                        s.cv_folds, CvRule::one_se, derive_seed(fit_seed, 16), s.fit);
        m1 = res.m1_predict->predict(x);
    }

    if (want_d) {
        try {
            res.family = build_family(res.m0_direction->coefficients, res.propensity->coefficients, s.null_completion,
                                      derive_seed(fit_seed, 14));
        } catch (const std::exception& ex) {
            res.family_error = ex.what();
        }
    }

    const VecD e_clip = clip_propensities(e_hat, s.clip_lo, s.clip_hi);
    for (Family f : s.roster) {
        switch (f) {
        case Family::naive: add_estimate(res, f, 0, [&] { return naive(data); }); break;
        case Family::regression: add_estimate(res, f, 0, [&] { return regression_att(data, m0); }); break;
        case Family::ipw: add_estimate(res, f, 0, [&] { return ipw_att(data, e_hat, s.normalize); }); break;
        case Family::aipw: add_estimate(res, f, 0, [&] { return aipw_att(data, e_hat, m0, s.normalize); }); break;
        case Family::ipw_clip: add_estimate(res, f, 0, [&] { return ipw_att(data, e_clip, s.normalize); }); break;
        case Family::aipw_clip: add_estimate(res, f, 0, [&] { return aipw_att(data, e_clip, m0, s.normalize); }); break;
        default: break;
        }
    }

    for (std::size_t k = 0; k < s.w_grid.size(); ++k) {
        const double w = s.w_grid[k];
        SweepPoint sp;
        sp.w = w;
        std::optional<VecD> ed;
        std::string ed_error = res.family_error;
        if (want_d && res.family) {
            try {
                const auto score = gamma_of_w(*res.family, w);
                sp.constraint_residual = constraint_residual(*res.family, score.gamma);
                auto opt = s.integration;
                opt.seed = derive_seed(fit_seed, 100 + k);
                const auto rp = reduced_propensity(score.gamma, *res.propensity, opt);
                ed = rp.evaluate_design(x);
                sp.ed_variance = population_variance(*ed);
                if (s.bias_diagnostics) {
                    const VecD d = x * score.gamma;
                    const auto bd = bias_diagnostic(data.treatment, d, m0, *m1, e_hat, s.strata);
                    sp.bias_att = bd.att;
                    sp.bias_ate = bd.ate;
                }
            } catch (const std::exception& ex) {
                ed_error = ex.what();
            }
        }

        std::optional<VecD> ridge_scores, clip_scores, oracle_ed;
        std::string ridge_error = ed_error, clip_error = ed_error, oracle_error;
        if (ed && want_ridge) {
            try {
                if (w == 1.0) {
                    ridge_scores = res.ridge_propensity->predict(x);
                    sp.ridge_lambda = res.ridge_propensity->lambda;
                    sp.ridge_variance = population_variance(*ridge_scores);
                    sp.ridge_attainable = true;
                } else {
                    const auto m = match_ridge_variance(data.design, data.treatment, sp.ed_variance,
                                                        res.ridge_propensity->lambda, s.fit);
                    ridge_scores = m.scores;
                    sp.ridge_lambda = m.lambda;
                    sp.ridge_variance = m.achieved;
                    sp.ridge_attainable = m.attainable;
                }
            } catch (const std::exception& ex) {
                ridge_error = ex.what();
            }
        }
        if (ed && want_clipvm) {
            const auto m = match_clip_variance(e_hat, sp.ed_variance);
            clip_scores = m.scores;
            sp.clip_bound = m.bound;
            sp.clip_variance = m.achieved;
        }
        if (oracle && s.wants(Family::ipw_d_oracle)) {
            try {
                const auto score = gamma_of_w(oracle->family, w);
                auto opt = s.integration;
                opt.seed = derive_seed(fit_seed, 200 + k);
                const ReducedPropensity<double> rp(score.gamma, oracle->intercept, oracle->coefficients, opt);
                oracle_ed = rp.evaluate_design(x);
                sp.oracle_ed_variance = population_variance(*oracle_ed);
            } catch (const std::exception& ex) {
                oracle_error = ex.what();
            }
        }

        for (Family f : s.roster) {
            if (!is_w_indexed(f)) continue;
            auto with = [&](const std::optional<VecD>& scores, const std::string& why, bool augmented) {
                if (!scores) return add_failure(res, f, w, why.empty() ? "propensity scores unavailable" : why);
                if (augmented) add_estimate(res, f, w, [&] { return aipw_att(data, *scores, m0, s.normalize); });
                else add_estimate(res, f, w, [&] { return ipw_att(data, *scores, s.normalize); });
            };
            switch (f) {
            case Family::ipw_d: with(ed, ed_error, false); break;
            case Family::aipw_d: with(ed, ed_error, true); break;
            case Family::ipw_ridge: with(ridge_scores, ridge_error, false); break;
            case Family::aipw_ridge: with(ridge_scores, ridge_error, true); break;
            case Family::ipw_clipvm: with(clip_scores, clip_error, false); break;
            case Family::aipw_clipvm: with(clip_scores, clip_error, true); break;
            case Family::ipw_d_oracle:
                if (!oracle) add_failure(res, f, w, "oracle scores need simulated data");
                else with(oracle_ed, oracle_error, false);
                break;
            default: break;
            }
        }
        if (keep_traces) {
            if (ed) sp.ed = *ed;
            if (ridge_scores) sp.ridge = *ridge_scores;
            if (clip_scores) sp.clip = *clip_scores;
        }
        res.sweep.push_back(std::move(sp));
    }
    return res;
}

// ---------------------------------------------------------------------------

std::uint64_t dgp_key(const DGPConfig& c)
{
    std::uint64_t h = mix_seed(static_cast<std::uint64_t>(c.n) * 0x100000001b3ULL + static_cast<std::uint64_t>(c.p));
    for (double v : {c.s_T, c.s_Y, c.sigma, c.tau, c.alpha0, c.beta0, c.support_overlap}) h = hash_double(h, v);
    h = mix_seed(h ^ static_cast<std::uint64_t>(c.active));
    return mix_seed(h ^ c.coef_seed);
}

std::uint64_t replication_seed(std::uint64_t base_seed, const DGPConfig& cfg, int replication)
{
    return derive_seed(base_seed, dgp_key(cfg), static_cast<std::uint64_t>(replication) + 1);
}

std::uint64_t fit_seed_for(std::uint64_t rep_seed) { return derive_seed(rep_seed, 2); }

EstimationSettings cell_settings(const ExperimentGrid& grid, int cell)
{
    const auto& spec = grid.cells.at(static_cast<std::size_t>(cell));
    EstimationSettings s = grid.settings;
    s.outcome_penalty = spec.outcome_penalty;
    s.propensity_penalty = spec.propensity_penalty;
    if (!spec.roster.empty()) s.roster = spec.roster;
    return s;
}

Dataset<double> replication_dataset(const ExperimentGrid& grid, int cell, int replication)
{
    const DGPConfig cfg = resolve(grid.cells.at(static_cast<std::size_t>(cell)).dgp);
    std::mt19937_64 rng(derive_seed(replication_seed(grid.base_seed, cfg, replication), 1));
    return generate(cfg, rng);
}

ReplicationRecord run_replication(const ExperimentGrid& grid, int cell, int replication)
{
    const DGPConfig cfg = resolve(grid.cells.at(static_cast<std::size_t>(cell)).dgp);
    ReplicationRecord rec;
    rec.cell = cell;
    rec.replication = replication;
    rec.data_seed = replication_seed(grid.base_seed, cfg, replication);
    rec.fit_seed = fit_seed_for(rec.data_seed);
    std::mt19937_64 rng(derive_seed(rec.data_seed, 1));
    const auto data = generate(cfg, rng);
    rec.sample_att = data.sample_att();
    const auto settings = cell_settings(grid, cell);

    // Names are fixed by the roster so that failed replications line up.
    for (Family f : settings.roster)
        if (!is_w_indexed(f)) rec.names.push_back(family_name(f));
    for (double w : settings.w_grid)
        for (Family f : settings.roster)
            if (is_w_indexed(f)) rec.names.push_back(estimator_name(f, w));
    rec.estimates.assign(rec.names.size(), kNaN);

    try {
        const auto oracle = oracle_scores(cfg, data);
        const auto res = estimate_all(data, settings, rec.fit_seed, &oracle, replication == grid.shrinkage_replication);
        for (const auto& e : res.estimates) {
            const auto it = std::find(rec.names.begin(), rec.names.end(), e.name);
            if (it == rec.names.end()) continue;
            const auto k = static_cast<std::size_t>(it - rec.names.begin());
            if (e.report) rec.estimates[k] = e.report->estimate;
            else rec.failures[e.name] = e.error;
        }
        if (res.family) {
            rec.rho_hat = res.family->rho;
            rec.sign_flipped = res.family->sign_flipped;
        }
        rec.sweep = res.sweep;
    } catch (const std::exception& ex) {
        for (const auto& name : rec.names) rec.failures[name] = ex.what();
    }
    return rec;
}

std::vector<EstimatorSummary> aggregate(const std::vector<ReplicationRecord>& reps, double tau)
{
    std::vector<EstimatorSummary> out;
    if (reps.empty()) return out;
    const auto& names = reps.front().names;
    for (std::size_t k = 0; k < names.size(); ++k) {
        EstimatorSummary s;
        s.name = names[k];
        const auto paren = s.name.find('(');
        s.family = parse_family(s.name.substr(0, paren));
        if (paren != std::string::npos) s.w = std::stod(s.name.substr(paren + 1));
        std::vector<double> err;
        double var_sum = 0;
        int var_count = 0;
        for (const auto& r : reps) {
            const double est = r.estimates[k];
            if (!std::isfinite(est)) {
                ++s.failures;
                continue;
            }
            err.push_back(est - r.sample_att);
            s.bias_population += est - tau;
            for (const auto& sp : r.sweep) {
                if (is_w_indexed(s.family) && sp.w == s.w) {
                    double v = kNaN;
                    switch (s.family) {
                    case Family::ipw_d:
                    case Family::aipw_d: v = sp.ed_variance; break;
                    case Family::ipw_ridge:
                    case Family::aipw_ridge: v = sp.ridge_variance; break;
                    case Family::ipw_clipvm:
                    case Family::aipw_clipvm: v = sp.clip_variance; break;
                    case Family::ipw_d_oracle: v = sp.oracle_ed_variance; break;
                    default: break;
                    }
                    if (std::isfinite(v)) {
                        var_sum += v;
                        ++var_count;
                    }
                }
            }
        }
        s.count = static_cast<int>(err.size());
        if (s.count > 0) {
            const double r = static_cast<double>(s.count);
            double sum = 0, sq = 0;
            for (double e : err) {
                sum += e;
                sq += e * e;
            }
            s.bias = sum / r;
            double dev = 0;
            for (double e : err) dev += (e - s.bias) * (e - s.bias);
            s.sd = std::sqrt(dev / r);
            s.rmse = std::sqrt(sq / r);
            s.bias_population /= r;
        } else {
            s.bias = s.sd = s.rmse = s.bias_population = kNaN;
        }
        if (var_count > 0) s.mean_variance = var_sum / var_count;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<CellResult> run_grid(const ExperimentGrid& grid, int threads)
{
    grid.settings.validate();
    require(grid.replications >= 1, "replications must be at least 1");
    std::vector<CellResult> cells(grid.cells.size());
    std::vector<std::pair<int, int>> jobs;
    for (std::size_t c = 0; c < grid.cells.size(); ++c) {
        cells[c].cell = static_cast<int>(c);
        cells[c].spec = grid.cells[c];
        cells[c].spec.dgp = resolve(grid.cells[c].dgp);
        cells[c].replications.resize(static_cast<std::size_t>(grid.replications));
        for (int r = 0; r < grid.replications; ++r) jobs.emplace_back(static_cast<int>(c), r);
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const auto [c, r] = jobs[j];
            cells[static_cast<std::size_t>(c)].replications[static_cast<std::size_t>(r)] = run_replication(grid, c, r);
        }
    };
    const int nthreads = std::max(1, threads);
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& c : cells) {
        c.summary = aggregate(c.replications, c.spec.dgp.tau);
        for (const auto& r : c.replications)
            if (!r.failures.empty() && r.failures.size() == r.names.size()) ++c.failed_replications;
    }
    return cells;
}

CellResult run_cell(const ExperimentGrid& grid, int cell, int threads)
{
    ExperimentGrid one = grid;
    one.cells = {grid.cells.at(static_cast<std::size_t>(cell))};
    auto res = run_grid(one, threads);
    res.front().cell = cell;
    return std::move(res.front());
}

} // namespace deconf::sim
