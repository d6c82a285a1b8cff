#pragma once

// Simulation study: the Gaussian / logistic data-generating process, oracle
// scores, the per-dataset estimation pipeline shared with the CLI, variance
// matched regularization and clipping baselines, and RMSE/bias/SD summaries.

#include "deconf/estimators.hpp"
#include "deconf/regmodels.hpp"
#include "deconf/scorefamily.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace deconf::sim {

using VecD = Vec<double>;
using MatD = Mat<double>;

struct DGPConfig {
    int n = 500;
    int p = 100;
    double s_T = 1.0;
    double s_Y = 5.0;
    double sigma = 1.0;
    double tau = 1.0;
    double alpha0 = 0.0;
    double beta0 = 0.0;
    int active = 10;               // nonzero coordinates per coefficient vector
    double support_overlap = 0.5;  // shared fraction of the alpha/beta supports
    std::uint64_t coef_seed = 0;
    VecD alpha_true;               // filled by resolve() when empty
    VecD beta_true;

    void validate() const;
};

/// Fills alpha_true / beta_true: `active` coordinates of magnitude
/// 1/sqrt(active) with random signs. round(support_overlap * active) of the
/// beta coordinates are shared with alpha and carry alpha's signs, so
/// alpha'beta equals the overlap fraction.
DGPConfig resolve(DGPConfig cfg);

/// X ~ N(0, I_p), T ~ Bern(logit^{-1}(beta0 + s_T X'beta)),
/// Y(t) ~ N(alpha0 + s_Y X'alpha + tau t, sigma^2), Y = T Y(1) + (1 - T) Y(0).
Dataset<double> generate(const DGPConfig& cfg, std::mt19937_64& rng);

struct OracleScores {
    VecD propensity;          // true e(X)
    VecD prognostic;          // true m0(X)
    ScoreFamily<double> family;  // from the true alpha, beta
    double intercept = 0;        // beta0
    VecD coefficients;           // s_T * beta
};

OracleScores oracle_scores(const DGPConfig& cfg, const Dataset<double>& data);

// ---------------------------------------------------------------------------
// Estimator roster.

/// Estimator families. The w-indexed ones expand over the w grid.
enum class Family {
    naive,
    regression,
    ipw,
    aipw,
    ipw_clip,
    aipw_clip,
    ipw_d,
    aipw_d,
    ipw_ridge,
    aipw_ridge,
    ipw_clipvm,
    aipw_clipvm,
    ipw_d_oracle,
};

std::string family_name(Family f);
Family parse_family(const std::string& s);
bool is_w_indexed(Family f);
std::string estimator_name(Family f, double w);
std::string format_w(double w);
std::vector<Family> default_roster();

enum class CovariateTransform { none, standardize, whiten };
CovariateTransform parse_transform(const std::string& s);
std::string to_string(CovariateTransform t);

/// Centers and scales (or whitens with the sample covariance) the columns.
MatD transform_covariates(const MatD& x, CovariateTransform t);

struct EstimationSettings {
    Penalty outcome_penalty = Penalty::lasso;
    Penalty propensity_penalty = Penalty::lasso;
    int cv_folds = 10;
    std::vector<double> w_grid{-1.0, -0.5, 0.0, 0.5, 1.0};
    std::vector<Family> roster = default_roster();
    double clip_lo = 0.1;
    double clip_hi = 0.9;
    bool normalize = true;
    ReducedPropensityOptions integration;
    NullCompletion null_completion = NullCompletion::first_basis;
    int strata = 0;
    bool bias_diagnostics = false;
    FitOptions fit;

    void validate() const;
    bool wants(Family f) const;
};

struct NamedEstimate {
    std::string name;
    Family family = Family::naive;
    double w = std::numeric_limits<double>::quiet_NaN();
    std::optional<EstimateReport<double>> report;
    std::string error;
};

struct SweepPoint {
    double w = 0;
    double constraint_residual = std::numeric_limits<double>::quiet_NaN();
    double ed_variance = std::numeric_limits<double>::quiet_NaN();
    double ridge_lambda = std::numeric_limits<double>::quiet_NaN();
    double ridge_variance = std::numeric_limits<double>::quiet_NaN();
    bool ridge_attainable = true;
    double clip_bound = std::numeric_limits<double>::quiet_NaN();
    double clip_variance = std::numeric_limits<double>::quiet_NaN();
    double oracle_ed_variance = std::numeric_limits<double>::quiet_NaN();
    double bias_att = std::numeric_limits<double>::quiet_NaN();
    double bias_ate = std::numeric_limits<double>::quiet_NaN();
    VecD ed;       // kept only when traces are requested
    VecD ridge;
    VecD clip;
};

struct EstimationResult {
    std::vector<NamedEstimate> estimates;
    std::vector<SweepPoint> sweep;
    std::optional<FittedGLM<double>> m0_predict;    // one_se rule
    std::optional<FittedGLM<double>> m0_direction;  // lambda_min rule
    std::optional<FittedGLM<double>> m1_predict;
    std::optional<FittedGLM<double>> propensity;    // lambda_min rule
    std::optional<FittedGLM<double>> ridge_propensity;
    std::optional<ScoreFamily<double>> family;
    std::string family_error;
    VecD propensity_scores;

    const NamedEstimate* find(const std::string& name) const;
};

/// Fits the outcome and propensity models, builds the estimated score family
/// and evaluates every roster estimator. Pure function of its arguments.
EstimationResult estimate_all(const Dataset<double>& data, const EstimationSettings& settings, std::uint64_t fit_seed,
                              const OracleScores* oracle = nullptr, bool keep_traces = false);

// ---------------------------------------------------------------------------
// Variance matching.

double population_variance(const VecD& v);

struct RidgeMatch {
    double lambda = 0;
    double target = 0;
    double achieved = 0;
    bool attainable = true;
    VecD scores;
};

/// Ridge logistic penalty whose fitted-propensity variance matches `target`
/// (bisection on log lambda, relative tolerance rel_tol).
RidgeMatch match_ridge_variance(const DesignMatrix<double>& design, const VecD& treatment, double target,
                                double lambda_start, const FitOptions& opt = {}, double rel_tol = 1e-3);

struct ClipMatch {
    double bound = 0;  // propensities clamped to [bound, 1 - bound]
    double target = 0;
    double achieved = 0;
    bool attainable = true;
    VecD scores;
};

ClipMatch match_clip_variance(const VecD& propensities, double target, double rel_tol = 1e-4);

// ---------------------------------------------------------------------------
// Experiment runner.

struct CellSpec {
    DGPConfig dgp;
    Penalty outcome_penalty = Penalty::lasso;
    Penalty propensity_penalty = Penalty::lasso;
    std::vector<Family> roster;  // empty: study roster
};

struct ExperimentGrid {
    std::vector<CellSpec> cells;
    EstimationSettings settings;
    int replications = 100;
    std::uint64_t base_seed = 0;
    int shrinkage_replication = 0;  // -1: no traces
};

struct ReplicationRecord {
    int cell = 0;
    int replication = 0;
    std::uint64_t data_seed = 0;
    std::uint64_t fit_seed = 0;
    double sample_att = 0;
    std::vector<std::string> names;
    std::vector<double> estimates;   // NaN on failure
    std::map<std::string, std::string> failures;
    double rho_hat = std::numeric_limits<double>::quiet_NaN();
    bool sign_flipped = false;
    std::vector<SweepPoint> sweep;
};

struct EstimatorSummary {
    std::string name;
    Family family = Family::naive;
    double w = std::numeric_limits<double>::quiet_NaN();
    double rmse = 0;
    double bias = 0;
    double sd = 0;
    double bias_population = 0;
    double mean_variance = std::numeric_limits<double>::quiet_NaN();
    int count = 0;
    int failures = 0;
};

struct CellResult {
    int cell = 0;
    CellSpec spec;
    std::vector<ReplicationRecord> replications;
    std::vector<EstimatorSummary> summary;
    int failed_replications = 0;
};

std::uint64_t dgp_key(const DGPConfig& cfg);
std::uint64_t replication_seed(std::uint64_t base_seed, const DGPConfig& cfg, int replication);
std::uint64_t fit_seed_for(std::uint64_t replication_seed);

/// One replication: generate, estimate, record.
ReplicationRecord run_replication(const ExperimentGrid& grid, int cell, int replication);

/// Runs every (cell, replication) job on `threads` workers; results do not
/// depend on the thread count.
std::vector<CellResult> run_grid(const ExperimentGrid& grid, int threads = 1);

CellResult run_cell(const ExperimentGrid& grid, int cell, int threads = 1);

/// RMSE / bias / SD (divisor R) against the per-replication sample ATT.
std::vector<EstimatorSummary> aggregate(const std::vector<ReplicationRecord>& reps, double tau);

/// Dataset for a given (cell, replication), identical to what run_replication sees.
Dataset<double> replication_dataset(const ExperimentGrid& grid, int cell, int replication);

EstimationSettings cell_settings(const ExperimentGrid& grid, int cell);

} // namespace deconf::sim
