#pragma once

// Penalized linear / logistic regression (ridge and lasso) on standardized
// columns with an unpenalized intercept, plus k-fold cross-validation with
// glmnet-style lambda grids and the lambda.min / 1se selection rules.
//
// Objective (standardized scale, v_i = 1/n):
//   linear:   1/(2n) sum (y_i - b0 - x_i'b)^2 + lambda * P(b)
//   logistic: 1/n sum [log(1 + exp(eta_i)) - y_i eta_i] + lambda * P(b)
// with P(b) = |b|_1 (lasso) or |b|^2 / 2 (ridge).

#include "deconf/types.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace deconf {

enum class Link { identity, logit };
enum class Penalty { ridge, lasso };
enum class CvRule { lambda_min, one_se, fixed };
enum class RidgeSolver { direct, coordinate_descent };

inline std::string_view to_string(Link l) { return l == Link::identity ? "identity" : "logit"; }
inline std::string_view to_string(Penalty p) { return p == Penalty::ridge ? "ridge" : "lasso"; }
inline std::string_view to_string(CvRule r)
{
    switch (r) {
    case CvRule::lambda_min: return "lambda_min";
    case CvRule::one_se: return "one_se";
    default: return "fixed";
    }
}

inline Penalty parse_penalty(std::string_view s)
{
    if (s == "ridge") return Penalty::ridge;
    if (s == "lasso") return Penalty::lasso;
    throw ValidationError("unknown penalty family '" + std::string(s) + "' (expected ridge|lasso)");
}

inline CvRule parse_cv_rule(std::string_view s)
{
    if (s == "lambda_min") return CvRule::lambda_min;
    if (s == "one_se") return CvRule::one_se;
    if (s == "fixed") return CvRule::fixed;
    throw ValidationError("unknown cv rule '" + std::string(s) + "'");
}

struct FitOptions {
    // Convergence (glmnet): a sweep converges when max_j c_j (delta b_j)^2,
    // with c_j the weighted curvature of coordinate j, falls below
    // tol * Var(response); irls_tol applies the same test to a full IRLS step.
    double tol = 1e-7;
    int max_sweeps = 10000;
    double irls_tol = 1e-7;  // inner solves run at min(tol, irls_tol)
    int max_irls = 100;
    RidgeSolver ridge_solver = RidgeSolver::direct;
    int grid_size = 100;
    double grid_min_ratio = 1e-4;
    // Path truncation (glmnet): stop once the deviance ratio passes
    // dev_ratio_max or improves by less than dev_ratio_rel_change.
    double dev_ratio_max = 0.999;
    double dev_ratio_rel_change = 1e-5;
    int min_path_length = 5;
};

/// Covariate matrix with the column statistics used for standardization.
/// Scales are population standard deviations (divisor n), so standardized
/// columns satisfy (1/n) |x_j|^2 = 1.
template <class Scalar = double>
class DesignMatrix {
public:
    DesignMatrix() = default;

    explicit DesignMatrix(Mat<Scalar> values) : values_(std::move(values))
    {
        require(values_.rows() >= 2, "design matrix needs at least 2 rows");
        require(values_.cols() >= 1, "design matrix needs at least 1 column");
        require(all_finite(values_), "design matrix has non-finite entries");
        const Index n = values_.rows();
        means_ = values_.colwise().mean().transpose();
        scales_.resize(values_.cols());
        constant_.assign(static_cast<std::size_t>(values_.cols()), false);
        for (Index j = 0; j < values_.cols(); ++j) {
            const Scalar sd = std::sqrt((values_.col(j).array() - means_(j)).square().sum() / Scalar(n));
            const Scalar floor = Scalar(1e-12) * std::max(Scalar(1), std::abs(means_(j)));
            if (!(sd > floor)) {
                constant_[static_cast<std::size_t>(j)] = true;
                scales_(j) = Scalar(1);
            } else {
                scales_(j) = sd;
            }
        }
    }

    Index rows() const { return values_.rows(); }
    Index cols() const { return values_.cols(); }
    const Mat<Scalar>& values() const { return values_; }
    const Vec<Scalar>& means() const { return means_; }
    const Vec<Scalar>& scales() const { return scales_; }
    bool is_constant(Index j) const { return constant_[static_cast<std::size_t>(j)]; }

    std::vector<Index> active_columns() const
    {
        std::vector<Index> out;
        for (Index j = 0; j < cols(); ++j)
            if (!is_constant(j)) out.push_back(j);
        return out;
    }

    /// Standardized copy of the non-constant columns, in active_columns() order.
    Mat<Scalar> standardized() const
    {
        const auto cols_ = active_columns();
        Mat<Scalar> out(rows(), static_cast<Index>(cols_.size()));
        for (std::size_t k = 0; k < cols_.size(); ++k) {
            const Index j = cols_[k];
            out.col(static_cast<Index>(k)) = (values_.col(j).array() - means_(j)) / scales_(j);
        }
        return out;
    }

    DesignMatrix subset(const std::vector<Index>& row_ids) const
    {
        Mat<Scalar> sub(static_cast<Index>(row_ids.size()), cols());
        for (std::size_t i = 0; i < row_ids.size(); ++i) sub.row(static_cast<Index>(i)) = values_.row(row_ids[i]);
        return DesignMatrix(std::move(sub));
    }

private:
    Mat<Scalar> values_;
    Vec<Scalar> means_;
    Vec<Scalar> scales_;
    std::vector<bool> constant_;
};

template <class Scalar = double>
struct CvCurve {
    std::vector<Scalar> lambdas;
    std::vector<Scalar> mean;
    std::vector<Scalar> se;
};

template <class Scalar = double>
struct FittedGLM {
    Scalar intercept = 0;
    Vec<Scalar> coefficients;  // original covariate scale
    Link link = Link::identity;
    Penalty penalty = Penalty::ridge;
    Scalar lambda = 0;
    CvRule cv_rule = CvRule::fixed;
    int cv_folds = 0;
    CvCurve<Scalar> cv_curve;
    bool converged = true;
    int iterations = 0;

    template <class Derived>
    Vec<Scalar> linear_predictor(const Eigen::MatrixBase<Derived>& x) const
    {
        require(x.cols() == coefficients.size(), "prediction matrix has the wrong number of columns");
        return (x * coefficients).array() + intercept;
    }

    /// Fitted mean: identity or inverse-logit of the linear predictor.
    template <class Derived>
    Vec<Scalar> predict(const Eigen::MatrixBase<Derived>& x) const
    {
        Vec<Scalar> eta = linear_predictor(x);
        if (link == Link::logit) eta = eta.unaryExpr([](Scalar v) { return inv_logit(v); });
        return eta;
    }

    int nonzero_count() const { return static_cast<int>((coefficients.array() != Scalar(0)).count()); }
};

namespace detail {

template <class Scalar>
Scalar soft_threshold(Scalar x, Scalar t)
{
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return Scalar(0);
}

// Solution state of the inner weighted problem
//   min 1/2 sum v_i (z_i - b0 - x_i'b)^2 + lambda P(b),
// with r = z - b0 - X b kept in sync. The working set persists across calls
// (warm starts along a path and across IRLS steps).
template <class Scalar>
struct InnerState {
    Scalar b0 = 0;
    Vec<Scalar> b;
    Vec<Scalar> r;
    std::vector<char> in_ws;
    std::vector<Index> ws;
    Scalar scale = 1;  // response variance, for the convergence test
};

// X b + b0, skipping zero coefficients when b is sparse.
template <class Scalar>
Vec<Scalar> predictor(const Mat<Scalar>& xs, const Vec<Scalar>& b, Scalar b0)
{
    Index nnz = 0;
    for (Index j = 0; j < b.size(); ++j) nnz += b(j) != Scalar(0);
    if (2 * nnz > b.size()) return (xs * b).array() + b0;
    Vec<Scalar> eta = Vec<Scalar>::Constant(xs.rows(), b0);
    for (Index j = 0; j < b.size(); ++j)
        if (b(j) != Scalar(0)) eta.noalias() += b(j) * xs.col(j);
    return eta;
}

template <class Scalar>
struct CdResult {
    int sweeps = 0;
    bool converged = false;
};

// Screening adds coordinates with |gradient| > screen; pass +inf to skip it.
template <class Scalar>
CdResult<Scalar> coordinate_descent(const Mat<Scalar>& xs, const Vec<Scalar>& v, Penalty pen, Scalar lambda,
                                    Scalar screen, InnerState<Scalar>& st, const FitOptions& opt)
{
    const Index q = xs.cols();
    CdResult<Scalar> res;
    const Scalar vsum = v.sum();
    const Scalar tol = static_cast<Scalar>(opt.tol) * st.scale;
    if (st.in_ws.size() != static_cast<std::size_t>(q)) {
        st.in_ws.assign(static_cast<std::size_t>(q), 0);
        st.ws.clear();
    }
    Vec<Scalar> curv = Vec<Scalar>::Constant(q, Scalar(-1));
    auto curvature = [&](Index j) {
        if (curv(j) < Scalar(0)) curv(j) = (xs.col(j).array().square() * v.array()).sum();
        return curv(j);
    };

    auto update_intercept = [&]() {
        const Scalar d0 = v.dot(st.r) / vsum;
        st.b0 += d0;
        st.r.array() -= d0;
        return vsum * d0 * d0;
    };

    auto add = [&](Index j) {
        if (!st.in_ws[static_cast<std::size_t>(j)]) {
            st.in_ws[static_cast<std::size_t>(j)] = 1;
            st.ws.push_back(j);
        }
    };
    if (pen == Penalty::ridge) {
        for (Index j = 0; j < q; ++j) add(j);
    } else {
        for (Index j = 0; j < q; ++j)
            if (st.b(j) != Scalar(0)) add(j);
        if (std::isfinite(screen)) {
            const Vec<Scalar> g = xs.transpose() * v.cwiseProduct(st.r);
            for (Index j = 0; j < q; ++j)
                if (std::abs(g(j)) > screen) add(j);
        }
    }

    auto sweep = [&](bool active_only) {
        Scalar max_delta = 0;
        for (Index j : st.ws) {
            if (active_only && st.b(j) == Scalar(0)) continue;
            const Scalar c = curvature(j);
            if (!(c > Scalar(0))) continue;
            const Scalar g = xs.col(j).dot(v.cwiseProduct(st.r));
            const Scalar raw = c * st.b(j) + g;
            const Scalar nb = pen == Penalty::lasso ? soft_threshold(raw, lambda) / c : raw / (c + lambda);
            const Scalar d = nb - st.b(j);
            if (d != Scalar(0)) {
                st.r.noalias() -= d * xs.col(j);
                st.b(j) = nb;
                max_delta = std::max(max_delta, c * d * d);
            }
        }
        max_delta = std::max(max_delta, update_intercept());
        ++res.sweeps;
        return max_delta;
    };

    // Active-set sweeps on the weighted Gram matrix (covariance updates), used
    // once plain active sweeps have been slow to converge.
    auto gram_phase = [&]() {
        std::vector<Index> act;
        for (Index j : st.ws)
            if (st.b(j) != Scalar(0) && curvature(j) > Scalar(0)) act.push_back(j);
        const Index m = static_cast<Index>(act.size());
        if (m == 0) return;
        Mat<Scalar> xa(xs.rows(), m);
        for (Index k = 0; k < m; ++k) xa.col(k) = xs.col(act[static_cast<std::size_t>(k)]);
        const Mat<Scalar> sxa = v.array().sqrt().matrix().asDiagonal() * xa;
        Mat<Scalar> g = Mat<Scalar>::Zero(m, m);
        g.template selfadjointView<Eigen::Lower>().rankUpdate(sxa.transpose());
        g.template triangularView<Eigen::StrictlyUpper>() = g.transpose();
        const Vec<Scalar> h = xa.transpose() * v;
        Vec<Scalar> grad = xa.transpose() * v.cwiseProduct(st.r);
        Scalar grad0 = v.dot(st.r);
        Vec<Scalar> ba(m), start(m);
        for (Index k = 0; k < m; ++k) ba(k) = start(k) = st.b(act[static_cast<std::size_t>(k)]);
        Scalar shift0 = 0;
        {
            // Newton step with the active signs held fixed; kept only if no
            // sign changes.
            Mat<Scalar> sys(m + 1, m + 1);
            sys.topLeftCorner(m, m) = g;
            if (pen == Penalty::ridge) sys.topLeftCorner(m, m).diagonal().array() += lambda;
            sys.topRightCorner(m, 1) = h;
            sys.bottomLeftCorner(1, m) = h.transpose();
            sys(m, m) = vsum;
            Vec<Scalar> rhs(m + 1);
            rhs.head(m) = pen == Penalty::lasso ? Vec<Scalar>(grad - lambda * ba.cwiseSign()) : Vec<Scalar>(grad - lambda * ba);
            rhs(m) = grad0;
            Eigen::LDLT<Mat<Scalar>> ldlt(sys);
            if (ldlt.info() == Eigen::Success) {
                const Vec<Scalar> step = ldlt.solve(rhs);
                const Vec<Scalar> nb = ba + step.head(m);
                bool ok = step.allFinite();
                if (ok && pen == Penalty::lasso)
                    for (Index k = 0; k < m; ++k) ok = ok && nb(k) * ba(k) > Scalar(0);
                if (ok) {
                    grad.noalias() -= g * step.head(m) + h * step(m);
                    grad0 -= h.dot(step.head(m)) + vsum * step(m);
                    ba = nb;
                    shift0 = step(m);
                }
            }
        }
        while (res.sweeps < opt.max_sweeps) {
            Scalar max_delta = 0;
            for (Index k = 0; k < m; ++k) {
                const Scalar c = g(k, k);
                const Scalar raw = c * ba(k) + grad(k);
                const Scalar nb = pen == Penalty::lasso ? soft_threshold(raw, lambda) / c : raw / (c + lambda);
                const Scalar d = nb - ba(k);
                if (d != Scalar(0)) {
                    grad.noalias() -= d * g.col(k);
                    grad0 -= d * h(k);
                    ba(k) = nb;
                    max_delta = std::max(max_delta, c * d * d);
                }
            }
            const Scalar d0 = grad0 / vsum;
            shift0 += d0;
            grad.noalias() -= d0 * h;
            grad0 -= d0 * vsum;
            max_delta = std::max(max_delta, vsum * d0 * d0);
            ++res.sweeps;
            if (max_delta < tol) break;
        }
        st.r.noalias() -= xa * (ba - start);
        st.r.array() -= shift0;
        st.b0 += shift0;
        for (Index k = 0; k < m; ++k) st.b(act[static_cast<std::size_t>(k)]) = ba(k);
    };

    while (res.sweeps < opt.max_sweeps) {
        if (sweep(false) >= tol) {
            for (int k = 0; res.sweeps < opt.max_sweeps; ++k) {
                if (k == 8) {
                    gram_phase();
                    break;
                }
                if (sweep(true) < tol) break;
            }
            continue;
        }
        if (pen == Penalty::ridge) {
            res.converged = true;
            break;
        }
        // KKT check on coordinates outside the working set.
        const Vec<Scalar> g = xs.transpose() * v.cwiseProduct(st.r);
        bool violated = false;
        for (Index j = 0; j < q; ++j) {
            if (!st.in_ws[static_cast<std::size_t>(j)] && std::abs(g(j)) > lambda) {
                add(j);
                violated = true;
            }
        }
        if (!violated) {
            res.converged = true;
            break;
        }
    }
    return res;
}

// Closed-form weighted ridge: primal normal equations when q <= n, otherwise
// the dual (kernel) form with K = X X'.
template <class Scalar>
void ridge_direct(const Mat<Scalar>& xs, const Vec<Scalar>& z, const Vec<Scalar>& v, Scalar lambda,
                  InnerState<Scalar>& st, const Mat<Scalar>* gram)
{
    const Index n = xs.rows(), q = xs.cols();
    const Scalar vsum = v.sum();
    if (q == 0) {
        st.b.resize(0);
        st.b0 = v.dot(z) / vsum;
        st.r = z.array() - st.b0;
        return;
    }
    if (q <= n) {
        const Vec<Scalar> xbar = xs.transpose() * v / vsum;
        const Scalar zbar = v.dot(z) / vsum;
        const Arr<Scalar> sv = v.array().sqrt();
        Mat<Scalar> xc = (xs.rowwise() - xbar.transpose()).array().colwise() * sv;
        Mat<Scalar> a = Mat<Scalar>::Zero(q, q);
        a.template selfadjointView<Eigen::Lower>().rankUpdate(xc.transpose());
        a.diagonal().array() += lambda;
        const Vec<Scalar> rhs = xc.transpose() * ((z.array() - zbar) * sv).matrix();
        Eigen::LDLT<Mat<Scalar>> ldlt(a.template selfadjointView<Eigen::Lower>());
        const auto d = ldlt.vectorD().cwiseAbs();
        if (ldlt.info() != Eigen::Success || !(d.minCoeff() > Scalar(1e-13) * std::max(Scalar(1), d.maxCoeff())))
            throw NumericalError("singular system: unpenalized least squares needs a full-rank design (use lambda > 0)");
        st.b = ldlt.solve(rhs);
        st.b0 = zbar - xbar.dot(st.b);
    } else {
        if (!(lambda > Scalar(0)))
            throw NumericalError("singular system: unpenalized least squares with p >= n (use lambda > 0)");
        Mat<Scalar> owned;
        if (!gram) {
            owned = xs * xs.transpose();
            gram = &owned;
        }
        // Weighted centering removes the intercept; the symmetrized system
        //   (lambda I + V^1/2 Kc V^1/2) u = V^1/2 zc,  a = V^1/2 u,  b = Xc' a
        // is positive definite.
        const Mat<Scalar>& k = *gram;
        const Vec<Scalar> kbar = k * v / vsum;
        const Scalar kvv = v.dot(kbar) / vsum;
        Mat<Scalar> kc = k;
        kc.colwise() -= kbar;
        kc.rowwise() -= kbar.transpose();
        kc.array() += kvv;
        const Arr<Scalar> sv = v.array().sqrt();
        Mat<Scalar> m = (kc.array().colwise() * sv).rowwise() * sv.transpose();
        m.diagonal().array() += lambda;
        const Scalar zbar = v.dot(z) / vsum;
        const Vec<Scalar> rhs = ((z.array() - zbar) * sv).matrix();
        Eigen::LLT<Mat<Scalar>> llt(m);
        if (llt.info() != Eigen::Success) throw NumericalError("ridge dual system is not positive definite");
        const Vec<Scalar> a = (llt.solve(rhs).array() * sv).matrix();
        const Vec<Scalar> xbar = xs.transpose() * v / vsum;
        st.b = xs.transpose() * a - xbar * a.sum();
        st.b0 = zbar - xbar.dot(st.b);
    }
    st.r = (z - xs * st.b).array() - st.b0;
}

template <class Scalar>
Scalar penalty_value(Penalty pen, Scalar lambda, const Vec<Scalar>& b)
{
    return pen == Penalty::lasso ? lambda * b.template lpNorm<1>() : Scalar(0.5) * lambda * b.squaredNorm();
}

template <class Scalar>
Scalar logistic_objective(const Mat<Scalar>& xs, const Vec<Scalar>& y, Penalty pen, Scalar lambda, Scalar b0,
                          const Vec<Scalar>& b)
{
    const Vec<Scalar> eta = (xs * b).array() + b0;
    Scalar s = 0;
    for (Index i = 0; i < eta.size(); ++i) s += log1p_exp(eta(i)) - y(i) * eta(i);
    return s / Scalar(eta.size()) + penalty_value(pen, lambda, b);
}

template <class Scalar>
Scalar binomial_deviance(const Vec<Scalar>& y, const Vec<Scalar>& eta)
{
    Scalar s = 0;
    for (Index i = 0; i < eta.size(); ++i) s += log1p_exp(eta(i)) - y(i) * eta(i);
    return Scalar(2) * s;
}

struct IrlsResult {
    int iterations = 0;
    bool converged = false;
    bool saturated = false;
};

// Penalized logistic regression by iteratively reweighted least squares with
// step halving; the inner weighted least-squares problems are solved by the
// linear solvers above.
template <class Scalar>
IrlsResult irls(const Mat<Scalar>& xs, const Vec<Scalar>& y, Penalty pen, Scalar lambda, Scalar screen,
                InnerState<Scalar>& st, const FitOptions& opt, const Mat<Scalar>* gram)
{
    const Index n = xs.rows();
    IrlsResult res;
    auto objective = [&](const Vec<Scalar>& eta, const Vec<Scalar>& b) {
        Scalar s = 0;
        for (Index i = 0; i < n; ++i) s += log1p_exp(eta(i)) - y(i) * eta(i);
        return s / Scalar(n) + penalty_value(pen, lambda, b);
    };
    FitOptions inner = opt;
    inner.tol = std::min(opt.tol, opt.irls_tol);
    Vec<Scalar> eta = predictor(xs, st.b, st.b0);
    Scalar f_old = objective(eta, st.b);
    for (res.iterations = 1; res.iterations <= opt.max_irls; ++res.iterations) {
        Vec<Scalar> w(n), z(n);
        for (Index i = 0; i < n; ++i) {
            const Scalar p = inv_logit(eta(i));
            w(i) = std::max(p * (Scalar(1) - p), Scalar(1e-5));
            z(i) = eta(i) + (y(i) - p) / w(i);
        }
        const Vec<Scalar> v = w / Scalar(n);
        const Scalar old_b0 = st.b0;
        const Vec<Scalar> old_b = st.b;
        const Vec<Scalar> old_eta = eta;
        if (pen == Penalty::ridge && opt.ridge_solver == RidgeSolver::direct) {
            ridge_direct(xs, z, v, lambda, st, gram);
        } else {
            st.r = z - eta;
            const Scalar scr = res.iterations == 1 ? screen : std::numeric_limits<Scalar>::infinity();
            coordinate_descent(xs, v, pen, lambda, scr, st, inner);
        }
        const Vec<Scalar> new_eta = z - st.r;
        Scalar f_new = objective(new_eta, st.b);
        const Scalar new_b0 = st.b0;
        const Vec<Scalar> new_b = st.b;
        Scalar t = 1;
        for (int h = 0; h < 30 && !(f_new <= f_old + Scalar(1e-14) * std::abs(f_old)); ++h) {
            t /= 2;
            st.b0 = old_b0 + t * (new_b0 - old_b0);
            st.b = old_b + t * (new_b - old_b);
            f_new = objective(Vec<Scalar>(old_eta + t * (new_eta - old_eta)), st.b);
        }
        const Scalar d0 = st.b0 - old_b0;
        Scalar delta = v.sum() * d0 * d0;
        for (Index j = 0; j < st.b.size(); ++j) {
            const Scalar d = st.b(j) - old_b(j);
            if (d != Scalar(0)) delta = std::max(delta, (xs.col(j).array().square() * v.array()).sum() * d * d);
        }
        eta = predictor(xs, st.b, st.b0);
        f_old = objective(eta, st.b);
        if (eta.cwiseAbs().maxCoeff() > Scalar(30)) res.saturated = true;
        if (lambda == Scalar(0) && res.saturated) return res;
        if (delta < static_cast<Scalar>(opt.irls_tol) * st.scale) {
            res.converged = true;
            break;
        }
        res.saturated = false;
    }
    if (res.iterations > opt.max_irls) res.iterations = opt.max_irls;
    return res;
}

template <class Scalar>
Scalar response_scale(const Vec<Scalar>& y)
{
    const Scalar v = (y.array() - y.mean()).square().mean();
    return v > Scalar(0) ? v : Scalar(1);
}

template <class Scalar>
FittedGLM<Scalar> to_original_scale(const DesignMatrix<Scalar>& design, const std::vector<Index>& cols,
                                    Scalar b0_std, const Vec<Scalar>& b_std)
{
    FittedGLM<Scalar> fit;
    fit.coefficients = Vec<Scalar>::Zero(design.cols());
    Scalar b0 = b0_std;
    for (std::size_t k = 0; k < cols.size(); ++k) {
        const Index j = cols[k];
        const Scalar c = b_std(static_cast<Index>(k)) / design.scales()(j);
        fit.coefficients(j) = c;
        b0 -= c * design.means()(j);
    }
    fit.intercept = b0;
    return fit;
}

inline void check_labels(const auto& labels)
{
    for (Index i = 0; i < labels.size(); ++i)
        require(labels(i) == 0 || labels(i) == 1, "labels must be 0 or 1 (row " + std::to_string(i + 1) + ")");
    const auto s = labels.sum();
    require(s > 0 && s < labels.size(), "logistic regression needs both classes present");
}

} // namespace detail

/// Maximum penalty at which every lasso coefficient is zero:
/// max_j |<x_j, y - mean(y)>| / n on standardized columns. The same value
/// applies to the logistic null model.
template <class Scalar>
Scalar lambda_max(const DesignMatrix<Scalar>& design, const Vec<Scalar>& response)
{
    const Mat<Scalar> xs = design.standardized();
    if (xs.cols() == 0) return Scalar(0);
    const Vec<Scalar> yc = response.array() - response.mean();
    return (xs.transpose() * yc).cwiseAbs().maxCoeff() / Scalar(design.rows());
}

/// Decreasing log-spaced grid from lambda_max to grid_min_ratio * lambda_max.
/// Ridge grids start at lambda_max / 1e-3 (glmnet's alpha floor for alpha=0).
template <class Scalar>
std::vector<Scalar> lambda_grid(const DesignMatrix<Scalar>& design, const Vec<Scalar>& response, Penalty pen,
                                const FitOptions& opt = {})
{
    Scalar top = lambda_max(design, response);
    if (pen == Penalty::ridge) top /= Scalar(1e-3);
    if (!(top > Scalar(0))) top = Scalar(1);
    std::vector<Scalar> grid(static_cast<std::size_t>(opt.grid_size));
    const Scalar lo = std::log(static_cast<Scalar>(opt.grid_min_ratio));
    for (int k = 0; k < opt.grid_size; ++k) {
        const Scalar frac = opt.grid_size == 1 ? Scalar(0) : Scalar(k) / Scalar(opt.grid_size - 1);
        grid[static_cast<std::size_t>(k)] = top * std::exp(frac * lo);
    }
    return grid;
}

/// Penalized least squares. Ridge uses the closed form (coordinate descent
/// when opt.ridge_solver says so); lasso uses coordinate descent.
template <class Scalar>
FittedGLM<Scalar> fit_linear(const DesignMatrix<Scalar>& design, const Vec<Scalar>& response, Penalty pen,
                             Scalar lambda, const FitOptions& opt = {})
{
    const Index n = design.rows();
    require(response.size() == n, "response length does not match design rows");
    require(all_finite(response), "response has non-finite entries");
    require(lambda >= Scalar(0) && std::isfinite(static_cast<double>(lambda)), "lambda must be a nonnegative finite value");

    const auto cols = design.active_columns();
    const Mat<Scalar> xs = design.standardized();
    const Vec<Scalar> v = Vec<Scalar>::Constant(n, Scalar(1) / Scalar(n));
    detail::InnerState<Scalar> st;
    st.b = Vec<Scalar>::Zero(xs.cols());
    st.b0 = response.mean();
    st.r = response.array() - st.b0;
    st.scale = detail::response_scale(response);
    bool converged = true;
    int iterations = 1;
    if (pen == Penalty::ridge && opt.ridge_solver == RidgeSolver::direct) {
        detail::ridge_direct(xs, response, v, lambda, st, static_cast<const Mat<Scalar>*>(nullptr));
    } else {
        const auto r = detail::coordinate_descent(xs, v, pen, lambda, lambda, st, opt);
        converged = r.converged;
        iterations = r.sweeps;
        if (!converged) throw NumericalError("coordinate descent did not converge within max_sweeps");
    }
    auto fit = detail::to_original_scale(design, cols, st.b0, st.b);
    fit.link = Link::identity;
    fit.penalty = pen;
    fit.lambda = lambda;
    fit.converged = converged;
    fit.iterations = iterations;
    return fit;
}

/// Penalized logistic regression via IRLS around the least-squares solvers.
template <class Scalar>
FittedGLM<Scalar> fit_logistic(const DesignMatrix<Scalar>& design, const Vec<Scalar>& labels, Penalty pen,
                               Scalar lambda, const FitOptions& opt = {})
{
    require(labels.size() == design.rows(), "label length does not match design rows");
    detail::check_labels(labels);
    require(lambda >= Scalar(0) && std::isfinite(static_cast<double>(lambda)), "lambda must be a nonnegative finite value");

    const auto cols = design.active_columns();
    const Mat<Scalar> xs = design.standardized();
    detail::InnerState<Scalar> st;
    st.b = Vec<Scalar>::Zero(xs.cols());
    st.b0 = logit(labels.mean());
    st.scale = detail::response_scale(labels);
    const auto r = detail::irls(xs, labels, pen, lambda, lambda, st, opt, static_cast<const Mat<Scalar>*>(nullptr));
    if (lambda == Scalar(0) && (r.saturated || !r.converged))
        throw NumericalError("logistic fit diverged (data appear separable); use lambda > 0");
    if (!r.converged) throw NumericalError("IRLS did not converge within max_irls iterations");
    auto fit = detail::to_original_scale(design, cols, st.b0, st.b);
    fit.link = Link::logit;
    fit.penalty = pen;
    fit.lambda = lambda;
    fit.iterations = r.iterations;
    return fit;
}

/// Solutions along a decreasing lambda grid with warm starts. The path may
/// stop early by the deviance-ratio rules in FitOptions.
template <class Scalar = double>
struct GlmPath {
    Link link = Link::identity;
    Penalty penalty = Penalty::ridge;
    std::vector<Scalar> lambdas;
    std::vector<FittedGLM<Scalar>> fits;
    std::vector<Scalar> dev_ratio;
};

template <class Scalar>
GlmPath<Scalar> fit_path(const DesignMatrix<Scalar>& design, const Vec<Scalar>& response, Link link, Penalty pen,
                         const std::vector<Scalar>& lambdas, const FitOptions& opt = {})
{
    const Index n = design.rows();
    require(response.size() == n, "response length does not match design rows");
    require(all_finite(response), "response has non-finite entries");
    if (link == Link::logit) detail::check_labels(response);

    GlmPath<Scalar> path;
    path.link = link;
    path.penalty = pen;
    const auto cols = design.active_columns();
    const Mat<Scalar> xs = design.standardized();
    const Index q = xs.cols();

    detail::InnerState<Scalar> st;
    st.scale = detail::response_scale(response);
    st.b = Vec<Scalar>::Zero(q);
    Scalar null_dev;
    if (link == Link::identity) {
        st.b0 = response.mean();
        null_dev = (response.array() - st.b0).square().sum();
    } else {
        st.b0 = logit(response.mean());
        null_dev = detail::binomial_deviance(response, Vec<Scalar>(Vec<Scalar>::Constant(n, st.b0)));
    }
    st.r = response.array() - st.b0;
    const Vec<Scalar> v = Vec<Scalar>::Constant(n, Scalar(1) / Scalar(n));

    // Linear ridge: one eigendecomposition serves the whole grid.
    std::optional<Eigen::SelfAdjointEigenSolver<Mat<Scalar>>> eig;
    Vec<Scalar> proj;
    Mat<Scalar> xc;
    const bool eig_ridge = link == Link::identity && pen == Penalty::ridge &&
                           opt.ridge_solver == RidgeSolver::direct && q > 0;
    const Vec<Scalar> yc = response.array() - response.mean();
    if (eig_ridge) {
        xc = xs.rowwise() - xs.colwise().mean();
        if (q <= n) {
            eig.emplace(xc.transpose() * xc / Scalar(n));
            proj = eig->eigenvectors().transpose() * (xc.transpose() * yc / Scalar(n));
        } else {
            eig.emplace(xc * xc.transpose() / Scalar(n));
            proj = eig->eigenvectors().transpose() * yc;
        }
    }
    Mat<Scalar> gram;
    if (link == Link::logit && pen == Penalty::ridge && opt.ridge_solver == RidgeSolver::direct && q > n)
        gram = xs * xs.transpose();

    Scalar prev_lambda = lambdas.empty() ? Scalar(0) : lambdas.front();
    Scalar prev_ratio = 0;
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
        const Scalar lam = lambdas[k];
        const Scalar screen = std::max(Scalar(0), Scalar(2) * lam - prev_lambda);
        bool converged = true;
        int iterations = 1;
        Scalar dev;
        if (link == Link::identity) {
            if (eig_ridge) {
                const Vec<Scalar> scaled = proj.array() / (eig->eigenvalues().array() + lam);
                if (q <= n) st.b = eig->eigenvectors() * scaled;
                else st.b = xc.transpose() * (eig->eigenvectors() * scaled) / Scalar(n);
                st.b0 = response.mean() - xs.colwise().mean().dot(st.b);
                st.r = (response - xs * st.b).array() - st.b0;
            } else {
                const auto r = detail::coordinate_descent(xs, v, pen, lam, screen, st, opt);
                converged = r.converged;
                iterations = r.sweeps;
            }
            dev = st.r.squaredNorm();
        } else {
            const auto r = detail::irls(xs, response, pen, lam, screen, st, opt, gram.size() ? &gram : nullptr);
            converged = r.converged;
            iterations = r.iterations;
            dev = detail::binomial_deviance(response, detail::predictor(xs, st.b, st.b0));
        }
        auto fit = detail::to_original_scale(design, cols, st.b0, st.b);
        fit.link = link;
        fit.penalty = pen;
        fit.lambda = lam;
        fit.converged = converged;
        fit.iterations = iterations;
        const Scalar ratio = null_dev > Scalar(0) ? Scalar(1) - dev / null_dev : Scalar(0);
        path.lambdas.push_back(lam);
        path.fits.push_back(std::move(fit));
        path.dev_ratio.push_back(ratio);
        prev_lambda = lam;
        if (static_cast<int>(k + 1) >= opt.min_path_length) {
            if (ratio >= static_cast<Scalar>(opt.dev_ratio_max)) break;
            if (k > 0 && ratio - prev_ratio < static_cast<Scalar>(opt.dev_ratio_rel_change) * ratio) break;
        }
        prev_ratio = ratio;
    }
    return path;
}

/// Fold labels 0..folds-1, assigned round-robin over a seeded permutation.
inline std::vector<int> fold_assignment(Index n, int folds, std::uint64_t seed)
{
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index(0));
    std::mt19937_64 rng(seed);
    for (Index i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<Index> pick(0, i);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<int> fold(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = static_cast<int>(k % folds);
    return fold;
}

/// Result of k-fold cross-validation over a lambda path. Holds the full-data
/// path so that any selection rule can be materialized without refitting.
template <class Scalar = double>
class CrossValidation {
public:
    CrossValidation(GlmPath<Scalar> path, CvCurve<Scalar> curve, int folds)
        : path_(std::move(path)), curve_(std::move(curve)), folds_(folds)
    {
        const auto& m = curve_.mean;
        min_index_ = static_cast<std::size_t>(std::min_element(m.begin(), m.end()) - m.begin());
        const Scalar bound = m[min_index_] + curve_.se[min_index_];
        one_se_index_ = min_index_;
        for (std::size_t k = 0; k <= min_index_; ++k) {
            if (m[k] <= bound) {
                one_se_index_ = k;
                break;
            }
        }
    }

    const CvCurve<Scalar>& curve() const { return curve_; }
    const GlmPath<Scalar>& path() const { return path_; }
    std::size_t index(CvRule rule) const { return rule == CvRule::one_se ? one_se_index_ : min_index_; }
    Scalar lambda(CvRule rule) const { return curve_.lambdas[index(rule)]; }

    FittedGLM<Scalar> fit(CvRule rule) const
    {
        require(rule != CvRule::fixed, "cross-validated fit needs lambda_min or one_se");
        FittedGLM<Scalar> f = path_.fits[index(rule)];
        f.cv_rule = rule;
        f.cv_folds = folds_;
        f.cv_curve = curve_;
        return f;
    }

private:
    GlmPath<Scalar> path_;
    CvCurve<Scalar> curve_;
    int folds_;
    std::size_t min_index_ = 0;
    std::size_t one_se_index_ = 0;
};

/// k-fold CV on the grid from lambda_grid(). Validation loss is squared error
/// (identity link) or binomial deviance (logit link, probabilities clamped to
/// [1e-5, 1 - 1e-5]). The curve is truncated to the shortest path over the
/// full fit and all folds.
template <class Scalar>
CrossValidation<Scalar> cv_path(const DesignMatrix<Scalar>& design, const Vec<Scalar>& response, Link link,
                                Penalty pen, int folds, std::uint64_t seed, const FitOptions& opt = {})
{
    const Index n = design.rows();
    require(folds >= 2, "cross-validation needs at least 2 folds");
    require(n / folds >= 2, "each cross-validation fold needs at least 2 observations");
    require(response.size() == n, "response length does not match design rows");
    if (link == Link::logit) detail::check_labels(response);

    const auto grid = lambda_grid(design, response, pen, opt);
    auto full = fit_path(design, response, link, pen, grid, opt);
    const auto fold = fold_assignment(n, folds, seed);

    std::size_t len = full.lambdas.size();
    std::vector<Mat<Scalar>> losses;  // per fold: n_k x len_k
    std::vector<std::vector<Index>> test_ids(static_cast<std::size_t>(folds));
    for (Index i = 0; i < n; ++i) test_ids[static_cast<std::size_t>(fold[static_cast<std::size_t>(i)])].push_back(i);
    for (int k = 0; k < folds; ++k) {
        std::vector<Index> train;
        for (Index i = 0; i < n; ++i)
            if (fold[static_cast<std::size_t>(i)] != k) train.push_back(i);
        const auto dtrain = design.subset(train);
        Vec<Scalar> ytrain(static_cast<Index>(train.size()));
        for (std::size_t i = 0; i < train.size(); ++i) ytrain(static_cast<Index>(i)) = response(train[i]);
        if (link == Link::logit) {
            const Scalar s = ytrain.sum();
            if (!(s > 0 && s < ytrain.size()))
                throw ValidationError("a cross-validation training fold contains a single class");
        }
        const auto fp = fit_path(dtrain, ytrain, link, pen, grid, opt);
        len = std::min(len, fp.lambdas.size());
        const auto& ids = test_ids[static_cast<std::size_t>(k)];
        Mat<Scalar> xtest(static_cast<Index>(ids.size()), design.cols());
        Vec<Scalar> ytest(static_cast<Index>(ids.size()));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            xtest.row(static_cast<Index>(i)) = design.values().row(ids[i]);
            ytest(static_cast<Index>(i)) = response(ids[i]);
        }
        Mat<Scalar> loss(xtest.rows(), static_cast<Index>(fp.fits.size()));
        for (std::size_t l = 0; l < fp.fits.size(); ++l) {
            const Vec<Scalar> pred = fp.fits[l].predict(xtest);
            for (Index i = 0; i < xtest.rows(); ++i) {
                if (link == Link::identity) {
                    const Scalar e = ytest(i) - pred(i);
                    loss(i, static_cast<Index>(l)) = e * e;
                } else {
                    const Scalar p = std::clamp(pred(i), Scalar(1e-5), Scalar(1) - Scalar(1e-5));
                    loss(i, static_cast<Index>(l)) = Scalar(-2) * (ytest(i) * std::log(p) + (Scalar(1) - ytest(i)) * std::log(Scalar(1) - p));
                }
            }
        }
        losses.push_back(std::move(loss));
    }

    CvCurve<Scalar> curve;
    curve.lambdas.assign(grid.begin(), grid.begin() + static_cast<std::ptrdiff_t>(len));
    curve.mean.resize(len);
    curve.se.resize(len);
    for (std::size_t l = 0; l < len; ++l) {
        Scalar total = 0;
        std::vector<Scalar> fold_mean(static_cast<std::size_t>(folds));
        for (int k = 0; k < folds; ++k) {
            const Scalar s = losses[static_cast<std::size_t>(k)].col(static_cast<Index>(l)).sum();
            total += s;
            fold_mean[static_cast<std::size_t>(k)] = s / Scalar(losses[static_cast<std::size_t>(k)].rows());
        }
        const Scalar cvm = total / Scalar(n);
        Scalar var = 0;
        for (int k = 0; k < folds; ++k) {
            const Scalar d = fold_mean[static_cast<std::size_t>(k)] - cvm;
            var += Scalar(losses[static_cast<std::size_t>(k)].rows()) * d * d;
        }
        var /= Scalar(n) * Scalar(folds - 1);
        curve.mean[l] = cvm;
        curve.se[l] = std::sqrt(var);
    }
    full.lambdas.resize(len);
    full.fits.resize(len);
    full.dev_ratio.resize(len);
    return CrossValidation<Scalar>(std::move(full), std::move(curve), folds);
}

template <class Scalar>
FittedGLM<Scalar> cross_validate(const DesignMatrix<Scalar>& design, const Vec<Scalar>& response, Penalty pen,
                                 Link link, int folds, CvRule rule, std::uint64_t seed, const FitOptions& opt = {})
{
    return cv_path(design, response, link, pen, folds, seed, opt).fit(rule);
}

// ---------------------------------------------------------------------------
// Optimality diagnostics (standardized scale).

/// Largest violation of the lasso stationarity conditions
///   |g_j| <= lambda (b_j == 0),  g_j == lambda * sign(b_j) (b_j != 0),
/// with g_j = (1/n) <x_j, residual> for linear fits and the score for logistic.
template <class Scalar>
Scalar lasso_kkt_violation(const DesignMatrix<Scalar>& design, const Vec<Scalar>& response,
                           const FittedGLM<Scalar>& fit)
{
    const auto cols = design.active_columns();
    const Mat<Scalar> xs = design.standardized();
    const Vec<Scalar> resid = response - fit.predict(design.values());
    const Vec<Scalar> g = xs.transpose() * resid / Scalar(design.rows());
    Scalar worst = 0;
    for (std::size_t k = 0; k < cols.size(); ++k) {
        const Scalar bj = fit.coefficients(cols[k]);
        const Scalar gj = g(static_cast<Index>(k));
        if (bj == Scalar(0)) worst = std::max(worst, std::abs(gj) - fit.lambda);
        else worst = std::max(worst, std::abs(gj - fit.lambda * (bj > 0 ? Scalar(1) : Scalar(-1))));
    }
    return worst;
}

/// Norm of the gradient of the penalized objective (intercept included) for
/// ridge or unpenalized fits, on the standardized scale.
template <class Scalar>
Scalar ridge_gradient_norm(const DesignMatrix<Scalar>& design, const Vec<Scalar>& response,
                           const FittedGLM<Scalar>& fit)
{
    const auto cols = design.active_columns();
    const Mat<Scalar> xs = design.standardized();
    const Vec<Scalar> resid = response - fit.predict(design.values());
    Vec<Scalar> bstd(static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k)
        bstd(static_cast<Index>(k)) = fit.coefficients(cols[k]) * design.scales()(cols[k]);
    Vec<Scalar> g(bstd.size() + 1);
    g(0) = -resid.mean();
    g.tail(bstd.size()) = -xs.transpose() * resid / Scalar(design.rows()) + fit.lambda * bstd;
    return g.norm();
}

} // namespace deconf
