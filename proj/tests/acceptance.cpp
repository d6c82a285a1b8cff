// Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on
// stderr. A criterion with a runtime budget fails when the budget is exceeded.

#include "deconf/config.hpp"
#include "deconf/io.hpp"
#include "deconf/simulation.hpp"
#include "deconf/verify.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace deconf;
using namespace deconf::sim;
namespace fs = std::filesystem;

namespace {

struct Result {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* f, ...)
{
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Moments {
    double mean = 0, sd = 0;
    int count = 0;
};

Moments moments(const std::vector<double>& v)
{
    Moments m;
    m.count = static_cast<int>(v.size());
    if (v.empty()) return m;
    for (double x : v) m.mean += x;
    m.mean /= v.size();
    double s = 0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.sd = v.size() > 1 ? std::sqrt(s / (v.size() - 1)) : 0;
    return m;
}

// Per-replication errors (estimate - sample ATT) of one estimator.
std::vector<double> errors(const CellResult& cell, const std::string& name, int& missing)
{
    std::vector<double> out;
    for (const auto& r : cell.replications) {
        const auto it = std::find(r.names.begin(), r.names.end(), name);
        if (it == r.names.end()) throw std::runtime_error("estimator " + name + " missing from the records");
        const double e = r.estimates[static_cast<std::size_t>(it - r.names.begin())];
        if (std::isfinite(e)) out.push_back(e - r.sample_att);
        else ++missing;
    }
    return out;
}

double rmse(const std::vector<double>& e)
{
    double s = 0;
    for (double x : e) s += x * x;
    return std::sqrt(s / e.size());
}

std::string source(const std::string& rel) { return std::string(DECONF_SOURCE_DIR) + "/" + rel; }

// ---------------------------------------------------------------------------

Result bias_formula()
{
    const auto c = verify::bias_formula_corpus(25, 7);
    const auto two = verify::two_point_bias();
    return {c.passed && two.passed, c.detail + "; " + two.detail};
}

Result geometry()
{
    const auto a = verify::hyperbola_endpoints(100, 11);
    const auto b = verify::hyperbola_residual(100, 101, 11);
    const auto c = verify::truncated_direction(100, 101, 11);
    return {a.passed && b.passed && c.passed, a.detail + "; " + b.detail + "; " + c.detail};
}

Result quadrature()
{
    const auto c = verify::quadrature_vs_monte_carlo(50, 1000000, 13);
    return {c.passed, c.detail};
}

Result double_robustness(int reps)
{
    const auto cfg = config::parse("{}", "<defaults>");
    const DGPConfig dgp = resolve(cfg.grid.cells.at(0).dgp);
    std::vector<double> leg1, leg2, att;
    for (int r = 0; r < reps; ++r) {
        std::mt19937_64 rng(derive_seed(cfg.seed, 0xD0B1, static_cast<std::uint64_t>(r)));
        const auto data = generate(dgp, rng);
        const auto o = oracle_scores(dgp, data);
        const MatD& x = data.design.values();
        // Wrong outcome model: the propensity direction at the outcome scale.
        const VecD m0_wrong = (dgp.s_Y * (x * dgp.beta_true)).array() + dgp.alpha0;
        // Wrong propensities inside (0.05, 0.95): logistic in the outcome direction.
        const VecD lin = x * dgp.alpha_true;
        const VecD e_wrong = lin.unaryExpr([](double v) { return 0.05 + 0.9 * inv_logit(v); });
        const double sample_att = data.sample_att();
        leg1.push_back(aipw_att(data, o.propensity, m0_wrong).estimate - sample_att);
        leg2.push_back(aipw_att(data, e_wrong, o.prognostic).estimate - sample_att);
        att.push_back(sample_att);
    }
    const auto m1 = moments(leg1), m2 = moments(leg2), ma = moments(att);
    const double se1 = m1.sd / std::sqrt(double(reps)), se2 = m2.sd / std::sqrt(double(reps));
    const bool ok = std::abs(m1.mean) <= 3 * se1 && std::abs(m2.mean) <= 3 * se2;
    return {ok, fmt("%d replications, mean sample ATT %.4f; true e + wrong m0: mean error %.4f (SE %.4f, z %.2f); "
                    "true m0 + wrong e: mean error %.4f (SE %.4f, z %.2f)",
                    reps, ma.mean, m1.mean, se1, m1.mean / se1, m2.mean, se2, m2.mean / se2)};
}

// RMSE ordering with paired SE on each gap (delta method on the MSE difference).
Result table_ordering(int reps_override, int threads, double budget, std::string& timing)
{
    auto cfg = config::load(source("configs/acceptance_table1.json"));
    if (reps_override > 0) cfg.grid.replications = reps_override;
    const std::vector<std::string> order = {"aipw_d(-1)", "aipw", "ipw", "naive"};
    bool ok = true;
    std::string detail;
    for (std::size_t c = 0; c < cfg.grid.cells.size(); ++c) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto cell = run_cell(cfg.grid, static_cast<int>(c), threads);
        const double secs = seconds_since(t0);
        timing += fmt("%sp=%d %.0fs", timing.empty() ? "" : ", ", cell.spec.dgp.p, secs);
        if (secs > budget) ok = false;
        int missing = 0;
        std::vector<std::vector<double>> err;
        for (const auto& n : order) err.push_back(errors(cell, n, missing));
        if (missing > 0) ok = false;
        detail += fmt("%sp=%d (%d reps, %d failed estimates): ", detail.empty() ? "" : " | ", cell.spec.dgp.p,
                      static_cast<int>(cell.replications.size()), missing);
        for (std::size_t k = 0; k < order.size(); ++k) detail += fmt("%s%s %.3f", k ? " < " : "", order[k].c_str(), rmse(err[k]));
        detail += "; gaps/SE";
        for (std::size_t k = 0; k + 1 < order.size(); ++k) {
            const auto& a = err[k];
            const auto& b = err[k + 1];
            if (a.size() != b.size()) {
                ok = false;
                continue;
            }
            std::vector<double> d(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) d[i] = b[i] * b[i] - a[i] * a[i];
            const double ra = rmse(a), rb = rmse(b);
            const double se = moments(d).sd / std::sqrt(double(d.size())) / (ra + rb);
            const double gap = rb - ra;
            detail += fmt(" %.3f/%.3f", gap, se);
            if (!(gap > se)) ok = false;
        }
    }
    return {ok, detail};
}

struct SweepRun {
    CellResult cell;
    ExperimentGrid grid;
    double seconds = 0;
};

SweepRun run_sweep_cell(int reps_override, int threads)
{
    SweepRun s;
    auto cfg = config::load(source("configs/acceptance_sweep.json"));
    if (reps_override > 0) cfg.grid.replications = reps_override;
    s.grid = cfg.grid;
    const auto t0 = std::chrono::steady_clock::now();
    s.cell = run_cell(cfg.grid, 0, threads);
    s.seconds = seconds_since(t0);
    return s;
}

Result bias_decomposition(const SweepRun& run)
{
    std::vector<double> ws = run.grid.settings.w_grid;
    std::sort(ws.begin(), ws.end());
    const double R = double(run.cell.replications.size());
    bool ok = true;
    int missing = 0;
    std::string detail;

    // IPW-d: |bias| shrinks walking from w = +1 down to w = -1.
    std::vector<std::vector<double>> ed;
    for (double w : ws) ed.push_back(errors(run.cell, estimator_name(Family::ipw_d, w), missing));
    detail += "ipw_d |bias| by w:";
    for (std::size_t k = 0; k < ws.size(); ++k) detail += fmt(" %g:%.3f", ws[k], std::abs(moments(ed[k]).mean));
    for (std::size_t k = 0; k + 1 < ws.size(); ++k) {
        // step from ws[k+1] to ws[k] must not increase |bias| beyond 2 paired SEs
        std::vector<double> d(ed[k].size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = ed[k][i] - ed[k + 1][i];
        const double se = moments(d).sd / std::sqrt(R);
        if (std::abs(moments(ed[k]).mean) > std::abs(moments(ed[k + 1]).mean) + 2 * se) ok = false;
    }
    {
        std::vector<double> d(ed.front().size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(ed.back()[i]) - std::abs(ed.front()[i]);
        const double lo = std::abs(moments(ed.front()).mean), hi = std::abs(moments(ed.back()).mean);
        if (!(lo < hi)) ok = false;
        detail += fmt(" (w=-1 vs +1: %.3f < %.3f)", lo, hi);
    }

    // Matched ridge: |bias| does not fall as the matched variance shrinks.
    struct Pt {
        double w, var, bias;
        std::vector<double> err;
    };
    std::vector<Pt> pts;
    for (double w : ws) {
        Pt p{w, 0, 0, errors(run.cell, estimator_name(Family::ipw_ridge, w), missing)};
        int n = 0;
        for (const auto& r : run.cell.replications)
            for (const auto& sp : r.sweep)
                if (sp.w == w && std::isfinite(sp.ridge_variance)) p.var += sp.ridge_variance, ++n;
        p.var /= std::max(n, 1);
        p.bias = std::abs(moments(p.err).mean);
        pts.push_back(std::move(p));
    }
    std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) { return a.var > b.var; });
    detail += " | ipw_ridge |bias| by matched variance:";
    for (const auto& p : pts) detail += fmt(" %.4f:%.3f", p.var, p.bias);
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        std::vector<double> d(pts[k].err.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = pts[k + 1].err[i] - pts[k].err[i];
        const double se = moments(d).sd / std::sqrt(R);
        if (pts[k + 1].bias < pts[k].bias - 2 * se) ok = false;
    }

    // Oracle IPW-d: unbiased at every w.
    detail += " | oracle bias/SE:";
    for (double w : ws) {
        const auto m = moments(errors(run.cell, estimator_name(Family::ipw_d_oracle, w), missing));
        const double se = m.sd / std::sqrt(double(m.count));
        detail += fmt(" %g:%.3f/%.3f", w, m.mean, se);
        if (std::abs(m.mean) > 2 * se) ok = false;
    }
    if (missing > 0) {
        ok = false;
        detail += fmt(" | %d failed estimates", missing);
    }
    return {ok, fmt("%d reps; ", static_cast<int>(R)) + detail};
}

Result shrinkage_structure(const SweepRun& run)
{
    bool ok = true;
    double worst_trace = 0, worst_all = 0;
    int unattainable = 0, checked = 0, traces = 0;
    for (const auto& r : run.cell.replications) {
        for (const auto& sp : r.sweep) {
            ++checked;
            if (!sp.ridge_attainable) ++unattainable;
            const double rel = std::abs(sp.ridge_variance - sp.ed_variance) / sp.ed_variance;
            worst_all = std::max(worst_all, std::isfinite(rel) ? rel : INFINITY);
            if (r.replication == run.grid.shrinkage_replication) {
                if (sp.ridge.size() == 0 || sp.ed.size() == 0) {
                    ok = false;
                    continue;
                }
                ++traces;
                const double tr = std::abs(population_variance(sp.ridge) - population_variance(sp.ed)) /
                                  population_variance(sp.ed);
                worst_trace = std::max(worst_trace, tr);
            }
        }
    }
    ok = ok && traces == static_cast<int>(run.grid.settings.w_grid.size()) && worst_trace <= 0.01 && worst_all <= 0.01;
    return {ok, fmt("traced replication: %d w values, max relative variance error %.2e; all %d (replication, w) pairs: "
                    "max %.2e, %d unattainable targets",
                    traces, worst_trace, checked, worst_all, unattainable)};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Result determinism(int reps, int threads_b, const std::string& cli)
{
    const fs::path base = fs::temp_directory_path() / "deconf_acceptance_determinism";
    fs::remove_all(base);
    const std::string config = source("configs/default.json");
    std::string extra = reps > 0 ? " --replications " + std::to_string(reps) : "";
    for (const auto& [dir, threads] : std::vector<std::pair<std::string, int>>{{"a", 1}, {"b", threads_b}}) {
        const std::string cmd = cli + " simulate --config " + config + " --seed 20240601 --threads " +
                                std::to_string(threads) + extra + " --out " + (base / dir).string() + " >/dev/null";
        std::cerr << "  " << cmd << "\n";
        if (std::system(cmd.c_str()) != 0) return {false, "simulate exited with an error"};
    }
    std::string detail;
    bool ok = true;
    for (const char* f : {"summary.csv", "sweep.csv", "shrinkage.csv", "runs.jsonl"}) {
        const auto a = slurp(base / "a" / f), b = slurp(base / "b" / f);
        const bool same = !a.empty() && a == b;
        ok = ok && same;
        detail += fmt("%s%s %s (%zu bytes)", detail.empty() ? "" : ", ", f, same ? "identical" : "DIFFER", a.size());
    }
    return {ok, fmt("default config, %s replications, threads 1 vs %d: ", reps > 0 ? std::to_string(reps).c_str() : "configured",
                    threads_b) +
                    detail};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance criteria"};
    std::string only;
    int table_reps = 0, sweep_reps = 0, dr_reps = 2000, det_reps = 2, threads = 1, det_threads = 4;
    app.add_option("--only", only, "Comma-separated criterion numbers to run (default all)");
    app.add_option("--table-replications", table_reps, "Override replications for criterion 5 (0 = config)");
    app.add_option("--sweep-replications", sweep_reps, "Override replications for criteria 6-7 (0 = config)");
    app.add_option("--dr-replications", dr_reps, "Replications for criterion 4")->capture_default_str();
    app.add_option("--determinism-replications", det_reps,
                   "Replications for criterion 8 (0 = the default config's own count)")
        ->capture_default_str();
    app.add_option("--threads", threads, "Worker threads for criteria 5-7")->capture_default_str();
    app.add_option("--determinism-threads", det_threads, "Second thread count for criterion 8")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    std::set<int> selected;
    if (only.empty()) {
        for (int k = 1; k <= 8; ++k) selected.insert(k);
    } else {
        std::stringstream ss(only);
        std::string tok;
        while (std::getline(ss, tok, ',')) selected.insert(std::stoi(tok));
    }

    int failures = 0;
    auto report = [&](int k, const std::string& name, double secs, std::optional<double> budget, Result r) {
        const bool in_time = !budget || secs < *budget;
        const bool pass = r.passed && in_time;
        failures += !pass;
        std::printf("%s %d %s [%.1fs%s] %s%s\n", pass ? "PASS" : "FAIL", k, name.c_str(), secs,
                    budget ? fmt(" < %.0fs", *budget).c_str() : "", r.detail.c_str(),
                    in_time ? "" : " (runtime budget exceeded)");
        std::fflush(stdout);
    };
    auto timed = [&](int k, const std::string& name, std::optional<double> budget, const std::function<Result()>& f) {
        if (!selected.count(k)) return;
        std::cerr << "criterion " << k << ": " << name << "\n";
        const auto t0 = std::chrono::steady_clock::now();
        Result r;
        try {
            r = f();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        report(k, name, seconds_since(t0), budget, r);
    };

    timed(1, "bias-formula oracle", 1.0, bias_formula);
    timed(2, "geometry suite", 1.0, geometry);
    timed(3, "reduced propensity quadrature vs Monte Carlo", 30.0, quadrature);
    timed(4, "double robustness", 300.0, [&] { return double_robustness(dr_reps); });

    if (selected.count(5)) {
        std::cerr << "criterion 5: RMSE ordering\n";
        std::string timing;
        const auto t0 = std::chrono::steady_clock::now();
        Result r;
        try {
            r = table_ordering(table_reps, threads, 1200.0, timing);
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        r.detail = "cells " + timing + " (each < 1200s); " + r.detail;
        report(5, "RMSE ordering in low-overlap lasso cells", seconds_since(t0), std::nullopt, r);
    }

    if (selected.count(6) || selected.count(7)) {
        std::cerr << "criteria 6-7: sweep cell\n";
        std::optional<SweepRun> run;
        std::string err;
        try {
            run = run_sweep_cell(sweep_reps, threads);
        } catch (const std::exception& e) {
            err = e.what();
        }
        const double sim_secs = run ? run->seconds : 0;
        for (int k : {6, 7}) {
            if (!selected.count(k)) continue;
            const auto t0 = std::chrono::steady_clock::now();
            Result r = run ? (k == 6 ? bias_decomposition(*run) : shrinkage_structure(*run))
                           : Result{false, "exception: " + err};
            r.detail = fmt("shared sweep run %.0fs; ", sim_secs) + r.detail;
            report(k, k == 6 ? "bias decomposition along w" : "shrinkage variance matching", sim_secs + seconds_since(t0),
                   k == 6 ? 1200.0 : 600.0, r);
        }
    }

    timed(8, "determinism across thread counts", std::nullopt,
          [&] { return determinism(det_reps, det_threads, DECONF_CLI); });

    std::printf("%s: %d failing criteria\n", failures ? "FAILED" : "ALL PASSED", failures);
    return failures ? 1 : 0;
}
