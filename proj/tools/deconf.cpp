// deconf: simulate | estimate | sweep | verify
//
// Exit codes: 0 success, 1 invalid input or config, 2 numerical failure.
// Tables go to stdout, progress and diagnostics to stderr.

#include "deconf/config.hpp"
#include "deconf/io.hpp"
#include "deconf/simulation.hpp"
#include "deconf/verify.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace deconf;

namespace {

struct Options {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<int> replications;
    std::optional<int> cells;
    std::string data;
    std::vector<double> w;
};

config::RunConfig load_config(const Options& o)
{
    config::RunConfig cfg = o.config.empty() ? config::parse("{}", "<defaults>") : config::load(o.config);
    if (o.seed) config::override_seed(cfg, *o.seed);
    if (o.threads) {
        if (*o.threads < 1) throw config::ConfigError("--threads must be at least 1");
        cfg.threads = *o.threads;
    }
    if (o.replications) {
        if (*o.replications < 1) throw config::ConfigError("--replications must be at least 1");
        cfg.grid.replications = *o.replications;
    }
    if (o.cells) {
        if (*o.cells < 1) throw config::ConfigError("--cells must be at least 1");
        if (static_cast<std::size_t>(*o.cells) < cfg.grid.cells.size()) cfg.grid.cells.resize(*o.cells);
    }
    if (!o.w.empty()) {
        cfg.grid.settings.w_grid = o.w;
        cfg.grid.settings.validate();
    }
    return cfg;
}

void ensure_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw ValidationError("output directory '" + dir + "' is not writable");
}

std::string cell_label(const sim::CellSpec& c)
{
    char buf[160];
    std::snprintf(buf, sizeof buf, "n=%d p=%d s_T=%g s_Y=%g %s/%s", c.dgp.n, c.dgp.p, c.dgp.s_T, c.dgp.s_Y,
                  std::string(to_string(c.outcome_penalty)).c_str(), std::string(to_string(c.propensity_penalty)).c_str());
    return buf;
}

int cmd_simulate(const Options& o)
{
    auto cfg = load_config(o);
    ensure_dir(o.out);
    std::cerr << "simulate: " << cfg.grid.cells.size() << " cells x " << cfg.grid.replications << " replications on "
              << cfg.threads << " thread(s)\n";
    const auto cells = sim::run_grid(cfg.grid, cfg.threads);

    const fs::path out(o.out);
    io::write_file((out / "summary.csv").string(), io::summary_csv(cells));
    io::write_file((out / "sweep.csv").string(), io::sweep_csv(cells));
    io::write_file((out / "shrinkage.csv").string(), io::shrinkage_csv(cells, cfg.grid));
    io::write_file((out / "runs.jsonl").string(), io::runs_jsonl(cells));
    if (cfg.export_datasets) {
        const fs::path dir = out / "datasets";
        ensure_dir(dir.string());
        for (std::size_t c = 0; c < cfg.grid.cells.size(); ++c)
            for (int r = 0; r < cfg.grid.replications; ++r)
                io::write_dataset_csv((dir / ("cell" + std::to_string(c) + "_rep" + std::to_string(r) + ".csv")).string(),
                                      sim::replication_dataset(cfg.grid, static_cast<int>(c), r));
    }

    int failed = 0;
    for (const auto& cell : cells) {
        failed += cell.failed_replications;
        std::printf("cell %d  %s  (%zu replications)\n", cell.cell, cell_label(cell.spec).c_str(), cell.replications.size());
        std::printf("  %-22s %12s %12s %12s %9s\n", "estimator", "rmse", "bias", "sd", "failures");
        for (const auto& s : cell.summary)
            std::printf("  %-22s %12.5f %12.5f %12.5f %9d\n", s.name.c_str(), s.rmse, s.bias, s.sd, s.failures);
    }
    if (failed > 0) std::cerr << "simulate: " << failed << " replication(s) had estimator failures (see runs.jsonl)\n";
    std::cerr << "simulate: wrote " << o.out << "/{summary.csv,sweep.csv,shrinkage.csv,runs.jsonl}\n";
    return 0;
}

int cmd_estimate(const Options& o, bool sweep)
{
    if (o.data.empty()) throw ValidationError("--data is required");
    auto cfg = load_config(o);
    ensure_dir(o.out);
    auto data = io::read_dataset_csv(o.data);
    if (cfg.covariate_transform != sim::CovariateTransform::none)
        data = Dataset<double>(DesignMatrix<double>(sim::transform_covariates(data.design.values(), cfg.covariate_transform)),
                               data.treatment, data.outcome);
    auto settings = cfg.grid.settings;
    if (!cfg.grid.cells.empty()) {
        const auto& c = cfg.grid.cells.front();
        settings.outcome_penalty = c.outcome_penalty;
        settings.propensity_penalty = c.propensity_penalty;
        if (!c.roster.empty()) settings.roster = c.roster;
    }
    if (sweep) settings.bias_diagnostics = true;
    for (auto f : settings.roster)
        if (f == sim::Family::ipw_d_oracle)
            throw ValidationError("ipw_d_oracle needs the true model and is only available in simulate");
    const std::uint64_t fit_seed = cfg.fit_seed ? *cfg.fit_seed : derive_seed(cfg.seed, 2);
    const auto res = sim::estimate_all(data, settings, fit_seed);

    const fs::path out(o.out);
    io::write_file((out / "estimates.json").string(), io::estimation_json(res, settings).dump(2) + "\n");
    io::write_file((out / "estimates.csv").string(), io::estimation_csv(res));

    if (!res.family_error.empty()) std::cerr << "estimate: score family unavailable: " << res.family_error << "\n";
    std::printf("%-22s %14s %12s %12s\n", "estimator", "estimate", "max_weight", "ess");
    int failures = 0;
    for (const auto& e : res.estimates) {
        if (e.report) {
            std::printf("%-22s %14.6f %12.4f %12.2f\n", e.name.c_str(), e.report->estimate, e.report->diagnostics.max_weight,
                        e.report->diagnostics.effective_sample_size);
        } else {
            ++failures;
            std::printf("%-22s %14s\n", e.name.c_str(), "failed");
            std::cerr << "estimate: " << e.name << ": " << e.error << "\n";
        }
    }
    if (sweep) {
        std::printf("\n%6s %14s %14s %14s %14s\n", "w", "var(e_d)", "residual", "bias_att", "bias_ate");
        for (const auto& sp : res.sweep)
            std::printf("%6s %14.6g %14.3g %14.6g %14.6g\n", sim::format_w(sp.w).c_str(), sp.ed_variance,
                        sp.constraint_residual, sp.bias_att, sp.bias_ate);
    }
    std::cerr << "estimate: wrote " << o.out << "/{estimates.json,estimates.csv}\n";
    return failures == static_cast<int>(res.estimates.size()) && failures > 0 ? 2 : 0;
}

int cmd_verify()
{
    bool ok = true;
    for (const auto& c : verify::run_all()) {
        std::printf("%-4s %-28s %8.3fs  %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.seconds, c.detail.c_str());
        ok = ok && c.passed;
    }
    return ok ? 0 : 2;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Treatment-effect estimation with deconfounding scores under poor overlap"};
    app.require_subcommand(0, 1);
    bool print_schema = false;
    app.add_flag("--print-schema", print_schema, "Print the config key reference and exit");

    Options o;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "Output directory")->capture_default_str();
        sub->add_option("--seed", o.seed, "Override the config seed");
        sub->add_option("--threads", o.threads, "Worker threads");
        sub->add_option("--replications", o.replications, "Override replications per cell");
        sub->add_flag("--print-schema", print_schema, "Print the config key reference and exit");
    };
    auto* simulate = app.add_subcommand("simulate", "Run the simulation grid");
    common(simulate);
    simulate->add_option("--cells", o.cells, "Run only the first K cells");
    auto* estimate = app.add_subcommand("estimate", "Estimate effects on a CSV dataset (y,t,x1..xp)");
    common(estimate);
    estimate->add_option("--data", o.data, "Dataset CSV")->check(CLI::ExistingFile);
    auto* sweep = app.add_subcommand("sweep", "Estimate along the w grid with bias diagnostics");
    common(sweep);
    sweep->add_option("--data", o.data, "Dataset CSV")->check(CLI::ExistingFile);
    sweep->add_option("--w", o.w, "Override the w grid");
    auto* verify_cmd = app.add_subcommand("verify", "Run the built-in oracle checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (print_schema) {
            std::cout << config::schema();
            return 0;
        }
        if (simulate->parsed()) return cmd_simulate(o);
        if (estimate->parsed()) return cmd_estimate(o, false);
        if (sweep->parsed()) return cmd_estimate(o, true);
        if (verify_cmd->parsed()) return cmd_verify();
        std::cerr << app.help();
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
}
