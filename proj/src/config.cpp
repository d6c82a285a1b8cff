#include "deconf/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace deconf::config {

using nlohmann::json;

namespace {

int line_of_offset(const std::string& text, std::size_t offset)
{
    offset = std::min(offset, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

class Reader {
public:
    Reader(const json& j, std::string path, const std::string& text, const std::string& source)
        : j_(j), path_(std::move(path)), text_(text), source_(source)
    {
        if (!j_.is_object()) fail(path_.empty() ? "config root must be a JSON object" : "'" + path_ + "' must be an object");
    }

    bool has(const std::string& key)
    {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& raw(const std::string& key) { return j_.at(key); }

    std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    [[noreturn]] void fail(const std::string& msg, const std::string& key = {}) const
    {
        std::string where = source_;
        if (!key.empty()) {
            const auto pos = text_.find("\"" + key + "\"");
            if (pos != std::string::npos) where += ":" + std::to_string(line_of_offset(text_, pos));
        }
        throw ConfigError(where + ": " + msg);
    }

    template <class T>
    void read(const std::string& key, T& out)
    {
        if (!has(key)) return;
        out = convert<T>(j_.at(key), key);
    }

    template <class T>
    T convert(const json& v, const std::string& key) const
    {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) fail("key '" + full(key) + "' must be true or false", key);
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
                fail("key '" + full(key) + "' must be a nonnegative integer", key);
            return v.get<std::uint64_t>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) fail("key '" + full(key) + "' must be an integer", key);
            return static_cast<T>(v.get<std::int64_t>());
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) fail("key '" + full(key) + "' must be a number", key);
            return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) fail("key '" + full(key) + "' must be a string", key);
            return v.get<std::string>();
        } else {
            static_assert(sizeof(T) == 0, "unsupported config type");
        }
    }

    template <class T>
    std::vector<T> list(const std::string& key)
    {
        const json& v = j_.at(key);
        if (!v.is_array()) fail("key '" + full(key) + "' must be an array", key);
        std::vector<T> out;
        for (const auto& e : v) out.push_back(convert<T>(e, key));
        return out;
    }

    template <class F>
    auto parsed(const std::string& key, F&& parse_fn)
    {
        const auto s = convert<std::string>(j_.at(key), key);
        try {
            return parse_fn(s);
        } catch (const std::exception& ex) {
            fail("key '" + full(key) + "': " + ex.what(), key);
        }
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) fail("unknown key '" + full(it.key()) + "'", it.key());
    }

    const std::string& text() const { return text_; }
    const std::string& source() const { return source_; }

private:
    const json& j_;
    std::string path_;
    const std::string& text_;
    const std::string& source_;
    std::set<std::string> seen_;
};

bool read_dgp(Reader& r, sim::DGPConfig& d)
{
    r.read("n", d.n);
    r.read("p", d.p);
    r.read("s_T", d.s_T);
    r.read("s_Y", d.s_Y);
    r.read("sigma", d.sigma);
    r.read("tau", d.tau);
    r.read("alpha0", d.alpha0);
    r.read("beta0", d.beta0);
    r.read("active", d.active);
    r.read("support_overlap", d.support_overlap);
    const bool explicit_seed = r.has("coef_seed");
    r.read("coef_seed", d.coef_seed);
    return explicit_seed;
}

std::vector<sim::Family> read_roster(Reader& r, const std::string& key)
{
    std::vector<sim::Family> out;
    for (const auto& name : r.list<std::string>(key)) {
        try {
            out.push_back(sim::parse_family(name));
        } catch (const std::exception& ex) {
            r.fail(std::string("key '") + r.full(key) + "': " + ex.what(), key);
        }
    }
    if (out.empty()) r.fail("key '" + r.full(key) + "' must not be empty", key);
    return out;
}

std::uint64_t default_coef_seed(std::uint64_t seed) { return derive_seed(seed, 0xC0EFULL); }

} // namespace

RunConfig parse(const std::string& text, const std::string& source)
{
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& ex) {
        throw ConfigError(source + ":" + std::to_string(line_of_offset(text, ex.byte == 0 ? 0 : ex.byte - 1)) +
                          ": malformed JSON (" + ex.what() + ")");
    }
    Reader top(root, "", text, source);
    RunConfig cfg;
    auto& s = cfg.grid.settings;

    top.read("seed", cfg.seed);
    top.read("threads", cfg.threads);
    top.read("replications", cfg.grid.replications);
    top.read("shrinkage_replication", cfg.grid.shrinkage_replication);
    top.read("export_datasets", cfg.export_datasets);
    if (top.has("fit_seed")) cfg.fit_seed = top.convert<std::uint64_t>(top.raw("fit_seed"), "fit_seed");
    top.read("cv_folds", s.cv_folds);
    top.read("normalize_weights", s.normalize);
    top.read("strata", s.strata);
    top.read("bias_diagnostics", s.bias_diagnostics);
    if (top.has("w_grid")) s.w_grid = top.list<double>("w_grid");
    if (top.has("estimators")) s.roster = read_roster(top, "estimators");
    if (top.has("clip_bounds")) {
        const auto b = top.list<double>("clip_bounds");
        if (b.size() != 2) top.fail("key 'clip_bounds' must be [lo, hi]", "clip_bounds");
        s.clip_lo = b[0];
        s.clip_hi = b[1];
    }
    if (top.has("null_completion")) {
        s.null_completion = top.parsed("null_completion", [](const std::string& v) {
            if (v == "first_basis") return NullCompletion::first_basis;
            if (v == "seeded_random") return NullCompletion::seeded_random;
            throw ValidationError("expected first_basis|seeded_random, got '" + v + "'");
        });
    }
    if (top.has("covariate_transform")) cfg.covariate_transform = top.parsed("covariate_transform", sim::parse_transform);

    Penalty base_outcome = Penalty::lasso, base_propensity = Penalty::lasso;
    if (top.has("penalty")) base_outcome = base_propensity = top.parsed("penalty", parse_penalty);
    if (top.has("outcome_penalty")) base_outcome = top.parsed("outcome_penalty", parse_penalty);
    if (top.has("propensity_penalty")) base_propensity = top.parsed("propensity_penalty", parse_penalty);
    s.outcome_penalty = base_outcome;
    s.propensity_penalty = base_propensity;

    if (top.has("integration")) {
        Reader r(top.raw("integration"), "integration", text, source);
        auto& o = s.integration;
        if (r.has("method")) {
            o.method = r.parsed("method", [](const std::string& v) {
                if (v == "quadrature") return Integration::quadrature;
                if (v == "monte_carlo") return Integration::monte_carlo;
                throw ValidationError("expected quadrature|monte_carlo, got '" + v + "'");
            });
        }
        r.read("nodes", o.nodes);
        r.read("draws", o.draws);
        r.read("seed", o.seed);
        if (r.has("scheme")) {
            o.scheme = r.parsed("scheme", [](const std::string& v) {
                if (v == "iid") return McScheme::iid;
                if (v == "stratified") return McScheme::stratified;
                throw ValidationError("expected iid|stratified, got '" + v + "'");
            });
        }
        r.finish();
    }
    if (top.has("fit")) {
        Reader r(top.raw("fit"), "fit", text, source);
        auto& f = s.fit;
        r.read("tol", f.tol);
        r.read("max_sweeps", f.max_sweeps);
        r.read("irls_tol", f.irls_tol);
        r.read("max_irls", f.max_irls);
        r.read("grid_size", f.grid_size);
        r.read("grid_min_ratio", f.grid_min_ratio);
        r.read("dev_ratio_max", f.dev_ratio_max);
        r.read("dev_ratio_rel_change", f.dev_ratio_rel_change);
        r.read("min_path_length", f.min_path_length);
        if (r.has("ridge_solver")) {
            f.ridge_solver = r.parsed("ridge_solver", [](const std::string& v) {
                if (v == "direct") return RidgeSolver::direct;
                if (v == "coordinate_descent") return RidgeSolver::coordinate_descent;
                throw ValidationError("expected direct|coordinate_descent, got '" + v + "'");
            });
        }
        r.finish();
        if (!(f.tol > 0 && f.irls_tol > 0 && f.max_sweeps > 0 && f.max_irls > 0 && f.grid_size > 0 &&
              f.grid_min_ratio > 0 && f.grid_min_ratio < 1))
            top.fail("fit: tolerances, iteration caps and grid settings must be positive (grid_min_ratio in (0, 1))", "fit");
    }

    sim::DGPConfig base;
    bool base_explicit_seed = false;
    if (top.has("dgp")) {
        Reader r(top.raw("dgp"), "dgp", text, source);
        base_explicit_seed = read_dgp(r, base);
        r.finish();
    }
    if (!base_explicit_seed) base.coef_seed = default_coef_seed(cfg.seed);

    auto add_cell = [&](sim::CellSpec c) {
        try {
            c.dgp.validate();
        } catch (const std::exception& ex) {
            top.fail(std::string("cell ") + std::to_string(cfg.grid.cells.size() + 1) + ": " + ex.what());
        }
        cfg.grid.cells.push_back(std::move(c));
    };

    const bool has_grid = top.has("grid");
    const bool has_cells = top.has("cells");
    if (has_grid) {
        Reader r(top.raw("grid"), "grid", text, source);
        std::vector<int> ns{base.n}, ps{base.p};
        std::vector<double> sts{base.s_T}, sys{base.s_Y};
        std::vector<Penalty> pens;
        if (r.has("n")) ns = r.list<int>("n");
        if (r.has("p")) ps = r.list<int>("p");
        if (r.has("s_T")) sts = r.list<double>("s_T");
        if (r.has("s_Y")) sys = r.list<double>("s_Y");
        if (r.has("penalty")) {
            for (const auto& name : r.list<std::string>("penalty")) {
                try {
                    pens.push_back(parse_penalty(name));
                } catch (const std::exception& ex) {
                    r.fail(std::string("key 'grid.penalty': ") + ex.what(), "penalty");
                }
            }
        }
        r.finish();
        for (int n : ns)
            for (int p : ps)
                for (double st : sts)
                    for (double sy : sys) {
                        auto one = [&](std::optional<Penalty> pen) {
                            sim::CellSpec c;
                            c.dgp = base;
                            c.dgp.n = n;
                            c.dgp.p = p;
                            c.dgp.s_T = st;
                            c.dgp.s_Y = sy;
                            c.outcome_penalty = pen.value_or(base_outcome);
                            c.propensity_penalty = pen.value_or(base_propensity);
                            add_cell(std::move(c));
                        };
                        if (pens.empty()) one(std::nullopt);
                        else
                            for (Penalty pen : pens) one(pen);
                    }
    }
    if (has_cells) {
        const json& arr = top.raw("cells");
        if (!arr.is_array()) top.fail("key 'cells' must be an array", "cells");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Reader r(arr[i], "cells[" + std::to_string(i) + "]", text, source);
            sim::CellSpec c;
            c.dgp = base;
            read_dgp(r, c.dgp);
            c.outcome_penalty = base_outcome;
            c.propensity_penalty = base_propensity;
            if (r.has("penalty")) c.outcome_penalty = c.propensity_penalty = r.parsed("penalty", parse_penalty);
            if (r.has("outcome_penalty")) c.outcome_penalty = r.parsed("outcome_penalty", parse_penalty);
            if (r.has("propensity_penalty")) c.propensity_penalty = r.parsed("propensity_penalty", parse_penalty);
            if (r.has("estimators")) c.roster = read_roster(r, "estimators");
            r.finish();
            add_cell(std::move(c));
        }
    }
    if (!has_grid && !has_cells) {
        sim::CellSpec c;
        c.dgp = base;
        c.outcome_penalty = base_outcome;
        c.propensity_penalty = base_propensity;
        add_cell(std::move(c));
    }
    top.finish();

    cfg.grid.base_seed = cfg.seed;
    if (cfg.threads < 1) top.fail("key 'threads' must be at least 1", "threads");
    if (cfg.grid.replications < 1) top.fail("key 'replications' must be at least 1", "replications");
    try {
        s.validate();
    } catch (const std::exception& ex) {
        throw ConfigError(source + ": " + ex.what());
    }
    return cfg;
}

RunConfig load(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    auto cfg = parse(ss.str(), path);
    return cfg;
}

void override_seed(RunConfig& cfg, std::uint64_t seed)
{
    const std::uint64_t old_default = default_coef_seed(cfg.seed);
    cfg.seed = seed;
    cfg.grid.base_seed = seed;
    for (auto& c : cfg.grid.cells)
        if (c.dgp.coef_seed == old_default) c.dgp.coef_seed = default_coef_seed(seed);
}

std::string schema()
{
    return R"(Config file: one JSON object. Unknown keys are rejected.

Top level
  seed                    uint     base seed; every random stream derives from it (default 20240601)
  replications            int      replications per cell (default 100)
  threads                 int      worker threads for simulate (default 1; --threads overrides)
  cv_folds                int      cross-validation folds (default 10)
  w_grid                  [real]   score-family positions in [-1, 1] (default [-1, -0.5, 0, 0.5, 1])
  estimators              [string] roster; any of naive, regression, ipw, aipw, ipw_clip, aipw_clip,
                                   ipw_d, aipw_d, ipw_ridge, aipw_ridge, ipw_clipvm, aipw_clipvm,
                                   ipw_d_oracle (default: the first eight)
  clip_bounds             [lo, hi] clipping interval for ipw_clip / aipw_clip (default [0.1, 0.9])
  normalize_weights       bool     Hajek (true, default) or Horvitz-Thompson weights
  null_completion         string   first_basis (default) | seeded_random
  strata                  int      strata for the bias diagnostic; 0 = ceil(n^(1/3)) (default 0)
  bias_diagnostics        bool     compute the stratified bias diagnostic per w (default false)
  covariate_transform     string   estimate only: none | standardize (default) | whiten
  penalty                 string   ridge | lasso, sets both penalties below
  outcome_penalty         string   penalty for the control-arm outcome model (default lasso)
  propensity_penalty      string   penalty for the propensity model (default lasso)
  shrinkage_replication   int      replication whose per-unit traces go to shrinkage.csv; -1 = none (default 0)
  export_datasets         bool     simulate: also write every replication dataset as CSV (default false)
  fit_seed                uint     estimate only: seed for CV folds and Monte Carlo (default derived from seed)

integration { method: quadrature | monte_carlo, nodes: int (64), draws: int (10000),
              seed: uint (0), scheme: iid | stratified }
fit { tol (1e-7), irls_tol (1e-7), max_sweeps (10000), max_irls (100), grid_size (100),
      grid_min_ratio (1e-4), dev_ratio_max (0.999), dev_ratio_rel_change (1e-5),
      min_path_length (5), ridge_solver: direct | coordinate_descent }

dgp { n (500), p (100), s_T (1), s_Y (5), sigma (1), tau (1), alpha0 (0), beta0 (0),
      active (10), support_overlap (0.5), coef_seed (derived from seed) }
      base data-generating process for every cell

grid { n: [int], p: [int], s_T: [real], s_Y: [real], penalty: [ridge|lasso] }
      cartesian product over the listed values (order n, p, s_T, s_Y, penalty);
      missing lists take the dgp value; a grid penalty sets both model penalties

cells [ { any dgp key, penalty, outcome_penalty, propensity_penalty, estimators } ]
      explicit cells appended after the grid cells

Without grid and cells the config describes a single cell built from dgp.
)";
}

} // namespace deconf::config
