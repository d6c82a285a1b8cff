#include "deconf/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace deconf::io {

using nlohmann::json;
using sim::MatD;
using sim::VecD;

std::string format_number(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

namespace {

std::string num(double x) { return format_number(x); }

json jnum(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json jvec(const Vec<double>& v)
{
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(jnum(v(i)));
    return a;
}

std::string trim(std::string_view s)
{
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return std::string(s.substr(a, b - a));
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string cell_prefix(const sim::CellResult& c)
{
    const auto& d = c.spec.dgp;
    std::ostringstream s;
    s << c.cell << ',' << d.n << ',' << d.p << ',' << num(d.s_T) << ',' << num(d.s_Y) << ','
      << to_string(c.spec.outcome_penalty) << ',' << to_string(c.spec.propensity_penalty);
    return s.str();
}

const char* const kCellHeader = "cell,n,p,s_T,s_Y,outcome_penalty,propensity_penalty";

} // namespace

std::string dataset_csv(const Dataset<double>& data)
{
    const MatD& x = data.design.values();
    std::string out = "y,t";
    for (Index j = 0; j < x.cols(); ++j) out += ",x" + std::to_string(j + 1);
    out += '\n';
    for (Index i = 0; i < x.rows(); ++i) {
        out += num(data.outcome(i));
        out += ',';
        out += data.treatment(i) == 1.0 ? "1" : "0";
        for (Index j = 0; j < x.cols(); ++j) {
            out += ',';
            out += num(x(i, j));
        }
        out += '\n';
    }
    return out;
}

void write_dataset_csv(const std::string& path, const Dataset<double>& data) { write_file(path, dataset_csv(data)); }

Dataset<double> parse_dataset_csv(const std::string& text, const std::string& source)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(source + ": empty file");
    const auto header = split(line);
    if (header.size() < 3 || header[0] != "y" || header[1] != "t")
        throw ValidationError(source + ": header must be y,t,x1..xp");
    for (std::size_t j = 2; j < header.size(); ++j)
        if (header[j] != "x" + std::to_string(j - 1))
            throw ValidationError(source + ": header column " + std::to_string(j + 1) + " must be 'x" +
                                  std::to_string(j - 1) + "' (got '" + header[j] + "')");
    const std::size_t cols = header.size();
    std::vector<double> vals;
    Index rows = 0;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        ++rows;
        const auto f = split(line);
        const std::string where = source + ": row " + std::to_string(rows) + " (line " + std::to_string(line_no) + ")";
        if (f.size() != cols)
            throw ValidationError(where + ": expected " + std::to_string(cols) + " fields, got " + std::to_string(f.size()));
        for (std::size_t j = 0; j < cols; ++j) {
            double v = 0;
            const char* b = f[j].data();
            const char* e = b + f[j].size();
            const auto r = std::from_chars(b, e, v);
            if (f[j].empty() || r.ec != std::errc() || r.ptr != e || !std::isfinite(v))
                throw ValidationError(where + ": column '" + header[j] + "' is not a finite number ('" + f[j] + "')");
            if (j == 1 && v != 0.0 && v != 1.0)
                throw ValidationError(where + ": t must be 0 or 1 (got " + f[j] + ")");
            vals.push_back(v);
        }
    }
    if (rows == 0) throw ValidationError(source + ": no data rows");
    const Index p = static_cast<Index>(cols - 2);
    MatD x(rows, p);
    VecD y(rows), t(rows);
    for (Index i = 0; i < rows; ++i) {
        const double* r = vals.data() + static_cast<std::size_t>(i) * cols;
        y(i) = r[0];
        t(i) = r[1];
        for (Index j = 0; j < p; ++j) x(i, j) = r[2 + j];
    }
    const double nt = t.sum();
    if (nt == 0 || nt == static_cast<double>(rows))
        throw ValidationError(source + ": t has a single class; both treated and control units are required");
    if ((y.array() == y(0)).all()) throw ValidationError(source + ": y is constant");
    return Dataset<double>(DesignMatrix<double>(std::move(x)), std::move(t), std::move(y));
}

Dataset<double> read_dataset_csv(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open dataset '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_dataset_csv(ss.str(), path);
}

std::string summary_csv(const std::vector<sim::CellResult>& cells)
{
    std::string out = std::string(kCellHeader) +
                      ",estimator,w,replications,failures,rmse,bias,sd,bias_vs_tau,mean_ps_variance\n";
    for (const auto& c : cells) {
        const std::string prefix = cell_prefix(c);
        for (const auto& s : c.summary) {
            out += prefix + ',' + s.name + ',' + (std::isnan(s.w) ? std::string() : num(s.w)) + ',' +
                   std::to_string(s.count + s.failures) + ',' + std::to_string(s.failures) + ',' + num(s.rmse) +
                   ',' + num(s.bias) + ',' + num(s.sd) + ',' + num(s.bias_population) + ',' +
                   (std::isnan(s.mean_variance) ? std::string() : num(s.mean_variance)) + '\n';
        }
    }
    return out;
}

std::string sweep_csv(const std::vector<sim::CellResult>& cells)
{
    std::string out = std::string(kCellHeader) +
                      ",family,w,count,failures,bias,sd,rmse,mean_ps_variance,max_constraint_residual,"
                      "mean_ridge_lambda,ridge_unattainable,mean_clip_bound,mean_bias_diagnostic\n";
    for (const auto& c : cells) {
        const std::string prefix = cell_prefix(c);
        for (const auto& s : c.summary) {
            if (!sim::is_w_indexed(s.family)) continue;
            double max_res = 0, lam = 0, clip = 0, bias_diag = 0;
            int n_lam = 0, n_clip = 0, n_bias = 0, unattainable = 0;
            bool any_res = false;
            for (const auto& r : c.replications) {
                for (const auto& sp : r.sweep) {
                    if (sp.w != s.w) continue;
                    if (std::isfinite(sp.constraint_residual)) {
                        max_res = std::max(max_res, sp.constraint_residual);
                        any_res = true;
                    }
                    if (std::isfinite(sp.ridge_lambda)) {
                        lam += sp.ridge_lambda;
                        ++n_lam;
                        if (!sp.ridge_attainable) ++unattainable;
                    }
                    if (std::isfinite(sp.clip_bound)) {
                        clip += sp.clip_bound;
                        ++n_clip;
                    }
                    if (std::isfinite(sp.bias_att)) {
                        bias_diag += sp.bias_att;
                        ++n_bias;
                    }
                }
            }
            const bool ridge = s.family == sim::Family::ipw_ridge || s.family == sim::Family::aipw_ridge;
            const bool clipvm = s.family == sim::Family::ipw_clipvm || s.family == sim::Family::aipw_clipvm;
            out += prefix + ',' + sim::family_name(s.family) + ',' + num(s.w) + ',' + std::to_string(s.count) + ',' +
                   std::to_string(s.failures) + ',' + num(s.bias) + ',' + num(s.sd) + ',' + num(s.rmse) + ',' +
                   (std::isnan(s.mean_variance) ? std::string() : num(s.mean_variance)) + ',' +
                   (any_res ? num(max_res) : std::string()) + ',' +
                   (ridge && n_lam ? num(lam / n_lam) : std::string()) + ',' +
                   (ridge ? std::to_string(unattainable) : std::string()) + ',' +
                   (clipvm && n_clip ? num(clip / n_clip) : std::string()) + ',' +
                   (n_bias ? num(bias_diag / n_bias) : std::string()) + '\n';
        }
    }
    return out;
}

std::string shrinkage_csv(const std::vector<sim::CellResult>& cells, const sim::ExperimentGrid& grid)
{
    std::string out = "cell,replication,w,unit,t,e_d,e_ridge,e_clip,ridge_lambda,clip_bound\n";
    const int rep = grid.shrinkage_replication;
    if (rep < 0) return out;
    for (const auto& c : cells) {
        if (rep >= static_cast<int>(c.replications.size())) continue;
        const auto& r = c.replications[static_cast<std::size_t>(rep)];
        bool any = false;
        for (const auto& sp : r.sweep) any = any || sp.ed.size() || sp.ridge.size() || sp.clip.size();
        if (!any) continue;
        sim::ExperimentGrid g = grid;
        g.cells = {c.spec};
        const auto data = sim::replication_dataset(g, 0, rep);
        for (const auto& sp : r.sweep) {
            const Index n = data.size();
            for (Index i = 0; i < n; ++i) {
                auto at = [&](const VecD& v) { return v.size() == n ? num(v(i)) : std::string(); };
                out += std::to_string(c.cell) + ',' + std::to_string(rep) + ',' + num(sp.w) + ',' + std::to_string(i + 1) +
                       ',' + (data.treatment(i) == 1.0 ? "1" : "0") + ',' + at(sp.ed) + ',' + at(sp.ridge) + ',' +
                       at(sp.clip) + ',' + (std::isfinite(sp.ridge_lambda) ? num(sp.ridge_lambda) : std::string()) +
                       ',' + (std::isfinite(sp.clip_bound) ? num(sp.clip_bound) : std::string()) + '\n';
            }
        }
    }
    return out;
}

namespace {

json sweep_json(const sim::SweepPoint& sp)
{
    return json{{"w", sp.w},
                {"constraint_residual", jnum(sp.constraint_residual)},
                {"ed_variance", jnum(sp.ed_variance)},
                {"ridge_lambda", jnum(sp.ridge_lambda)},
                {"ridge_variance", jnum(sp.ridge_variance)},
                {"ridge_attainable", sp.ridge_attainable},
                {"clip_bound", jnum(sp.clip_bound)},
                {"clip_variance", jnum(sp.clip_variance)},
                {"oracle_ed_variance", jnum(sp.oracle_ed_variance)},
                {"bias_att", jnum(sp.bias_att)},
                {"bias_ate", jnum(sp.bias_ate)}};
}

} // namespace

std::string runs_jsonl(const std::vector<sim::CellResult>& cells)
{
    std::string out;
    for (const auto& c : cells) {
        for (const auto& r : c.replications) {
            json est = json::object();
            for (std::size_t k = 0; k < r.names.size(); ++k) est[r.names[k]] = jnum(r.estimates[k]);
            json fails = json::object();
            for (const auto& [k, v] : r.failures) fails[k] = v;
            json sweep = json::array();
            for (const auto& sp : r.sweep) sweep.push_back(sweep_json(sp));
            json line{{"cell", r.cell},
                      {"replication", r.replication},
                      {"data_seed", r.data_seed},
                      {"fit_seed", r.fit_seed},
                      {"sample_att", jnum(r.sample_att)},
                      {"rho_hat", jnum(r.rho_hat)},
                      {"sign_flipped", r.sign_flipped},
                      {"estimates", est},
                      {"failures", fails},
                      {"sweep", sweep}};
            out += line.dump() + '\n';
        }
    }
    return out;
}

json to_json(const FittedGLM<double>& fit)
{
    json cv = nullptr;
    if (!fit.cv_curve.lambdas.empty()) {
        cv = json{{"lambda", fit.cv_curve.lambdas}, {"mean", fit.cv_curve.mean}, {"se", fit.cv_curve.se}};
    }
    return json{{"link", std::string(to_string(fit.link))},
                {"penalty", std::string(to_string(fit.penalty))},
                {"lambda", fit.lambda},
                {"cv_rule", std::string(to_string(fit.cv_rule))},
                {"cv_folds", fit.cv_folds},
                {"intercept", fit.intercept},
                {"coefficients", jvec(fit.coefficients)},
                {"nonzero", fit.nonzero_count()},
                {"converged", fit.converged},
                {"iterations", fit.iterations},
                {"cv_curve", cv}};
}

json to_json(const ScoreFamily<double>& fam)
{
    return json{{"rho", fam.rho},
                {"sign_flipped", fam.sign_flipped},
                {"alpha", jvec(fam.alpha)},
                {"beta", jvec(fam.beta)},
                {"u1", jvec(fam.u1)},
                {"u2", jvec(fam.u2)},
                {"null_direction", fam.has_null_direction() ? jvec(fam.null_direction) : json(nullptr)}};
}

json to_json(const EstimateReport<double>& r)
{
    const auto& d = r.diagnostics;
    return json{{"estimator", r.estimator},
                {"estimand", std::string(to_string(r.estimand))},
                {"estimate", jnum(r.estimate)},
                {"weight_variance", jnum(d.weight_variance)},
                {"max_weight", jnum(d.max_weight)},
                {"effective_sample_size", jnum(d.effective_sample_size)},
                {"fraction_extreme", jnum(d.fraction_extreme)},
                {"floored", d.floored}};
}

json estimation_json(const sim::EstimationResult& res, const sim::EstimationSettings& s)
{
    json models = json::object();
    if (res.m0_predict) models["outcome_predict"] = to_json(*res.m0_predict);
    if (res.m0_direction) models["outcome_direction"] = to_json(*res.m0_direction);
    if (res.m1_predict) models["treated_outcome"] = to_json(*res.m1_predict);
    if (res.propensity) models["propensity"] = to_json(*res.propensity);
    if (res.ridge_propensity) models["ridge_propensity"] = to_json(*res.ridge_propensity);
    json est = json::array();
    for (const auto& e : res.estimates) {
        json j = e.report ? to_json(*e.report) : json{{"estimator", e.name}, {"estimate", nullptr}};
        j["family"] = sim::family_name(e.family);
        j["w"] = jnum(e.w);
        if (!e.report) j["error"] = e.error;
        est.push_back(std::move(j));
    }
    json sweep = json::array();
    for (const auto& sp : res.sweep) sweep.push_back(sweep_json(sp));
    return json{{"settings",
                 {{"outcome_penalty", std::string(to_string(s.outcome_penalty))},
                  {"propensity_penalty", std::string(to_string(s.propensity_penalty))},
                  {"cv_folds", s.cv_folds},
                  {"normalize_weights", s.normalize},
                  {"w_grid", s.w_grid}}},
                {"models", models},
                {"family", res.family ? to_json(*res.family) : json(nullptr)},
                {"family_error", res.family_error.empty() ? json(nullptr) : json(res.family_error)},
                {"estimates", est},
                {"sweep", sweep}};
}

std::string estimation_csv(const sim::EstimationResult& res)
{
    std::string out = "estimator,family,w,estimate,weight_variance,max_weight,effective_sample_size,"
                      "fraction_extreme,floored,ps_variance,constraint_residual,bias_att,bias_ate,error\n";
    for (const auto& e : res.estimates) {
        const sim::SweepPoint* sp = nullptr;
        if (sim::is_w_indexed(e.family))
            for (const auto& p : res.sweep)
                if (p.w == e.w) sp = &p;
        auto opt = [](double v) { return std::isfinite(v) ? format_number(v) : std::string(); };
        double ps_var = std::numeric_limits<double>::quiet_NaN();
        if (sp) {
            switch (e.family) {
            case sim::Family::ipw_d:
            case sim::Family::aipw_d: ps_var = sp->ed_variance; break;
            case sim::Family::ipw_ridge:
            case sim::Family::aipw_ridge: ps_var = sp->ridge_variance; break;
            case sim::Family::ipw_clipvm:
            case sim::Family::aipw_clipvm: ps_var = sp->clip_variance; break;
            case sim::Family::ipw_d_oracle: ps_var = sp->oracle_ed_variance; break;
            default: break;
            }
        }
        std::string err = e.error;
        for (auto& ch : err)
            if (ch == ',' || ch == '\n') ch = ';';
        out += e.name + ',' + sim::family_name(e.family) + ',' + opt(e.w) + ',';
        if (e.report) {
            const auto& d = e.report->diagnostics;
            out += num(e.report->estimate) + ',' + num(d.weight_variance) + ',' + num(d.max_weight) + ',' +
                   num(d.effective_sample_size) + ',' + num(d.fraction_extreme) + ',' + std::to_string(d.floored);
        } else {
            out += ",,,,,";
        }
        out += ',' + opt(ps_var) + ',' + (sp ? opt(sp->constraint_residual) : std::string()) + ',' +
               (sp ? opt(sp->bias_att) : std::string()) + ',' + (sp ? opt(sp->bias_ate) : std::string()) + ',' + err +
               '\n';
    }
    return out;
}

void write_file(const std::string& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << content;
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

} // namespace deconf::io
