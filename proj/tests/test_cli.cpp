#include "deconf/config.hpp"
#include "deconf/io.hpp"
#include "deconf/simulation.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace deconf;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("deconf_cli_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args)
{
    const std::string cmd = std::string(DECONF_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string error_of(const std::string& text)
{
    try {
        config::parse(text, "cfg.json");
    } catch (const config::ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_CASE("config parsing and rejection")
{
    const auto cfg = config::parse(R"({"seed": 5, "replications": 3, "w_grid": [-1, 1],
        "grid": {"p": [50, 60], "s_T": [1, 4]}, "penalty": "ridge"})");
    CHECK(cfg.seed == 5);
    CHECK(cfg.grid.replications == 3);
    CHECK(cfg.grid.cells.size() == 4);
    CHECK(cfg.grid.cells[1].dgp.s_T == 4);
    CHECK(cfg.grid.cells[2].dgp.p == 60);
    CHECK(cfg.grid.cells[0].propensity_penalty == Penalty::ridge);

    const auto e1 = error_of("{\n  \"seed\": 1,\n  \"sed\": 2\n}");
    CHECK(e1.find("cfg.json:3") != std::string::npos);
    CHECK(e1.find("sed") != std::string::npos);
    const auto e2 = error_of(R"({"dgp": {"n": 100, "sgima": 1}})");
    CHECK(e2.find("dgp.sgima") != std::string::npos);
    CHECK(!error_of(R"({"w_grid": [0, 1.5]})").empty());
    CHECK(!error_of(R"({"replications": 0})").empty());
    CHECK(!error_of(R"({"estimators": ["ipw", "magic"]})").empty());
    CHECK(!error_of(R"({"seed": "x"})").empty());
    CHECK(!error_of("{ not json").empty());
    CHECK(config::schema().find("w_grid") != std::string::npos);

    auto shipped = config::load(std::string(DECONF_SOURCE_DIR) + "/configs/default.json");
    CHECK(shipped.grid.cells.size() == 16);
    CHECK(shipped.grid.replications == 100);
    CHECK(shipped.grid.settings.w_grid == std::vector<double>{-1, -0.5, 0, 0.5, 1});
}

TEST_CASE("seed override re-derives implicit coefficient seeds")
{
    auto a = config::parse(R"({"seed": 1})");
    auto b = config::parse(R"({"seed": 2})");
    config::override_seed(a, 2);
    CHECK(a.grid.cells[0].dgp.coef_seed == b.grid.cells[0].dgp.coef_seed);
    auto fixed = config::parse(R"({"seed": 1, "dgp": {"coef_seed": 9}})");
    config::override_seed(fixed, 2);
    CHECK(fixed.grid.cells[0].dgp.coef_seed == 9);
}

TEST_CASE("dataset CSV round trip and errors")
{
    std::mt19937_64 rng(1);
    sim::DGPConfig c;
    c.n = 40;
    c.p = 20;
    c.coef_seed = 3;
    const auto d = sim::generate(sim::resolve(c), rng);
    const auto text = io::dataset_csv(d);
    CHECK(text.rfind("y,t,x1,x2,", 0) == 0);
    const auto back = io::parse_dataset_csv(text);
    CHECK((back.design.values() - d.design.values()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.outcome - d.outcome).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.treatment - d.treatment).cwiseAbs().maxCoeff() == 0.0);

    auto msg = [](const std::string& t) {
        try {
            io::parse_dataset_csv(t, "d.csv");
        } catch (const ValidationError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(msg("y,t,x1\n1,0,2\n2,2,3\n3,1,1\n").find("row 2") != std::string::npos);
    CHECK(!msg("y,t,x1\n1,1,2\n2,1,3\n").empty());
    CHECK(!msg("y,t,x1\n1,0,2\n1,1,3\n").empty());
    CHECK(!msg("y,x1,t\n1,0,2\n2,1,3\n").empty());
    CHECK(msg("y,t,x1\n1,0,2\n2,1\n3,1,1\n").find("row 2") != std::string::npos);
    CHECK(msg("y,t,x1\n1,0,2\n2,1,abc\n3,0,1\n").find("row 2") != std::string::npos);

    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0, 6.02e23})
        CHECK(std::stod(io::format_number(v)) == v);
    CHECK(io::format_number(std::nan("")) == "nan");
}

TEST_CASE("command-line behaviour")
{
    const fs::path dir = scratch("main");
    const std::string smoke = std::string(DECONF_SOURCE_DIR) + "/configs/smoke.json";
    CHECK(run("verify") == 0);
    CHECK(run("--print-schema") == 0);

    // Thread count does not change any output byte.
    CHECK(run("simulate --config " + smoke + " --out " + (dir / "t1").string() + " --threads 1") == 0);
    CHECK(run("simulate --config " + smoke + " --out " + (dir / "t2").string() + " --threads 2") == 0);
    for (const char* f : {"summary.csv", "sweep.csv", "shrinkage.csv", "runs.jsonl"}) {
        CHECK(!slurp(dir / "t1" / f).empty());
        CHECK(slurp(dir / "t1" / f) == slurp(dir / "t2" / f));
    }

    // --replications 1 --cells 1: SD column is zero.
    CHECK(run("simulate --config " + smoke + " --out " + (dir / "one").string() + " --replications 1 --cells 1") == 0);
    std::istringstream summary(slurp(dir / "one" / "summary.csv"));
    std::string line;
    std::getline(summary, line);
    int rows = 0;
    while (std::getline(summary, line)) {
        std::vector<std::string> cols;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cols.push_back(cell);
        REQUIRE(cols.size() >= 14);
        CHECK(cols[9] == "1");
        CHECK(std::stod(cols[13]) == 0.0);
        ++rows;
    }
    CHECK(rows > 0);

    // Estimating on an exported dataset reproduces the simulation estimates.
    {
        std::ofstream cfg(dir / "export.json");
        cfg << R"({"seed": 7, "replications": 1, "cv_folds": 5, "w_grid": [-1, -0.5, 0, 0.5, 1],
                   "export_datasets": true, "dgp": {"n": 200, "p": 30, "s_T": 4, "s_Y": 5}})";
    }
    CHECK(run("simulate --config " + (dir / "export.json").string() + " --out " + (dir / "exp").string()) == 0);
    std::istringstream runs(slurp(dir / "exp" / "runs.jsonl"));
    std::getline(runs, line);
    const auto rec = nlohmann::json::parse(line);
    {
        std::ofstream cfg(dir / "estimate.json");
        cfg << R"({"seed": 7, "cv_folds": 5, "w_grid": [-1, -0.5, 0, 0.5, 1], "covariate_transform": "none", "fit_seed": )"
            << rec["fit_seed"].get<std::uint64_t>() << "}";
    }
    CHECK(run("estimate --config " + (dir / "estimate.json").string() + " --data " +
              (dir / "exp" / "datasets" / "cell0_rep0.csv").string() + " --out " + (dir / "est").string()) == 0);
    const auto est = nlohmann::json::parse(slurp(dir / "est" / "estimates.json"));
    int compared = 0;
    for (const auto& e : est["estimates"]) {
        const std::string name = e["estimator"];
        const std::string family = e["family"];
        const double w = e["w"].is_null() ? 0.0 : e["w"].get<double>();
        const std::string key = sim::is_w_indexed(sim::parse_family(family)) ? sim::estimator_name(sim::parse_family(family), w)
                                                                             : family;
        REQUIRE(rec["estimates"].contains(key));
        CHECK(std::abs(e["estimate"].get<double>() - rec["estimates"][key].get<double>()) <= 1e-12);
        ++compared;
    }
    CHECK(compared == 6 + 2 * 5);
    CHECK(run("sweep --data " + (dir / "exp" / "datasets" / "cell0_rep0.csv").string() + " --out " + (dir / "sw").string()) == 0);
    CHECK(fs::exists(dir / "sw" / "estimates.csv"));

    // Exit codes.
    {
        std::ofstream bad(dir / "bad.json");
        bad << R"({"seed": 1, "colour": 2})";
        std::ofstream badw(dir / "badw.json");
        badw << R"({"w_grid": [-2]})";
        std::ofstream csv(dir / "bad.csv");
        csv << "y,t,x1\n1,0,2\n2,2,3\n";
    }
    CHECK(run("simulate --config " + (dir / "bad.json").string() + " --out " + (dir / "x").string()) == 1);
    CHECK(run("simulate --config " + (dir / "badw.json").string() + " --out " + (dir / "x").string()) == 1);
    CHECK(run("estimate --data " + (dir / "bad.csv").string() + " --out " + (dir / "x").string()) == 1);
    CHECK(run("simulate --threads 0 --out " + (dir / "x").string()) == 1);
    CHECK(run("frobnicate") == 1);
}
