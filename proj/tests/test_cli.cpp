#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    std::string cmd = env_prefix + std::string(RSOC_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    int status = pclose(pipe);
    return {WEXITSTATUS(status), out};
}

fs::path sandbox() {
    fs::path dir = fs::temp_directory_path() / "rsoc_cli_test";
    fs::create_directories(dir);
    return dir;
}

std::string write_config(const json& cfg, const std::string& name) {
    fs::path p = sandbox() / name;
    std::ofstream(p) << cfg.dump(2);
    return p.string();
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("example subcommand") {
    RunResult list = run_cli("example --list");
    CHECK(list.exit_code == 0);
    CHECK(list.output.find("ex31") != std::string::npos);
    CHECK(list.output.find("ex32") != std::string::npos);
    CHECK(list.output.find("ex33") != std::string::npos);

    RunResult desc = run_cli("example --describe ex32");
    CHECK(desc.exit_code == 0);
    CHECK(desc.output.find("[-3,-2] U [1,2]") != std::string::npos);
    CHECK(desc.output.find("ln ch x") != std::string::npos);

    RunResult unknown = run_cli("example --describe ex99");
    CHECK(unknown.exit_code == 2);
}

TEST_CASE("solve writes a value grid whose (0.5, -1) entry matches the closed form") {
    json cfg;
    cfg["problem"] = "ex31";
    cfg["hjb"] = {{"x_lo", -3.0}, {"x_hi", 3.0}, {"dx", 0.02}, {"control_step", 0.05},
                  {"store_times", 51}};
    cfg["output_dir"] = (sandbox() / "out_solve").string();
    std::string cfg_path = write_config(cfg, "solve_ex31.json");

    RunResult r = run_cli("solve --config " + cfg_path);
    CHECK(r.exit_code == 0);

    // Pick the nearest stored (t, x) row to (0.5, -1) out of the CSV.
    std::ifstream is(sandbox() / "out_solve" / "value_grid.csv");
    REQUIRE(is.good());
    std::string line;
    std::getline(is, line);
    CHECK(line == "t,x,v");
    double best = 1e300, value = 0;
    while (std::getline(is, line)) {
        double t, x, v;
        REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf", &t, &x, &v) == 3);
        double d = std::abs(t - 0.5) + std::abs(x + 1.0);
        if (d < best) {
            best = d;
            value = v;
        }
    }
    CHECK(value == doctest::Approx(0.60653).epsilon(3e-2));

    json meta = json::parse(slurp(sandbox() / "out_solve" / "metadata.json"));
    CHECK(meta["schema"] == "rsoc-meta/1");
    CHECK(meta["hjb"]["stability"]["bound"].get<double>() > 0.0);
}

TEST_CASE("solve rejects an unstable dt with exit code 3 and prints the bound") {
    json cfg;
    cfg["problem"] = "ex31";
    cfg["hjb"] = {{"x_lo", -3.0}, {"x_hi", 3.0}, {"dx", 0.02}, {"dt", 0.05}};
    cfg["output_dir"] = (sandbox() / "out_unstable").string();
    RunResult r = run_cli("solve --config " + write_config(cfg, "unstable.json"));
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("stability bound") != std::string::npos);
}

TEST_CASE("config schema rejects unknown keys") {
    json cfg;
    cfg["problem"] = "ex31";
    cfg["frobnicate"] = 1;
    RunResult r = run_cli("solve --config " + write_config(cfg, "bad_key.json"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("frobnicate") != std::string::npos);
}

TEST_CASE("verify: ex32 suite passes, ex31 negative control fails") {
    json cfg;
    cfg["problem"] = "ex32";
    cfg["x0"] = 0.5;
    cfg["policy"] = {{"kind", "constant"}, {"u", -2.0}};
    cfg["mc"] = {{"paths", 4000}, {"steps", 80}, {"seed", 11}, {"basis_degree", 6}};
    cfg["checks"] = {"assumptions", "thm31", "thm33", "mp", "smooth"};
    cfg["output_dir"] = (sandbox() / "out_v32").string();
    RunResult good = run_cli("verify --config " + write_config(cfg, "v32.json"));
    CHECK(good.exit_code == 0);

    json rep = json::parse(slurp(sandbox() / "out_v32" / "report.json"));
    CHECK(rep["schema"] == "rsoc-report/1");
    CHECK(rep["passed"].get<bool>());

    json bad;
    bad["problem"] = "ex31";
    bad["x0"] = -1.0;
    bad["policy"] = {{"kind", "suboptimal"}};
    bad["mc"] = {{"paths", 3000}, {"steps", 60}, {"seed", 11}};
    bad["checks"] = {"thm31", "mp"};
    bad["output_dir"] = (sandbox() / "out_vneg").string();
    RunResult neg = run_cli("verify --config " + write_config(bad, "vneg.json"));
    CHECK(neg.exit_code == 1);
}

TEST_CASE("verify: thm33 at the ex31 degenerate start has all-zero margins") {
    json cfg;
    cfg["problem"] = "ex31";
    cfg["x0"] = 0.0;
    cfg["policy"] = {{"kind", "constant"}, {"u", 1.0}};
    cfg["mc"] = {{"paths", 1500}, {"steps", 50}, {"seed", 5}};
    cfg["output_dir"] = (sandbox() / "out_zero").string();
    RunResult r = run_cli("verify --config " + write_config(cfg, "vzero.json") +
                          " --suite thm33");
    CHECK(r.exit_code == 0);
    json rep = json::parse(slurp(sandbox() / "out_zero" / "report.json"));
    for (const auto& s : rep["checks"][0]["samples"])
        CHECK(s["violation"].get<double>() <= 1e-9);
}

TEST_CASE("identical config and seed give byte-identical CSV artifacts") {
    json cfg;
    cfg["problem"] = "ex31";
    cfg["x0"] = -1.0;
    cfg["policy"] = {{"kind", "constant"}, {"u", -1.0}};
    cfg["mc"] = {{"paths", 500}, {"steps", 40}, {"seed", 77}};
    std::string cfg_path = write_config(cfg, "repeat.json");

    fs::path o1 = sandbox() / "rep1", o2 = sandbox() / "rep2";
    CHECK(run_cli("solve --config " + cfg_path + " --output-dir " + o1.string()).exit_code == 0);
    CHECK(run_cli("solve --config " + cfg_path + " --output-dir " + o2.string()).exit_code == 0);
    for (const char* name : {"paths.csv", "cost.csv", "adjoints.csv"})
        CHECK(slurp(o1 / name) == slurp(o2 / name));
}

TEST_CASE("RSOC_SEED env and --seed flag override the config seed") {
    json cfg;
    cfg["problem"] = "ex31";
    cfg["x0"] = -1.0;
    cfg["policy"] = {{"kind", "constant"}, {"u", -1.0}};
    cfg["mc"] = {{"paths", 200}, {"steps", 20}, {"seed", 1}};
    std::string cfg_path = write_config(cfg, "seedcfg.json");

    fs::path oa = sandbox() / "seed_a", ob = sandbox() / "seed_b", oc = sandbox() / "seed_c";
    CHECK(run_cli("solve --config " + cfg_path + " --seed 99 --output-dir " + oa.string())
              .exit_code == 0);
    CHECK(run_cli("solve --config " + cfg_path + " --seed 99 --output-dir " + ob.string())
              .exit_code == 0);
    CHECK(slurp(oa / "paths.csv") == slurp(ob / "paths.csv"));
    json meta_a = json::parse(slurp(oa / "metadata.json"));
    CHECK(meta_a["seed"].get<std::uint64_t>() == 99);

    CHECK(run_cli("solve --config " + cfg_path + " --output-dir " + oc.string(),
                  "RSOC_SEED=55 ")
              .exit_code == 0);
    json meta_c = json::parse(slurp(oc / "metadata.json"));
    CHECK(meta_c["seed"].get<std::uint64_t>() == 55);
}
