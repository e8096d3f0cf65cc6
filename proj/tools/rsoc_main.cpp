#include "rsoc/examples.hpp"
#include "rsoc/expr.hpp"
#include "rsoc/report_io.hpp"
#include "rsoc/value_function.hpp"
#include "rsoc/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace {

using nlohmann::json;
using namespace rsoc;

constexpr int kExitPass = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumericalGuard = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed,
                         const std::string& where) {
    if (!obj.is_object()) throw UsageError("config section '" + where + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw UsageError("unknown config key '" + it.key() + "' in " + where);
    }
}

json load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open config file '" + path + "'");
    json cfg;
    try {
        is >> cfg;
    } catch (const std::exception& e) {
        throw UsageError(std::string("config parse error: ") + e.what());
    }
    reject_unknown_keys(cfg, {"problem", "x0", "t", "policy", "mc", "hjb", "value_function",
                              "checks", "screen", "tolerances", "adjoints", "zbar", "checkpoints",
                              "witness_paths", "jet_h0", "jet_K", "output_dir"},
                        "top level");
    return cfg;
}

ControlProblem build_problem(const json& cfg) {
    if (!cfg.contains("problem")) throw UsageError("config needs a 'problem' entry");
    const json& p = cfg["problem"];
    if (p.is_string()) {
        try {
            return builtin_example(p.get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    reject_unknown_keys(p, {"label", "T", "t0", "b", "sigma", "f", "phi", "controls"}, "problem");
    for (const char* key : {"b", "sigma", "f", "phi", "controls"})
        if (!p.contains(key)) throw UsageError(std::string("custom problem needs '") + key + "'");
    ControlProblem out;
    out.label = p.value("label", "custom");
    out.T = p.value("T", 1.0);
    out.t0 = p.value("t0", 0.0);
    try {
        out.coeffs = coefficients_from_expressions(p["b"].get<std::string>(),
                                                   p["sigma"].get<std::string>(),
                                                   p["f"].get<std::string>(),
                                                   p["phi"].get<std::string>());
        std::vector<std::pair<double, double>> ivs;
        for (const auto& iv : p["controls"])
            ivs.emplace_back(iv.at(0).get<double>(), iv.at(1).get<double>());
        out.controls = IntervalUnion::of(std::move(ivs));
        out.validate();
    } catch (const UsageError&) {
        throw;
    } catch (const std::exception& e) {
        throw UsageError(std::string("bad custom problem: ") + e.what());
    }
    return out;
}

ControlPolicy build_policy(const json& cfg, const ControlProblem& problem, double x0) {
    json pol = cfg.value("policy", json{{"kind", "optimal"}});
    reject_unknown_keys(pol, {"kind", "u", "name", "expr"}, "policy");
    std::string kind = pol.value("kind", "optimal");
    if (kind == "constant") {
        if (!pol.contains("u")) throw UsageError("constant policy needs 'u'");
        return ControlPolicy::constant(pol["u"].get<double>());
    }
    if (kind == "feedback") {
        if (pol.contains("expr")) {
            auto e = std::make_shared<Expression>(parse(pol["expr"].get<std::string>()));
            for (const auto& v : e->free_variables())
                if (v != "t" && v != "x")
                    throw UsageError("feedback expression may only use t and x");
            return ControlPolicy::feedback(
                [e](double t, double x) {
                    return e->eval({{"t", t}, {"x", x}});
                },
                pol.value("name", pol["expr"].get<std::string>()));
        }
        std::string name = pol.value("name", "");
        if (problem.aux && problem.aux->feedback_optimal && name == problem.aux->feedback_name)
            return ControlPolicy::feedback(problem.aux->feedback_optimal, name);
        throw UsageError("unknown feedback policy '" + name + "'");
    }
    if (kind == "optimal") {
        if (problem.aux) {
            auto consts = problem.aux->optimal_constants
                              ? problem.aux->optimal_constants(x0)
                              : std::vector<double>{};
            if (!consts.empty()) return ControlPolicy::constant(consts.front());
            if (problem.aux->feedback_optimal)
                return ControlPolicy::feedback(problem.aux->feedback_optimal,
                                               problem.aux->feedback_name);
            return ControlPolicy::constant(problem.controls.hi());
        }
        throw UsageError("no registered optimal policy; give an explicit policy");
    }
    if (kind == "suboptimal") {
        if (problem.aux && std::isfinite(problem.aux->suboptimal_constant))
            return ControlPolicy::constant(problem.aux->suboptimal_constant);
        throw UsageError("no registered suboptimal policy for this problem");
    }
    throw UsageError("unknown policy kind '" + kind + "'");
}

struct McConfig {
    McSpec spec;
    bool picard = false;
};

McConfig build_mc(const json& cfg, const ControlProblem& problem,
                  std::optional<std::uint64_t> seed_override) {
    McConfig out;
    out.spec.basis = default_basis(problem);
    if (cfg.contains("mc")) {
        const json& mc = cfg["mc"];
        reject_unknown_keys(mc, {"paths", "steps", "seed", "threads", "basis_degree", "localize",
                                 "picard"},
                            "mc");
        out.spec.paths = mc.value("paths", out.spec.paths);
        out.spec.steps = mc.value("steps", out.spec.steps);
        out.spec.seed = mc.value("seed", out.spec.seed);
        out.spec.threads = mc.value("threads", 1);
        out.spec.basis.degree = mc.value("basis_degree", out.spec.basis.degree);
        if (mc.contains("localize") && !mc["localize"].is_null())
            out.spec.basis.localize_sign_x = mc["localize"].get<bool>();
        out.picard = mc.value("picard", false);
    }
    if (const char* env = std::getenv("RSOC_SEED")) out.spec.seed = std::strtoull(env, nullptr, 10);
    if (seed_override) out.spec.seed = *seed_override;
    return out;
}

GridSpec build_grid_spec(const json& cfg) {
    GridSpec gs;
    if (!cfg.contains("hjb")) return gs;
    const json& h = cfg["hjb"];
    reject_unknown_keys(h, {"x_lo", "x_hi", "dx", "dt", "control_step", "boundary", "store_times"},
                        "hjb");
    gs.x_lo = h.value("x_lo", gs.x_lo);
    gs.x_hi = h.value("x_hi", gs.x_hi);
    gs.dx = h.value("dx", gs.dx);
    gs.dt = h.value("dt", 0.0);
    gs.control_grid_step = h.value("control_step", gs.control_grid_step);
    gs.store_times = h.value("store_times", gs.store_times);
    std::string b = h.value("boundary", "linear-extrapolation");
    if (b == "linear-extrapolation")
        gs.boundary = BoundaryPolicy::LinearExtrapolation;
    else if (b == "dirichlet-closed-form")
        gs.boundary = BoundaryPolicy::DirichletClosedForm;
    else
        throw UsageError("unknown boundary policy '" + b + "'");
    return gs;
}

CheckOptions build_check_options(const json& cfg) {
    CheckOptions opts;
    opts.checkpoints = cfg.value("checkpoints", 5);
    opts.witness_paths = cfg.value("witness_paths", 32);
    opts.schedule.h0 = cfg.value("jet_h0", 0.05);
    opts.schedule.K = cfg.value("jet_K", 12);
    std::string adj = cfg.value("adjoints", "regression");
    if (adj == "regression")
        opts.adjoints = AdjointSource::Regression;
    else if (adj == "closed-form")
        opts.adjoints = AdjointSource::ClosedForm;
    else
        throw UsageError("unknown adjoints mode '" + adj + "'");
    std::string zb = cfg.value("zbar", "regression");
    if (zb == "regression")
        opts.zbar = ZbarMode::Regression;
    else if (zb == "value-identity")
        opts.zbar = ZbarMode::ValueIdentity;
    else
        throw UsageError("unknown zbar mode '" + zb + "'");
    if (cfg.contains("tolerances")) {
        for (auto it = cfg["tolerances"].begin(); it != cfg["tolerances"].end(); ++it)
            opts.tol[it.key()] = it.value().get<double>();
    }
    return opts;
}

json make_metadata(const json& cfg, std::uint64_t seed) {
    json meta;
    meta["schema"] = "rsoc-meta/1";
    auto now = std::chrono::system_clock::now().time_since_epoch();
    meta["timestamp_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    meta["seed"] = seed;
    meta["config"] = cfg;
    return meta;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_example_list() {
    for (const auto& id : builtin_example_ids()) std::cout << id << '\n';
    return kExitPass;
}

int cmd_example_describe(const std::string& id) {
    ControlProblem p = builtin_example(id);  // throws on unknown id
    std::cout << p.label << ": " << p.aux->description << "\n";
    std::cout << "controls: ";
    for (std::size_t k = 0; k < p.controls.intervals.size(); ++k) {
        const auto& iv = p.controls.intervals[k];
        std::cout << (k ? " U " : "") << "[" << iv.first << "," << iv.second << "]";
    }
    std::cout << "\nhorizon: [" << p.t0 << "," << p.T << "]\n";
    if (p.aux->feedback_optimal)
        std::cout << "optimal feedback: " << p.aux->feedback_name << "\n";
    return kExitPass;
}

int cmd_solve(const json& cfg, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override) {
    auto t_start = std::chrono::steady_clock::now();
    ControlProblem problem = build_problem(cfg);
    McConfig mc = build_mc(cfg, problem, seed_override);
    std::filesystem::create_directories(out_dir);
    json meta = make_metadata(cfg, mc.spec.seed);
    meta["problem"] = problem.label;

    if (cfg.contains("hjb")) {
        GridSpec gs = build_grid_spec(cfg);
        ValueGrid grid = solve_hjb(problem, gs);
        write_value_grid_csv(out_dir + "/value_grid.csv", grid);
        std::vector<double> xs(grid.x_nodes.data(), grid.x_nodes.data() + grid.x_nodes.size());
        std::vector<double> vs(grid.v.cols());
        for (Eigen::Index i = 0; i < grid.v.cols(); ++i) vs[i] = grid.v(0, i);
        write_curve(out_dir + "/plot_value_t0.dat", xs, vs);
        RegularityReport reg = regularity_report(grid);
        meta["hjb"] = {{"stability", stability_to_json(grid.stability)},
                       {"lipschitz_const", reg.lipschitz_const},
                       {"growth_const", reg.growth_const},
                       {"rows", grid.v.rows()},
                       {"cols", grid.v.cols()}};
        std::cout << "hjb: solved " << grid.v.cols() << " nodes x " << grid.stability.steps
                  << " steps (dt=" << grid.stability.dt_used
                  << ", bound=" << grid.stability.bound << ")\n";
    }

    if (cfg.contains("policy") || cfg.contains("mc")) {
        double x0 = cfg.value("x0", 1.0);
        double t = cfg.value("t", problem.t0);
        ControlPolicy policy = build_policy(cfg, problem, x0);
        TimeGrid grid(t, problem.T, mc.spec.steps);
        NoiseBundle noise = make_noise(grid, mc.spec.paths, mc.spec.seed);
        PathBundle paths = simulate_forward(problem, policy, grid, noise, x0, mc.spec.threads);
        BsdeOptions bopts;
        bopts.picard_correction = mc.picard;
        BsdeSolution cost = solve_bsde(problem, paths, mc.spec.basis, bopts);
        FirstOrderAdjoint first = solve_first_order_adjoint(problem, paths, cost, mc.spec.basis);
        SecondOrderAdjoint second =
            solve_second_order_adjoint(problem, paths, cost, first, mc.spec.basis);
        FbsdeAdjoint fbsde = solve_fbsde_adjoint(problem, paths, cost, mc.spec.basis);
        write_paths_csv(out_dir + "/paths.csv", paths);
        write_cost_csv(out_dir + "/cost.csv", paths, cost);
        write_adjoints_csv(out_dir + "/adjoints.csv", paths, &first, &second, &fbsde);
        double y0 = cost.Y(0, 0);
        meta["cost"] = {{"J", -y0},
                        {"policy", policy.name()},
                        {"x0", x0},
                        {"t", t},
                        {"failed_paths", paths.n_failed},
                        {"sign_flips", paths.sign_flips}};
        std::cout << "cost: J(" << t << "," << x0 << "; " << policy.name() << ") = " << -y0
                  << " (failed paths: " << paths.n_failed << ")\n";
    }

    meta["runtime_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::ofstream(out_dir + "/metadata.json") << meta.dump(2) << '\n';
    return kExitPass;
}

int cmd_verify(const json& cfg, std::vector<std::string> suites, const std::string& out_dir,
               std::optional<std::uint64_t> seed_override) {
    auto t_start = std::chrono::steady_clock::now();
    ControlProblem problem = build_problem(cfg);
    McConfig mc = build_mc(cfg, problem, seed_override);
    CheckOptions opts = build_check_options(cfg);
    double x0 = cfg.value("x0", 1.0);
    double t = cfg.value("t", problem.t0);

    if (suites.empty()) {
        if (cfg.contains("checks"))
            suites = cfg["checks"].get<std::vector<std::string>>();
        else {
            suites = {"assumptions", "thm31", "thm32", "thm33", "mp"};
            if (problem.aux && problem.aux->value_smooth) {
                suites.push_back("smooth");
                suites.push_back("dpp2mp");
            }
            if (problem.label == "ex33") suites.push_back("strict-gap");
        }
    }

    // Value function per configured provenance.
    std::string vf_mode = cfg.value("value_function",
                                    problem.aux && problem.aux->V ? "closed-form" : "grid");
    ValueFunction V = [&] {
        if (vf_mode == "closed-form") return ValueFunction::from_example(problem);
        if (vf_mode == "grid") {
            auto grid = std::make_shared<ValueGrid>(solve_hjb(problem, build_grid_spec(cfg)));
            return ValueFunction::from_grid(grid);
        }
        throw UsageError("unknown value_function mode '" + vf_mode + "'");
    }();

    ControlPolicy policy = build_policy(cfg, problem, x0);
    TimeGrid grid(t, problem.T, mc.spec.steps);
    NoiseBundle noise = make_noise(grid, mc.spec.paths, mc.spec.seed);
    PathBundle paths = simulate_forward(problem, policy, grid, noise, x0, mc.spec.threads);
    BsdeSolution cost = solve_bsde(problem, paths, mc.spec.basis);
    FirstOrderAdjoint first = solve_first_order_adjoint(problem, paths, cost, mc.spec.basis);
    SecondOrderAdjoint second =
        solve_second_order_adjoint(problem, paths, cost, first, mc.spec.basis);
    FbsdeAdjoint fbsde = solve_fbsde_adjoint(problem, paths, cost, mc.spec.basis);

    TrajectoryCase tc;
    tc.problem = &problem;
    tc.paths = &paths;
    tc.cost = &cost;
    tc.first = &first;
    tc.second = &second;
    tc.fbsde = &fbsde;
    tc.V = &V;

    std::vector<RelationReport> reports;
    for (const auto& suite : suites) {
        if (suite == "assumptions") {
            SampleSpec sspec;
            sspec.t_lo = problem.t0;
            sspec.t_hi = problem.T;
            AssumptionReport ar = check_assumptions(problem, sspec);
            RelationReport rep;
            rep.check_id = "assumptions";
            rep.v_provenance = "n/a";
            double tol = opts.tol_or("assumptions", 1e-6);
            rep.tolerances["assumptions"] = tol;
            for (const auto& d : ar.derivative_checks)
                rep.add(problem.t0, -1,
                        d.max_rel_mismatch <= tol ? SampleStatus::Pass : SampleStatus::Fail,
                        d.max_rel_mismatch, d.name);
            reports.push_back(std::move(rep));
        } else if (suite == "thm31") {
            reports.push_back(check_theorem_31(tc, opts));
        } else if (suite == "thm32") {
            reports.push_back(check_theorem_32(tc, opts));
        } else if (suite == "thm33") {
            reports.push_back(check_theorem_33(tc, opts));
        } else if (suite == "smooth") {
            reports.push_back(check_smooth_case(tc, opts));
        } else if (suite == "mp") {
            reports.push_back(check_maximum_principle(tc, opts));
        } else if (suite == "dpp2mp") {
            reports.push_back(derive_mp_from_dpp(tc, opts));
        } else if (suite == "strict-gap") {
            if (problem.label != "ex33")
                throw UsageError("strict-gap is defined for ex33 only");
            reports.push_back(strict_gap_check(tc, opts));
        } else if (suite == "screen") {
            json sc = cfg.value("screen", json::object());
            reject_unknown_keys(sc, {"family", "step", "include_feedback"}, "screen");
            double step = sc.value("step", 0.05);
            std::vector<ControlPolicy> family = constant_family(problem, step);
            if (sc.value("include_feedback", false)) {
                if (!(problem.aux && problem.aux->feedback_optimal))
                    throw UsageError("no registered feedback policy to include");
                family.push_back(ControlPolicy::feedback(problem.aux->feedback_optimal,
                                                         problem.aux->feedback_name));
            }
            CandidateSet cs = screen_candidates(problem, V, family, t, x0, mc.spec, opts);
            RelationReport rep;
            rep.check_id = "screen";
            rep.v_provenance = V.provenance();
            for (const auto& cand : cs.candidates)
                rep.add(t, -1, cand.survived ? SampleStatus::Pass : SampleStatus::VacuousPass,
                        cand.margin, cand.name);
            if (cs.survivors().empty())
                rep.add(t, -1, SampleStatus::Fail, 1.0, "no-survivors");
            reports.push_back(std::move(rep));
        } else {
            throw UsageError("unknown check suite '" + suite + "'");
        }
    }

    std::filesystem::create_directories(out_dir);
    json envelope = report_envelope(reports);
    envelope["runtime_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    envelope["seed"] = mc.spec.seed;
    std::ofstream(out_dir + "/report.json") << envelope.dump(2) << '\n';
    write_margins_csv(out_dir + "/margins.csv", reports);

    bool all = true;
    std::cout << std::left << std::setw(14) << "check" << std::setw(8) << "status"
              << std::setw(22) << "worst violation" << "pass/vacuous/fail/skip\n";
    for (const auto& r : reports) {
        all = all && r.passed();
        std::cout << std::left << std::setw(14) << r.check_id << std::setw(8)
                  << (r.passed() ? "pass" : "FAIL") << std::setw(22) << r.max_violation
                  << r.n_pass << "/" << r.n_vacuous << "/" << r.n_fail << "/" << r.n_skipped
                  << "\n";
    }
    return all ? kExitPass : kExitVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recursive stochastic optimal control toolkit"};
    app.require_subcommand(1);

    auto* ex = app.add_subcommand("example", "list or describe the builtin problems");
    bool list = false;
    std::string describe_id;
    ex->add_flag("--list,-l", list, "list builtin ids");
    ex->add_option("--describe,-d", describe_id, "describe one builtin problem");

    std::string cfg_path, out_dir_flag;
    std::string seed_flag;
    auto* solve = app.add_subcommand("solve", "run the solvers per config and write artifacts");
    solve->add_option("--config,-c", cfg_path, "JSON config file")->required();
    solve->add_option("--output-dir,-o", out_dir_flag, "output directory override");
    solve->add_option("--seed", seed_flag, "seed override");

    std::string verify_cfg, verify_out, verify_seed, suite_csv;
    auto* verify = app.add_subcommand("verify", "run the relation checks per config");
    verify->add_option("--config,-c", verify_cfg, "JSON config file")->required();
    verify->add_option("--suite,-s", suite_csv, "comma-separated check list");
    verify->add_option("--output-dir,-o", verify_out, "output directory override");
    verify->add_option("--seed", verify_seed, "seed override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitPass : kExitUsage;
    }

    try {
        if (ex->parsed()) {
            if (list || describe_id.empty()) return cmd_example_list();
            return cmd_example_describe(describe_id);
        }
        auto parse_seed = [](const std::string& s) -> std::optional<std::uint64_t> {
            if (s.empty()) return std::nullopt;
            return std::strtoull(s.c_str(), nullptr, 10);
        };
        if (solve->parsed()) {
            json cfg = load_config(cfg_path);
            std::string out = !out_dir_flag.empty() ? out_dir_flag : cfg.value("output_dir", "out");
            return cmd_solve(cfg, out, parse_seed(seed_flag));
        }
        if (verify->parsed()) {
            json cfg = load_config(verify_cfg);
            std::string out = !verify_out.empty() ? verify_out : cfg.value("output_dir", "out");
            std::vector<std::string> suites;
            if (!suite_csv.empty()) {
                std::stringstream ss(suite_csv);
                std::string item;
                while (std::getline(ss, item, ',')) suites.push_back(item);
            }
            return cmd_verify(cfg, suites, out, parse_seed(verify_seed));
        }
    } catch (const StabilityError& e) {
        std::cerr << "numerical guard: " << e.what() << "\n"
                  << "stability bound: " << e.bound << "\n";
        return kExitNumericalGuard;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitVerifyFail;
    }
    return kExitUsage;
}
