#include "rsoc/report_io.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace rsoc {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    return os;
}

}  // namespace

void write_paths_csv(const std::string& path, const PathBundle& paths) {
    auto os = open_out(path);
    os << "path,step,t,X,u,dW\n";
    const int N = paths.steps();
    for (int m = 0; m < paths.paths(); ++m) {
        for (int i = 0; i <= N; ++i) {
            os << m << ',' << i << ',' << format_double(paths.grid.node(i)) << ','
               << format_double(paths.X(m, i)) << ',';
            if (i < N)
                os << format_double(paths.U(m, i)) << ',' << format_double(paths.dW(m, i));
            else
                os << ',';
            os << '\n';
        }
    }
}

void write_cost_csv(const std::string& path, const PathBundle& paths, const BsdeSolution& cost) {
    auto os = open_out(path);
    os << "path,step,t,Y,Z\n";
    const int N = paths.steps();
    for (int m = 0; m < paths.paths(); ++m) {
        for (int i = 0; i <= N; ++i) {
            os << m << ',' << i << ',' << format_double(paths.grid.node(i)) << ','
               << format_double(cost.Y(m, i)) << ',';
            if (i < N) os << format_double(cost.Z(m, i));
            os << '\n';
        }
    }
}

void write_adjoints_csv(const std::string& path, const PathBundle& paths,
                        const FirstOrderAdjoint* first, const SecondOrderAdjoint* second,
                        const FbsdeAdjoint* fbsde) {
    auto os = open_out(path);
    os << "path,step,t,p,q,P,Q,pstar,qstar,kstar\n";
    const int N = paths.steps();
    auto cell = [&](bool have, double v) {
        if (have) os << format_double(v);
        os << ',';
    };
    for (int m = 0; m < paths.paths(); ++m) {
        for (int i = 0; i <= N; ++i) {
            os << m << ',' << i << ',' << format_double(paths.grid.node(i)) << ',';
            cell(first != nullptr, first ? first->p(m, i) : 0.0);
            cell(first && i < N, first && i < N ? first->q(m, i) : 0.0);
            cell(second != nullptr, second ? second->P(m, i) : 0.0);
            cell(second && i < N, second && i < N ? second->Q(m, i) : 0.0);
            cell(fbsde != nullptr, fbsde ? fbsde->pstar(m, i) : 0.0);
            cell(fbsde != nullptr, fbsde ? fbsde->qstar(m, i) : 0.0);
            if (fbsde && i < N) os << format_double(fbsde->kstar(m, i));
            os << '\n';
        }
    }
}

void write_value_grid_csv(const std::string& path, const ValueGrid& grid) {
    auto os = open_out(path);
    os << "t,x,v\n";
    for (Eigen::Index r = 0; r < grid.v.rows(); ++r)
        for (Eigen::Index i = 0; i < grid.v.cols(); ++i)
            os << format_double(grid.t_nodes[r]) << ',' << format_double(grid.x_nodes[i]) << ','
               << format_double(grid.v(r, i)) << '\n';
}

void write_curve(const std::string& path, const std::vector<double>& x,
                 const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("curve arrays differ in length");
    auto os = open_out(path);
    for (std::size_t k = 0; k < x.size(); ++k)
        os << format_double(x[k]) << ' ' << format_double(y[k]) << '\n';
}

nlohmann::json to_json(const RelationReport& rep) {
    nlohmann::json j;
    j["check"] = rep.check_id;
    j["passed"] = rep.passed();
    j["sample_times"] = rep.sample_times;
    j["tolerances"] = rep.tolerances;
    j["value_function"] = rep.v_provenance;
    j["counts"] = {{"pass", rep.n_pass},
                   {"vacuous_pass", rep.n_vacuous},
                   {"fail", rep.n_fail},
                   {"skipped", rep.n_skipped}};
    j["max_violation"] = rep.max_violation;
    if (!rep.metrics.empty()) j["metrics"] = rep.metrics;
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : rep.samples)
        samples.push_back({{"s", s.s},
                           {"path", s.path},
                           {"status", to_string(s.status)},
                           {"violation", s.violation},
                           {"quantity", s.quantity}});
    j["samples"] = std::move(samples);
    return j;
}

nlohmann::json to_json(const AssumptionReport& rep) {
    nlohmann::json j;
    j["samples"] = rep.samples;
    nlohmann::json checks = nlohmann::json::object();
    for (const auto& d : rep.derivative_checks) checks[d.name] = d.max_rel_mismatch;
    j["derivative_mismatch"] = std::move(checks);
    j["max_rel_mismatch"] = rep.max_rel_mismatch();
    j["lipschitz"] = {{"b", rep.lipschitz_b},
                      {"sigma", rep.lipschitz_sigma},
                      {"f", rep.lipschitz_f},
                      {"phi", rep.lipschitz_phi}};
    j["bounds"] = {{"first_derivatives", rep.bound_first_derivatives},
                   {"second_derivatives", rep.bound_second_derivatives}};
    return j;
}

nlohmann::json stability_to_json(const StabilityRecord& rec) {
    return {{"bound", rec.bound},
            {"dt_used", rec.dt_used},
            {"steps", rec.steps},
            {"fast_sup_path", rec.fast_sup_path}};
}

nlohmann::json report_envelope(const std::vector<RelationReport>& reports) {
    nlohmann::json j;
    j["schema"] = "rsoc-report/1";
    bool all = true;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) {
        all = all && r.passed();
        arr.push_back(to_json(r));
    }
    j["passed"] = all;
    j["checks"] = std::move(arr);
    return j;
}

void write_margins_csv(const std::string& path, const std::vector<RelationReport>& reports) {
    auto os = open_out(path);
    os << "check,s,path,quantity,status,violation\n";
    for (const auto& r : reports)
        for (const auto& s : r.samples)
            os << r.check_id << ',' << format_double(s.s) << ',' << s.path << ',' << s.quantity
               << ',' << to_string(s.status) << ',' << format_double(s.violation) << '\n';
}

}  // namespace rsoc
