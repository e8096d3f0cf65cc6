#pragma once

#include "rsoc/bsde.hpp"
#include "rsoc/hjb.hpp"
#include "rsoc/jets.hpp"
#include "rsoc/value_function.hpp"

#include <map>
#include <string>
#include <vector>

namespace rsoc {

enum class SampleStatus { Pass, VacuousPass, Fail, Skipped };
const char* to_string(SampleStatus s);

struct SampleRecord {
    double s = 0.0;
    int path = -1;
    SampleStatus status = SampleStatus::Pass;
    double violation = 0.0;
    std::string quantity;
};

/// Pass/fail record of one relation check across checkpoint times and
/// witness paths, with the worst violation magnitude.
struct RelationReport {
    std::string check_id;
    std::vector<double> sample_times;
    std::vector<SampleRecord> samples;
    std::map<std::string, double> tolerances;
    std::string v_provenance;
    std::map<std::string, double> metrics;
    int n_pass = 0, n_vacuous = 0, n_fail = 0, n_skipped = 0;
    double max_violation = 0.0;

    bool passed() const { return n_fail == 0 && (n_pass + n_vacuous) > 0; }
    void add(double s, int path, SampleStatus status, double violation, std::string quantity);
};

enum class AdjointSource { Regression, ClosedForm };
enum class ZbarMode { Regression, ValueIdentity };

struct CheckOptions {
    int checkpoints = 5;
    int witness_paths = 32;
    JetSchedule schedule;
    AdjointSource adjoints = AdjointSource::Regression;
    ZbarMode zbar = ZbarMode::Regression;
    double control_grid_step = 1e-3;
    std::map<std::string, double> tol;

    double tol_or(const std::string& key, double fallback) const {
        auto it = tol.find(key);
        return it == tol.end() ? fallback : it->second;
    }
};

/// Assembled inputs for one candidate policy's verification run. Members a
/// given check does not consume may stay null.
struct TrajectoryCase {
    const ControlProblem* problem = nullptr;
    const PathBundle* paths = nullptr;
    const BsdeSolution* cost = nullptr;
    const FirstOrderAdjoint* first = nullptr;
    const SecondOrderAdjoint* second = nullptr;
    const FbsdeAdjoint* fbsde = nullptr;
    const ValueFunction* V = nullptr;
};

std::vector<double> default_checkpoints(double t0, double T, int count);

/// Spatial jet inclusions (3.2): (-p(s), -P(s)) in the super-jet, and the
/// sub-jet (when nonempty) pinned to -p with threshold <= -P.
RelationReport check_theorem_31(const TrajectoryCase& c, const CheckOptions& opts);

/// FBSDE transform relation: -p*(q*)^{-1} = p pathwise, and p*(q*)^{-1}
/// inside the first-order jet band of V.
RelationReport check_theorem_32(const TrajectoryCase& c, const CheckOptions& opts);

/// Right time-jet inclusions (3.9)-(3.10) via the H1 slope function.
RelationReport check_theorem_33(const TrajectoryCase& c, const CheckOptions& opts);

/// Smooth-case identities (3.12)-(3.14): p = -V_x, q = -V_xx sigma,
/// -V_xx >= P, and V_t = max_u G.
RelationReport check_smooth_case(const TrajectoryCase& c, const CheckOptions& opts);

/// Hamiltonian maximum condition (2.12): worst H-gap over the control grid.
RelationReport check_maximum_principle(const TrajectoryCase& c, const CheckOptions& opts);

/// Numerical replay of the DPP => MP derivation: (a) G-max condition,
/// (b) intermediate inequality with the (P + V_xx) correction, (c) H-max.
RelationReport derive_mp_from_dpp(const TrajectoryCase& c, const CheckOptions& opts);

/// ex33 strict second-order gap: -V_xx - P > 0 and matches the independent
/// gap-BSDE oracle with source (ch x)^{-4}.
RelationReport strict_gap_check(const TrajectoryCase& c, const CheckOptions& opts);

/// Candidate-screening per the three-step search procedure: keep policies
/// whose adjoints satisfy the jet inclusions (and, for smooth V, the p and P
/// identities) within tolerance.
struct CandidateResult {
    std::string name;
    double constant_value = std::numeric_limits<double>::quiet_NaN();  // NaN: non-constant
    bool survived = false;
    double margin = 0.0;
};

struct CandidateSet {
    std::vector<CandidateResult> candidates;
    std::vector<CandidateResult> survivors() const {
        std::vector<CandidateResult> out;
        for (const auto& c : candidates)
            if (c.survived) out.push_back(c);
        return out;
    }
};

CandidateSet screen_candidates(const ControlProblem& problem, const ValueFunction& V,
                               const std::vector<ControlPolicy>& family, double t, double x0,
                               const McSpec& mc, const CheckOptions& opts);

/// Constant policies on the control grid (screening families).
std::vector<ControlPolicy> constant_family(const ControlProblem& problem, double step);

/// Maximizer set of u -> H(...) over the control grid, ties resolved with a
/// tolerance relative to the supremum's magnitude.
std::vector<double> argmax_H(const ControlProblem& problem, double t, double x, double y, double z,
                             const ReferencePoint& ref, double p, double q, double P,
                             double grid_step, double value_tol = 1e-9);

/// Indices within value_tol * max(1, |sup|) of the supremum; the relative
/// tolerance makes the set invariant under positive rescaling of the values.
std::vector<int> argmax_indices(const std::vector<double>& values, double value_tol);

}  // namespace rsoc
