#pragma once

#include "rsoc/value_function.hpp"

#include <vector>

namespace rsoc {

/// Geometric radius schedule h_k = h0 * 2^{-k}, k = 0..K.
struct JetSchedule {
    double h0 = 0.05;
    int K = 12;

    std::vector<double> radii() const {
        std::vector<double> h(K + 1);
        double v = h0;
        for (int k = 0; k <= K; ++k, v *= 0.5) h[k] = v;
        return h;
    }
};

/// Interval-times-threshold representation of the second-order spatial jets
/// at one point: super-jet = p_interval_super x [P_threshold_super, inf),
/// sub-jet = p_interval_sub x (-inf, P_threshold_sub].
struct SpatialJetEstimate {
    double p_super_lo = 0.0, p_super_hi = 0.0;
    double P_threshold_super = 0.0;
    bool super_empty = false;
    double p_sub_lo = 0.0, p_sub_hi = 0.0;
    double P_threshold_sub = 0.0;
    bool sub_empty = false;
    std::vector<double> radii_used;
    double fit_tolerance = 0.0;
    bool widened_tolerance = false;  // schedule exhausted the grid resolution
};

SpatialJetEstimate estimate_spatial_jets(const ValueFunction& V, double t, double x,
                                         const JetSchedule& schedule);

/// Upper/lower Dini estimates of the right time derivative over the schedule.
struct TimeJetEstimate {
    double upper_dini = 0.0;
    double lower_dini = 0.0;
    double fitted_slope = 0.0;
    bool widened_tolerance = false;
};

TimeJetEstimate estimate_time_jets(const ValueFunction& V, double t, double x,
                                   const JetSchedule& schedule);

enum class Membership { Inside, Outside, Boundary };
enum class JetSide { Super, Sub };

Membership test_membership(const SpatialJetEstimate& est, double p, double P, double tol,
                           JetSide side = JetSide::Super);

}  // namespace rsoc
