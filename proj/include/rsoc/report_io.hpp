#pragma once

#include "rsoc/bsde.hpp"
#include "rsoc/hjb.hpp"
#include "rsoc/model.hpp"
#include "rsoc/sim.hpp"
#include "rsoc/verify.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace rsoc {

/// Doubles printed with %.17g so identical runs produce identical bytes.
std::string format_double(double v);

void write_paths_csv(const std::string& path, const PathBundle& paths);
void write_cost_csv(const std::string& path, const PathBundle& paths, const BsdeSolution& cost);
void write_adjoints_csv(const std::string& path, const PathBundle& paths,
                        const FirstOrderAdjoint* first, const SecondOrderAdjoint* second,
                        const FbsdeAdjoint* fbsde);
void write_value_grid_csv(const std::string& path, const ValueGrid& grid);

/// Two-column whitespace-delimited curve (plot-ready).
void write_curve(const std::string& path, const std::vector<double>& x,
                 const std::vector<double>& y);

nlohmann::json to_json(const RelationReport& rep);
nlohmann::json to_json(const AssumptionReport& rep);
nlohmann::json stability_to_json(const StabilityRecord& rec);

/// Versioned envelope ("rsoc-report/1") for a verification run.
nlohmann::json report_envelope(const std::vector<RelationReport>& reports);

/// Flat CSV of per-sample margins across all checks.
void write_margins_csv(const std::string& path, const std::vector<RelationReport>& reports);

}  // namespace rsoc
