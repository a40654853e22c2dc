#pragma once

// Report text and JSON. Nothing time- or host-dependent is emitted, so the
// same inputs give byte-identical reports.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "../simulate.hpp"
#include "../version.hpp"
#include "plan.hpp"

namespace gpvct::io {

using Json = nlohmann::ordered_json;

/// Four significant digits for human-readable output.
[[nodiscard]] inline std::string sig4(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

/// Number for JSON; non-finite values become null (JSON has no NaN).
[[nodiscard]] inline Json json_number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

[[nodiscard]] inline Json config_json(const EffectiveConfig& cfg) {
    Json j = Json::object();
    for (const auto& [k, v] : cfg) j[k] = v;
    return j;
}

/// Methodological conventions in effect, one line each.
[[nodiscard]] inline std::vector<std::string> decisions_in_effect(const StrategyOptions& opt, bool simulate) {
    const auto& io = opt.interaction;
    std::vector<std::string> d{
        "null distribution: scaled chi-square with kappa = 2 I / (tau tr(V0^-1 dK0)), nu = (tau tr(V0^-1 dK0))^2 / (2 I), "
        "I the efficient REML information for delta (1/2-trace convention)",
        "REML: restricted likelihood maximised over (log tau, log sigma2) from 3 starts, tau = 0 boundary compared in "
        "closed form; mu profiled by GLS",
        std::string("group gram centering: ") + (io.center ? "on (K1, K2 double-centered before K0 = K1 + K2, K12 = K1 * K2)"
                                                           : "off"),
        std::string("CVEK weights: ") + (io.cvek.constraint == WeightConstraint::Sphere
                                             ? "nonnegative unit l2 sphere"
                                             : "probability simplex (sensitivity setting)"),
        std::string("CVEK derivative kernel: ") + (io.derivative == EnsembleDerivative::LambdaScaled
                                                       ? "sum_d u_d K12_d / lambda_d"
                                                       : "sum_d u_d K12_d"),
        std::string("CVEK ridge fits on ") + (io.cvek.center_response ? "the centered response" : "the raw response") +
            "; lambda grid 30 log points over [1e-5, 1e3] x tr(K)/n; eigenvalues of A_hat clipped to [0, 1 - 1e-6]",
        std::string("rbf-median: per group, sigma = ") +
            (opt.median == MedianConvention::InverseSquaredDistance ? "1 / median ||xi - xj||^2"
                                                                   : "median ||xi - xj||"),
        "rbf-mle: sigma from 25 log-spaced points in [1e-3, 1e2] maximising the REML objective",
    };
    if (simulate) {
        d.emplace_back("sampled functions standardized to mean 0 and population sd 1 unless standardization = unit-norm");
        d.emplace_back("interaction component h12 drawn for every delta (common random numbers across the delta grid)");
        d.emplace_back("matern-* strategies use the true sigma unless model_sigma is set");
        d.emplace_back("rejection rate over successful replicates; se = sqrt(r (1 - r) / valid replicates)");
    }
    return d;
}

[[nodiscard]] inline Json test_result_json(const TestResult& t) {
    Json j;
    j["T0"] = json_number(t.T0);
    j["kappa"] = json_number(t.kappa);
    j["nu"] = json_number(t.nu);
    j["p_value"] = json_number(t.p_value);
    j["info"] = json_number(t.info);
    j["flags"] = t.flag_names();
    return j;
}

[[nodiscard]] inline Json scenario_json(const SimScenario& c) { return config_json(SimulationPlan::describe_cell(c)); }

}  // namespace gpvct::io
