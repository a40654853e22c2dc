#pragma once

// Variance-component score test for H0: delta = 0 in V(delta) = tau (K0 + delta dK0) + sigma2 I.
//
//   T0    = tau * r' V0^-1 dK0 V0^-1 r,          r = y - mu_hat 1
//   e     = tau * tr(V0^-1 dK0)                   (= E T0 under H0)
//   I     = efficient REML information for delta (1/2-trace convention)
//   kappa = 2 I / e,  nu = e^2 / (2 I)            so kappa nu = e, 2 kappa^2 nu = 4 I = Var T0
//   p     = P(chi2_nu > T0 / kappa)

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include "errors.hpp"
#include "gp_lmm.hpp"
#include "kernel.hpp"
#include "linalg.hpp"

namespace gpvct {

enum TestFlag : unsigned {
    kFlagNone = 0,
    /// tau_hat = 0: null fit has no kernel component, T0 = 0 and p = 1
    kFlagDegenerateFit = 1u << 0,
    /// tr(V0^-1 dK0) <= 0: no null distribution, p reported as 1
    kFlagNonpositiveTrace = 1u << 1,
    /// efficient information <= 0: no null distribution, p reported as 1
    kFlagNonpositiveInformation = 1u << 2,
    /// V0 needed diagonal jitter to factor
    kFlagJitteredFactor = 1u << 3,
    /// (tau, sigma2) were fixed, not estimated
    kFlagNuisanceFixed = 1u << 4,
};

struct TestResult {
    double T0 = 0.0;
    double kappa = 0.0;
    double nu = 0.0;
    double p_value = 1.0;
    double info = 0.0;
    unsigned flags = kFlagNone;

    [[nodiscard]] bool has(TestFlag f) const noexcept { return (flags & f) != 0; }

    [[nodiscard]] std::vector<std::string> flag_names() const {
        std::vector<std::string> out;
        if (has(kFlagDegenerateFit)) out.emplace_back("degenerate_fit");
        if (has(kFlagNonpositiveTrace)) out.emplace_back("nonpositive_trace");
        if (has(kFlagNonpositiveInformation)) out.emplace_back("nonpositive_information");
        if (has(kFlagJitteredFactor)) out.emplace_back("jittered_factor");
        if (has(kFlagNuisanceFixed)) out.emplace_back("nuisance_fixed");
        return out;
    }
};

namespace detail {

inline void check_derivative(const NullModelFit& fit, const GramMatrix& dK) {
    if (dK.size() != fit.size())
        throw InputError("derivative kernel dimension " + std::to_string(dK.size()) + " does not match fit dimension " +
                         std::to_string(fit.size()));
}

}  // namespace detail

[[nodiscard]] inline double score_statistic(const NullModelFit& fit, const GramMatrix& dK, const Eigen::VectorXd& y) {
    detail::check_derivative(fit, dK);
    detail::check_response(y, fit.size());
    if (fit.tau_hat == 0.0) return 0.0;
    Eigen::VectorXd r = y.array() - fit.mu_hat;
    Eigen::VectorXd w = fit.V0_factor.solve(r);
    return fit.tau_hat * w.dot(dK.values() * w);
}

/// Same statistic from the null-model residuals: (tau / sigma2^2) e' dK0 e.
[[nodiscard]] inline double score_statistic_residual_form(const NullModelFit& fit, const GramMatrix& dK) {
    detail::check_derivative(fit, dK);
    const auto& e = fit.residuals;
    return fit.tau_hat / (fit.sigma2_hat * fit.sigma2_hat) * e.dot(dK.values() * e);
}

/// REML projection P = V0^-1 - V0^-1 1 (1'V0^-1 1)^-1 1'V0^-1.
[[nodiscard]] inline Eigen::MatrixXd reml_projection(const NullModelFit& fit) {
    Eigen::MatrixXd vinv = fit.V0_factor.inverse();
    Eigen::VectorXd w = vinv.rowwise().sum();
    Eigen::MatrixXd P = vinv - (w * w.transpose()) / w.sum();
    return 0.5 * (P + P.transpose());
}

/// Expected REML information for (delta, tau, sigma2), I_ab = 1/2 tr(P dV_a P dV_b)
/// with dV_delta = tau dK0, dV_tau = K0, dV_sigma2 = I.
[[nodiscard]] inline Eigen::Matrix3d reml_information(const NullModelFit& fit, const GramMatrix& dK) {
    detail::check_derivative(fit, dK);
    Eigen::MatrixXd P = reml_projection(fit);
    Eigen::MatrixXd PD = P * (fit.tau_hat * dK.values());
    Eigen::MatrixXd PK = P * fit.K0.values();
    const Eigen::MatrixXd& PI = P;
    const Eigen::MatrixXd* m[3] = {&PD, &PK, &PI};
    Eigen::Matrix3d info;
    for (int a = 0; a < 3; ++a)
        for (int b = a; b < 3; ++b) {
            double v = 0.5 * trace_of_product(*m[a], *m[b]);
            info(a, b) = v;
            info(b, a) = v;
        }
    return info;
}

/// I_dd - I_dt I_tt^-1 I_td over the estimated variance components; I_dd when
/// (tau, sigma2) were fixed.
[[nodiscard]] inline double effective_information(const NullModelFit& fit, const GramMatrix& dK) {
    detail::check_derivative(fit, dK);
    if (fit.tau_hat == 0.0) return 0.0;
    Eigen::Matrix3d I = reml_information(fit, dK);
    if (!fit.nuisance_estimated) return I(0, 0);
    Eigen::Matrix2d itt = I.bottomRightCorner<2, 2>();
    Eigen::Vector2d itd = I.block<2, 1>(1, 0);
    double det = itt.determinant();
    if (!(det > 1e-12 * itt(0, 0) * itt(1, 1)))
        throw InformationError("nuisance block of the REML information matrix is singular");
    return I(0, 0) - itd.dot(itt.inverse() * itd);
}

struct SatterthwaiteParams {
    double kappa = 0.0;
    double nu = 0.0;
    double info = 0.0;
    /// tau_hat * tr(V0^-1 dK0)
    double scaled_trace = 0.0;
};

[[nodiscard]] inline SatterthwaiteParams satterthwaite(const NullModelFit& fit, const GramMatrix& dK) {
    detail::check_derivative(fit, dK);
    SatterthwaiteParams out;
    out.info = effective_information(fit, dK);
    out.scaled_trace = fit.tau_hat * fit.V0_factor.solve(dK.values()).trace();
    if (!(out.scaled_trace > 0.0)) throw DistributionError("tau * tr(V0^-1 dK0) is not positive");
    if (!(out.info > 0.0)) throw DistributionError("effective information is not positive");
    out.kappa = 2.0 * out.info / out.scaled_trace;
    out.nu = out.scaled_trace * out.scaled_trace / (2.0 * out.info);
    return out;
}

/// P(kappa chi2_nu > T0) = Q(nu/2, T0 / (2 kappa)).
[[nodiscard]] inline double pvalue(double T0, double kappa, double nu) {
    if (!(kappa > 0.0) || !(nu > 0.0)) throw InputError("pvalue requires kappa > 0 and nu > 0");
    if (std::isnan(T0)) throw InputError("pvalue: T0 is NaN");
    if (T0 <= 0.0) return 1.0;
    if (std::isinf(T0)) return 0.0;
    return boost::math::gamma_q(0.5 * nu, T0 / (2.0 * kappa));
}

/// Steps 2 and 3 given an already fitted null model.
[[nodiscard]] inline TestResult variance_component_test(const NullModelFit& fit, const GramMatrix& dK,
                                                        const Eigen::VectorXd& y) {
    detail::check_derivative(fit, dK);
    TestResult res;
    if (fit.jitter() > 0.0) res.flags |= kFlagJitteredFactor;
    if (!fit.nuisance_estimated) res.flags |= kFlagNuisanceFixed;
    if (fit.tau_hat == 0.0) {
        res.flags |= kFlagDegenerateFit;
        return res;
    }
    res.T0 = score_statistic(fit, dK, y);
    try {
        auto sp = satterthwaite(fit, dK);
        res.kappa = sp.kappa;
        res.nu = sp.nu;
        res.info = sp.info;
    } catch (const DistributionError&) {
        double tr = fit.tau_hat * fit.V0_factor.solve(dK.values()).trace();
        res.flags |= tr > 0.0 ? kFlagNonpositiveInformation : kFlagNonpositiveTrace;
        res.p_value = 1.0;
        return res;
    }
    res.p_value = pvalue(res.T0, res.kappa, res.nu);
    return res;
}

namespace detail {

template <typename Fn>
auto labelled_step(const char* label, Fn&& fn) -> decltype(fn()) {
    const std::string prefix = std::string(label) + ": ";
    try {
        return fn();
    } catch (const FitError& e) {
        throw FitError(prefix + e.what(), e.best_tau, e.best_sigma2, e.best_value);
    } catch (const FactorizationError& e) {
        throw FactorizationError(prefix + e.what());
    } catch (const InformationError& e) {
        throw InformationError(prefix + e.what());
    } catch (const InputError& e) {
        throw InputError(prefix + e.what());
    }
}

}  // namespace detail

/// Full procedure: REML null fit, score statistic, Satterthwaite, p-value.
[[nodiscard]] inline TestResult variance_component_test(const GramMatrix& K0, const GramMatrix& dK,
                                                        const Eigen::VectorXd& y, const RemlOptions& opt = {}) {
    if (K0.size() != dK.size()) throw InputError("null and derivative kernels differ in dimension");
    auto fit = detail::labelled_step("step 1 (null model fit)", [&] { return fit_null_reml(K0, y, opt); });
    return detail::labelled_step("step 2-3 (score test)", [&] { return variance_component_test(fit, dK, y); });
}

}  // namespace gpvct
