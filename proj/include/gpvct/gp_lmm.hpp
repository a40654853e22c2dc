#pragma once

// Gaussian-process null model as a linear mixed model
//
//   y = mu 1 + h + eps,   h ~ N(0, tau K),   eps ~ N(0, sigma2 I)
//
// fitted by maximizing the restricted log-likelihood
//
//   L(mu, tau, sigma2) = -log|V| - log|1'V^-1 1| - (y - mu)'V^-1(y - mu),  V = tau K + sigma2 I
//
// with mu profiled out in closed form. The optimizer works on the eigenbasis
// of K, where every evaluation is O(n).

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "kernel.hpp"
#include "linalg.hpp"

namespace gpvct {

struct RemlOptions {
    int max_iterations = 500;
    /// max-norm of the gradient in (log tau, log sigma2) accepted as converged
    double gradient_tolerance = 1e-5;
    /// start offsets in (log tau, log sigma2), shifted by the data scale
    std::vector<std::array<double, 2>> starts{{0.0, 0.0}, {-2.0, 0.0}, {2.0, -2.0}};
};

namespace detail {

inline void check_response(const Eigen::VectorXd& y, Eigen::Index n_expected) {
    if (y.size() != n_expected)
        throw InputError("response length " + std::to_string(y.size()) + " does not match kernel dimension " +
                         std::to_string(n_expected));
    if (!y.allFinite()) throw InputError("response has non-finite values");
}

inline double sample_variance(const Eigen::VectorXd& y) {
    const double n = static_cast<double>(y.size());
    return (y.array() - y.mean()).square().sum() / (n - 1.0);
}

/// Profiled REML objective on the eigenbasis of K.
class RemlProblem {
public:
    struct Eval {
        double value = 0.0;  // L at profiled mu (to be maximized)
        double mu = 0.0;
        Eigen::Vector2d grad = Eigen::Vector2d::Zero();  // d L / d(log tau, log sigma2)
    };

    RemlProblem(const Eigen::MatrixXd& K, const Eigen::VectorXd& y) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
        if (es.info() != Eigen::Success) throw FactorizationError("eigendecomposition of kernel matrix failed");
        lambda_ = es.eigenvalues();
        double lmax = std::max(lambda_.maxCoeff(), 0.0);
        min_eig_ = lambda_.minCoeff();
        max_eig_ = lmax;
        lambda_ = lambda_.cwiseMax(0.0);
        y_rot_ = es.eigenvectors().transpose() * y;
        one_rot_ = es.eigenvectors().transpose() * Eigen::VectorXd::Ones(y.size());
    }

    [[nodiscard]] Eval evaluate(double log_tau, double log_sigma2) const {
        const double tau = std::exp(log_tau);
        const double s2 = std::exp(log_sigma2);
        Eigen::ArrayXd d = tau * lambda_.array() + s2;
        Eigen::ArrayXd inv_d = d.inverse();
        const Eigen::ArrayXd o = one_rot_.array();
        const double s1 = (o.square() * inv_d).sum();
        const double mu = (o * y_rot_.array() * inv_d).sum() / s1;
        Eigen::ArrayXd r = y_rot_.array() - mu * o;
        const double q = (r.square() * inv_d).sum();

        Eval ev;
        ev.mu = mu;
        ev.value = -d.log().sum() - std::log(s1) - q;

        Eigen::ArrayXd inv_d2 = inv_d.square();
        const Eigen::ArrayXd& lam = lambda_.array();
        // d L / d theta = -tr(P dV) + y'P dV P y, with dV diagonal in the eigenbasis
        double tr_tau = (lam * inv_d).sum() - (lam * o.square() * inv_d2).sum() / s1;
        double tr_s2 = inv_d.sum() - (o.square() * inv_d2).sum() / s1;
        double quad_tau = (lam * r.square() * inv_d2).sum();
        double quad_s2 = (r.square() * inv_d2).sum();
        ev.grad(0) = tau * (-tr_tau + quad_tau);
        ev.grad(1) = s2 * (-tr_s2 + quad_s2);
        return ev;
    }

    [[nodiscard]] double min_eigenvalue() const noexcept { return min_eig_; }
    [[nodiscard]] double max_eigenvalue() const noexcept { return max_eig_; }
    [[nodiscard]] Eigen::Index size() const noexcept { return lambda_.size(); }

private:
    Eigen::VectorXd lambda_;
    Eigen::VectorXd y_rot_;
    Eigen::VectorXd one_rot_;
    double min_eig_ = 0.0;
    double max_eig_ = 0.0;
};

struct OptimResult {
    Eigen::Vector2d phi = Eigen::Vector2d::Zero();
    RemlProblem::Eval eval;
    int iterations = 0;
    bool converged = false;
    bool at_lower_tau = false;
};

// BFGS on f = -L over the box [lo, hi], followed by a Newton polish that uses
// finite differences of the analytic gradient.
inline OptimResult maximize_reml(const RemlProblem& prob, Eigen::Vector2d phi, const Eigen::Vector2d& lo,
                                 const Eigen::Vector2d& hi, const RemlOptions& opt) {
    auto clamp_box = [&](Eigen::Vector2d p) {
        return p.cwiseMax(lo).cwiseMin(hi).eval();
    };
    // gradient of f with components at an active bound removed
    auto effective = [&](const Eigen::Vector2d& p, const Eigen::Vector2d& gf) {
        Eigen::Vector2d g = gf;
        for (int k = 0; k < 2; ++k) {
            if (p(k) <= lo(k) && g(k) > 0.0) g(k) = 0.0;
            if (p(k) >= hi(k) && g(k) < 0.0) g(k) = 0.0;
        }
        return g;
    };

    phi = clamp_box(phi);
    OptimResult res;
    auto ev = prob.evaluate(phi(0), phi(1));
    Eigen::Vector2d g = -ev.grad;
    Eigen::Matrix2d H = Eigen::Matrix2d::Identity();
    bool fresh = true;
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        Eigen::Vector2d ge = effective(phi, g);
        if (ge.cwiseAbs().maxCoeff() <= opt.gradient_tolerance) break;
        Eigen::Vector2d dir = -H * ge;
        if (ge.dot(dir) >= 0.0) {
            H.setIdentity();
            fresh = true;
            dir = -ge;
        }
        double step = 1.0;
        bool accepted = false;
        Eigen::Vector2d phi_new;
        RemlProblem::Eval ev_new;
        for (int ls = 0; ls < 60; ++ls) {
            phi_new = clamp_box(phi + step * dir);
            ev_new = prob.evaluate(phi_new(0), phi_new(1));
            double decrease = g.dot(phi_new - phi);
            if (std::isfinite(ev_new.value) && -ev_new.value <= -ev.value + 1e-4 * decrease) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted || (phi_new - phi).cwiseAbs().maxCoeff() == 0.0) {
            if (fresh) break;
            H.setIdentity();
            fresh = true;
            continue;
        }
        Eigen::Vector2d g_new = -ev_new.grad;
        Eigen::Vector2d s = phi_new - phi;
        Eigen::Vector2d yv = g_new - g;
        double sy = s.dot(yv);
        if (sy > 1e-14 * s.norm() * yv.norm()) {
            if (fresh) H *= sy / yv.squaredNorm();
            double rho = 1.0 / sy;
            Eigen::Matrix2d I2 = Eigen::Matrix2d::Identity();
            H = (I2 - rho * s * yv.transpose()) * H * (I2 - rho * yv * s.transpose()) + rho * s * s.transpose();
            fresh = false;
        }
        phi = phi_new;
        ev = ev_new;
        g = g_new;
    }

    // Newton polish
    for (int k = 0; k < 20; ++k) {
        Eigen::Vector2d ge = effective(phi, g);
        if (ge.cwiseAbs().maxCoeff() <= opt.gradient_tolerance) break;
        const double h = 1e-5;
        Eigen::Matrix2d hess;
        for (int j = 0; j < 2; ++j) {
            Eigen::Vector2d e = Eigen::Vector2d::Zero();
            e(j) = h;
            auto gp = prob.evaluate(phi(0) + e(0), phi(1) + e(1)).grad;
            auto gm = prob.evaluate(phi(0) - e(0), phi(1) - e(1)).grad;
            hess.col(j) = -(gp - gm) / (2.0 * h);
        }
        hess = 0.5 * (hess + hess.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(hess);
        if (es.eigenvalues().minCoeff() <= 0.0) break;
        Eigen::Vector2d cand = clamp_box(phi - hess.ldlt().solve(ge));
        auto ev_c = prob.evaluate(cand(0), cand(1));
        Eigen::Vector2d gc = effective(cand, -ev_c.grad);
        if (!std::isfinite(ev_c.value) || gc.cwiseAbs().maxCoeff() >= ge.cwiseAbs().maxCoeff()) break;
        phi = cand;
        ev = ev_c;
        g = -ev_c.grad;
        ++it;
    }

    res.phi = phi;
    res.eval = ev;
    res.iterations = it;
    res.converged = effective(phi, g).cwiseAbs().maxCoeff() <= opt.gradient_tolerance;
    res.at_lower_tau = phi(0) <= lo(0);
    return res;
}

}  // namespace detail

/// L(mu, tau, sigma2 | K) as written above, evaluated densely.
[[nodiscard]] inline double reml_objective(double mu, double tau, double sigma2, const GramMatrix& K,
                                           const Eigen::VectorXd& y) {
    detail::check_response(y, K.size());
    if (!(tau >= 0.0) || !(sigma2 > 0.0)) throw InputError("reml_objective requires tau >= 0 and sigma2 > 0");
    const Eigen::Index n = K.size();
    Eigen::MatrixXd V = tau * K.values();
    V.diagonal().array() += sigma2;
    JitteredCholesky chol(V);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd r = y.array() - mu;
    double s1 = ones.dot(chol.solve(ones));
    return -chol.log_det() - std::log(s1) - r.dot(chol.solve(r));
}

/// Generalized-least-squares intercept (1'V^-1 1)^-1 1'V^-1 y.
[[nodiscard]] inline double profiled_mu(double tau, double sigma2, const GramMatrix& K, const Eigen::VectorXd& y) {
    detail::check_response(y, K.size());
    Eigen::MatrixXd V = tau * K.values();
    V.diagonal().array() += sigma2;
    JitteredCholesky chol(V);
    Eigen::VectorXd w = chol.solve(Eigen::VectorXd::Ones(K.size()));
    return w.dot(y) / w.sum();
}

/// Analytic gradient of the mu-profiled objective in (log tau, log sigma2).
[[nodiscard]] inline Eigen::Vector2d reml_gradient(double tau, double sigma2, const GramMatrix& K,
                                                   const Eigen::VectorXd& y) {
    detail::check_response(y, K.size());
    if (!(tau > 0.0) || !(sigma2 > 0.0)) throw InputError("reml_gradient requires tau > 0 and sigma2 > 0");
    detail::RemlProblem prob(K.values(), y);
    return prob.evaluate(std::log(tau), std::log(sigma2)).grad;
}

struct NullModelFit {
    double mu_hat = 0.0;
    double tau_hat = 0.0;
    double sigma2_hat = 1.0;
    GramMatrix K0;
    Eigen::MatrixXd V0;
    JitteredCholesky V0_factor;
    /// y - mu_hat 1 - h_hat
    Eigen::VectorXd residuals;
    /// V0^-1 (y - mu_hat 1)
    Eigen::VectorXd v0inv_centered;
    double reml_value = 0.0;

    /// false when (tau, sigma2) were fixed rather than estimated
    bool nuisance_estimated = true;
    bool boundary = false;
    bool converged = true;
    int iterations = 0;
    double gradient_norm = 0.0;

    [[nodiscard]] Eigen::Index size() const noexcept { return V0.rows(); }
    [[nodiscard]] double jitter() const noexcept { return V0_factor.jitter(); }
};

namespace detail {

inline NullModelFit finalize_fit(const GramMatrix& K0, const Eigen::VectorXd& y, double tau, double sigma2) {
    const Eigen::Index n = K0.size();
    NullModelFit fit;
    fit.tau_hat = tau;
    fit.sigma2_hat = sigma2;
    fit.K0 = K0;
    fit.V0 = tau * K0.values();
    fit.V0.diagonal().array() += sigma2;
    fit.V0_factor = JitteredCholesky(fit.V0);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd w = fit.V0_factor.solve(ones);
    fit.mu_hat = w.dot(y) / w.sum();
    Eigen::VectorXd r = y.array() - fit.mu_hat;
    fit.v0inv_centered = fit.V0_factor.solve(r);
    // y - mu - h_hat with h_hat = tau K0 V0^-1 r equals (sigma2 + jitter) V0^-1 r;
    // this form avoids the cancellation in r - h_hat when sigma2 << tau
    fit.residuals = (sigma2 + fit.V0_factor.jitter()) * fit.v0inv_centered;
    fit.reml_value = -fit.V0_factor.log_det() - std::log(w.sum()) - r.dot(fit.v0inv_centered);
    return fit;
}

inline void check_fit_inputs(const GramMatrix& K0, const Eigen::VectorXd& y) {
    detail::check_response(y, K0.size());
    if (y.size() < 5) throw InputError("null model fit needs at least 5 observations");
    if ((y.array() - y(0)).abs().maxCoeff() == 0.0) throw InputError("constant response");
}

}  // namespace detail

/// Fit the null model with (tau, sigma2) held at the given values; only mu is
/// estimated.
[[nodiscard]] inline NullModelFit fixed_null_fit(const GramMatrix& K0, const Eigen::VectorXd& y, double tau,
                                                 double sigma2) {
    detail::check_response(y, K0.size());
    if (!(tau >= 0.0) || !(sigma2 > 0.0)) throw InputError("fixed_null_fit requires tau >= 0 and sigma2 > 0");
    auto fit = detail::finalize_fit(K0, y, tau, sigma2);
    fit.nuisance_estimated = false;
    fit.boundary = tau == 0.0;
    return fit;
}

/// REML fit of (mu, tau, sigma2). Deterministic: restarts come from
/// opt.starts, shifted by log(var(y) / mean diag K) and log var(y).
[[nodiscard]] inline NullModelFit fit_null_reml(const GramMatrix& K0, const Eigen::VectorXd& y,
                                                const RemlOptions& opt = {}) {
    detail::check_fit_inputs(K0, y);
    const Eigen::Index n = y.size();
    const double vy = detail::sample_variance(y);
    const double ss = vy * static_cast<double>(n - 1);

    // tau = 0: V = sigma2 I, maximized at sigma2 = SS / (n - 1)
    const double s2_boundary = ss / static_cast<double>(n - 1);
    const double boundary_value = -static_cast<double>(n - 1) * std::log(s2_boundary) -
                                  std::log(static_cast<double>(n)) - ss / s2_boundary;

    const double kscale = K0.trace() / static_cast<double>(n);
    if (!(kscale > 0.0)) {
        auto fit = detail::finalize_fit(K0, y, 0.0, s2_boundary);
        fit.boundary = true;
        return fit;
    }

    detail::RemlProblem prob(K0.values(), y);
    if (prob.min_eigenvalue() < -1e-8 * prob.max_eigenvalue())
        throw InputError("null kernel matrix is not positive semi-definite (min eigenvalue " +
                         std::to_string(prob.min_eigenvalue()) + ")");

    const Eigen::Vector2d center(std::log(vy / kscale), std::log(vy));
    const Eigen::Vector2d lo = center + Eigen::Vector2d(-30.0, -30.0);
    const Eigen::Vector2d hi = center + Eigen::Vector2d(30.0, 15.0);

    detail::OptimResult best;
    bool have = false;
    detail::OptimResult best_any;
    bool have_any = false;
    int total_iter = 0;
    for (const auto& s : opt.starts) {
        auto r = detail::maximize_reml(prob, center + Eigen::Vector2d(s[0], s[1]), lo, hi, opt);
        total_iter += r.iterations;
        if (!have_any || r.eval.value > best_any.eval.value) {
            best_any = r;
            have_any = true;
        }
        if ((r.converged || r.at_lower_tau) && (!have || r.eval.value > best.eval.value)) {
            best = r;
            have = true;
        }
    }

    const double tol = 1e-9 * std::max(1.0, std::abs(boundary_value));
    if (boundary_value >= (have ? best.eval.value : best_any.eval.value) - tol) {
        auto fit = detail::finalize_fit(K0, y, 0.0, s2_boundary);
        fit.boundary = true;
        fit.iterations = total_iter;
        return fit;
    }
    if (!have) {
        throw FitError("REML optimizer did not converge from any restart", std::exp(best_any.phi(0)),
                       std::exp(best_any.phi(1)), best_any.eval.value);
    }
    auto fit = detail::finalize_fit(K0, y, std::exp(best.phi(0)), std::exp(best.phi(1)));
    fit.iterations = total_iter;
    fit.converged = best.converged;
    fit.gradient_norm = best.eval.grad.cwiseAbs().maxCoeff();
    return fit;
}

/// h_hat = tau K0 V0^-1 (y - mu_hat 1); zero when tau_hat = 0.
[[nodiscard]] inline Eigen::VectorXd posterior_mean(const NullModelFit& fit, const Eigen::VectorXd& y) {
    detail::check_response(y, fit.size());
    if (fit.tau_hat == 0.0) return Eigen::VectorXd::Zero(y.size());
    Eigen::VectorXd r = y.array() - fit.mu_hat;
    return fit.tau_hat * (fit.K0.values() * fit.V0_factor.solve(r));
}

/// Posterior covariance of h at the samples, tau K - tau K V0^-1 tau K.
[[nodiscard]] inline Eigen::MatrixXd posterior_covariance(const NullModelFit& fit) {
    Eigen::MatrixXd tk = fit.tau_hat * fit.K0.values();
    Eigen::MatrixXd c = tk - tk * fit.V0_factor.solve(tk);
    return 0.5 * (c + c.transpose());
}

}  // namespace gpvct
