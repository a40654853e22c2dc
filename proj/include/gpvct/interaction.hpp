#pragma once

// Nonlinear-interaction test between two feature groups.
//
//   k0  = k1 + k2            additive null kernel
//   k12 = k1 * k2            pure-interaction kernel
//   k_delta = k0 + delta k12, so dK0 = K12
//
// Group grams are double-centered by default, so constants lie in neither
// group space.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvek.hpp"
#include "errors.hpp"
#include "gp_lmm.hpp"
#include "kernel.hpp"
#include "score_test.hpp"

namespace gpvct {

struct InteractionKernels {
    GramMatrix K1;
    GramMatrix K2;
    GramMatrix K0;
    GramMatrix K12;
    bool centered = true;
};

[[nodiscard]] inline InteractionKernels build_interaction_kernels(const GramMatrix& K1, const GramMatrix& K2,
                                                                  bool center = true) {
    if (K1.size() != K2.size()) throw InputError("interaction kernels: groups have different sample counts");
    InteractionKernels k;
    k.centered = center;
    k.K1 = center ? center_gram(K1) : K1;
    k.K2 = center ? center_gram(K2) : K2;
    k.K0 = k.K1 + k.K2;
    k.K12 = hadamard(k.K1, k.K2);
    return k;
}

[[nodiscard]] inline InteractionKernels build_interaction_kernels(const KernelSpec& spec1, const KernelSpec& spec2,
                                                                  const Eigen::MatrixXd& X1, const Eigen::MatrixXd& X2,
                                                                  bool center = true) {
    if (X1.rows() != X2.rows())
        throw InputError("interaction kernels: X1 has " + std::to_string(X1.rows()) + " rows, X2 has " +
                         std::to_string(X2.rows()));
    return build_interaction_kernels(gram_matrix(spec1, X1), gram_matrix(spec2, X2), center);
}

struct InteractionOutcome {
    TestResult test;
    NullModelFit fit;
};

[[nodiscard]] inline InteractionOutcome interaction_test_detailed(const InteractionKernels& k,
                                                                  const Eigen::VectorXd& y,
                                                                  const RemlOptions& reml = {}) {
    InteractionOutcome out;
    out.fit = detail::labelled_step("step 1 (null model fit)", [&] { return fit_null_reml(k.K0, y, reml); });
    out.test = detail::labelled_step("step 2-3 (score test)",
                                     [&] { return variance_component_test(out.fit, k.K12, y); });
    return out;
}

[[nodiscard]] inline TestResult interaction_test(const InteractionKernels& k, const Eigen::VectorXd& y,
                                                 const RemlOptions& reml = {}) {
    return variance_component_test(k.K0, k.K12, y, reml);
}

/// How the ensemble derivative kernel combines per-kernel interaction grams.
enum class EnsembleDerivative {
    /// sum_d u_d K12_d / lambda_d: each base kernel on the lambda = 1 scale used by K_hat
    LambdaScaled,
    /// sum_d u_d K12_d
    Unscaled,
};

struct InteractionOptions {
    bool center = true;
    CvekOptions cvek;
    RemlOptions reml;
    EnsembleDerivative derivative = EnsembleDerivative::LambdaScaled;
};

struct CvekInteractionOutcome {
    TestResult test;
    NullModelFit fit;
    EnsembleFit ensemble;
    GramMatrix dK;
};

/// CVEK over additive null kernels K1_d + K2_d, then the score test with the
/// weighted interaction gram as derivative kernel.
[[nodiscard]] inline CvekInteractionOutcome interaction_test_cvek_detailed(const std::vector<KernelSpec>& library,
                                                                           const Eigen::MatrixXd& X1,
                                                                           const Eigen::MatrixXd& X2,
                                                                           const Eigen::VectorXd& y,
                                                                           const InteractionOptions& opt = {}) {
    if (library.empty()) throw InputError("interaction_test_cvek: kernel library is empty");
    std::vector<GramMatrix> nulls;
    std::vector<GramMatrix> inters;
    std::vector<std::string> labels;
    for (const auto& s : library) {
        auto k = build_interaction_kernels(s, s, X1, X2, opt.center);
        nulls.push_back(std::move(k.K0));
        inters.push_back(std::move(k.K12));
        labels.push_back(s.to_string());
    }
    CvekInteractionOutcome out;
    out.ensemble = cvek_from_grams(nulls, labels, y, opt.cvek);
    for (std::size_t d = 0; d < library.size(); ++d) out.ensemble.base_fits[d].spec = library[d];

    Eigen::MatrixXd dK = Eigen::MatrixXd::Zero(y.size(), y.size());
    for (std::size_t d = 0; d < inters.size(); ++d) {
        double w = out.ensemble.weights(static_cast<Eigen::Index>(d));
        if (w == 0.0) continue;
        if (opt.derivative == EnsembleDerivative::LambdaScaled) w /= out.ensemble.base_fits[d].lambda_hat;
        dK += w * inters[d].values();
    }
    out.dK = GramMatrix(0.5 * (dK + dK.transpose()), "cvek-interaction");
    out.fit = detail::labelled_step("step 1 (null model fit)",
                                    [&] { return fit_null_reml(out.ensemble.K_hat, y, opt.reml); });
    out.test = detail::labelled_step("step 2-3 (score test)",
                                     [&] { return variance_component_test(out.fit, out.dK, y); });
    return out;
}

[[nodiscard]] inline TestResult interaction_test_cvek(const std::vector<KernelSpec>& library,
                                                      const Eigen::MatrixXd& X1, const Eigen::MatrixXd& X2,
                                                      const Eigen::VectorXd& y, const InteractionOptions& opt = {}) {
    return interaction_test_cvek_detailed(library, X1, X2, y, opt).test;
}

}  // namespace gpvct
