#pragma once

// Cross-validated kernel ensemble.
//
// Stage 1: per base kernel, kernel ridge A = K (K + lambda I)^-1 with lambda
//          chosen by the closed-form leave-one-out residuals (y - A y) / (1 - diag A).
// Stage 2: weights u >= 0, ||u||_2 = 1 minimizing ||sum_d u_d e_d||^2.
// Stage 3: K_hat with K_hat (K_hat + I)^-1 = sum_d u_d A_d.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "kernel.hpp"

namespace gpvct {

enum class WeightConstraint {
    /// u >= 0, ||u||_2 = 1
    Sphere,
    /// u >= 0, sum u = 1 (sensitivity analysis only)
    Simplex,
};

struct CvekOptions {
    int grid_size = 30;
    /// lambda grid endpoints, relative to tr(K) / n
    double grid_lo = 1e-5;
    double grid_hi = 1e3;
    WeightConstraint constraint = WeightConstraint::Sphere;
    /// fit the ridge stage on y - mean(y)
    bool center_response = true;
    /// LOOCV of the ridge stage refits an unpenalized intercept per held-out
    /// point; without it, a double-centered gram leaks y_i into its own
    /// leave-one-out prediction
    bool intercept = true;
    /// eigenvalues of the ensemble hat matrix are clipped to [0, 1 - clip]
    double clip = 1e-6;
};

/// Closed-form LOOCV residual vector for kernel ridge with penalty lambda.
[[nodiscard]] inline Eigen::VectorXd loocv_vector(const GramMatrix& K, const Eigen::VectorXd& y, double lambda) {
    if (!(lambda > 0.0)) throw InputError("loocv_vector: lambda must be positive");
    if (y.size() != K.size()) throw InputError("loocv_vector: response length does not match kernel");
    const Eigen::Index n = K.size();
    Eigen::MatrixXd M = K.values();
    M.diagonal().array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    if (ldlt.info() != Eigen::Success) throw FactorizationError("loocv_vector: K + lambda I factorization failed");
    // A = I - lambda (K + lambda I)^-1
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - lambda * ldlt.solve(Eigen::MatrixXd::Identity(n, n));
    Eigen::VectorXd diag = A.diagonal();
    if ((diag.array() >= 1.0 - 1e-12).any()) throw DegenerateHatError("hat matrix has a diagonal entry at 1");
    Eigen::VectorXd h = A * y;
    return ((y - h).array() / (1.0 - diag.array())).matrix();
}

[[nodiscard]] inline std::vector<double> lambda_grid(const GramMatrix& K, const CvekOptions& opt = {}) {
    if (opt.grid_size < 1) throw InputError("lambda grid needs at least one point");
    double scale = K.trace() / static_cast<double>(std::max<Eigen::Index>(K.size(), 1));
    if (!(scale > 0.0)) scale = 1.0;
    std::vector<double> grid;
    const double llo = std::log(opt.grid_lo), lhi = std::log(opt.grid_hi);
    for (int i = 0; i < opt.grid_size; ++i) {
        double t = opt.grid_size == 1 ? 0.0 : static_cast<double>(i) / (opt.grid_size - 1);
        grid.push_back(scale * std::exp(llo + t * (lhi - llo)));
    }
    return grid;
}

namespace detail {

/// Kernel ridge smoother on the eigenbasis of K: every lambda costs O(n^2).
class RidgeSpectrum {
public:
    explicit RidgeSpectrum(const Eigen::MatrixXd& K) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
        if (es.info() != Eigen::Success) throw FactorizationError("eigendecomposition of base kernel failed");
        eig_ = es.eigenvalues().cwiseMax(0.0);
        Q_ = es.eigenvectors();
        Q2_ = Q_.cwiseAbs2();
    }

    [[nodiscard]] Eigen::VectorXd shrinkage(double lambda) const {
        return (eig_.array() / (eig_.array() + lambda)).matrix();
    }

    /// LOOCV residuals; empty optional when the hat diagonal is degenerate.
    /// With `intercept`, the smoother also fits an unpenalized constant:
    /// A = S + v v' / (1'v), v = (I - S) 1, S = K (K + lambda I)^-1.
    [[nodiscard]] std::optional<Eigen::VectorXd> loocv(const Eigen::VectorXd& y, double lambda,
                                                       bool intercept = false) const {
        Eigen::VectorXd w = shrinkage(lambda);
        Eigen::VectorXd diag = Q2_ * w;
        Eigen::VectorXd h = Q_ * (w.asDiagonal() * (Q_.transpose() * y));
        if (intercept) {
            const auto n = static_cast<double>(y.size());
            Eigen::VectorXd v = Eigen::VectorXd::Ones(y.size()) - Q_ * (w.asDiagonal() * Q_.colwise().sum().transpose());
            double d = v.sum();
            if (!(d > 1e-12 * n)) return std::nullopt;
            diag += v.cwiseAbs2() / d;
            h += v * (v.dot(y) / d);
        }
        if ((diag.array() >= 1.0 - 1e-12).any()) return std::nullopt;
        return ((y - h).array() / (1.0 - diag.array())).matrix();
    }

    [[nodiscard]] Eigen::MatrixXd hat(double lambda) const {
        Eigen::VectorXd w = shrinkage(lambda);
        Eigen::MatrixXd A = Q_ * w.asDiagonal() * Q_.transpose();
        return 0.5 * (A + A.transpose());
    }

private:
    Eigen::VectorXd eig_;
    Eigen::MatrixXd Q_;
    Eigen::MatrixXd Q2_;
};

}  // namespace detail

struct LambdaTuning {
    double lambda_hat = 0.0;
    Eigen::VectorXd loocv;
    double loocv_sse = 0.0;
    std::size_t index = 0;
    std::size_t grid_size = 0;
    int degenerate_points = 0;

    [[nodiscard]] bool at_lower_end() const noexcept { return index == 0; }
    [[nodiscard]] bool at_upper_end() const noexcept { return index + 1 == grid_size; }
};

namespace detail {

inline LambdaTuning tune_on_spectrum(const RidgeSpectrum& spec, const Eigen::VectorXd& y,
                                     const std::vector<double>& grid, bool intercept = false) {
    if (grid.empty()) throw InputError("tune_lambda: empty grid");
    LambdaTuning best;
    best.grid_size = grid.size();
    best.loocv_sse = std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0)) throw InputError("tune_lambda: grid values must be positive");
        auto e = spec.loocv(y, grid[i], intercept);
        if (!e) {
            ++best.degenerate_points;
            continue;
        }
        double sse = e->squaredNorm();
        if (sse < best.loocv_sse) {
            best.loocv_sse = sse;
            best.lambda_hat = grid[i];
            best.loocv = std::move(*e);
            best.index = i;
            found = true;
        }
    }
    if (!found) throw TuningError("every lambda grid point gives a degenerate hat matrix");
    return best;
}

}  // namespace detail

/// lambda minimizing ||LOOCV(lambda)||^2 over an explicit grid.
[[nodiscard]] inline LambdaTuning tune_lambda(const GramMatrix& K, const Eigen::VectorXd& y,
                                              const std::vector<double>& grid, bool intercept = false) {
    if (y.size() != K.size()) throw InputError("tune_lambda: response length does not match kernel");
    detail::RidgeSpectrum spec(K.values());
    return detail::tune_on_spectrum(spec, y, grid, intercept);
}

[[nodiscard]] inline LambdaTuning tune_lambda(const GramMatrix& K, const Eigen::VectorXd& y,
                                              const CvekOptions& opt = {}) {
    if (y.size() < 5) throw InputError("tune_lambda needs at least 5 observations");
    return tune_lambda(K, y, lambda_grid(K, opt), opt.intercept);
}

namespace detail {

inline Eigen::VectorXd project_nonneg_sphere(const Eigen::VectorXd& v) {
    Eigen::VectorXd p = v.cwiseMax(0.0);
    double nrm = p.norm();
    if (nrm == 0.0) {
        Eigen::Index j;
        v.maxCoeff(&j);
        p.setZero();
        p(j) = 1.0;
        return p;
    }
    return p / nrm;
}

inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
    std::vector<double> s(v.data(), v.data() + v.size());
    std::sort(s.begin(), s.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        cum += s[i];
        double t = (cum - 1.0) / static_cast<double>(i + 1);
        if (s[i] - t > 0.0) theta = t;
    }
    return (v.array() - theta).cwiseMax(0.0).matrix();
}

inline Eigen::VectorXd support_vector(const Eigen::VectorXd& sub, const std::vector<int>& idx, Eigen::Index D) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(D);
    for (std::size_t k = 0; k < idx.size(); ++k) u(idx[k]) = sub(static_cast<Eigen::Index>(k));
    return u;
}

// Exact minimization by enumerating supports. On the sphere, the minimizer
// restricted to a support face is the minimal eigenvector of G_S when that
// eigenvector is nonnegative; on the simplex it is G_S^+ 1 normalized.
inline Eigen::VectorXd weights_enumerate(const Eigen::MatrixXd& G, WeightConstraint c) {
    const Eigen::Index D = G.rows();
    const double tol = 1e-12 * std::max(1.0, G.trace());
    Eigen::VectorXd best;
    double best_f = std::numeric_limits<double>::infinity();
    int best_size = 0;
    for (std::uint32_t mask = 1; mask < (1u << D); ++mask) {
        std::vector<int> idx;
        for (int d = 0; d < D; ++d)
            if (mask & (1u << d)) idx.push_back(d);
        const auto k = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd Gs(k, k);
        for (Eigen::Index a = 0; a < k; ++a)
            for (Eigen::Index b = 0; b < k; ++b) Gs(a, b) = G(idx[a], idx[b]);

        Eigen::VectorXd sub;
        if (c == WeightConstraint::Sphere) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Gs);
            sub = es.eigenvectors().col(0);
            if (sub.sum() < 0.0) sub = -sub;
            if (sub.minCoeff() < -1e-12) continue;
            sub = sub.cwiseMax(0.0);
            if (sub.minCoeff() <= 0.0 && k > 1) continue;  // belongs to a smaller support
            sub /= sub.norm();
        } else {
            Eigen::VectorXd x = Gs.completeOrthogonalDecomposition().pseudoInverse() * Eigen::VectorXd::Ones(k);
            double s = x.sum();
            if (!(s > 0.0)) continue;
            sub = x / s;
            if (sub.minCoeff() < -1e-12) continue;
            sub = sub.cwiseMax(0.0);
            if (sub.minCoeff() <= 0.0 && k > 1) continue;
            sub /= sub.sum();
        }
        Eigen::VectorXd u = support_vector(sub, idx, D);
        double f = u.dot(G * u);
        if (f < best_f - tol || (std::abs(f - best_f) <= tol && static_cast<int>(k) > best_size)) {
            best_f = f;
            best = u;
            best_size = static_cast<int>(k);
        }
    }
    return best;
}

inline Eigen::VectorXd weights_projected_gradient(const Eigen::MatrixXd& G, WeightConstraint c) {
    const Eigen::Index D = G.rows();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    const double lmax = std::max(es.eigenvalues().maxCoeff(), 1e-300);
    const double step = 1.0 / (2.0 * lmax);
    auto project = [&](const Eigen::VectorXd& v) {
        return c == WeightConstraint::Sphere ? project_nonneg_sphere(v) : project_simplex(v);
    };

    std::vector<Eigen::VectorXd> starts;
    Eigen::Index best_axis;
    G.diagonal().minCoeff(&best_axis);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(D);
    e(best_axis) = 1.0;
    starts.push_back(e);
    starts.push_back(project(Eigen::VectorXd::Ones(D)));
    std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    while (starts.size() < 10) {
        Eigen::VectorXd v(D);
        for (Eigen::Index d = 0; d < D; ++d) v(d) = unif(rng);
        starts.push_back(project(v));
    }

    Eigen::VectorXd best;
    double best_f = std::numeric_limits<double>::infinity();
    for (auto u : starts) {
        for (int it = 0; it < 20000; ++it) {
            Eigen::VectorXd next = project(u - step * 2.0 * (G * u));
            double delta = (next - u).cwiseAbs().maxCoeff();
            u = next;
            if (delta < 1e-14) break;
        }
        double f = u.dot(G * u);
        if (f < best_f) {
            best_f = f;
            best = u;
        }
    }
    return best;
}

}  // namespace detail

/// Ensemble weights for an n x D matrix of LOOCV residual columns.
/// Exact support enumeration for D <= 12, projected gradient otherwise. Ties
/// go to the larger support, then to the lower kernel index.
[[nodiscard]] inline Eigen::VectorXd ensemble_weights(const Eigen::MatrixXd& loocv_matrix,
                                                      WeightConstraint c = WeightConstraint::Sphere) {
    const Eigen::Index D = loocv_matrix.cols();
    if (D < 1) throw InputError("ensemble_weights needs at least one column");
    if (!loocv_matrix.allFinite()) throw InputError("ensemble_weights: non-finite LOOCV residuals");
    if (D == 1) return Eigen::VectorXd::Ones(1);
    Eigen::MatrixXd G = loocv_matrix.transpose() * loocv_matrix;
    G = 0.5 * (G + G.transpose()).eval();
    return D <= 12 ? detail::weights_enumerate(G, c) : detail::weights_projected_gradient(G, c);
}

struct BaseKernelFit {
    std::string label;
    std::optional<KernelSpec> spec;
    double lambda_hat = 0.0;
    /// K_d (K_d + lambda_hat I)^-1
    Eigen::MatrixXd A;
    Eigen::VectorXd loocv;
    LambdaTuning tuning;
};

[[nodiscard]] inline Eigen::MatrixXd ensemble_hat(const std::vector<BaseKernelFit>& fits, const Eigen::VectorXd& u) {
    if (fits.empty() || static_cast<Eigen::Index>(fits.size()) != u.size())
        throw InputError("ensemble_hat: weights do not match the number of base fits");
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(fits.front().A.rows(), fits.front().A.cols());
    for (std::size_t d = 0; d < fits.size(); ++d) A += u(static_cast<Eigen::Index>(d)) * fits[d].A;
    return 0.5 * (A + A.transpose());
}

struct ReconstructedKernel {
    GramMatrix K;
    /// eigenvalues of A after clipping to [0, 1 - clip]
    Eigen::VectorXd clipped_eigenvalues;
    int clipped_low = 0;
    int clipped_high = 0;
};

/// K_hat = U diag(d / (1 - d)) U' from the eigendecomposition of A.
[[nodiscard]] inline ReconstructedKernel reconstruct_kernel(const Eigen::MatrixXd& A_hat, double clip = 1e-6) {
    if (A_hat.rows() != A_hat.cols()) throw InputError("reconstruct_kernel: matrix must be square");
    Eigen::MatrixXd A = 0.5 * (A_hat + A_hat.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    if (es.info() != Eigen::Success) throw FactorizationError("eigendecomposition of ensemble hat matrix failed");
    ReconstructedKernel out;
    Eigen::VectorXd d = es.eigenvalues();
    const double upper = 1.0 - clip;
    for (Eigen::Index k = 0; k < d.size(); ++k) {
        if (d(k) < 0.0) {
            d(k) = 0.0;
            ++out.clipped_low;
        } else if (d(k) > upper) {
            d(k) = upper;
            ++out.clipped_high;
        }
    }
    out.clipped_eigenvalues = d;
    Eigen::VectorXd ratio = (d.array() / (1.0 - d.array())).matrix();
    const auto& U = es.eigenvectors();
    Eigen::MatrixXd K = U * ratio.asDiagonal() * U.transpose();
    out.K = GramMatrix(0.5 * (K + K.transpose()), "cvek");
    return out;
}

struct EnsembleFit {
    Eigen::VectorXd weights;
    Eigen::MatrixXd A_hat;
    GramMatrix K_hat;
    std::vector<BaseKernelFit> base_fits;
    /// ||sum_d u_d e_d||^2 at the chosen weights
    double objective = 0.0;
    int clipped_low = 0;
    int clipped_high = 0;
};

/// CVEK over precomputed base kernel matrices (labels are for reporting).
[[nodiscard]] inline EnsembleFit cvek_from_grams(const std::vector<GramMatrix>& grams,
                                                 const std::vector<std::string>& labels, const Eigen::VectorXd& y,
                                                 const CvekOptions& opt = {}) {
    if (grams.empty()) throw InputError("cvek: kernel library is empty");
    if (labels.size() != grams.size()) throw InputError("cvek: one label per base kernel required");
    const Eigen::Index n = y.size();
    if (n < 5) throw InputError("cvek needs at least 5 observations");
    if (!y.allFinite()) throw InputError("cvek: response has non-finite values");
    Eigen::VectorXd yc = opt.center_response ? Eigen::VectorXd(y.array() - y.mean()) : y;

    EnsembleFit fit;
    Eigen::MatrixXd E(n, static_cast<Eigen::Index>(grams.size()));
    for (std::size_t d = 0; d < grams.size(); ++d) {
        if (grams[d].size() != n) throw InputError("cvek: base kernel dimension does not match response");
        detail::RidgeSpectrum spec(grams[d].values());
        BaseKernelFit bf;
        bf.label = labels[d];
        bf.tuning = detail::tune_on_spectrum(spec, yc, lambda_grid(grams[d], opt), opt.intercept);
        bf.lambda_hat = bf.tuning.lambda_hat;
        bf.loocv = bf.tuning.loocv;
        bf.A = spec.hat(bf.lambda_hat);
        E.col(static_cast<Eigen::Index>(d)) = bf.loocv;
        fit.base_fits.push_back(std::move(bf));
    }
    fit.weights = ensemble_weights(E, opt.constraint);
    fit.objective = (E * fit.weights).squaredNorm();
    fit.A_hat = ensemble_hat(fit.base_fits, fit.weights);
    auto rec = reconstruct_kernel(fit.A_hat, opt.clip);
    fit.K_hat = std::move(rec.K);
    fit.clipped_low = rec.clipped_low;
    fit.clipped_high = rec.clipped_high;
    return fit;
}

/// CVEK over a library of kernel specs evaluated on X.
[[nodiscard]] inline EnsembleFit cvek(const std::vector<KernelSpec>& library, const Eigen::MatrixXd& X,
                                      const Eigen::VectorXd& y, const CvekOptions& opt = {}) {
    if (library.empty()) throw InputError("cvek: kernel library is empty");
    if (X.rows() != y.size()) throw InputError("cvek: X rows do not match response length");
    std::vector<GramMatrix> grams;
    std::vector<std::string> labels;
    for (const auto& s : library) {
        grams.push_back(gram_matrix(s, X));
        labels.push_back(s.to_string());
    }
    auto fit = cvek_from_grams(grams, labels, y, opt);
    for (std::size_t d = 0; d < library.size(); ++d) fit.base_fits[d].spec = library[d];
    return fit;
}

}  // namespace gpvct
