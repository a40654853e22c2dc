#pragma once

// Monte-Carlo calibration study for the interaction test.
//
//   y_i = h1(x_i1) + h2(x_i2) + delta h12(x_i1, x_i2) + eps_i
//
// with standard-normal features, component functions drawn from GP(0, k_true)
// on centered grams and standardized, and eps ~ N(0, noise_sd^2).

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "cvek.hpp"
#include "errors.hpp"
#include "gp_lmm.hpp"
#include "interaction.hpp"
#include "kernel.hpp"
#include "score_test.hpp"

namespace gpvct {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed of replicate `index`; depends on nothing but the scenario seed and index.
[[nodiscard]] constexpr std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

enum class Strategy {
    Linear,
    Quadratic,
    RbfMedian,
    RbfMle,
    Matern12,
    Matern32,
    Matern52,
    Nn01,
    Nn1,
    Nn10,
    CvekRbf,
    CvekNn,
};

inline constexpr std::array<Strategy, 12> kAllStrategies{
    Strategy::Linear,   Strategy::Quadratic, Strategy::RbfMedian, Strategy::RbfMle,
    Strategy::Matern12, Strategy::Matern32,  Strategy::Matern52,  Strategy::Nn01,
    Strategy::Nn1,      Strategy::Nn10,      Strategy::CvekRbf,   Strategy::CvekNn,
};

[[nodiscard]] inline std::string_view strategy_tag(Strategy s) {
    switch (s) {
        case Strategy::Linear: return "linear";
        case Strategy::Quadratic: return "quad";
        case Strategy::RbfMedian: return "rbf-median";
        case Strategy::RbfMle: return "rbf-mle";
        case Strategy::Matern12: return "matern-1/2";
        case Strategy::Matern32: return "matern-3/2";
        case Strategy::Matern52: return "matern-5/2";
        case Strategy::Nn01: return "nn-0.1";
        case Strategy::Nn1: return "nn-1";
        case Strategy::Nn10: return "nn-10";
        case Strategy::CvekRbf: return "cvek-rbf";
        case Strategy::CvekNn: return "cvek-nn";
    }
    return "?";
}

[[nodiscard]] inline std::optional<Strategy> try_parse_strategy(std::string_view tag) {
    for (auto s : kAllStrategies)
        if (strategy_tag(s) == tag) return s;
    return std::nullopt;
}

[[nodiscard]] inline Strategy parse_strategy(std::string_view tag) {
    if (auto s = try_parse_strategy(tag)) return *s;
    throw ConfigError("unknown modeling strategy '" + std::string(tag) + "'");
}

enum class Standardization {
    /// empirical mean 0, population standard deviation 1
    MeanSd,
    /// mean 0, unit Euclidean norm
    UnitNorm,
};

enum class MedianConvention {
    /// sigma = 1 / median ||xi - xj||^2
    InverseSquaredDistance,
    /// sigma = median ||xi - xj||
    Distance,
};

struct SimScenario {
    int n = 100;
    int p1 = 5;
    int p2 = 5;
    KernelSpec k_true = KernelSpec::rbf(1.0);
    double delta = 0.0;
    Strategy strategy = Strategy::CvekRbf;
    int reps = 1000;
    double noise_sd = 1.0;
    std::uint64_t seed = 1;
    Standardization standardization = Standardization::MeanSd;

    void validate() const {
        if (n < 5) throw ConfigError("scenario n must be at least 5");
        if (p1 < 1 || p2 < 1) throw ConfigError("scenario p1 and p2 must be positive");
        if (!(delta >= 0.0) || !std::isfinite(delta)) throw ConfigError("scenario delta must be >= 0");
        if (reps < 1) throw ConfigError("scenario reps must be >= 1");
        if (!(noise_sd > 0.0) || !std::isfinite(noise_sd)) throw ConfigError("scenario noise_sd must be > 0");
        k_true.validate();
    }
};

/// MVN(0, K) draw through a jittered Cholesky factor.
[[nodiscard]] inline Eigen::VectorXd sample_gp_raw(const GramMatrix& K, Rng& rng) {
    const Eigen::Index n = K.size();
    if (n < 1 || K.values().cwiseAbs().maxCoeff() == 0.0)
        throw NumericalError("cannot sample from a zero covariance matrix");
    double jitter = 1e-8 * std::max(K.trace() / static_cast<double>(n), 1e-300);
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (int attempt = 0; attempt < 4; ++attempt, jitter *= 100.0) {
        Eigen::MatrixXd M = K.values();
        M.diagonal().array() += jitter;
        llt.compute(M);
        if (llt.info() == Eigen::Success) break;
    }
    if (llt.info() != Eigen::Success) throw FactorizationError("covariance is not positive semi-definite");
    std::normal_distribution<double> z01(0.0, 1.0);
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = z01(rng);
    return llt.matrixL() * z;
}

[[nodiscard]] inline Eigen::VectorXd standardize(Eigen::VectorXd h, Standardization mode) {
    h.array() -= h.mean();
    double scale = mode == Standardization::MeanSd ? std::sqrt(h.squaredNorm() / static_cast<double>(h.size()))
                                                   : h.norm();
    if (!(scale > 0.0)) throw NumericalError("sampled function is constant; cannot standardize");
    return h / scale;
}

[[nodiscard]] inline Eigen::VectorXd sample_gp_function(const GramMatrix& K, Rng& rng,
                                                        Standardization mode = Standardization::MeanSd) {
    return standardize(sample_gp_raw(K, rng), mode);
}

struct Dataset {
    Eigen::VectorXd y;
    Eigen::MatrixXd X1;
    Eigen::MatrixXd X2;
    Eigen::VectorXd h1;
    Eigen::VectorXd h2;
    Eigen::VectorXd h12;
    Eigen::VectorXd noise;
};

/// Draw order: X1, X2 (row-major), h1, h2, h12, noise. h12 is drawn for every
/// delta so datasets with the same seed share X, h1, h2 and noise.
[[nodiscard]] inline Dataset generate_dataset(const SimScenario& sc, Rng& rng) {
    sc.validate();
    std::normal_distribution<double> z01(0.0, 1.0);
    auto features = [&](int p) {
        Eigen::MatrixXd X(sc.n, p);
        for (int i = 0; i < sc.n; ++i)
            for (int j = 0; j < p; ++j) X(i, j) = z01(rng);
        return X;
    };
    Dataset d;
    d.X1 = features(sc.p1);
    d.X2 = features(sc.p2);
    GramMatrix K1 = center_gram(gram_matrix(sc.k_true, d.X1));
    GramMatrix K2 = center_gram(gram_matrix(sc.k_true, d.X2));
    d.h1 = sample_gp_function(K1, rng, sc.standardization);
    d.h2 = sample_gp_function(K2, rng, sc.standardization);
    d.h12 = sample_gp_function(hadamard(K1, K2), rng, sc.standardization);
    d.noise.resize(sc.n);
    for (int i = 0; i < sc.n; ++i) d.noise(i) = sc.noise_sd * z01(rng);
    d.y = d.h1 + d.h2 + sc.delta * d.h12 + d.noise;
    return d;
}

struct StrategyOptions {
    /// sigma for matern-* strategies; the scenario's k_true sigma when unset
    std::optional<double> model_sigma;
    MedianConvention median = MedianConvention::InverseSquaredDistance;
    int mle_grid_size = 25;
    double mle_grid_lo = 1e-3;
    double mle_grid_hi = 1e2;
    InteractionOptions interaction;
};

struct StrategyOutcome {
    TestResult test;
    /// the kernel or library actually used, e.g. "rbf:sigma=0.1" for rbf-median
    std::string resolved;
    double tau_hat = 0.0;
    double sigma2_hat = 0.0;
    double mu_hat = 0.0;
    /// CVEK strategies only
    std::vector<double> weights;
    std::vector<double> lambdas;
};

[[nodiscard]] inline double median_pairwise(const Eigen::MatrixXd& X, MedianConvention conv) {
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(X.rows() * (X.rows() - 1) / 2));
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = i + 1; j < X.rows(); ++j) {
            double sq = (X.row(i) - X.row(j)).squaredNorm();
            d.push_back(conv == MedianConvention::Distance ? std::sqrt(sq) : sq);
        }
    if (d.empty()) throw InputError("median heuristic needs at least two samples");
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double m = *mid;
    if (d.size() % 2 == 0) {
        double lower = *std::max_element(d.begin(), mid);
        m = 0.5 * (m + lower);
    }
    return m;
}

/// Kernel sigma from the median heuristic for one feature group.
[[nodiscard]] inline double median_sigma(const Eigen::MatrixXd& X, MedianConvention conv) {
    double m = median_pairwise(X, conv);
    if (!(m > 0.0)) throw InputError("median pairwise distance is zero");
    return conv == MedianConvention::Distance ? m : 1.0 / m;
}

[[nodiscard]] inline std::optional<KernelSpec> fixed_strategy_spec(Strategy s, double model_sigma) {
    switch (s) {
        case Strategy::Linear: return KernelSpec::linear();
        case Strategy::Quadratic: return KernelSpec::quadratic();
        case Strategy::Matern12: return KernelSpec::matern(MaternNu::Half, model_sigma);
        case Strategy::Matern32: return KernelSpec::matern(MaternNu::ThreeHalves, model_sigma);
        case Strategy::Matern52: return KernelSpec::matern(MaternNu::FiveHalves, model_sigma);
        case Strategy::Nn01: return KernelSpec::neural_net(0.1);
        case Strategy::Nn1: return KernelSpec::neural_net(1.0);
        case Strategy::Nn10: return KernelSpec::neural_net(10.0);
        default: return std::nullopt;
    }
}

namespace detail {

inline StrategyOutcome outcome_from(const InteractionOutcome& io, std::string resolved) {
    StrategyOutcome out;
    out.test = io.test;
    out.resolved = std::move(resolved);
    out.tau_hat = io.fit.tau_hat;
    out.sigma2_hat = io.fit.sigma2_hat;
    out.mu_hat = io.fit.mu_hat;
    return out;
}

}  // namespace detail

/// Run the interaction test on a CVEK library.
[[nodiscard]] inline StrategyOutcome run_cvek_library(const std::vector<KernelSpec>& library,
                                                      const Eigen::MatrixXd& X1, const Eigen::MatrixXd& X2,
                                                      const Eigen::VectorXd& y, const InteractionOptions& opt,
                                                      std::string resolved) {
    auto co = interaction_test_cvek_detailed(library, X1, X2, y, opt);
    StrategyOutcome out;
    out.test = co.test;
    out.resolved = std::move(resolved);
    out.tau_hat = co.fit.tau_hat;
    out.sigma2_hat = co.fit.sigma2_hat;
    out.mu_hat = co.fit.mu_hat;
    for (Eigen::Index d = 0; d < co.ensemble.weights.size(); ++d) {
        out.weights.push_back(co.ensemble.weights(d));
        out.lambdas.push_back(co.ensemble.base_fits[static_cast<std::size_t>(d)].lambda_hat);
    }
    return out;
}

[[nodiscard]] inline StrategyOutcome run_strategy(Strategy strategy, const Eigen::MatrixXd& X1,
                                                  const Eigen::MatrixXd& X2, const Eigen::VectorXd& y,
                                                  const StrategyOptions& opt = {}) {
    const auto& iopt = opt.interaction;
    if (auto spec = fixed_strategy_spec(strategy, opt.model_sigma.value_or(1.0))) {
        auto k = build_interaction_kernels(*spec, *spec, X1, X2, iopt.center);
        return detail::outcome_from(interaction_test_detailed(k, y, iopt.reml), spec->to_string());
    }
    switch (strategy) {
        case Strategy::RbfMedian: {
            auto s1 = KernelSpec::rbf(median_sigma(X1, opt.median));
            auto s2 = KernelSpec::rbf(median_sigma(X2, opt.median));
            auto k = build_interaction_kernels(s1, s2, X1, X2, iopt.center);
            return detail::outcome_from(interaction_test_detailed(k, y, iopt.reml),
                                        s1.to_string() + ";" + s2.to_string());
        }
        case Strategy::RbfMle: {
            if (opt.mle_grid_size < 1) throw ConfigError("rbf-mle grid needs at least one point");
            std::optional<InteractionKernels> best_k;
            std::optional<NullModelFit> best_fit;
            double best_sigma = 0.0;
            std::optional<std::string> last_error;
            const double llo = std::log(opt.mle_grid_lo), lhi = std::log(opt.mle_grid_hi);
            for (int i = 0; i < opt.mle_grid_size; ++i) {
                double t = opt.mle_grid_size == 1 ? 0.0 : static_cast<double>(i) / (opt.mle_grid_size - 1);
                double sigma = std::exp(llo + t * (lhi - llo));
                auto s = KernelSpec::rbf(sigma);
                auto k = build_interaction_kernels(s, s, X1, X2, iopt.center);
                try {
                    auto fit = fit_null_reml(k.K0, y, iopt.reml);
                    if (!best_fit || fit.reml_value > best_fit->reml_value) {
                        best_fit = std::move(fit);
                        best_k = std::move(k);
                        best_sigma = sigma;
                    }
                } catch (const NumericalError& e) {
                    last_error = e.what();
                }
            }
            if (!best_fit) throw FitError("rbf-mle: no sigma grid point could be fitted: " + last_error.value_or(""),
                                          0.0, 0.0, 0.0);
            InteractionOutcome io;
            io.test = variance_component_test(*best_fit, best_k->K12, y);
            io.fit = std::move(*best_fit);
            return detail::outcome_from(io, KernelSpec::rbf(best_sigma).to_string());
        }
        case Strategy::CvekRbf:
            return run_cvek_library(cvek_rbf_library(), X1, X2, y, iopt, std::string(kCvekRbfLibrary));
        case Strategy::CvekNn:
            return run_cvek_library(cvek_nn_library(), X1, X2, y, iopt, std::string(kCvekNnLibrary));
        default: break;
    }
    throw ConfigError("unhandled strategy");
}

struct SimReport {
    SimScenario scenario;
    double rejection_rate = 0.0;
    double standard_error = 0.0;
    /// indexed by replicate; NaN for failed replicates
    std::vector<double> rep_pvalues;
    int failure_count = 0;
    /// first few failure messages, for diagnostics
    std::vector<std::string> failure_messages;

    [[nodiscard]] int valid_reps() const noexcept { return static_cast<int>(rep_pvalues.size()) - failure_count; }
};

inline constexpr double kSignificanceLevel = 0.05;

/// One replicate: dataset from replicate_seed(seed, index), then the strategy.
[[nodiscard]] inline StrategyOutcome run_replicate(const SimScenario& sc, std::uint64_t index,
                                                   const StrategyOptions& opt = {}) {
    Rng rng(replicate_seed(sc.seed, index));
    auto data = generate_dataset(sc, rng);
    StrategyOptions o = opt;
    if (!o.model_sigma) o.model_sigma = sc.k_true.sigma;
    return run_strategy(sc.strategy, data.X1, data.X2, data.y, o);
}

/// All replicates, aggregated, without the failure-rate check.
[[nodiscard]] inline SimReport run_scenario_unchecked(const SimScenario& sc, const StrategyOptions& opt = {},
                                                      unsigned threads = 1) {
    sc.validate();
    SimReport rep;
    rep.scenario = sc;
    const auto reps = static_cast<std::size_t>(sc.reps);
    rep.rep_pvalues.assign(reps, std::numeric_limits<double>::quiet_NaN());
    std::vector<std::string> errors(reps);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < reps; i = next++) {
            try {
                rep.rep_pvalues[i] = run_replicate(sc, i, opt).test.p_value;
            } catch (const Error& e) {
                errors[i] = e.what();
            }
        }
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(reps)));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    int rejected = 0;
    for (std::size_t i = 0; i < reps; ++i) {
        if (std::isnan(rep.rep_pvalues[i])) {
            ++rep.failure_count;
            if (rep.failure_messages.size() < 5) rep.failure_messages.push_back(errors[i]);
        } else if (rep.rep_pvalues[i] <= kSignificanceLevel) {
            ++rejected;
        }
    }
    const int valid = rep.valid_reps();
    if (valid > 0) {
        rep.rejection_rate = static_cast<double>(rejected) / valid;
        rep.standard_error = std::sqrt(rep.rejection_rate * (1.0 - rep.rejection_rate) / valid);
    } else {
        rep.rejection_rate = std::numeric_limits<double>::quiet_NaN();
        rep.standard_error = std::numeric_limits<double>::quiet_NaN();
    }
    return rep;
}

/// Like run_scenario_unchecked, but more than 10% failed replicates is an error.
[[nodiscard]] inline SimReport run_scenario(const SimScenario& sc, const StrategyOptions& opt = {},
                                            unsigned threads = 1) {
    auto rep = run_scenario_unchecked(sc, opt, threads);
    if (rep.failure_count * 10 > sc.reps)
        throw ScenarioError(std::to_string(rep.failure_count) + " of " + std::to_string(sc.reps) +
                            " replicates failed" +
                            (rep.failure_messages.empty() ? std::string{} : ": " + rep.failure_messages.front()));
    return rep;
}

}  // namespace gpvct
