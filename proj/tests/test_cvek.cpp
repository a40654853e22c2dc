#include <cmath>

#include <gtest/gtest.h>

#include "gpvct/cvek.hpp"
#include "gpvct/gp_lmm.hpp"
#include "gpvct/simulate.hpp"
#include "support.hpp"

using namespace gpvct;
using testing_support::Rng;

namespace {

// Leave-one-out by explicit refits; optional unpenalized intercept.
Eigen::VectorXd brute_loo(const Eigen::MatrixXd& K, const Eigen::VectorXd& y, double lambda, bool intercept) {
    const auto n = K.rows();
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<Eigen::Index> keep;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) keep.push_back(j);
        const auto m = static_cast<Eigen::Index>(keep.size());
        Eigen::MatrixXd Km(m, m);
        Eigen::VectorXd ym(m), ki(m);
        for (Eigen::Index a = 0; a < m; ++a) {
            ym(a) = y(keep[a]);
            ki(a) = K(i, keep[a]);
            for (Eigen::Index b = 0; b < m; ++b) Km(a, b) = K(keep[a], keep[b]);
        }
        Eigen::MatrixXd M = Km + lambda * Eigen::MatrixXd::Identity(m, m);
        Eigen::MatrixXd Mi = M.inverse();
        double mu = 0.0;
        if (intercept) {
            Eigen::VectorXd one = Eigen::VectorXd::Ones(m);
            mu = one.dot(Mi * ym) / one.dot(Mi * one);
        }
        Eigen::VectorXd alpha = Mi * (ym.array() - mu).matrix();
        out(i) = y(i) - (mu + ki.dot(alpha));
    }
    return out;
}

// Global minimum over the constraint set: every face interior critical point
// is a strictly positive eigenvector (sphere) or G_S^-1 1 direction (simplex).
double enumeration_oracle(const Eigen::MatrixXd& G, WeightConstraint c) {
    const auto D = G.rows();
    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < (1u << D); ++mask) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index d = 0; d < D; ++d)
            if (mask & (1u << d)) idx.push_back(d);
        const auto k = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd Gs(k, k);
        for (Eigen::Index a = 0; a < k; ++a)
            for (Eigen::Index b = 0; b < k; ++b) Gs(a, b) = G(idx[a], idx[b]);
        if (c == WeightConstraint::Sphere) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Gs);
            for (Eigen::Index j = 0; j < k; ++j) {
                Eigen::VectorXd v = es.eigenvectors().col(j);
                if ((v.array() > 0).all() || (v.array() < 0).all()) best = std::min(best, es.eigenvalues()(j));
            }
        } else {
            Eigen::VectorXd x = Gs.ldlt().solve(Eigen::VectorXd::Ones(k));
            if ((x.array() > 0).all()) {
                Eigen::VectorXd u = x / x.sum();
                best = std::min(best, u.dot(Gs * u));
            }
        }
    }
    return best;
}

void expect_sphere_kkt(const Eigen::MatrixXd& G, const Eigen::VectorXd& u, double tol) {
    double mu = u.dot(G * u);
    Eigen::VectorXd g = G * u;
    double scale = std::max(1.0, G.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        if (u(i) > 1e-9) EXPECT_NEAR(g(i), mu * u(i), tol * scale);
        else EXPECT_GE(g(i), -tol * scale);
    }
}

}  // namespace

TEST(LoocvVector, ZeroKernelReturnsResponse) {
    Rng rng(1);
    Eigen::VectorXd y = testing_support::normal_vector(7, rng);
    EXPECT_LT((loocv_vector(GramMatrix(Eigen::MatrixXd::Zero(7, 7)), y, 0.5) - y).norm(), 1e-15);
}

TEST(LoocvVector, InfiniteShrinkage) {
    Rng rng(2);
    auto K = testing_support::random_gram(10, 4, rng);
    Eigen::VectorXd y = testing_support::normal_vector(10, rng);
    EXPECT_LT((loocv_vector(K, y, 1e12) - y).norm(), 1e-9 * y.norm());
}

TEST(LoocvVector, MatchesExplicitRefits) {
    Rng rng(3);
    for (int t = 0; t < 10; ++t) {
        const int n = 12 + t;
        auto K = testing_support::random_gram(n, 5, rng);
        Eigen::VectorXd y = testing_support::normal_vector(n, rng);
        double lambda = 0.05 * (t + 1);
        Eigen::VectorXd oracle = brute_loo(K.values(), y, lambda, false);
        EXPECT_LT((loocv_vector(K, y, lambda) - oracle).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(LoocvVector, DegenerateHat) {
    GramMatrix K(Eigen::MatrixXd::Identity(6, 6));
    EXPECT_THROW((void)loocv_vector(K, Eigen::VectorXd::Ones(6), 1e-14), DegenerateHatError);
    EXPECT_THROW((void)loocv_vector(K, Eigen::VectorXd::Ones(6), 0.0), InputError);
}

TEST(TuneLambda, SpectralShortcutMatchesRefits) {
    Rng rng(4);
    for (int t = 0; t < 10; ++t) {
        const int n = 10 + 2 * t;
        auto K = testing_support::random_gram(n, 6, rng);
        Eigen::VectorXd y = testing_support::normal_vector(n, rng).array() + 1.5;
        double lambda = 0.3 + 0.1 * t;
        for (bool intercept : {false, true}) {
            auto tuned = tune_lambda(K, y, std::vector<double>{lambda}, intercept);
            EXPECT_EQ(tuned.lambda_hat, lambda);
            EXPECT_LT((tuned.loocv - brute_loo(K.values(), y, lambda, intercept)).cwiseAbs().maxCoeff(), 1e-8)
                << "intercept=" << intercept;
        }
    }
}

TEST(TuneLambda, InterceptRemovesCenteringLeak) {
    // near-identity centered gram: plain LOO predicts y_i from the others
    Rng rng(5);
    const int n = 40;
    Eigen::MatrixXd X = testing_support::normal_matrix(n, 5, rng);
    auto K = center_gram(gram_matrix(KernelSpec::rbf(7.0), X));
    Eigen::VectorXd y = testing_support::normal_vector(n, rng);
    y.array() -= y.mean();
    std::vector<double> grid{1e-5};
    double leak = tune_lambda(K, y, grid, false).loocv_sse;
    double fixed = tune_lambda(K, y, grid, true).loocv_sse;
    EXPECT_LT(leak, 1e-3 * y.squaredNorm());
    EXPECT_NEAR(fixed, y.squaredNorm() * std::pow(n / (n - 1.0), 2), 0.05 * y.squaredNorm());
}

TEST(TuneLambda, SingleGridPointAndErrors) {
    Rng rng(6);
    auto K = testing_support::random_gram(8, 3, rng);
    Eigen::VectorXd y = testing_support::normal_vector(8, rng);
    EXPECT_EQ(tune_lambda(K, y, std::vector<double>{0.42}).lambda_hat, 0.42);
    EXPECT_THROW((void)tune_lambda(GramMatrix(Eigen::MatrixXd::Identity(8, 8)), y, std::vector<double>{1e-14}),
                 TuningError);
    EXPECT_THROW((void)tune_lambda(K, y, std::vector<double>{}), InputError);
    EXPECT_THROW((void)tune_lambda(GramMatrix(Eigen::MatrixXd::Identity(4, 4)), Eigen::VectorXd::Ones(4)), InputError);
}

TEST(TuneLambda, GridSpansTraceScale) {
    Rng rng(7);
    auto K = testing_support::random_gram(10, 10, rng);
    auto g = lambda_grid(K);
    ASSERT_EQ(g.size(), 30u);
    double s = K.trace() / 10.0;
    EXPECT_NEAR(g.front(), 1e-5 * s, 1e-12 * s);
    EXPECT_NEAR(g.back(), 1e3 * s, 1e-6 * s);
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_GT(g[i], g[i - 1]);
    auto z = lambda_grid(GramMatrix(Eigen::MatrixXd::Zero(4, 4)));
    EXPECT_NEAR(z.front(), 1e-5, 1e-17);
}

TEST(TuneLambda, NoiseFavoursHeavyShrinkage) {
    Rng rng(8);
    int upper = 0, lower = 0;
    for (int r = 0; r < 100; ++r) {
        Eigen::MatrixXd X = testing_support::normal_matrix(40, 1, rng);
        auto K = gram_matrix(KernelSpec::rbf(1.0), X);
        Eigen::VectorXd y = testing_support::normal_vector(40, rng);
        auto t = tune_lambda(K, y);
        upper += t.index >= t.grid_size / 2;
        lower += t.index < t.grid_size / 2;
    }
    EXPECT_GT(upper, lower);
}

TEST(TuneLambda, SmoothSignalGivesInteriorLambda) {
    Rng rng(9);
    int interior = 0;
    for (int r = 0; r < 100; ++r) {
        Eigen::MatrixXd X = testing_support::normal_matrix(40, 1, rng);
        auto K = gram_matrix(KernelSpec::rbf(1.0), X);
        Rng draw(static_cast<std::uint64_t>(r) + 100);
        Eigen::VectorXd h = sample_gp_raw(K, draw);
        Eigen::VectorXd y = h + 0.1 * testing_support::normal_vector(40, rng);
        auto t = tune_lambda(K, y);
        interior += !t.at_lower_end() && !t.at_upper_end();
    }
    EXPECT_GE(interior, 50);
}

TEST(EnsembleWeights, SingleColumn) {
    Eigen::MatrixXd E(5, 1);
    E << 1, 2, 3, 4, 5;
    EXPECT_EQ(ensemble_weights(E), Eigen::VectorXd::Ones(1));
}

TEST(EnsembleWeights, IdenticalColumns) {
    Rng rng(10);
    Eigen::VectorXd e = testing_support::normal_vector(9, rng);
    Eigen::MatrixXd E(9, 2);
    E << e, e;
    // on the sphere (u1 + u2)^2 ||e||^2 is smallest at an axis; first index wins
    Eigen::VectorXd u = ensemble_weights(E);
    EXPECT_NEAR(u(0), 1.0, 1e-12);
    EXPECT_NEAR(u(1), 0.0, 1e-12);
    // on the simplex every point ties; the larger support gives uniform weights
    Eigen::VectorXd s = ensemble_weights(E, WeightConstraint::Simplex);
    EXPECT_NEAR(s(0), 0.5, 1e-12);
    EXPECT_NEAR(s(1), 0.5, 1e-12);
}

TEST(EnsembleWeights, MatchesEnumerationOracle) {
    Rng rng(11);
    for (int t = 0; t < 60; ++t) {
        const auto D = 2 + t % 4;
        Eigen::MatrixXd E = testing_support::normal_matrix(20, D, rng);
        if (t % 3 == 0) E.col(1) = 0.9 * E.col(0) + 0.1 * E.col(1);  // correlated columns
        Eigen::MatrixXd G = E.transpose() * E;
        for (auto c : {WeightConstraint::Sphere, WeightConstraint::Simplex}) {
            Eigen::VectorXd u = ensemble_weights(E, c);
            EXPECT_GE(u.minCoeff(), 0.0);
            if (c == WeightConstraint::Sphere) EXPECT_NEAR(u.norm(), 1.0, 1e-10);
            else EXPECT_NEAR(u.sum(), 1.0, 1e-10);
            double f = u.dot(G * u);
            EXPECT_NEAR(f, enumeration_oracle(G, c), 1e-8 * std::max(1.0, G.trace()));
            for (Eigen::Index d = 0; d < D; ++d) EXPECT_LE(f, G(d, d) + 1e-10);
            if (c == WeightConstraint::Sphere) expect_sphere_kkt(G, u, 1e-6);
        }
    }
}

TEST(EnsembleWeights, ProjectedGradientForLargeLibraries) {
    Rng rng(12);
    for (int t = 0; t < 5; ++t) {
        Eigen::MatrixXd E = testing_support::normal_matrix(30, 14, rng);
        E += 2.0 * testing_support::normal_matrix(30, 1, rng).replicate(1, 14);
        Eigen::MatrixXd G = E.transpose() * E;
        Eigen::VectorXd u = ensemble_weights(E);
        EXPECT_GE(u.minCoeff(), 0.0);
        EXPECT_NEAR(u.norm(), 1.0, 1e-10);
        double f = u.dot(G * u);
        for (Eigen::Index d = 0; d < 14; ++d) EXPECT_LE(f, G(d, d) + 1e-8);
        expect_sphere_kkt(G, u, 1e-6);
    }
}

TEST(EnsembleHat, Examples) {
    Rng rng(13);
    std::vector<BaseKernelFit> fits(3);
    for (auto& f : fits) f.A = testing_support::random_spectrum(6, 0.0, 0.9, rng);
    Eigen::VectorXd e1 = Eigen::VectorXd::Unit(3, 1);
    EXPECT_EQ(ensemble_hat(fits, e1), fits[1].A);
    Eigen::VectorXd u(3);
    u << 0.2, 0.5, 0.3;
    Eigen::MatrixXd A = ensemble_hat(fits, u);
    EXPECT_LT((A - A.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((A - (0.2 * fits[0].A + 0.5 * fits[1].A + 0.3 * fits[2].A)).cwiseAbs().maxCoeff(), 1e-12);
    for (auto& f : fits) f.A = fits[0].A;
    EXPECT_LT((ensemble_hat(fits, u) - u.sum() * fits[0].A).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ReconstructKernel, Examples) {
    auto zero = reconstruct_kernel(Eigen::MatrixXd::Zero(4, 4));
    EXPECT_LT(zero.K.values().cwiseAbs().maxCoeff(), 1e-15);
    auto half = reconstruct_kernel(0.5 * Eigen::MatrixXd::Identity(4, 4));
    EXPECT_LT((half.K.values() - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ReconstructKernel, RoundTrip) {
    Rng rng(14);
    for (int t = 0; t < 20; ++t) {
        const int n = 5 + t;
        Eigen::MatrixXd A = testing_support::random_spectrum(n, 0.0, 0.9, rng);
        auto rec = reconstruct_kernel(A);
        Eigen::MatrixXd K = rec.K.values();
        Eigen::MatrixXd back = K * (K + Eigen::MatrixXd::Identity(n, n)).inverse();
        EXPECT_LT((back - A).norm(), 1e-10);
        EXPECT_EQ(rec.clipped_low + rec.clipped_high, 0);
        EXPECT_TRUE(check_psd(rec.K).psd);
    }
}

TEST(ReconstructKernel, ClipsOutOfRangeSpectrum) {
    Rng rng(15);
    Eigen::MatrixXd A = testing_support::random_spectrum(8, -0.2, 1.6, rng);
    auto rec = reconstruct_kernel(A);
    EXPECT_GT(rec.clipped_low + rec.clipped_high, 0);
    EXPECT_TRUE(check_psd(rec.K).psd);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseMin(1.0 - 1e-6);
    Eigen::MatrixXd clipped = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
    Eigen::MatrixXd K = rec.K.values();
    EXPECT_LT((K * (K + Eigen::MatrixXd::Identity(8, 8)).inverse() - clipped).norm(), 1e-8);
}

TEST(Cvek, InvariantsOnRandomData) {
    Rng rng(16);
    Eigen::MatrixXd X = testing_support::normal_matrix(30, 2, rng);
    Eigen::VectorXd y = (X.col(0).array().sin() + 0.3 * testing_support::normal_vector(30, rng).array()).matrix();
    auto fit = cvek(cvek_rbf_library(), X, y);
    ASSERT_EQ(fit.weights.size(), 5);
    EXPECT_NEAR(fit.weights.norm(), 1.0, 1e-10);
    EXPECT_GE(fit.weights.minCoeff(), 0.0);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(30, 30);
    for (std::size_t d = 0; d < 5; ++d) A += fit.weights(static_cast<Eigen::Index>(d)) * fit.base_fits[d].A;
    EXPECT_LT((fit.A_hat - A).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::MatrixXd K = fit.K_hat.values();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.A_hat);
    Eigen::VectorXd dd = es.eigenvalues().cwiseMax(0.0).cwiseMin(1.0 - 1e-6);
    Eigen::MatrixXd clipped = es.eigenvectors() * dd.asDiagonal() * es.eigenvectors().transpose();
    EXPECT_LT((K * (K + Eigen::MatrixXd::Identity(30, 30)).inverse() - clipped).norm(), 1e-8);
    for (const auto& b : fit.base_fits) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eb(b.A);
        EXPECT_GE(eb.eigenvalues().minCoeff(), -1e-12);
        EXPECT_LT(eb.eigenvalues().maxCoeff(), 1.0);
        EXPECT_GT(b.lambda_hat, 0.0);
    }
    double best_single = std::numeric_limits<double>::infinity();
    for (const auto& b : fit.base_fits) best_single = std::min(best_single, b.loocv.squaredNorm());
    EXPECT_LE(fit.objective, best_single + 1e-10);
}

TEST(Cvek, SingleKernelLibrary) {
    Rng rng(17);
    Eigen::MatrixXd X = testing_support::normal_matrix(25, 1, rng);
    Eigen::VectorXd y = testing_support::normal_vector(25, rng);
    auto fit = cvek({KernelSpec::rbf(1.0)}, X, y);
    EXPECT_EQ(fit.weights, Eigen::VectorXd::Ones(1));
    EXPECT_LT((fit.A_hat - fit.base_fits[0].A).cwiseAbs().maxCoeff(), 1e-15);
    // without clipping the reconstruction is K / lambda_hat
    ASSERT_EQ(fit.clipped_high, 0);
    Eigen::MatrixXd expected = gram_matrix(KernelSpec::rbf(1.0), X).values() / fit.base_fits[0].lambda_hat;
    EXPECT_LT((fit.K_hat.values() - expected).cwiseAbs().maxCoeff(), 1e-8 * expected.cwiseAbs().maxCoeff());
}

TEST(Cvek, PrefersMatchedKernel) {
    Rng rng(18);
    int matched = 0;
    for (int r = 0; r < 100; ++r) {
        Eigen::MatrixXd X = testing_support::normal_matrix(50, 1, rng);
        auto K = gram_matrix(KernelSpec::rbf(1.0), X);
        Rng draw(static_cast<std::uint64_t>(r) + 7);
        Eigen::VectorXd y = sample_gp_function(K, draw) + 0.3 * testing_support::normal_vector(50, rng);
        auto fit = cvek({KernelSpec::rbf(1e-4), KernelSpec::rbf(1.0)}, X, y);
        matched += fit.weights(1) >= 0.5;
    }
    EXPECT_GE(matched, 70);
}

TEST(Cvek, EnsembleKernelFeedsRemlFit) {
    SimScenario sc;
    sc.k_true = KernelSpec::rbf(0.2);
    Rng rng(replicate_seed(5, 0));
    auto d = generate_dataset(sc, rng);
    Eigen::MatrixXd X(d.X1.rows(), d.X1.cols() + d.X2.cols());
    X << d.X1, d.X2;
    auto fit = cvek(cvek_rbf_library(), X, d.y);
    auto null_fit = fit_null_reml(fit.K_hat, d.y);
    EXPECT_GT(null_fit.sigma2_hat, 0.0);
}

TEST(Cvek, EmptyLibrary) {
    EXPECT_THROW((void)cvek({}, Eigen::MatrixXd::Zero(5, 1), Eigen::VectorXd::Zero(5)), InputError);
}
