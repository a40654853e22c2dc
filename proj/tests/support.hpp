#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "gpvct/kernel.hpp"

namespace testing_support {

using Rng = std::mt19937_64;

inline Eigen::MatrixXd normal_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = z(rng);
    return m;
}

inline Eigen::VectorXd normal_vector(Eigen::Index n, Rng& rng) { return normal_matrix(n, 1, rng).col(0); }

/// Random PSD matrix B B' / k with rank min(n, k).
inline Eigen::MatrixXd random_psd(Eigen::Index n, Eigen::Index k, Rng& rng) {
    Eigen::MatrixXd B = normal_matrix(n, k, rng);
    Eigen::MatrixXd M = B * B.transpose() / static_cast<double>(k);
    return 0.5 * (M + M.transpose());
}

inline gpvct::GramMatrix random_gram(Eigen::Index n, Eigen::Index k, Rng& rng) {
    return gpvct::GramMatrix(random_psd(n, k, rng), "random");
}

/// Symmetric matrix with eigenvalues drawn uniformly from [lo, hi].
inline Eigen::MatrixXd random_spectrum(Eigen::Index n, double lo, double hi, Rng& rng) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(normal_matrix(n, n, rng));
    Eigen::MatrixXd Q = qr.householderQ();
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::VectorXd d(n);
    for (Eigen::Index i = 0; i < n; ++i) d(i) = u(rng);
    Eigen::MatrixXd M = Q * d.asDiagonal() * Q.transpose();
    return 0.5 * (M + M.transpose());
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace testing_support
