#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "errors.hpp"

namespace gpvct {

/// Cholesky factor of a symmetric positive-definite matrix. If the first
/// attempt fails, a diagonal jitter of 1e-8 * trace / n is added once.
class JitteredCholesky {
public:
    JitteredCholesky() = default;

    explicit JitteredCholesky(const Eigen::MatrixXd& m) : n_(m.rows()) {
        llt_.compute(m);
        if (llt_.info() != Eigen::Success || !std::isfinite(llt_.matrixLLT().diagonal().minCoeff())) {
            double tr = m.trace();
            jitter_ = 1e-8 * std::abs(tr) / static_cast<double>(std::max<Eigen::Index>(n_, 1));
            if (!(jitter_ > 0.0)) jitter_ = 1e-10;
            Eigen::MatrixXd j = m;
            j.diagonal().array() += jitter_;
            llt_.compute(j);
            if (llt_.info() != Eigen::Success || llt_.matrixLLT().diagonal().minCoeff() <= 0.0)
                throw FactorizationError("matrix is not positive definite even after diagonal jitter");
        }
    }

    template <typename Rhs>
    [[nodiscard]] auto solve(const Eigen::MatrixBase<Rhs>& b) const {
        return llt_.solve(b);
    }

    [[nodiscard]] Eigen::MatrixXd inverse() const {
        return llt_.solve(Eigen::MatrixXd::Identity(n_, n_));
    }

    [[nodiscard]] double log_det() const {
        return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    }

    [[nodiscard]] Eigen::MatrixXd lower() const { return llt_.matrixL(); }
    [[nodiscard]] double jitter() const noexcept { return jitter_; }
    [[nodiscard]] Eigen::Index size() const noexcept { return n_; }

private:
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::Index n_ = 0;
    double jitter_ = 0.0;
};

/// tr(A B) without forming the product.
template <typename A, typename B>
[[nodiscard]] double trace_of_product(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    return a.cwiseProduct(b.transpose()).sum();
}

}  // namespace gpvct
