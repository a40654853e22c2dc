#pragma once

// Kernel families, Gram matrices and the textual kernel-spec grammar.
//
//   linear                      x'y
//   quad                        (1 + x'y)^2
//   rbf:sigma=<v>               exp(-sigma ||x - y||^2)
//   matern:nu=<1/2|3/2|5/2>,sigma=<v>
//   nn:sigma=<v>                arcsine network kernel on (1, x)
//
// Library strings expand one entry into several specs:
//   rbf:sigma=e^{-2..2}         sigma = e^-2, e^-1, ..., e^2
//   nn:sigma={0.1,1,10,50}
// and join entries with ';'.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace gpvct {

enum class KernelFamily { Linear, Quadratic, Rbf, Matern, NeuralNet };

/// Matern smoothness; only the three half-integer values are supported.
enum class MaternNu { Half, ThreeHalves, FiveHalves };

[[nodiscard]] inline double matern_nu_value(MaternNu nu) {
    switch (nu) {
        case MaternNu::Half: return 0.5;
        case MaternNu::ThreeHalves: return 1.5;
        case MaternNu::FiveHalves: return 2.5;
    }
    return 0.0;
}

[[nodiscard]] inline std::string_view matern_nu_text(MaternNu nu) {
    switch (nu) {
        case MaternNu::Half: return "1/2";
        case MaternNu::ThreeHalves: return "3/2";
        case MaternNu::FiveHalves: return "5/2";
    }
    return "?";
}

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view s, std::string_view what) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw SpecError("cannot parse " + std::string(what) + " value '" + std::string(s) + "'");
    return v;
}

// Split on `sep` outside of {...} groups.
inline std::vector<std::string_view> split_top(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '{') ++depth;
        else if (s[i] == '}') --depth;
        else if (s[i] == sep && depth == 0) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    out.push_back(s.substr(start));
    return out;
}

}  // namespace detail

struct KernelSpec {
    KernelFamily family = KernelFamily::Rbf;
    double sigma = 1.0;
    MaternNu nu = MaternNu::ThreeHalves;

    [[nodiscard]] static KernelSpec linear() { return {KernelFamily::Linear, 1.0, MaternNu::ThreeHalves}; }
    [[nodiscard]] static KernelSpec quadratic() { return {KernelFamily::Quadratic, 1.0, MaternNu::ThreeHalves}; }
    [[nodiscard]] static KernelSpec rbf(double sigma) { return {KernelFamily::Rbf, sigma, MaternNu::ThreeHalves}; }
    [[nodiscard]] static KernelSpec matern(MaternNu nu, double sigma) { return {KernelFamily::Matern, sigma, nu}; }
    [[nodiscard]] static KernelSpec neural_net(double sigma) { return {KernelFamily::NeuralNet, sigma, MaternNu::ThreeHalves}; }

    [[nodiscard]] bool uses_sigma() const noexcept {
        return family == KernelFamily::Rbf || family == KernelFamily::Matern || family == KernelFamily::NeuralNet;
    }

    void validate() const {
        if (uses_sigma() && !(sigma > 0.0 && std::isfinite(sigma)))
            throw SpecError("kernel sigma must be positive and finite, got " + detail::format_double(sigma));
    }

    /// Canonical text form; parse(to_string()) reproduces the spec exactly.
    [[nodiscard]] std::string to_string() const {
        switch (family) {
            case KernelFamily::Linear: return "linear";
            case KernelFamily::Quadratic: return "quad";
            case KernelFamily::Rbf: return "rbf:sigma=" + detail::format_double(sigma);
            case KernelFamily::Matern:
                return "matern:nu=" + std::string(matern_nu_text(nu)) + ",sigma=" + detail::format_double(sigma);
            case KernelFamily::NeuralNet: return "nn:sigma=" + detail::format_double(sigma);
        }
        return "?";
    }

    [[nodiscard]] static KernelSpec parse(std::string_view text);

    friend bool operator==(const KernelSpec& a, const KernelSpec& b) {
        if (a.family != b.family) return false;
        if (a.uses_sigma() && a.sigma != b.sigma) return false;
        if (a.family == KernelFamily::Matern && a.nu != b.nu) return false;
        return true;
    }
};

namespace detail {

inline MaternNu parse_nu(std::string_view s) {
    s = trim(s);
    if (s == "1/2" || s == "0.5") return MaternNu::Half;
    if (s == "3/2" || s == "1.5") return MaternNu::ThreeHalves;
    if (s == "5/2" || s == "2.5") return MaternNu::FiveHalves;
    throw SpecError("matern nu must be one of 1/2, 3/2, 5/2, got '" + std::string(s) + "'");
}

// Expand a sigma value expression: plain number, {a,b,...} list, or e^{lo..hi}.
inline std::vector<double> expand_values(std::string_view s) {
    s = trim(s);
    if (s.starts_with("e^{") && s.ends_with("}")) {
        auto body = s.substr(3, s.size() - 4);
        auto dots = body.find("..");
        if (dots == std::string_view::npos) {
            return {std::exp(parse_double(body, "exponent"))};
        }
        double lo = parse_double(body.substr(0, dots), "exponent range");
        double hi = parse_double(body.substr(dots + 2), "exponent range");
        if (lo != std::round(lo) || hi != std::round(hi) || hi < lo)
            throw SpecError("exponent range must be increasing integers: '" + std::string(s) + "'");
        std::vector<double> out;
        for (double k = lo; k <= hi; k += 1.0) out.push_back(std::exp(k));
        return out;
    }
    if (s.starts_with("{") && s.ends_with("}")) {
        std::vector<double> out;
        for (auto item : split_top(s.substr(1, s.size() - 2), ',')) out.push_back(parse_double(item, "sigma"));
        return out;
    }
    return {parse_double(s, "sigma")};
}

struct ParsedEntry {
    KernelFamily family;
    std::vector<double> sigmas;
    std::vector<MaternNu> nus;
};

inline ParsedEntry parse_entry(std::string_view text) {
    text = trim(text);
    auto colon = text.find(':');
    std::string_view name = trim(text.substr(0, colon));
    std::string_view params = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);

    ParsedEntry e{};
    if (name == "linear") e.family = KernelFamily::Linear;
    else if (name == "quad" || name == "quadratic") e.family = KernelFamily::Quadratic;
    else if (name == "rbf") e.family = KernelFamily::Rbf;
    else if (name == "matern") e.family = KernelFamily::Matern;
    else if (name == "nn") e.family = KernelFamily::NeuralNet;
    else throw SpecError("unknown kernel family '" + std::string(name) + "'");

    bool takes_sigma = e.family == KernelFamily::Rbf || e.family == KernelFamily::Matern ||
                       e.family == KernelFamily::NeuralNet;
    if (!takes_sigma && !trim(params).empty())
        throw SpecError("kernel '" + std::string(name) + "' takes no parameters");

    if (!trim(params).empty()) {
        bool seen_sigma = false, seen_nu = false;
        for (auto kv : split_top(params, ',')) {
            auto eq = kv.find('=');
            if (eq == std::string_view::npos) throw SpecError("expected key=value in '" + std::string(kv) + "'");
            auto key = trim(kv.substr(0, eq));
            bool& seen = key == "sigma" ? seen_sigma : seen_nu;
            if ((key == "sigma" || key == "nu") && std::exchange(seen, true))
                throw SpecError("parameter '" + std::string(key) + "' given twice");
            auto val = kv.substr(eq + 1);
            if (key == "sigma") {
                e.sigmas = expand_values(val);
            } else if (key == "nu" && e.family == KernelFamily::Matern) {
                auto v = trim(val);
                if (v.starts_with("{") && v.ends_with("}")) {
                    for (auto item : split_top(v.substr(1, v.size() - 2), ',')) e.nus.push_back(parse_nu(item));
                } else {
                    e.nus.push_back(parse_nu(v));
                }
            } else {
                throw SpecError("unknown parameter '" + std::string(key) + "' for kernel '" + std::string(name) + "'");
            }
        }
    }
    if (takes_sigma && e.sigmas.empty()) e.sigmas.push_back(1.0);
    if (!takes_sigma) e.sigmas.push_back(1.0);
    if (e.family == KernelFamily::Matern && e.nus.empty())
        throw SpecError("matern kernel requires nu");
    if (e.nus.empty()) e.nus.push_back(MaternNu::ThreeHalves);
    return e;
}

}  // namespace detail

/// Parse one spec; sigma defaults to 1 when omitted.
inline KernelSpec KernelSpec::parse(std::string_view text) {
    auto e = detail::parse_entry(text);
    if (e.sigmas.size() != 1 || e.nus.size() != 1)
        throw SpecError("'" + std::string(text) + "' describes a library, not a single kernel");
    KernelSpec spec{e.family, e.sigmas.front(), e.nus.front()};
    spec.validate();
    return spec;
}

/// Expand a ';'-separated library string into individual specs, in order.
[[nodiscard]] inline std::vector<KernelSpec> parse_library(std::string_view text) {
    std::vector<KernelSpec> out;
    for (auto part : detail::split_top(text, ';')) {
        if (detail::trim(part).empty()) continue;
        auto e = detail::parse_entry(part);
        for (auto nu : e.nus)
            for (double s : e.sigmas) {
                KernelSpec spec{e.family, s, nu};
                spec.validate();
                out.push_back(spec);
            }
    }
    if (out.empty()) throw SpecError("empty kernel library");
    return out;
}

inline constexpr std::string_view kCvekRbfLibrary = "rbf:sigma=e^{-2..2}";
inline constexpr std::string_view kCvekNnLibrary = "nn:sigma={0.1,1,10,50}";

[[nodiscard]] inline std::vector<KernelSpec> cvek_rbf_library() { return parse_library(kCvekRbfLibrary); }
[[nodiscard]] inline std::vector<KernelSpec> cvek_nn_library() { return parse_library(kCvekNnLibrary); }

/// Closed-form half-integer Matern correlation at scaled distance a = sqrt(2 nu) sigma r.
[[nodiscard]] inline double matern_closed_form(MaternNu nu, double a) {
    switch (nu) {
        case MaternNu::Half: return std::exp(-a);
        case MaternNu::ThreeHalves: return (1.0 + a) * std::exp(-a);
        case MaternNu::FiveHalves: return (1.0 + a + a * a / 3.0) * std::exp(-a);
    }
    return 0.0;
}

template <typename DerivedA, typename DerivedB>
[[nodiscard]] double eval_kernel(const KernelSpec& spec, const Eigen::MatrixBase<DerivedA>& x,
                                 const Eigen::MatrixBase<DerivedB>& xp) {
    spec.validate();
    if (x.size() != xp.size() || x.size() < 1)
        throw InputError("kernel inputs must have equal, nonzero dimension (" + std::to_string(x.size()) + " vs " +
                         std::to_string(xp.size()) + ")");
    switch (spec.family) {
        case KernelFamily::Linear: return x.dot(xp);
        case KernelFamily::Quadratic: {
            double d = 1.0 + x.dot(xp);
            return d * d;
        }
        case KernelFamily::Rbf: return std::exp(-spec.sigma * (x - xp).squaredNorm());
        case KernelFamily::Matern: {
            double r = (x - xp).norm();
            return matern_closed_form(spec.nu, std::sqrt(2.0 * matern_nu_value(spec.nu)) * spec.sigma * r);
        }
        case KernelFamily::NeuralNet: {
            // augmented inputs (1, x): x~'x~' = 1 + x'x'
            double s2 = 2.0 * spec.sigma;
            double cross = 1.0 + x.dot(xp);
            double nx = 1.0 + x.squaredNorm();
            double ny = 1.0 + xp.squaredNorm();
            double arg = s2 * cross / std::sqrt((1.0 + s2 * nx) * (1.0 + s2 * ny));
            arg = std::clamp(arg, -1.0, 1.0);
            return 2.0 / std::numbers::pi * std::asin(arg);
        }
    }
    return 0.0;
}

/// Dense symmetric kernel matrix with a provenance tag.
class GramMatrix {
public:
    GramMatrix() = default;

    /// Requires a square finite matrix, symmetric to 1e-12 relative; the stored
    /// matrix is exactly symmetrized.
    explicit GramMatrix(Eigen::MatrixXd values, std::string tag = {}) : values_(std::move(values)), tag_(std::move(tag)) {
        if (values_.rows() != values_.cols())
            throw InputError("gram matrix must be square");
        if (!values_.allFinite()) throw InputError("gram matrix has non-finite entries");
        double scale = std::max(1.0, values_.cwiseAbs().maxCoeff());
        double asym = (values_ - values_.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-12 * scale) throw InputError("gram matrix is not symmetric");
        values_ = 0.5 * (values_ + values_.transpose()).eval();
    }

    [[nodiscard]] const Eigen::MatrixXd& values() const noexcept { return values_; }
    [[nodiscard]] Eigen::Index size() const noexcept { return values_.rows(); }
    [[nodiscard]] const std::string& tag() const noexcept { return tag_; }
    [[nodiscard]] double trace() const { return values_.trace(); }

private:
    Eigen::MatrixXd values_;
    std::string tag_;
};

struct PsdReport {
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;
    bool psd = true;
};

/// PSD up to the floating-point tolerance min eig >= -1e-8 * max eig.
[[nodiscard]] inline PsdReport check_psd(const Eigen::MatrixXd& m) {
    PsdReport rep;
    if (m.size() == 0) return rep;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    rep.min_eigenvalue = es.eigenvalues().minCoeff();
    rep.max_eigenvalue = es.eigenvalues().maxCoeff();
    rep.psd = rep.min_eigenvalue >= -1e-8 * std::max(rep.max_eigenvalue, 0.0) - 1e-300;
    if (rep.max_eigenvalue <= 0.0) rep.psd = rep.min_eigenvalue >= -1e-12;
    return rep;
}

[[nodiscard]] inline PsdReport check_psd(const GramMatrix& g) { return check_psd(g.values()); }

/// K(i, j) = k(X.row(i), X.row(j)); upper triangle evaluated and mirrored.
[[nodiscard]] inline GramMatrix gram_matrix(const KernelSpec& spec, const Eigen::MatrixXd& X) {
    spec.validate();
    if (X.rows() < 1 || X.cols() < 1) throw InputError("gram_matrix needs at least one row and column");
    if (!X.allFinite()) throw InputError("gram_matrix input has non-finite entries");
    const Eigen::Index n = X.rows();
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) {
            double v = eval_kernel(spec, X.row(i).transpose(), X.row(j).transpose());
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    return GramMatrix(std::move(K), spec.to_string());
}

[[nodiscard]] inline GramMatrix hadamard(const GramMatrix& a, const GramMatrix& b) {
    if (a.size() != b.size()) throw InputError("hadamard: dimension mismatch");
    return GramMatrix(a.values().cwiseProduct(b.values()), "(" + a.tag() + ")*(" + b.tag() + ")");
}

/// (I - J/n) K (I - J/n).
[[nodiscard]] inline GramMatrix center_gram(const GramMatrix& g) {
    const auto& K = g.values();
    const Eigen::Index n = K.rows();
    if (n < 1) throw InputError("center_gram: empty matrix");
    Eigen::VectorXd row_mean = K.rowwise().mean();
    Eigen::RowVectorXd col_mean = K.colwise().mean();
    double grand = K.mean();
    Eigen::MatrixXd C = K;
    C.colwise() -= row_mean;
    C.rowwise() -= col_mean;
    C.array() += grand;
    C = 0.5 * (C + C.transpose()).eval();
    return GramMatrix(std::move(C), "centered(" + g.tag() + ")");
}

[[nodiscard]] inline GramMatrix operator+(const GramMatrix& a, const GramMatrix& b) {
    if (a.size() != b.size()) throw InputError("gram sum: dimension mismatch");
    return GramMatrix(a.values() + b.values(), a.tag() + "+" + b.tag());
}

}  // namespace gpvct
