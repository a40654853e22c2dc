#pragma once

#include <stdexcept>
#include <string>

namespace gpvct {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input (dimension mismatch, non-finite values).
class InputError : public Error {
public:
    using Error::Error;
};

/// Invalid kernel specification or kernel spec text.
class SpecError : public InputError {
public:
    using InputError::InputError;
};

/// Configuration file or command-line configuration problem.
class ConfigError : public InputError {
public:
    using InputError::InputError;
};

/// Data file problem; carries the 1-based row and column when known.
class DataError : public InputError {
public:
    DataError(const std::string& msg, long row = -1, long col = -1)
        : InputError(locate(msg, row, col)), row_(row), col_(col) {}
    [[nodiscard]] long row() const noexcept { return row_; }
    [[nodiscard]] long col() const noexcept { return col_; }

private:
    static std::string locate(const std::string& msg, long row, long col) {
        if (row < 0 && col < 0) return msg;
        std::string s = msg + " (";
        if (row >= 0) s += "row " + std::to_string(row);
        if (row >= 0 && col >= 0) s += ", ";
        if (col >= 0) s += "column " + std::to_string(col);
        return s + ")";
    }
    long row_;
    long col_;
};

/// Numerical failure: factorization, optimizer, information matrix.
class NumericalError : public Error {
public:
    using Error::Error;
};

class FactorizationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// REML optimizer failed from every restart; the best iterate is kept.
class FitError : public NumericalError {
public:
    FitError(const std::string& msg, double tau, double sigma2, double value)
        : NumericalError(msg), best_tau(tau), best_sigma2(sigma2), best_value(value) {}
    double best_tau;
    double best_sigma2;
    double best_value;
};

class InformationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DistributionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class TuningError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Degenerate LOOCV hat matrix (some A_ii numerically equal to 1).
class DegenerateHatError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ScenarioError : public Error {
public:
    using Error::Error;
};

}  // namespace gpvct
