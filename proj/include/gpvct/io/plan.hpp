#pragma once

// Turning a parsed config into test / simulation settings.

#include <charconv>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "../errors.hpp"
#include "../kernel.hpp"
#include "../simulate.hpp"
#include "config.hpp"

namespace gpvct::io {

/// Ordered (key, value) record of every setting in effect, defaults included.
using EffectiveConfig = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string where(const ConfigValue& v, std::string_view key) {
    return "line " + std::to_string(v.line) + ": '" + std::string(key) + "' ";
}

inline double to_double(const std::string& s, const ConfigValue& v, std::string_view key) {
    double x = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(x))
        throw ConfigError(where(v, key) + "expects a number, got '" + s + "'");
    return x;
}

template <class Int>
inline Int to_int(const std::string& s, const ConfigValue& v, std::string_view key) {
    Int x{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError(where(v, key) + "expects an integer, got '" + s + "'");
    return x;
}

inline bool to_bool(const std::string& s, const ConfigValue& v, std::string_view key) {
    if (s == "true" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "off" || s == "no") return false;
    throw ConfigError(where(v, key) + "expects true or false, got '" + s + "'");
}

inline void check_keys(const ConfigSection& s, const std::set<std::string, std::less<>>& allowed,
                       const std::set<std::string, std::less<>>& blocks) {
    for (const auto& [k, v] : s.entries)
        if (!allowed.count(k))
            throw ConfigError(where(v, k) + "is not a recognised setting" +
                              (s.name.empty() ? std::string{} : " in section '" + s.name + "'"));
    for (const auto& sub : s.sections)
        if (!blocks.count(sub.name))
            throw ConfigError("line " + std::to_string(sub.line) + ": unexpected section '" + sub.name + "'");
}


/// Column selector from a scalar or a list of selectors.
inline std::string selector(const ConfigValue& v, std::string_view key) {
    if (!v.is_list) return v.scalar(key);
    std::string s;
    for (const auto& it : v.items) s += (s.empty() ? "" : ",") + it;
    return s;
}

}  // namespace detail

[[nodiscard]] inline std::string_view standardization_tag(Standardization s) {
    return s == Standardization::MeanSd ? "mean-sd" : "unit-norm";
}
[[nodiscard]] inline std::string_view median_tag(MedianConvention m) {
    return m == MedianConvention::InverseSquaredDistance ? "inverse-squared" : "distance";
}
[[nodiscard]] inline std::string_view constraint_tag(WeightConstraint c) {
    return c == WeightConstraint::Sphere ? "sphere" : "simplex";
}
[[nodiscard]] inline std::string_view derivative_tag(EnsembleDerivative d) {
    return d == EnsembleDerivative::LambdaScaled ? "lambda-scaled" : "unscaled";
}

/// Settings shared by test and simulate modes.
struct ModelSettings {
    StrategyOptions strategy;

    void apply(const std::string& key, const ConfigValue& v) {
        const auto& s = v.scalar(key);
        if (key == "center") {
            strategy.interaction.center = detail::to_bool(s, v, key);
        } else if (key == "median_convention") {
            if (s == "inverse-squared") strategy.median = MedianConvention::InverseSquaredDistance;
            else if (s == "distance") strategy.median = MedianConvention::Distance;
            else throw ConfigError(detail::where(v, key) + "must be inverse-squared or distance");
        } else if (key == "constraint") {
            if (s == "sphere") strategy.interaction.cvek.constraint = WeightConstraint::Sphere;
            else if (s == "simplex") strategy.interaction.cvek.constraint = WeightConstraint::Simplex;
            else throw ConfigError(detail::where(v, key) + "must be sphere or simplex");
        } else if (key == "derivative") {
            if (s == "lambda-scaled") strategy.interaction.derivative = EnsembleDerivative::LambdaScaled;
            else if (s == "unscaled") strategy.interaction.derivative = EnsembleDerivative::Unscaled;
            else throw ConfigError(detail::where(v, key) + "must be lambda-scaled or unscaled");
        } else if (key == "model_sigma") {
            double x = detail::to_double(s, v, key);
            if (!(x > 0.0)) throw ConfigError(detail::where(v, key) + "must be positive");
            strategy.model_sigma = x;
        } else if (key == "center_response") {
            strategy.interaction.cvek.center_response = detail::to_bool(s, v, key);
        }
    }

    static bool owns(std::string_view key) {
        return key == "center" || key == "median_convention" || key == "constraint" || key == "derivative" ||
               key == "model_sigma" || key == "center_response";
    }

    void describe(EffectiveConfig& out, std::string_view model_sigma_default) const {
        const auto& io = strategy.interaction;
        out.emplace_back("center", io.center ? "true" : "false");
        out.emplace_back("center_response", io.cvek.center_response ? "true" : "false");
        out.emplace_back("median_convention", median_tag(strategy.median));
        out.emplace_back("constraint", constraint_tag(io.cvek.constraint));
        out.emplace_back("derivative", derivative_tag(io.derivative));
        out.emplace_back("model_sigma", strategy.model_sigma ? gpvct::detail::format_double(*strategy.model_sigma)
                                                             : std::string(model_sigma_default));
    }
};

// ---------------------------------------------------------------- test mode

struct TestSettings {
    std::string data;
    std::string response = "y";
    std::string group1;
    std::string group2;
    /// strategy tag or ';'-separated kernel specs (one spec: fixed kernel; several: CVEK)
    std::string strategy = "cvek-rbf";
    std::uint64_t seed = 1;
    std::string out;
    ModelSettings model;

    [[nodiscard]] EffectiveConfig effective() const {
        EffectiveConfig e{{"mode", "test"},     {"data", data},         {"response", response},
                          {"group1", group1},   {"group2", group2},     {"strategy", strategy},
                          {"seed", std::to_string(seed)}};
        model.describe(e, "1");
        return e;
    }
};

[[nodiscard]] inline TestSettings test_settings(const ConfigSection& root) {
    static const std::set<std::string, std::less<>> keys{
        "mode",  "data",   "response", "group1",     "group2",         "strategy",   "seed", "out",
        "center", "median_convention", "constraint", "derivative", "model_sigma", "center_response"};
    detail::check_keys(root, keys, {});
    TestSettings t;
    for (const auto& [k, v] : root.entries) {
        if (k == "mode") {
            if (v.scalar(k) != "test") throw ConfigError(detail::where(v, k) + "is '" + v.items[0] + "', expected test");
        } else if (k == "data") t.data = v.scalar(k);
        else if (k == "response") t.response = v.scalar(k);
        else if (k == "group1") t.group1 = detail::selector(v, k);
        else if (k == "group2") t.group2 = detail::selector(v, k);
        else if (k == "strategy") {
            if (v.is_list) {
                t.strategy.clear();
                for (const auto& it : v.items) t.strategy += (t.strategy.empty() ? "" : ";") + it;
            } else {
                t.strategy = v.scalar(k);
            }
        } else if (k == "seed") t.seed = detail::to_int<std::uint64_t>(v.scalar(k), v, k);
        else if (k == "out") t.out = v.scalar(k);
        else t.model.apply(k, v);
    }
    return t;
}

// ----------------------------------------------------------- simulate mode

struct SimulationPlan {
    std::vector<SimScenario> cells;
    ModelSettings model;
    unsigned threads = 1;
    std::string out;
    EffectiveConfig base;

    /// per-cell settings that vary over the grid
    [[nodiscard]] static EffectiveConfig describe_cell(const SimScenario& c) {
        return {{"n", std::to_string(c.n)},
                {"p1", std::to_string(c.p1)},
                {"p2", std::to_string(c.p2)},
                {"reps", std::to_string(c.reps)},
                {"noise_sd", gpvct::detail::format_double(c.noise_sd)},
                {"seed", std::to_string(c.seed)},
                {"standardization", std::string(standardization_tag(c.standardization))},
                {"k_true", c.k_true.to_string()},
                {"strategy", std::string(strategy_tag(c.strategy))},
                {"delta", gpvct::detail::format_double(c.delta)}};
    }
};

namespace detail {

/// Axis values accumulated from top level, then overridden per block.
struct CellTemplate {
    SimScenario base;
    std::vector<std::string> k_true{"rbf"};
    std::vector<std::optional<double>> sigma_true{std::nullopt};
    std::vector<Strategy> strategy{Strategy::CvekRbf};
    std::vector<double> delta{0.0};

    void apply(const std::string& key, const ConfigValue& v, bool lists_ok) {
        auto scalar_only = [&] {
            if (v.is_list) throw ConfigError(where(v, key) + "expects a single value");
        };
        auto items = [&]() -> const std::vector<std::string>& {
            if (v.is_list && !lists_ok)
                throw ConfigError(where(v, key) + "expects a single value inside a scenario block");
            if (v.items.empty()) throw ConfigError(where(v, key) + "list is empty");
            return v.items;
        };
        if (key == "k_true") {
            k_true.clear();
            for (const auto& s : items()) {
                try {
                    (void)KernelSpec::parse(s);
                } catch (const InputError& e) {
                    throw ConfigError(where(v, key) + e.what());
                }
                k_true.push_back(s);
            }
        } else if (key == "sigma_true") {
            sigma_true.clear();
            for (const auto& s : items()) {
                double x = to_double(s, v, key);
                if (!(x > 0.0)) throw ConfigError(where(v, key) + "values must be positive");
                sigma_true.emplace_back(x);
            }
        } else if (key == "strategy") {
            strategy.clear();
            for (const auto& s : items()) {
                auto st = try_parse_strategy(s);
                if (!st) throw ConfigError(where(v, key) + "unknown modeling strategy '" + s + "'");
                strategy.push_back(*st);
            }
        } else if (key == "delta") {
            delta.clear();
            for (const auto& s : items()) {
                double x = to_double(s, v, key);
                if (x < 0.0) throw ConfigError(where(v, key) + "values must be >= 0");
                delta.push_back(x);
            }
        } else if (key == "n") {
            scalar_only();
            base.n = to_int<int>(v.scalar(key), v, key);
        } else if (key == "p1") {
            scalar_only();
            base.p1 = to_int<int>(v.scalar(key), v, key);
        } else if (key == "p2") {
            scalar_only();
            base.p2 = to_int<int>(v.scalar(key), v, key);
        } else if (key == "reps") {
            scalar_only();
            base.reps = to_int<int>(v.scalar(key), v, key);
        } else if (key == "noise_sd") {
            scalar_only();
            base.noise_sd = to_double(v.scalar(key), v, key);
        } else if (key == "seed") {
            scalar_only();
            base.seed = to_int<std::uint64_t>(v.scalar(key), v, key);
        } else if (key == "standardization") {
            const auto& s = v.scalar(key);
            if (s == "mean-sd") base.standardization = Standardization::MeanSd;
            else if (s == "unit-norm") base.standardization = Standardization::UnitNorm;
            else throw ConfigError(where(v, key) + "must be mean-sd or unit-norm");
        }
    }

    void expand(std::vector<SimScenario>& out, int line) const {
        for (const auto& kt : k_true)
            for (const auto& st : sigma_true)
                for (auto strat : strategy)
                    for (double d : delta) {
                        SimScenario c = base;
                        c.k_true = KernelSpec::parse(kt);
                        if (st) {
                            if (!c.k_true.uses_sigma())
                                throw ConfigError("line " + std::to_string(line) + ": sigma_true given but k_true '" +
                                                  kt + "' has no sigma");
                            c.k_true.sigma = *st;
                        }
                        c.strategy = strat;
                        c.delta = d;
                        try {
                            c.validate();
                        } catch (const InputError& e) {
                            throw ConfigError("line " + std::to_string(line) + ": " + e.what());
                        }
                        out.push_back(c);
                    }
    }
};

inline const std::set<std::string, std::less<>>& cell_keys() {
    static const std::set<std::string, std::less<>> k{"n",     "p1",       "p2",    "reps",
                                                      "noise_sd", "seed",  "standardization", "k_true",
                                                      "sigma_true", "strategy", "delta"};
    return k;
}

}  // namespace detail

/// Cells: every grid { } block expands to k_true x sigma_true x strategy x
/// delta (delta fastest); every scenario { } block is one cell. Top-level cell
/// keys give defaults for the blocks; with no blocks the top level is itself a
/// grid. All cells share the top-level seed unless a block overrides it.
[[nodiscard]] inline SimulationPlan simulation_plan(const ConfigSection& root) {
    auto top_keys = detail::cell_keys();
    for (auto k : {"mode", "threads", "out", "center", "median_convention", "constraint", "derivative",
                   "model_sigma", "center_response"})
        top_keys.insert(k);
    detail::check_keys(root, top_keys, {"grid", "scenario"});

    SimulationPlan plan;
    detail::CellTemplate top;
    for (const auto& [k, v] : root.entries) {
        if (k == "mode") {
            if (v.scalar(k) != "simulate")
                throw ConfigError(detail::where(v, k) + "is '" + v.items[0] + "', expected simulate");
        } else if (k == "threads") {
            plan.threads = detail::to_int<unsigned>(v.scalar(k), v, k);
            if (plan.threads == 0) throw ConfigError(detail::where(v, k) + "must be >= 1");
        } else if (k == "out") {
            plan.out = v.scalar(k);
        } else if (ModelSettings::owns(k)) {
            plan.model.apply(k, v);
        } else {
            top.apply(k, v, true);
        }
    }
    if (root.sections.empty()) {
        top.expand(plan.cells, 1);
    } else {
        for (const auto& sec : root.sections) {
            detail::check_keys(sec, detail::cell_keys(), {});
            auto cell = top;
            for (const auto& [k, v] : sec.entries) cell.apply(k, v, sec.name == "grid");
            cell.expand(plan.cells, sec.line);
        }
    }
    if (plan.cells.empty()) throw ConfigError("simulation config defines no scenario cells");
    plan.base = {{"mode", "simulate"}, {"threads", std::to_string(plan.threads)},
                 {"cells", std::to_string(plan.cells.size())}};
    plan.model.describe(plan.base, "k_true sigma");
    return plan;
}

}  // namespace gpvct::io
