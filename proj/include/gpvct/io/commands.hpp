#pragma once

// Command implementations behind the gpvct executable. Each returns the
// process exit code: 0 success, 2 input/config/data error, 3 numerical or
// fit error.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../errors.hpp"
#include "../interaction.hpp"
#include "../kernel.hpp"
#include "../simulate.hpp"
#include "../version.hpp"
#include "config.hpp"
#include "csv.hpp"
#include "plan.hpp"
#include "report.hpp"

namespace gpvct::io {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

/// Command-line values; set fields override the config file.
struct CliOverrides {
    std::optional<std::string> config;
    std::optional<std::string> data;
    std::optional<std::string> out;
    std::optional<std::string> strategy;
    std::optional<std::string> group1;
    std::optional<std::string> group2;
    std::optional<std::string> response;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
};

/// Run `body`, mapping library errors to exit codes and a one-line message.
template <class Fn>
int guarded(std::ostream& err, Fn&& body) {
    try {
        return body();
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
}

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot write '" + p.string() + "'");
    f << text;
    f.flush();
    if (!f) throw InputError("write to '" + p.string() + "' failed");
}

inline std::filesystem::path make_out_dir(const std::string& dir) {
    std::filesystem::path p(dir);
    std::filesystem::create_directories(p);
    return p;
}

/// Kernel family without its sigma, e.g. "matern:nu=3/2".
inline std::string family_label(const KernelSpec& k) {
    switch (k.family) {
        case KernelFamily::Linear: return "linear";
        case KernelFamily::Quadratic: return "quad";
        case KernelFamily::Rbf: return "rbf";
        case KernelFamily::Matern: return "matern:nu=" + std::string(matern_nu_text(k.nu));
        case KernelFamily::NeuralNet: return "nn";
    }
    return "?";
}

inline std::string sigma_label(const KernelSpec& k) {
    return k.uses_sigma() ? gpvct::detail::format_double(k.sigma) : std::string{};
}

inline std::vector<std::string> column_names(const CsvTable& t, const std::vector<std::size_t>& cols) {
    std::vector<std::string> out;
    for (auto c : cols) out.push_back(t.header[c]);
    return out;
}

}  // namespace detail

// -------------------------------------------------------------------- test

struct TestRun {
    TestSettings settings;
    StrategyOutcome outcome;
    std::size_t rows = 0;
    std::vector<std::string> group1;
    std::vector<std::string> group2;
};

[[nodiscard]] inline TestSettings resolve_test_settings(const CliOverrides& o) {
    TestSettings s = o.config ? test_settings(load_config(*o.config)) : TestSettings{};
    if (o.data) s.data = *o.data;
    if (o.out) s.out = *o.out;
    if (o.strategy) s.strategy = *o.strategy;
    if (o.group1) s.group1 = *o.group1;
    if (o.group2) s.group2 = *o.group2;
    if (o.response) s.response = *o.response;
    if (o.seed) s.seed = *o.seed;
    if (s.data.empty()) throw ConfigError("test mode needs a data file (--data or 'data =' in the config)");
    if (s.group1.empty() || s.group2.empty())
        throw ConfigError("test mode needs both column groups (--group1/--group2 or 'group1 =', 'group2 =')");
    if (s.strategy.empty()) throw ConfigError("empty strategy");
    return s;
}

/// Load data and run the interaction test as configured.
[[nodiscard]] inline TestRun run_test(const TestSettings& s) {
    auto table = read_csv(s.data);
    if (table.rows.size() < 5)
        throw DataError("need at least 5 data rows, found " + std::to_string(table.rows.size()));
    auto rcol = select_columns(table, s.response);
    if (rcol.size() != 1) throw DataError("response selector '" + s.response + "' must name exactly one column");
    auto g1 = select_columns(table, s.group1);
    auto g2 = select_columns(table, s.group2);
    std::set<std::size_t> seen{rcol[0]};
    for (const auto* g : {&g1, &g2})
        for (auto c : *g)
            if (!seen.insert(c).second)
                throw DataError("column '" + table.header[c] + "' is used more than once (response/group1/group2)");

    Eigen::VectorXd y = numeric_columns(table, rcol).col(0);
    Eigen::MatrixXd X1 = numeric_columns(table, g1);
    Eigen::MatrixXd X2 = numeric_columns(table, g2);

    TestRun run;
    run.settings = s;
    run.rows = table.rows.size();
    run.group1 = detail::column_names(table, g1);
    run.group2 = detail::column_names(table, g2);

    StrategyOptions opt = s.model.strategy;
    if (!opt.model_sigma) opt.model_sigma = 1.0;
    if (auto tag = try_parse_strategy(s.strategy)) {
        run.outcome = run_strategy(*tag, X1, X2, y, opt);
    } else {
        auto library = parse_library(s.strategy);
        if (library.size() == 1) {
            auto k = build_interaction_kernels(library[0], library[0], X1, X2, opt.interaction.center);
            auto io = interaction_test_detailed(k, y, opt.interaction.reml);
            run.outcome.test = io.test;
            run.outcome.resolved = library[0].to_string();
            run.outcome.tau_hat = io.fit.tau_hat;
            run.outcome.sigma2_hat = io.fit.sigma2_hat;
            run.outcome.mu_hat = io.fit.mu_hat;
        } else {
            std::string resolved;
            for (const auto& k : library) resolved += (resolved.empty() ? "" : ";") + k.to_string();
            run.outcome = run_cvek_library(library, X1, X2, y, opt.interaction, resolved);
        }
    }
    return run;
}

[[nodiscard]] inline Json test_report_json(const TestRun& r) {
    Json j;
    j["version"] = kVersion;
    j["mode"] = "test";
    j["config"] = config_json(r.settings.effective());
    j["decisions"] = decisions_in_effect(r.settings.model.strategy, false);
    j["data"] = {{"rows", r.rows}, {"group1", r.group1}, {"group2", r.group2}};
    Json st;
    st["tag"] = r.settings.strategy;
    st["resolved"] = r.outcome.resolved;
    if (!r.outcome.weights.empty()) {
        st["weights"] = r.outcome.weights;
        st["lambdas"] = r.outcome.lambdas;
    }
    j["strategy"] = st;
    j["null_fit"] = {{"mu_hat", json_number(r.outcome.mu_hat)},
                     {"tau_hat", json_number(r.outcome.tau_hat)},
                     {"sigma2_hat", json_number(r.outcome.sigma2_hat)}};
    j["result"] = test_result_json(r.outcome.test);
    return j;
}

[[nodiscard]] inline std::string test_report_text(const TestRun& r) {
    std::ostringstream os;
    const auto& t = r.outcome.test;
    os << "gpvct " << kVersion << " interaction test\n";
    os << "  data        " << r.settings.data << " (" << r.rows << " rows)\n";
    os << "  strategy    " << r.settings.strategy << " -> " << r.outcome.resolved << '\n';
    if (!r.outcome.weights.empty()) {
        os << "  weights    ";
        for (double w : r.outcome.weights) os << ' ' << sig4(w);
        os << '\n';
    }
    os << "  null fit    mu = " << sig4(r.outcome.mu_hat) << ", tau = " << sig4(r.outcome.tau_hat)
       << ", sigma2 = " << sig4(r.outcome.sigma2_hat) << '\n';
    os << "  T0 = " << sig4(t.T0) << ", kappa = " << sig4(t.kappa) << ", nu = " << sig4(t.nu) << '\n';
    os << "  p-value     " << sig4(t.p_value) << '\n';
    auto flags = t.flag_names();
    if (!flags.empty()) {
        os << "  flags      ";
        for (const auto& f : flags) os << ' ' << f;
        os << '\n';
    }
    os << "settings\n";
    for (const auto& [k, v] : r.settings.effective()) os << "  " << k << " = " << v << '\n';
    os << "conventions\n";
    for (const auto& d : decisions_in_effect(r.settings.model.strategy, false)) os << "  - " << d << '\n';
    return os.str();
}

inline int cmd_test(const CliOverrides& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        auto s = resolve_test_settings(o);
        auto run = run_test(s);
        auto text = test_report_text(run);
        if (!s.out.empty()) {
            auto dir = detail::make_out_dir(s.out);
            detail::write_file(dir / "report.json", test_report_json(run).dump(2) + "\n");
            detail::write_file(dir / "report.txt", text);
        }
        out << text;
        return kExitOk;
    });
}

// ---------------------------------------------------------------- simulate

[[nodiscard]] inline SimulationPlan resolve_simulation_plan(const CliOverrides& o) {
    if (!o.config) throw ConfigError("simulate needs --config");
    auto plan = simulation_plan(load_config(*o.config));
    if (o.threads) {
        if (*o.threads == 0) throw ConfigError("--threads must be >= 1");
        plan.threads = *o.threads;
    }
    if (o.out) plan.out = *o.out;
    if (plan.out.empty()) plan.out = "simulation-out";
    if (o.seed)
        for (auto& c : plan.cells) c.seed = *o.seed;
    if (o.strategy) {
        auto tag = parse_strategy(*o.strategy);
        std::vector<SimScenario> cells;
        std::set<EffectiveConfig> seen;
        for (auto c : plan.cells) {
            c.strategy = tag;
            if (seen.insert(SimulationPlan::describe_cell(c)).second) cells.push_back(c);
        }
        plan.cells = std::move(cells);
    }
    for (auto& [k, v] : plan.base) {
        if (k == "threads") v = std::to_string(plan.threads);
        if (k == "cells") v = std::to_string(plan.cells.size());
    }
    plan.base.emplace_back("out", plan.out);
    return plan;
}

[[nodiscard]] inline Json simulation_manifest(const SimulationPlan& plan, std::size_t done, int failed_cells,
                                              bool complete) {
    Json j;
    j["version"] = kVersion;
    j["mode"] = "simulate";
    j["status"] = complete ? "complete" : "running";
    j["cells_done"] = done;
    j["cells_failed"] = failed_cells;
    j["config"] = config_json(plan.base);
    j["decisions"] = decisions_in_effect(plan.model.strategy, true);
    Json cells = Json::array();
    for (const auto& c : plan.cells) cells.push_back(scenario_json(c));
    j["cells"] = cells;
    return j;
}

inline const std::vector<std::string>& summary_header() {
    static const std::vector<std::string> h{"strategy", "k_true",   "sigma_true", "delta",    "rejection_rate",
                                            "se",       "reps",     "failures",   "status",   "n",
                                            "p1",       "p2",       "noise_sd",   "seed",     "standardization"};
    return h;
}

inline const std::vector<std::string>& replicate_header() {
    static const std::vector<std::string> h{"strategy", "k_true", "sigma_true", "delta", "replicate", "p_value"};
    return h;
}

inline int cmd_simulate(const CliOverrides& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        auto plan = resolve_simulation_plan(o);
        auto dir = detail::make_out_dir(plan.out);
        detail::write_file(dir / "manifest.json", simulation_manifest(plan, 0, 0, false).dump(2) + "\n");
        std::ofstream summary(dir / "summary.csv", std::ios::binary | std::ios::trunc);
        std::ofstream reps(dir / "replicates.csv", std::ios::binary | std::ios::trunc);
        if (!summary || !reps) throw InputError("cannot create CSV files in '" + plan.out + "'");
        write_csv_row(summary, summary_header());
        write_csv_row(reps, replicate_header());
        summary.flush();
        reps.flush();

        int failed_cells = 0;
        const std::size_t total = plan.cells.size();
        for (std::size_t i = 0; i < total; ++i) {
            const auto& c = plan.cells[i];
            auto rep = run_scenario_unchecked(c, plan.model.strategy, plan.threads);
            const bool failed = rep.failure_count * 10 > c.reps;
            failed_cells += failed;
            const std::string tag(strategy_tag(c.strategy));
            const auto fam = detail::family_label(c.k_true);
            const auto sig = detail::sigma_label(c.k_true);
            const auto delta = format_number(c.delta);

            // whole cell buffered, then written and flushed at once
            std::ostringstream rows;
            for (std::size_t r = 0; r < rep.rep_pvalues.size(); ++r)
                write_csv_row(rows, {tag, fam, sig, delta, std::to_string(r), format_number(rep.rep_pvalues[r])});
            reps << rows.str();
            reps.flush();
            write_csv_row(summary, {tag, fam, sig, delta, format_number(rep.rejection_rate),
                                    format_number(rep.standard_error), std::to_string(c.reps),
                                    std::to_string(rep.failure_count), failed ? "scenario_error" : "ok",
                                    std::to_string(c.n), std::to_string(c.p1), std::to_string(c.p2),
                                    format_number(c.noise_sd), std::to_string(c.seed),
                                    std::string(standardization_tag(c.standardization))});
            summary.flush();
            if (!summary || !reps) throw InputError("write to '" + plan.out + "' failed");

            out << '[' << i + 1 << '/' << total << "] " << tag << " k_true=" << c.k_true.to_string()
                << " delta=" << delta << " rate=" << sig4(rep.rejection_rate) << " se=" << sig4(rep.standard_error)
                << " failures=" << rep.failure_count << '/' << c.reps << '\n';
            out.flush();
            if (failed)
                err << "scenario error in cell " << i + 1 << ": " << rep.failure_count << " of " << c.reps
                    << " replicates failed"
                    << (rep.failure_messages.empty() ? std::string{} : " (" + rep.failure_messages.front() + ")")
                    << '\n';
        }
        detail::write_file(dir / "manifest.json",
                           simulation_manifest(plan, total, failed_cells, true).dump(2) + "\n");
        return failed_cells ? kExitNumerical : kExitOk;
    });
}

// ------------------------------------------------------------ kernels, validate

inline int cmd_kernels(std::ostream& out) {
    out << "kernel specs\n"
           "  linear                       k(x,x') = <x, x'>\n"
           "  quad                         k(x,x') = (1 + <x, x'>)^2\n"
           "  rbf:sigma=<v>                k(x,x') = exp(-sigma ||x - x'||^2)\n"
           "  matern:nu=<1/2|3/2|5/2>,sigma=<v>\n"
           "                               Matern closed form in a = sqrt(2 nu) sigma ||x - x'||\n"
           "  nn:sigma=<v>                 arcsine (neural network) kernel on (1, x)\n"
           "  e.g. matern:nu=3/2,sigma=1\n"
           "libraries: ';'-separated specs; values may be {a,b,...} or e^{lo..hi} (integer exponents)\n";
    auto lib = [&](const char* name, std::string_view text, const std::vector<KernelSpec>& specs) {
        out << name << " = " << text << '\n';
        for (const auto& s : specs) out << "  " << s.to_string() << '\n';
    };
    lib("cvek-rbf", kCvekRbfLibrary, cvek_rbf_library());
    lib("cvek-nn", kCvekNnLibrary, cvek_nn_library());
    out << "strategies\n ";
    for (auto s : kAllStrategies) out << ' ' << strategy_tag(s);
    out << '\n';
    return kExitOk;
}

inline int cmd_validate(const CliOverrides& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (!o.config) throw ConfigError("validate needs --config");
        auto root = load_config(*o.config);
        std::string mode;
        if (const auto* m = root.find("mode")) mode = m->scalar("mode");
        else mode = root.find("data") ? "test" : "simulate";
        if (mode == "test") {
            auto s = test_settings(root);
            if (!try_parse_strategy(s.strategy)) (void)parse_library(s.strategy);
            out << "ok: test config\n";
        } else if (mode == "simulate") {
            auto plan = simulation_plan(root);
            out << "ok: simulate config with " << plan.cells.size() << " cells\n";
        } else {
            throw ConfigError("mode must be test or simulate, got '" + mode + "'");
        }
        return kExitOk;
    });
}

}  // namespace gpvct::io
