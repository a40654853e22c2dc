// gpvct: kernel interaction test on CSV data, simulation grids, kernel listing.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gpvct/io/commands.hpp"
#include "gpvct/version.hpp"

namespace {

template <class T>
void opt(CLI::App* sub, const std::string& flag, std::optional<T>& target, const std::string& help) {
    sub->add_option_function<T>(flag, [&target](const T& v) { target = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
    using namespace gpvct::io;
    CLI::App app{"Gaussian-process variance-component tests for nonlinear interaction"};
    app.set_version_flag("--version", std::string("gpvct ") + gpvct::kVersion);
    app.require_subcommand(1);

    CliOverrides o;
    auto* test = app.add_subcommand("test", "test for an interaction between two column groups of a CSV file");
    auto* sim = app.add_subcommand("simulate", "run a simulation grid and write summary/replicate CSVs");
    auto* kernels = app.add_subcommand("kernels", "list kernel specs, CVEK libraries and strategies");
    auto* validate = app.add_subcommand("validate", "parse and check a config file");

    for (auto* sub : {test, sim, validate}) opt(sub, "--config", o.config, "config file");
    for (auto* sub : {test, sim}) {
        opt(sub, "--seed", o.seed, "random seed");
        opt(sub, "--out", o.out, "output directory");
        opt(sub, "--strategy", o.strategy, "strategy tag (or, for test, ';'-separated kernel specs)");
    }
    opt(sim, "--threads", o.threads, "worker threads");
    opt(test, "--data", o.data, "CSV data file with a header row");
    opt(test, "--response", o.response, "response column");
    opt(test, "--group1", o.group1, "group-1 columns: names, 0-based indices or prefix*");
    opt(test, "--group2", o.group2, "group-2 columns");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitInput;
    }
    if (*test) return cmd_test(o, std::cout, std::cerr);
    if (*sim) return cmd_simulate(o, std::cout, std::cerr);
    if (*kernels) return cmd_kernels(std::cout);
    return cmd_validate(o, std::cout, std::cerr);
}
