#include "cli.hpp"

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "pipeline.hpp"

namespace nrba::cli {

namespace {

struct Options {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

const std::pair<const char*, const char*> kCommands[] = {
    {"pattern", "Unit and item response patterns and nonresponse rates"},
    {"weights", "Attrition weights, trimming and weight diagnostics"},
    {"impute", "Sequential multiple imputation of dropouts"},
    {"estimate", "Method-comparison estimates (means and analysis-model coefficients)"},
    {"sensitivity", "Offset sensitivity sweep over k"},
    {"simulate", "Simulate a cohort with dropout from a scenario"},
    {"report", "Markdown method-comparison report"},
};

int execute(const std::string& command, const Options& o, bool seed_given, bool out_given) {
    RunConfig config = RunConfig::load(o.config);
    if (seed_given) config.seed = o.seed;
    if (out_given) config.output = o.out;
    Pipeline p(std::move(config), o.threads);
    if (command == "pattern") p.pattern();
    else if (command == "weights") p.weights();
    else if (command == "impute") p.impute();
    else if (command == "estimate") p.estimate();
    else if (command == "sensitivity") p.sensitivity();
    else if (command == "simulate") p.simulate();
    else if (command == "report") p.report();
    p.finish(command);
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"nrba: nonresponse bias analysis for longitudinal panel surveys"};
    app.require_subcommand(1);
    Options o;
    std::vector<std::pair<std::string, CLI::App*>> subs;
    std::map<std::string, std::pair<CLI::Option*, CLI::Option*>> flags;
    for (const auto& [name, help] : kCommands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
        auto* seed = sub->add_option("--seed", o.seed, "Master seed; overrides the config");
        auto* out = sub->add_option("--out", o.out, "Output directory; overrides the config");
        sub->add_option("--threads", o.threads, "Worker threads")->check(CLI::Range(1u, 1024u));
        subs.emplace_back(name, sub);
        flags[name] = {seed, out};
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    std::string command;
    for (const auto& [name, sub] : subs)
        if (sub->parsed()) command = name;
    try {
        return execute(command, o, flags[command].first->count() > 0, flags[command].second->count() > 0);
    } catch (const ConfigError& e) {
        std::cerr << "nrba " << command << ": config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "nrba " << command << ": data error: " << e.what() << "\n";
        return 3;
    } catch (const ConvergenceError& e) {
        std::cerr << "nrba " << command << ": numerical failure: " << e.what();
        if (!e.trace().empty()) std::cerr << " (last objective " << e.trace().back() << " after " << e.trace().size() << " steps)";
        std::cerr << "\n";
        return 4;
    } catch (const NumericalError& e) {
        std::cerr << "nrba " << command << ": numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "nrba " << command << ": data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "nrba " << command << ": internal error: " << e.what() << "\n";
        return 1;
    }
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("nrba");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace nrba::cli
