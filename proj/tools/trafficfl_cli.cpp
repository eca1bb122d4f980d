// trafficfl: batch front end for the traffic-aware client selection simulator.

#include "trafficfl/error.hpp"
#include "trafficfl/harness.hpp"
#include "trafficfl/traffic_model.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace trafficfl;

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> rounds;
    std::optional<std::string> out;
    std::optional<std::size_t> threads;

    void add_to(CLI::App* cmd, bool fl_options) {
        cmd->add_option("--seed", seed, "Override the master seed");
        cmd->add_option("--out", out, "Override the output directory");
        if (fl_options) {
            cmd->add_option("--rounds", rounds, "Override the number of communication rounds")
                ->check(CLI::PositiveNumber);
            cmd->add_option("--threads", threads, "Worker threads for local updates")->check(CLI::PositiveNumber);
        }
    }

    harness::ScenarioConfig load(const std::string& path) const {
        harness::ScenarioConfig c = harness::load_config(path);
        if (seed) c.seed = *seed;
        if (rounds) c.fl.rounds = *rounds;
        if (out) c.output_dir = *out;
        if (threads) c.threads = *threads;
        harness::validate(c);
        return c;
    }
};

void print_manifest(const harness::RunManifest& m) {
    std::cout << "manifest: " << m.manifest_path.string() << "\n";
    std::cout << "config_hash: " << m.config_hash << "\n";
    for (const auto& [name, path] : m.metrics) std::cout << "metrics." << name << ": " << path.string() << "\n";
}

void write_trace(const harness::ScenarioConfig& config, std::size_t windows) {
    selection::PopulationOptions opts;
    opts.link = config.link;
    opts.availability = config.availability;
    const auto population =
        selection::generate_population(config.archetypes, config.k_users, config.window_s, config.seed, opts);
    std::vector<traffic::TraceUser> users;
    for (const auto& m : population) users.push_back({m.profile.user_id, m.stats.exp_lambda});
    const auto path = std::filesystem::path(config.output_dir) / "trace.csv";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    traffic::write_packet_trace(out, users, config.window_s, windows, config.seed);
    std::cout << "trace: " << path.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Traffic-aware client selection for federated learning"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(harness::kVersion));

    std::string config_path;
    std::string manifest_path;
    std::size_t trace_windows = 0;
    std::size_t draws = 1000000;
    std::string compare_out;

    Overrides run_over;
    auto* run = app.add_subcommand("run", "Full pipeline for every configured strategy");
    run->add_option("config", config_path, "Scenario file")->required()->check(CLI::ExistingFile);
    run->add_option("--trace-windows", trace_windows, "Also export Poisson packet counts for this many windows");
    run_over.add_to(run, true);

    Overrides cls_over;
    auto* classify = app.add_subcommand("classify", "Population, classifier and decision grid only");
    classify->add_option("config", config_path, "Scenario file")->required()->check(CLI::ExistingFile);
    cls_over.add_to(classify, false);

    Overrides tc_over;
    auto* check = app.add_subcommand("traffic-check", "Monte-Carlo vs analytic arrival-rate moments");
    check->add_option("config", config_path, "Scenario file")->required()->check(CLI::ExistingFile);
    check->add_option("--draws", draws, "Monte-Carlo draws per archetype")->check(CLI::Range(2, 100000000));
    tc_over.add_to(check, false);

    auto* compare = app.add_subcommand("compare", "Relative loss reduction of cluster selection");
    compare->add_option("manifest", manifest_path, "manifest.txt of a run")->required()->check(CLI::ExistingFile);
    compare->add_option("--out", compare_out, "Write the table to a file instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto config = run_over.load(config_path);
            const auto manifest = harness::run_scenario(config);
            if (trace_windows > 0) write_trace(config, trace_windows);
            print_manifest(manifest);
        } else if (*classify) {
            const auto config = cls_over.load(config_path);
            print_manifest(harness::run_classification(config));
        } else if (*check) {
            const auto config = tc_over.load(config_path);
            const auto checks = harness::traffic_check(config, draws);
            if (!tc_over.out) {
                harness::write_traffic_check(std::cout, checks);
            } else {
                std::filesystem::create_directories(config.output_dir);
                const auto path = std::filesystem::path(config.output_dir) / "traffic_check.csv";
                std::ofstream out(path);
                if (!out) throw std::runtime_error("cannot write " + path.string());
                harness::write_traffic_check(out, checks);
                std::cout << "traffic check: " << path.string() << "\n";
            }
        } else if (*compare) {
            const auto summary = harness::compare_strategies(harness::load_manifest(manifest_path));
            if (compare_out.empty()) {
                harness::write_comparison(std::cout, summary);
            } else {
                std::ofstream out(compare_out);
                if (!out) throw std::runtime_error("cannot write " + compare_out);
                harness::write_comparison(out, summary);
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "error [config] " << e.what() << "\n";
        return 2;
    } catch (const StageError& e) {
        std::cerr << "error " << e.what() << "\n";
        return 3;
    } catch (const ComparisonError& e) {
        std::cerr << "error [compare] " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error " << e.what() << "\n";
        return 1;
    }
    return 0;
}
