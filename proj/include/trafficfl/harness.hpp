#pragma once

// Scenario configuration and the batch pipelines behind the CLI verbs.

#include "trafficfl/classifier.hpp"
#include "trafficfl/dataset.hpp"
#include "trafficfl/fl_engine.hpp"
#include "trafficfl/selection.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace trafficfl::harness {

inline constexpr const char* kVersion = "0.1.0";

/// Which labels the traffic classifier is trained on.
enum class LabelSource { kArchetype, kThreshold };

struct FlSettings {
    std::size_t rounds = 50;
    std::size_t k_select = 50;
    fl::LocalHyper local;
    double target_accuracy = 0.95;
    std::size_t hidden_units = 0;
    selection::ClusterPolicy policy;
    bool weighted_aggregation = false;

    bool operator==(const FlSettings&) const = default;
};

struct DataSettings {
    fl::MixtureSpec mixture;
    std::size_t train_examples = 20000;
    std::size_t test_examples = 5000;

    bool operator==(const DataSettings&) const = default;
};

struct ScenarioConfig {
    std::uint64_t seed = 1;
    std::size_t k_users = 1000;
    double window_s = 1.0;
    std::vector<fl::Strategy> strategies{fl::Strategy::kCluster, fl::Strategy::kAvailability, fl::Strategy::kRandom};
    std::string output_dir = "out";
    std::size_t threads = 1;
    LabelSource mlr_labels = LabelSource::kArchetype;

    selection::LinkDefaults link;
    selection::Range availability{0.5, 1.0};
    std::vector<selection::ArchetypeSpec> archetypes = selection::default_archetypes();
    mlr::TrainingParams mlr;
    std::size_t grid_resolution = 100;
    selection::ThresholdCuts thresholds;
    FlSettings fl;
    DataSettings data;
    fl::CouplingConfig coupling;

    bool operator==(const ScenarioConfig&) const = default;
};

/// Throws ConfigError naming the first key that violates a constraint.
void validate(const ScenarioConfig& config);

/// INI-style text: `[section]` headers and `key = value` lines; `;` or `#`
/// comments. Missing keys keep defaults; unknown keys are errors. Any
/// `[archetype.<name>]` section replaces the whole default archetype table.
ScenarioConfig parse_config(std::istream& in);
ScenarioConfig parse_config_string(const std::string& text);
ScenarioConfig load_config(const std::filesystem::path& path);
/// Canonical text form listing every key; parses back to an equal config.
std::string serialize_config(const ScenarioConfig& config);
/// Canonical form with the execution-only keys (threads, output_dir) reset
/// to their defaults; identical for reruns that differ only in those.
std::string scenario_text(const ScenarioConfig& config);
/// FNV-1a of scenario_text.
std::string config_hash(const ScenarioConfig& config);

struct RunManifest {
    std::string config_hash;
    std::string version = kVersion;
    std::uint64_t seed = 0;
    std::size_t rounds = 0;
    double target_accuracy = 0.0;
    bool complete = false;
    std::string failed_stage;
    std::map<std::string, std::filesystem::path> metrics;  ///< strategy -> metrics CSV
    std::map<std::string, std::filesystem::path> summaries;
    std::map<std::string, std::filesystem::path> artifacts;  ///< grid, population, model, ...
    std::map<std::string, double> wall_time_s;
    std::filesystem::path manifest_path;
};

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);
/// Relative paths are resolved against the manifest's directory.
RunManifest load_manifest(const std::filesystem::path& path);

/// Population, labels, classifier and clusters for one scenario.
struct ClassificationResult {
    std::vector<selection::PopulationMember> population;
    std::vector<std::size_t> threshold_labels;
    std::vector<std::size_t> training_labels;
    double label_agreement = 0.0;  ///< threshold vs archetype labels
    mlr::TrainingReport mlr;
    double training_accuracy = 0.0;
    std::vector<selection::ClusterAssignment> assignments;
    mlr::DecisionGrid grid;
};

ClassificationResult classify_population(const ScenarioConfig& config);

/// Writes grid.csv, population.csv and mlr_model.txt under output_dir.
RunManifest run_classification(const ScenarioConfig& config);

/// Full pipeline for every configured strategy on one shared population,
/// partition and initial model. Writes metrics, summaries, the grid and
/// population exports, the trained classifier and manifest.txt.
RunManifest run_scenario(const ScenarioConfig& config);

/// Per-strategy outcome of the in-memory pipeline (used by run_scenario).
struct StrategyOutcome {
    fl::Strategy strategy;
    fl::TrainingRun run;
};
struct ScenarioResult {
    ClassificationResult classification;
    std::vector<StrategyOutcome> outcomes;
};
ScenarioResult execute_scenario(const ScenarioConfig& config);

struct ComparisonRow {
    std::size_t round = 0;
    std::string baseline;
    double cluster_loss = 0.0;
    double baseline_loss = 0.0;
    double relative_reduction = 0.0;  ///< (baseline - cluster) / baseline
};

struct ComparisonSummary {
    std::vector<ComparisonRow> rows;
    std::map<std::string, double> final_reduction;  ///< per baseline
    std::map<std::string, long long> rounds_to_target;  ///< -1 when never reached
};

/// Relative loss reduction of `cluster` against each other strategy at
/// every round. Throws ComparisonError on mismatched round counts or when
/// fewer than two strategies (or no cluster run) are present.
ComparisonSummary compare_strategies(const RunManifest& manifest);
void write_comparison(std::ostream& out, const ComparisonSummary& summary);

/// Analytic vs Monte-Carlo arrival-rate moments for sampled users.
struct MomentCheck {
    std::string archetype;
    double analytic_mean = 0.0;
    double analytic_var = 0.0;
    traffic::MomentEstimate estimate;
    double mean_z = 0.0;
    double var_z = 0.0;
    double spb = 0.0;  ///< median packet size times bit error rate
};
std::vector<MomentCheck> traffic_check(const ScenarioConfig& config, std::size_t draws);
void write_traffic_check(std::ostream& out, const std::vector<MomentCheck>& checks);

}  // namespace trafficfl::harness
