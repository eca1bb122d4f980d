#pragma once

// Federated averaging: broadcast a flat parameter vector, train locally on
// each selected client's shard, and add the mean of the returned deltas.

#include "trafficfl/dataset.hpp"
#include "trafficfl/random.hpp"
#include "trafficfl/selection.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trafficfl::fl {

/// Multinomial regression when hidden == 0, otherwise one tanh hidden layer.
struct ModelLayout {
    std::size_t features = 32;
    std::size_t hidden = 0;
    std::size_t classes = 10;

    [[nodiscard]] std::size_t param_count() const;
    bool operator==(const ModelLayout&) const = default;
};

struct FlModel {
    ModelLayout layout;
    std::vector<double> params;

    static FlModel zeros(const ModelLayout& layout);
    /// Zero for regression; Xavier-uniform hidden weights otherwise.
    static FlModel initial(const ModelLayout& layout, std::uint64_t seed);

    /// Throws DomainError on length mismatch or non-finite entries.
    void validate() const;

    bool operator==(const FlModel&) const = default;
};

struct EvalResult {
    double loss = 0.0;      ///< mean cross-entropy
    double accuracy = 0.0;  ///< top-1
};

/// Mean cross-entropy over the listed rows and its gradient (same length
/// as params). Returns the loss.
double mean_loss_gradient(const FlModel& model, const Dataset& data, std::span<const std::size_t> rows,
                          std::vector<double>& grad);

/// Summed cross-entropy and correct-prediction count over all rows.
struct LossSum {
    double loss = 0.0;
    std::size_t correct = 0;
    std::size_t count = 0;
};
LossSum loss_sum(const FlModel& model, const Dataset& data);

EvalResult evaluate(const FlModel& model, const Dataset& data);

struct LocalHyper {
    std::size_t epochs = 2;
    std::size_t batch_size = 32;  ///< 0 means full batch
    double learning_rate = 0.05;

    bool operator==(const LocalHyper&) const = default;
};

/// Runs local mini-batch descent from `global` and returns the delta
/// (local params - global params). Throws LocalDivergenceError on a
/// non-finite loss.
FlModel local_update(const FlModel& global, const LocalDataset& shard, const LocalHyper& hp, Rng& rng);

/// q + sum_k w_k z_k with w_k = 1/K, or normalized `weights` when given.
FlModel aggregate(const FlModel& global, std::span<const FlModel> updates, std::span<const double> weights = {});

enum class Strategy { kCluster, kAvailability, kRandom };
std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

struct RoundMetrics {
    std::size_t round = 0;  ///< 1-based communication round
    std::vector<std::uint64_t> selected_ids;
    std::optional<std::size_t> cluster;
    bool shortfall = false;
    double train_loss = 0.0;  ///< updated global model on the selected clients' shards
    double eval_loss = 0.0;   ///< held-out
    double eval_acc = 0.0;    ///< held-out
    double selection_divergence = 0.0;
    double wall_time_s = 0.0;
};

struct FlConfig {
    std::size_t rounds = 50;
    std::size_t k_select = 50;
    LocalHyper local;
    double target_accuracy = 0.95;
    std::size_t threads = 1;
    bool weighted_aggregation = false;
    selection::ClusterPolicy policy;
    std::uint64_t seed = 1;
};

struct TrainingContext {
    std::span<const selection::UserProfile> users;
    std::span<const selection::ClusterAssignment> assignments;
    const std::map<std::uint64_t, LocalDataset>* shards = nullptr;
    const Dataset* test = nullptr;
    FlModel initial;
};

struct TrainingRun {
    std::vector<RoundMetrics> rounds;
    FlModel final_model;
    bool reached_target = false;
};

/// The FedAvg loop: select, broadcast, local updates (in parallel when
/// threads > 1), aggregate in ascending user-id order, evaluate. Stops at
/// the target held-out accuracy or after `rounds` rounds.
TrainingRun run_training(Strategy strategy, const FlConfig& config, const TrainingContext& context);

/// Header plus `round,strategy,train_loss,eval_acc,selection_divergence,n_selected` rows.
void write_metrics_csv(std::ostream& out, Strategy strategy, std::span<const RoundMetrics> rounds);

struct MetricsRow {
    std::size_t round = 0;
    std::string strategy;
    double train_loss = 0.0;
    double eval_acc = 0.0;
    double selection_divergence = 0.0;
    std::size_t n_selected = 0;
};
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

}  // namespace trafficfl::fl
