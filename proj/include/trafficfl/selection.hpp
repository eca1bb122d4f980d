#pragma once

// Client selection by traffic class: synthesize a user population from
// traffic archetypes, derive features, cluster with a trained MLR, and
// nominate a same-cluster cohort. Also the availability-aware and uniform
// random baselines.

#include "trafficfl/classifier.hpp"
#include "trafficfl/random.hpp"
#include "trafficfl/traffic_model.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trafficfl::selection {

struct Range {
    double lo = 0.0;
    double hi = 0.0;

    [[nodiscard]] bool valid() const { return lo <= hi; }
    [[nodiscard]] bool contains(double v) const { return lo <= v && v <= hi; }
    bool operator==(const Range&) const = default;
};

struct ArchetypeSpec {
    std::string name;
    Range mu;
    Range sigma_sq;
    Range eb_n0;
    Range los_power;
    Range nlos_scale;  ///< Psi^2
    double population_weight = 0.0;

    bool operator==(const ArchetypeSpec&) const = default;
};

/// Canonical six-class order; label_by_thresholds uses the same indices.
enum TrafficClass : std::size_t {
    kHighNonBursty = 0,
    kHighBursty = 1,
    kLowBursty = 2,
    kLowNonBursty = 3,
    kModerateNonBursty = 4,
    kModerateBursty = 5,
};
inline constexpr std::size_t kNumTrafficClasses = 6;

std::string traffic_class_name(std::size_t cls);

/// Six archetypes whose features fall in the six volume x burstiness
/// regions under the default link settings, with equal weights.
std::vector<ArchetypeSpec> default_archetypes();

/// Throws DomainError on empty tables, bad intervals or weights not summing to 1.
void validate_archetypes(std::span<const ArchetypeSpec> archetypes);

/// Scenario-wide link settings (equal power and bandwidth for every user).
struct LinkDefaults {
    double bandwidth_hz = 1e6;
    double tx_power_w = 0.1;
    double noise_psd = 1e-13;
    int constellation_size = 4;
    traffic::NoiseModel noise_model = traffic::NoiseModel::kSpectralDensity;
    traffic::BerMode ber_mode = traffic::BerMode::kStandard;

    bool operator==(const LinkDefaults&) const = default;
};

struct UserProfile {
    std::uint64_t user_id = 0;
    traffic::LinkBudget link;
    traffic::ChannelState channel;
    traffic::PacketSizeDist packet_dist;
    std::size_t true_archetype = 0;
    double availability_prob = 1.0;
};

struct PopulationMember {
    UserProfile profile;
    traffic::TrafficStats stats;
    mlr::FeatureVector features;
};

struct PopulationOptions {
    LinkDefaults link;
    Range availability{0.5, 1.0};
    std::size_t max_resamples = 100;
};

/// Users 0..k_users-1, each drawn from its own stream derived from
/// (seed, user_id), so the result is independent of evaluation order.
std::vector<PopulationMember> generate_population(std::span<const ArchetypeSpec> archetypes, std::size_t k_users,
                                                  double window_s, std::uint64_t seed,
                                                  const PopulationOptions& options = {});

struct ThresholdCuts {
    double volume_low_q = 1.0 / 3.0;
    double volume_high_q = 2.0 / 3.0;
    double bursty_q = 0.5;

    bool operator==(const ThresholdCuts&) const = default;
};

/// Empirical quantile with linear interpolation between order statistics.
double empirical_quantile(std::vector<double> values, double q);

/// Labels users into the six canonical classes by volume terciles and a
/// burstiness split. Throws ThresholdError on a degenerate feature.
std::vector<std::size_t> label_by_thresholds(std::span<const traffic::TrafficStats> stats,
                                             const ThresholdCuts& cuts = {});

struct ClusterAssignment {
    std::uint64_t user_id = 0;
    std::size_t predicted_class = 0;
    std::vector<double> posterior;
};

std::vector<ClusterAssignment> cluster_users(const mlr::MlrModel& model, std::span<const std::uint64_t> user_ids,
                                             std::span<const mlr::FeatureVector> features);

struct ClusterPolicy {
    enum class Kind { kLargest, kFixed, kRoundRobin };
    Kind kind = Kind::kLargest;
    std::size_t fixed_class = 0;

    /// "largest", "round_robin" or "fixed:<j>".
    static ClusterPolicy parse(const std::string& text);
    [[nodiscard]] std::string to_string() const;
    bool operator==(const ClusterPolicy&) const = default;
};

struct Selection {
    std::vector<std::uint64_t> user_ids;  ///< ascending
    std::optional<std::size_t> cluster;   ///< chosen class for cluster selection
    bool shortfall = false;               ///< fewer than k_select were available
};

/// Picks one cluster by policy (largest ties to the lowest class index;
/// round_robin cycles nonempty clusters in class order by `round`), then
/// samples min(k_select, size) members without replacement.
Selection select_clients(std::span<const ClusterAssignment> assignments, const ClusterPolicy& policy,
                         std::size_t k_select, std::size_t round, Rng& rng);

/// Bernoulli(availability_prob) reachability per user, then uniform choice
/// among the reachable ones.
Selection baseline_availability_select(std::span<const UserProfile> users, std::size_t k_select, Rng& rng);

/// Uniform choice among all users (control).
Selection random_select(std::span<const UserProfile> users, std::size_t k_select, Rng& rng);

/// `user_id,archetype,E_N,B,predicted_class` rows.
void write_population_csv(std::ostream& out, std::span<const PopulationMember> population,
                          std::span<const ArchetypeSpec> archetypes,
                          std::span<const ClusterAssignment> assignments);

}  // namespace trafficfl::selection
