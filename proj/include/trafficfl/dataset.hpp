#pragma once

// Synthetic labeled data for the federated task and its non-IID split
// across users. Each traffic archetype owns a Dirichlet label prior; each
// user perturbs its archetype's prior, and shards realize those label mixes.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace trafficfl::fl {

/// Dense row-major examples with 0-based class labels.
struct Dataset {
    std::size_t dim = 0;
    std::size_t num_classes = 0;
    std::vector<double> features;
    std::vector<std::size_t> labels;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
    [[nodiscard]] bool empty() const { return labels.empty(); }
    [[nodiscard]] std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
    void push_back(std::span<const double> x, std::size_t label);
    [[nodiscard]] std::vector<std::size_t> label_histogram() const;
};

/// Gaussian classes with identity covariance and means at `separation`
/// times the first `num_classes` unit vectors.
struct MixtureSpec {
    std::size_t dim = 32;
    std::size_t num_classes = 10;
    double separation = 2.5;

    bool operator==(const MixtureSpec&) const = default;
};

/// Draws class_counts[c] examples of class c, then shuffles the rows.
Dataset make_gaussian_mixture(const MixtureSpec& spec, std::span<const std::size_t> class_counts,
                              std::uint64_t seed);

struct CouplingConfig {
    double alpha_class = 0.3;  ///< concentration of each archetype's label prior
    double alpha_user = 20.0;  ///< concentration of a user's prior around its archetype's
    std::size_t min_shard_size = 5;

    bool operator==(const CouplingConfig&) const = default;
};

struct LabelPriors {
    std::vector<std::vector<double>> archetype;  ///< per archetype
    std::vector<std::vector<double>> user;       ///< aligned with the user list
};

/// Archetype priors ~ Dir(alpha_class), user priors ~ Dir(alpha_user * prior).
LabelPriors draw_label_priors(std::span<const std::size_t> user_archetypes, std::size_t num_archetypes,
                              std::size_t num_classes, const CouplingConfig& coupling, std::uint64_t seed);

/// Largest-remainder split of `total` examples by the population-average
/// user prior.
std::vector<std::size_t> aggregate_class_counts(const LabelPriors& priors, std::size_t total);

/// Largest-remainder rounding of nonnegative weights to integers summing to
/// `total`; remainders tie toward the lower index.
std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total);

struct LocalDataset {
    std::uint64_t user_id = 0;
    Dataset data;
    std::vector<std::size_t> label_histogram;
};

/// Splits `global` into disjoint shards covering every example. The real
/// allocation matrix is balanced to equal shard sizes and the dataset's
/// class supply, keeping each row close to its user's prior; each class
/// column is then rounded by largest remainder, and shards below
/// min_shard_size are topped up from the largest shards.
/// Throws PartitionError when the dataset cannot cover every user.
std::map<std::uint64_t, LocalDataset> partition_dataset(const Dataset& global,
                                                        std::span<const std::uint64_t> user_ids,
                                                        const LabelPriors& priors, std::size_t min_shard_size,
                                                        std::uint64_t seed);

std::map<std::uint64_t, LocalDataset> partition_dataset(const Dataset& global,
                                                        std::span<const std::uint64_t> user_ids,
                                                        std::span<const std::size_t> user_archetypes,
                                                        std::size_t num_archetypes, const CouplingConfig& coupling,
                                                        std::uint64_t seed);

/// Total-variation distance between two normalized label histograms.
double total_variation(std::span<const std::size_t> a, std::span<const std::size_t> b);
double total_variation(std::span<const double> p, std::span<const double> q);

/// Mean pairwise total variation over a set of label histograms; 0 for
/// fewer than two.
double selection_divergence(std::span<const std::vector<std::size_t>> histograms);

}  // namespace trafficfl::fl
