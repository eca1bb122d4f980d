#include "trafficfl/dataset.hpp"

#include "trafficfl/error.hpp"
#include "trafficfl/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace trafficfl::fl {

void Dataset::push_back(std::span<const double> x, std::size_t label) {
    if (x.size() != dim) throw DomainError("example dimension mismatch");
    if (label >= num_classes) throw DomainError("label out of range");
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
}

std::vector<std::size_t> Dataset::label_histogram() const {
    std::vector<std::size_t> h(num_classes, 0);
    for (std::size_t y : labels) ++h[y];
    return h;
}

Dataset make_gaussian_mixture(const MixtureSpec& spec, std::span<const std::size_t> class_counts,
                              std::uint64_t seed) {
    if (spec.num_classes < 2 || spec.dim < spec.num_classes) {
        throw DomainError("mixture needs >= 2 classes and dim >= classes");
    }
    if (class_counts.size() != spec.num_classes) throw DomainError("class count vector has the wrong length");

    Rng rng = make_rng(seed, {kStreamDataset});
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t total = std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0});

    std::vector<std::size_t> order(total);
    {
        std::size_t i = 0;
        for (std::size_t c = 0; c < spec.num_classes; ++c) {
            for (std::size_t n = 0; n < class_counts[c]; ++n) order[i++] = c;
        }
    }
    std::shuffle(order.begin(), order.end(), rng);

    Dataset d{spec.dim, spec.num_classes, {}, {}};
    d.features.reserve(total * spec.dim);
    d.labels.reserve(total);
    std::vector<double> x(spec.dim);
    for (std::size_t c : order) {
        for (std::size_t f = 0; f < spec.dim; ++f) x[f] = noise(rng) + (f == c ? spec.separation : 0.0);
        d.push_back(x, c);
    }
    return d;
}

namespace {

std::vector<double> dirichlet(std::span<const double> alpha, Rng& rng) {
    std::vector<double> g(alpha.size(), 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        if (alpha[i] > 0.0) {
            std::gamma_distribution<double> gamma(alpha[i], 1.0);
            g[i] = gamma(rng);
        }
        sum += g[i];
    }
    if (!(sum > 0.0)) return {};
    for (double& v : g) v /= sum;
    return g;
}

}  // namespace

LabelPriors draw_label_priors(std::span<const std::size_t> user_archetypes, std::size_t num_archetypes,
                              std::size_t num_classes, const CouplingConfig& coupling, std::uint64_t seed) {
    if (!(coupling.alpha_class > 0.0) || !(coupling.alpha_user > 0.0)) {
        throw DomainError("Dirichlet concentrations must be positive");
    }
    if (num_classes < 2) throw DomainError("need at least two classes");

    LabelPriors priors;
    const std::vector<double> flat(num_classes, coupling.alpha_class);
    for (std::size_t a = 0; a < num_archetypes; ++a) {
        Rng rng = make_rng(seed, {kStreamArchetypePrior, a});
        auto p = dirichlet(flat, rng);
        // All-zero gamma draws only happen for absurdly small alpha.
        if (p.empty()) p.assign(num_classes, 1.0 / static_cast<double>(num_classes));
        priors.archetype.push_back(std::move(p));
    }
    for (std::size_t k = 0; k < user_archetypes.size(); ++k) {
        const std::size_t a = user_archetypes[k];
        if (a >= num_archetypes) throw DomainError("user archetype out of range");
        Rng rng = make_rng(seed, {kStreamUserPrior, k});
        std::vector<double> alpha(num_classes);
        for (std::size_t c = 0; c < num_classes; ++c) alpha[c] = coupling.alpha_user * priors.archetype[a][c];
        auto p = dirichlet(alpha, rng);
        priors.user.push_back(p.empty() ? priors.archetype[a] : std::move(p));
    }
    return priors;
}

std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total) {
    if (weights.empty()) throw DomainError("no weights to round");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("weights must be finite and nonnegative");
        sum += w;
    }
    if (!(sum > 0.0)) throw DomainError("weights sum to zero");

    std::vector<std::size_t> out(weights.size());
    std::vector<double> frac(weights.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(total) * weights[i] / sum;
        out[i] = static_cast<std::size_t>(std::floor(exact));
        frac[i] = exact - static_cast<double>(out[i]);
        assigned += out[i];
    }
    // Floating error can push the floor sum one past total.
    while (assigned > total) {
        std::size_t i = 0;
        for (std::size_t j = 1; j < out.size(); ++j) {
            if (out[j] > 0 && (out[i] == 0 || frac[j] < frac[i])) i = j;
        }
        --out[i];
        frac[i] += 1.0;
        --assigned;
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++out[order[r % order.size()]];
    return out;
}

std::vector<std::size_t> aggregate_class_counts(const LabelPriors& priors, std::size_t total) {
    if (priors.user.empty()) throw DomainError("no user priors");
    std::vector<double> mean(priors.user.front().size(), 0.0);
    for (const auto& p : priors.user) {
        for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p[c];
    }
    return largest_remainder(mean, total);
}

std::map<std::uint64_t, LocalDataset> partition_dataset(const Dataset& global,
                                                        std::span<const std::uint64_t> user_ids,
                                                        const LabelPriors& priors, std::size_t min_shard_size,
                                                        std::uint64_t seed) {
    const std::size_t n = global.size();
    const std::size_t k = user_ids.size();
    const std::size_t classes = global.num_classes;
    if (n == 0) throw PartitionError("global dataset is empty");
    if (k == 0) throw PartitionError("no users to partition across");
    if (priors.user.size() != k) throw PartitionError("one label prior per user is required");
    min_shard_size = std::max<std::size_t>(min_shard_size, 1);
    if (n < k * min_shard_size) {
        throw PartitionError("infeasible allocation: " + std::to_string(n) + " examples for " + std::to_string(k) +
                             " users with min_shard_size " + std::to_string(min_shard_size));
    }
    {
        std::vector<std::uint64_t> sorted(user_ids.begin(), user_ids.end());
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw PartitionError("duplicate user id");
        }
    }

    const std::vector<std::size_t> supply = global.label_histogram();
    const std::vector<std::size_t> row_target = largest_remainder(std::vector<double>(k, 1.0), n);

    // Real allocation matrix, balanced to row and column marginals.
    std::vector<double> alloc(k * classes);
    for (std::size_t u = 0; u < k; ++u) {
        if (priors.user[u].size() != classes) throw PartitionError("prior length differs from class count");
        for (std::size_t c = 0; c < classes; ++c) {
            alloc[u * classes + c] = supply[c] == 0 ? 0.0 : std::max(priors.user[u][c], 1e-12);
        }
    }
    for (int iter = 0; iter < 10000; ++iter) {
        double worst = 0.0;
        for (std::size_t u = 0; u < k; ++u) {
            double s = 0.0;
            for (std::size_t c = 0; c < classes; ++c) s += alloc[u * classes + c];
            const double f = static_cast<double>(row_target[u]) / s;
            for (std::size_t c = 0; c < classes; ++c) alloc[u * classes + c] *= f;
        }
        for (std::size_t c = 0; c < classes; ++c) {
            if (supply[c] == 0) continue;
            double s = 0.0;
            for (std::size_t u = 0; u < k; ++u) s += alloc[u * classes + c];
            const double f = static_cast<double>(supply[c]) / s;
            for (std::size_t u = 0; u < k; ++u) alloc[u * classes + c] *= f;
        }
        for (std::size_t u = 0; u < k; ++u) {
            double s = 0.0;
            for (std::size_t c = 0; c < classes; ++c) s += alloc[u * classes + c];
            worst = std::max(worst, std::abs(s - static_cast<double>(row_target[u])));
        }
        if (worst < 1e-9) break;
    }

    // Integer counts: exact per class, approximately equal per user.
    std::vector<std::size_t> counts(k * classes, 0);
    std::vector<double> column(k);
    for (std::size_t c = 0; c < classes; ++c) {
        if (supply[c] == 0) continue;
        for (std::size_t u = 0; u < k; ++u) column[u] = alloc[u * classes + c];
        const auto rounded = largest_remainder(column, supply[c]);
        for (std::size_t u = 0; u < k; ++u) counts[u * classes + c] = rounded[u];
    }
    std::vector<std::size_t> size(k, 0);
    for (std::size_t u = 0; u < k; ++u) {
        for (std::size_t c = 0; c < classes; ++c) size[u] += counts[u * classes + c];
    }
    while (true) {
        const auto small = std::min_element(size.begin(), size.end());
        if (*small >= min_shard_size) break;
        const auto large = std::max_element(size.begin(), size.end());
        const std::size_t r = static_cast<std::size_t>(small - size.begin());
        const std::size_t d = static_cast<std::size_t>(large - size.begin());
        // Move the donor's example whose class the receiver wants most.
        std::size_t best = classes;
        for (std::size_t c = 0; c < classes; ++c) {
            if (counts[d * classes + c] == 0) continue;
            if (best == classes || priors.user[r][c] > priors.user[r][best]) best = c;
        }
        --counts[d * classes + best];
        ++counts[r * classes + best];
        --size[d];
        ++size[r];
    }

    // Hand out concrete examples class by class in user order.
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < n; ++i) by_class[global.labels[i]].push_back(i);
    Rng rng = make_rng(seed, {kStreamPartition});
    for (auto& idx : by_class) std::shuffle(idx.begin(), idx.end(), rng);

    std::map<std::uint64_t, LocalDataset> shards;
    std::vector<std::size_t> cursor(classes, 0);
    for (std::size_t u = 0; u < k; ++u) {
        LocalDataset shard;
        shard.user_id = user_ids[u];
        shard.data = Dataset{global.dim, classes, {}, {}};
        shard.data.features.reserve(size[u] * global.dim);
        for (std::size_t c = 0; c < classes; ++c) {
            for (std::size_t m = 0; m < counts[u * classes + c]; ++m) {
                const std::size_t i = by_class[c][cursor[c]++];
                shard.data.push_back(global.row(i), c);
            }
        }
        shard.label_histogram = shard.data.label_histogram();
        shards.emplace(shard.user_id, std::move(shard));
    }
    return shards;
}

std::map<std::uint64_t, LocalDataset> partition_dataset(const Dataset& global,
                                                        std::span<const std::uint64_t> user_ids,
                                                        std::span<const std::size_t> user_archetypes,
                                                        std::size_t num_archetypes, const CouplingConfig& coupling,
                                                        std::uint64_t seed) {
    if (user_archetypes.size() != user_ids.size()) throw PartitionError("every user needs an archetype");
    const LabelPriors priors = draw_label_priors(user_archetypes, num_archetypes, global.num_classes, coupling, seed);
    return partition_dataset(global, user_ids, priors, coupling.min_shard_size, seed);
}

double total_variation(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw DomainError("distribution lengths differ");
    double tv = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
    return 0.5 * tv;
}

double total_variation(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    if (a.size() != b.size()) throw DomainError("histogram lengths differ");
    const double sa = static_cast<double>(std::accumulate(a.begin(), a.end(), std::size_t{0}));
    const double sb = static_cast<double>(std::accumulate(b.begin(), b.end(), std::size_t{0}));
    if (sa == 0.0 || sb == 0.0) throw DomainError("empty histogram");
    double tv = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        tv += std::abs(static_cast<double>(a[i]) / sa - static_cast<double>(b[i]) / sb);
    }
    return 0.5 * tv;
}

double selection_divergence(std::span<const std::vector<std::size_t>> histograms) {
    const std::size_t m = histograms.size();
    if (m < 2) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) sum += total_variation(histograms[i], histograms[j]);
    }
    return sum / (0.5 * static_cast<double>(m) * static_cast<double>(m - 1));
}

}  // namespace trafficfl::fl
