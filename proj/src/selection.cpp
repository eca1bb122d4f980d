#include "trafficfl/selection.hpp"

#include "trafficfl/error.hpp"
#include "trafficfl/text.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <ostream>

namespace trafficfl::selection {

namespace {

double draw(const Range& r, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return r.lo + (r.hi - r.lo) * u(rng);
}

std::size_t draw_archetype(std::span<const ArchetypeSpec> archetypes, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double x = u(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < archetypes.size(); ++i) {
        acc += archetypes[i].population_weight;
        if (x < acc) return i;
    }
    // Rounding in the cumulative sum: fall back to the last weighted entry.
    for (std::size_t i = archetypes.size(); i-- > 0;) {
        if (archetypes[i].population_weight > 0.0) return i;
    }
    return archetypes.size() - 1;
}

Selection sample_ids(std::vector<std::uint64_t> candidates, std::size_t k_select, Rng& rng) {
    Selection sel;
    std::sort(candidates.begin(), candidates.end());
    sel.shortfall = candidates.size() < k_select;
    std::sample(candidates.begin(), candidates.end(), std::back_inserter(sel.user_ids), k_select, rng);
    return sel;
}

}  // namespace

std::string traffic_class_name(std::size_t cls) {
    switch (cls) {
        case kHighNonBursty: return "high_volume_non_bursty";
        case kHighBursty: return "high_volume_bursty";
        case kLowBursty: return "low_volume_bursty";
        case kLowNonBursty: return "low_volume_non_bursty";
        case kModerateNonBursty: return "moderate_volume_non_bursty";
        case kModerateBursty: return "moderate_volume_bursty";
        default: throw DomainError("unknown traffic class " + std::to_string(cls));
    }
}

std::vector<ArchetypeSpec> default_archetypes() {
    // Median packet sizes of 400 / 900 / 3000 bits set the three volume
    // levels; bursty rows shift mu by sigma_sq/2 so both halves of a level
    // share one E[1/S] band. Burstiness is ~ exp(sigma_sq) - 1.
    struct Row {
        std::size_t cls;
        double median_bits;
        bool bursty;
        Range eb_n0;
    };
    const Row rows[] = {
        {kHighNonBursty, 400.0, false, {12.0, 16.0}},
        {kHighBursty, 400.0, true, {12.0, 16.0}},
        {kLowBursty, 3000.0, true, {8.0, 12.0}},
        {kLowNonBursty, 3000.0, false, {8.0, 12.0}},
        {kModerateNonBursty, 900.0, false, {10.0, 14.0}},
        {kModerateBursty, 900.0, true, {10.0, 14.0}},
    };
    std::vector<ArchetypeSpec> out;
    for (const auto& r : rows) {
        const Range sigma = r.bursty ? Range{0.35, 0.55} : Range{0.02, 0.10};
        const double shift = 0.25 * (sigma.lo + sigma.hi);
        ArchetypeSpec a;
        a.name = traffic_class_name(r.cls);
        a.mu = {std::log(0.95 * r.median_bits) + shift, std::log(1.05 * r.median_bits) + shift};
        a.sigma_sq = sigma;
        a.eb_n0 = r.eb_n0;
        a.los_power = {0.9e-5, 1.3e-5};
        a.nlos_scale = {0.02e-5, 0.1e-5};
        a.population_weight = 1.0 / 6.0;
        out.push_back(a);
    }
    return out;
}

void validate_archetypes(std::span<const ArchetypeSpec> archetypes) {
    if (archetypes.empty()) throw DomainError("archetype table is empty");
    double total = 0.0;
    for (const auto& a : archetypes) {
        const std::string who = "archetype '" + a.name + "': ";
        if (a.name.empty() || a.name.find_first_of(", \t") != std::string::npos) {
            throw DomainError(who + "name must be nonempty without commas or spaces");
        }
        for (const Range* r : {&a.mu, &a.sigma_sq, &a.eb_n0, &a.los_power, &a.nlos_scale}) {
            if (!r->valid() || !std::isfinite(r->lo) || !std::isfinite(r->hi)) throw DomainError(who + "empty interval");
        }
        if (a.sigma_sq.lo < 0.0 || a.los_power.lo < 0.0 || a.nlos_scale.lo < 0.0) {
            throw DomainError(who + "variances and powers must be nonnegative");
        }
        if (!(a.eb_n0.lo > 0.0)) throw DomainError(who + "eb_n0 must be positive");
        if (a.los_power.lo + a.nlos_scale.lo <= 0.0) throw DomainError(who + "channel may be degenerate");
        if (!(a.population_weight >= 0.0)) throw DomainError(who + "weight must be nonnegative");
        total += a.population_weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DomainError("archetype weights must sum to 1");
}

std::vector<PopulationMember> generate_population(std::span<const ArchetypeSpec> archetypes, std::size_t k_users,
                                                  double window_s, std::uint64_t seed,
                                                  const PopulationOptions& options) {
    if (k_users == 0) throw DomainError("k_users must be at least 1");
    validate_archetypes(archetypes);
    if (!options.availability.valid() || options.availability.lo < 0.0 || options.availability.hi > 1.0) {
        throw DomainError("availability range must lie within [0, 1]");
    }

    const traffic::StatsOptions stats_opts{options.link.ber_mode};
    std::vector<PopulationMember> out(k_users);
    for (std::size_t k = 0; k < k_users; ++k) {
        Rng rng = make_rng(seed, {kStreamUser, k});
        PopulationMember& m = out[k];
        UserProfile& p = m.profile;
        p.user_id = k;
        p.true_archetype = draw_archetype(archetypes, rng);
        p.availability_prob = draw(options.availability, rng);
        const ArchetypeSpec& a = archetypes[p.true_archetype];

        for (std::size_t attempt = 0;; ++attempt) {
            p.link = traffic::LinkBudget{options.link.bandwidth_hz, options.link.tx_power_w, options.link.noise_psd,
                                         draw(a.eb_n0, rng), options.link.constellation_size,
                                         options.link.noise_model};
            p.channel = traffic::ChannelState{draw(a.los_power, rng), draw(a.nlos_scale, rng)};
            p.packet_dist = traffic::PacketSizeDist{draw(a.mu, rng), draw(a.sigma_sq, rng)};
            try {
                m.stats = traffic::compute_traffic_stats(p.link, p.channel, p.packet_dist, window_s, stats_opts);
                break;
            } catch (const UndefinedBurstinessError&) {
                if (attempt + 1 >= options.max_resamples) {
                    throw DomainError("user " + std::to_string(k) + ": zero expected arrival rate after " +
                                      std::to_string(options.max_resamples) + " resamples");
                }
            }
        }
        m.features = mlr::FeatureVector{m.stats.burstiness, m.stats.exp_count};
    }
    return out;
}

double empirical_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DomainError("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<std::size_t> label_by_thresholds(std::span<const traffic::TrafficStats> stats, const ThresholdCuts& cuts) {
    if (stats.empty()) throw DomainError("no users to label");
    if (!(0.0 < cuts.volume_low_q && cuts.volume_low_q < cuts.volume_high_q && cuts.volume_high_q < 1.0) ||
        !(0.0 < cuts.bursty_q && cuts.bursty_q < 1.0)) {
        throw ThresholdError("quantile levels must satisfy 0 < low < high < 1 and 0 < bursty < 1");
    }
    std::vector<double> volume;
    std::vector<double> burst;
    for (const auto& s : stats) {
        volume.push_back(s.exp_count);
        burst.push_back(s.burstiness);
    }
    const auto [vmin, vmax] = std::minmax_element(volume.begin(), volume.end());
    const auto [bmin, bmax] = std::minmax_element(burst.begin(), burst.end());
    if (*vmin == *vmax) throw ThresholdError("all users share one traffic volume");
    if (*bmin == *bmax) throw ThresholdError("all users share one burstiness level");

    const double v1 = empirical_quantile(volume, cuts.volume_low_q);
    const double v2 = empirical_quantile(volume, cuts.volume_high_q);
    const double b = empirical_quantile(burst, cuts.bursty_q);

    std::vector<std::size_t> labels;
    labels.reserve(stats.size());
    for (const auto& s : stats) {
        const bool bursty = s.burstiness > b;
        if (s.exp_count <= v1) {
            labels.push_back(bursty ? kLowBursty : kLowNonBursty);
        } else if (s.exp_count <= v2) {
            labels.push_back(bursty ? kModerateBursty : kModerateNonBursty);
        } else {
            labels.push_back(bursty ? kHighBursty : kHighNonBursty);
        }
    }
    return labels;
}

std::vector<ClusterAssignment> cluster_users(const mlr::MlrModel& model, std::span<const std::uint64_t> user_ids,
                                             std::span<const mlr::FeatureVector> features) {
    if (user_ids.size() != features.size()) throw DomainError("user id and feature counts differ");
    std::vector<ClusterAssignment> out;
    out.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        ClusterAssignment a;
        a.user_id = user_ids[i];
        a.posterior = mlr::softmax_probs(model, features[i]);
        a.predicted_class = mlr::argmax(a.posterior);
        out.push_back(std::move(a));
    }
    return out;
}

ClusterPolicy ClusterPolicy::parse(const std::string& text) {
    const auto t = std::string(text::trim(text));
    if (t == "largest") return {Kind::kLargest, 0};
    if (t == "round_robin") return {Kind::kRoundRobin, 0};
    if (t.rfind("fixed:", 0) == 0) {
        const long long j = text::parse_int(t.substr(6));
        if (j < 0) throw std::invalid_argument("fixed cluster index must be nonnegative");
        return {Kind::kFixed, static_cast<std::size_t>(j)};
    }
    throw std::invalid_argument("unknown cluster policy '" + t + "'");
}

std::string ClusterPolicy::to_string() const {
    switch (kind) {
        case Kind::kLargest: return "largest";
        case Kind::kRoundRobin: return "round_robin";
        case Kind::kFixed: return "fixed:" + std::to_string(fixed_class);
    }
    return "largest";
}

Selection select_clients(std::span<const ClusterAssignment> assignments, const ClusterPolicy& policy,
                         std::size_t k_select, std::size_t round, Rng& rng) {
    if (assignments.empty()) throw DomainError("no cluster assignments to select from");
    if (k_select == 0) throw DomainError("k_select must be at least 1");

    std::size_t num_classes = 0;
    for (const auto& a : assignments) num_classes = std::max(num_classes, a.predicted_class + 1);
    std::vector<std::vector<std::uint64_t>> members(num_classes);
    for (const auto& a : assignments) members[a.predicted_class].push_back(a.user_id);

    std::vector<std::size_t> nonempty;
    for (std::size_t j = 0; j < num_classes; ++j) {
        if (!members[j].empty()) nonempty.push_back(j);
    }

    std::size_t chosen = nonempty.front();
    switch (policy.kind) {
        case ClusterPolicy::Kind::kLargest:
            for (std::size_t j : nonempty) {
                if (members[j].size() > members[chosen].size()) chosen = j;
            }
            break;
        case ClusterPolicy::Kind::kRoundRobin:
            chosen = nonempty[round % nonempty.size()];
            break;
        case ClusterPolicy::Kind::kFixed:
            if (policy.fixed_class >= num_classes || members[policy.fixed_class].empty()) {
                throw DomainError("fixed cluster " + std::to_string(policy.fixed_class) + " is empty");
            }
            chosen = policy.fixed_class;
            break;
    }

    Selection sel = sample_ids(members[chosen], k_select, rng);
    sel.cluster = chosen;
    return sel;
}

Selection baseline_availability_select(std::span<const UserProfile> users, std::size_t k_select, Rng& rng) {
    if (k_select == 0) throw DomainError("k_select must be at least 1");
    std::vector<std::uint64_t> available;
    for (const auto& u : users) {
        std::bernoulli_distribution reachable(u.availability_prob);
        if (reachable(rng)) available.push_back(u.user_id);
    }
    return sample_ids(std::move(available), k_select, rng);
}

Selection random_select(std::span<const UserProfile> users, std::size_t k_select, Rng& rng) {
    if (k_select == 0) throw DomainError("k_select must be at least 1");
    std::vector<std::uint64_t> ids;
    ids.reserve(users.size());
    for (const auto& u : users) ids.push_back(u.user_id);
    return sample_ids(std::move(ids), k_select, rng);
}

void write_population_csv(std::ostream& out, std::span<const PopulationMember> population,
                          std::span<const ArchetypeSpec> archetypes,
                          std::span<const ClusterAssignment> assignments) {
    if (!assignments.empty() && assignments.size() != population.size()) {
        throw DomainError("assignment count differs from population size");
    }
    out << "user_id,archetype,E_N,B,predicted_class\n";
    for (std::size_t i = 0; i < population.size(); ++i) {
        const auto& m = population[i];
        out << m.profile.user_id << ',' << archetypes[m.profile.true_archetype].name << ','
            << text::format_double(m.features.exp_count) << ',' << text::format_double(m.features.burstiness) << ',';
        if (!assignments.empty()) out << assignments[i].predicted_class;
        out << '\n';
    }
}

}  // namespace trafficfl::selection
