#include "trafficfl/error.hpp"
#include "trafficfl/selection.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

using namespace trafficfl;
using namespace trafficfl::selection;

namespace {

std::vector<ClusterAssignment> sized_clusters(std::initializer_list<std::size_t> sizes) {
    std::vector<ClusterAssignment> out;
    std::uint64_t id = 0;
    std::size_t cls = 0;
    for (std::size_t n : sizes) {
        for (std::size_t i = 0; i < n; ++i) out.push_back({id++, cls, {}});
        ++cls;
    }
    return out;
}

std::vector<traffic::TrafficStats> stats_of(const std::vector<PopulationMember>& pop) {
    std::vector<traffic::TrafficStats> s;
    for (const auto& m : pop) s.push_back(m.stats);
    return s;
}

mlr::MlrModel train_on(const std::vector<PopulationMember>& pop) {
    std::vector<mlr::LabeledSample> data;
    for (const auto& m : pop) data.push_back({m.features, m.profile.true_archetype});
    std::vector<std::string> names;
    for (const auto& a : default_archetypes()) names.push_back(a.name);
    return mlr::train(data, names.size(), {}, names).model;
}

}  // namespace

TEST_SUITE("selection") {

TEST_CASE("default archetype table") {
    const auto a = default_archetypes();
    REQUIRE(a.size() == kNumTrafficClasses);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j].name == traffic_class_name(j));
    CHECK_NOTHROW(validate_archetypes(a));

    auto bad = a;
    bad[0].population_weight = 0.5;
    CHECK_THROWS_AS(validate_archetypes(bad), DomainError);
    bad = a;
    bad[2].mu = {2.0, 1.0};
    CHECK_THROWS_AS(validate_archetypes(bad), DomainError);
}

TEST_CASE("archetype counts follow the weights") {
    const auto pop = generate_population(default_archetypes(), 1000, 1.0, 1);
    REQUIRE(pop.size() == 1000);
    std::vector<std::size_t> counts(6, 0);
    for (const auto& m : pop) ++counts[m.profile.true_archetype];
    const double sd = std::sqrt(1000.0 * (1.0 / 6.0) * (5.0 / 6.0));
    for (auto c : counts) CHECK(std::abs(static_cast<double>(c) - 1000.0 / 6.0) <= 4.0 * sd);
    for (std::size_t i = 0; i < pop.size(); ++i) {
        CHECK(pop[i].profile.user_id == i);
        CHECK(pop[i].profile.availability_prob >= 0.5);
        CHECK(pop[i].profile.availability_prob <= 1.0);
    }
}

TEST_CASE("single user draws inside the declared ranges") {
    auto spec = default_archetypes()[3];
    spec.population_weight = 1.0;
    const std::vector<ArchetypeSpec> one{spec};
    const auto pop = generate_population(one, 1, 1.0, 5);
    REQUIRE(pop.size() == 1);
    const auto& p = pop[0].profile;
    CHECK(spec.mu.contains(p.packet_dist.mu));
    CHECK(spec.sigma_sq.contains(p.packet_dist.sigma_sq));
    CHECK(spec.eb_n0.contains(p.link.eb_n0));
    CHECK(spec.los_power.contains(p.channel.los_power));
    CHECK(spec.nlos_scale.contains(p.channel.nlos_scale_sq));
}

TEST_CASE("population is deterministic and per-user") {
    const auto a = generate_population(default_archetypes(), 200, 1.0, 9);
    const auto b = generate_population(default_archetypes(), 200, 1.0, 9);
    const auto prefix = generate_population(default_archetypes(), 50, 1.0, 9);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].features.exp_count == b[i].features.exp_count);
        CHECK(a[i].features.burstiness == b[i].features.burstiness);
    }
    for (std::size_t i = 0; i < prefix.size(); ++i) CHECK(prefix[i].features.exp_count == a[i].features.exp_count);
    const auto c = generate_population(default_archetypes(), 200, 1.0, 10);
    CHECK(c[0].features.exp_count != a[0].features.exp_count);
    CHECK_THROWS_AS(generate_population(default_archetypes(), 0, 1.0, 1), DomainError);
}

TEST_CASE("empirical quantile interpolates") {
    CHECK(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 0.5) == doctest::Approx(2.5));
    CHECK(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 1.0 / 3.0) == doctest::Approx(2.0));
    CHECK(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 0.0) == 1.0);
    CHECK(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 1.0) == 4.0);
    CHECK(empirical_quantile({7.0}, 0.3) == 7.0);
    CHECK_THROWS_AS(empirical_quantile({}, 0.5), DomainError);
}

TEST_CASE("threshold labels on a constructed crossing") {
    std::vector<traffic::TrafficStats> stats;
    for (double n : {10.0, 100.0, 1000.0}) {
        for (double b : {0.01, 0.9}) {
            traffic::TrafficStats s;
            s.exp_count = n;
            s.burstiness = b;
            stats.push_back(s);
        }
    }
    const auto labels = label_by_thresholds(stats);
    const std::vector<std::size_t> expected{kLowNonBursty,      kLowBursty,  kModerateNonBursty,
                                            kModerateBursty,    kHighNonBursty, kHighBursty};
    CHECK(labels == expected);

    std::vector<traffic::TrafficStats> same(5, stats[0]);
    CHECK_THROWS_AS(label_by_thresholds(same), ThresholdError);
}

TEST_CASE("threshold labels agree with archetypes on the default population") {
    const auto pop = generate_population(default_archetypes(), 1000, 1.0, 1);
    const auto labels = label_by_thresholds(stats_of(pop));
    std::size_t agree = 0;
    for (std::size_t i = 0; i < pop.size(); ++i) agree += labels[i] == pop[i].profile.true_archetype;
    CHECK(static_cast<double>(agree) / 1000.0 >= 0.8);

    // high/non-bursty users sit in the top volume tercile and below the median burstiness
    std::vector<double> counts, bursts;
    for (const auto& m : pop) {
        counts.push_back(m.stats.exp_count);
        bursts.push_back(m.stats.burstiness);
    }
    const double q2 = empirical_quantile(counts, 2.0 / 3.0);
    const double med = empirical_quantile(bursts, 0.5);
    std::size_t high = 0, top = 0, calm = 0;
    for (const auto& m : pop) {
        if (m.profile.true_archetype != kHighNonBursty) continue;
        ++high;
        top += m.stats.exp_count > q2;
        calm += m.stats.burstiness <= med;
    }
    REQUIRE(high > 0);
    CHECK(static_cast<double>(top) / double(high) >= 0.95);
    CHECK(static_cast<double>(calm) / double(high) >= 0.95);
}

TEST_CASE("clustering a single-archetype population") {
    const auto pop = generate_population(default_archetypes(), 1000, 1.0, 1);
    const auto model = train_on(pop);

    auto spec = default_archetypes()[kModerateBursty];
    spec.population_weight = 1.0;
    const std::vector<ArchetypeSpec> one{spec};
    const auto single = generate_population(one, 500, 1.0, 77);
    std::vector<std::uint64_t> ids;
    std::vector<mlr::FeatureVector> feats;
    for (const auto& m : single) {
        ids.push_back(m.profile.user_id);
        feats.push_back(m.features);
    }
    const auto assignments = cluster_users(model, ids, feats);
    std::vector<std::size_t> sizes(6, 0);
    for (const auto& a : assignments) {
        ++sizes[a.predicted_class];
        CHECK(a.predicted_class == mlr::argmax(a.posterior));
        CHECK(std::accumulate(a.posterior.begin(), a.posterior.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(*std::max_element(sizes.begin(), sizes.end()) >= 450);

    CHECK(cluster_users(model, {}, {}).empty());
}

TEST_CASE("largest cluster selection") {
    const auto as = sized_clusters({600, 250, 150});
    Rng rng(1);
    const Selection s = select_clients(as, {}, 100, 0, rng);
    REQUIRE(s.user_ids.size() == 100);
    CHECK(s.cluster == std::optional<std::size_t>(0));
    CHECK_FALSE(s.shortfall);
    CHECK(std::is_sorted(s.user_ids.begin(), s.user_ids.end()));
    CHECK(std::set<std::uint64_t>(s.user_ids.begin(), s.user_ids.end()).size() == 100);
    for (auto id : s.user_ids) CHECK(id < 600);

    CHECK_THROWS_AS(select_clients({}, {}, 5, 0, rng), DomainError);
    CHECK_THROWS_AS(select_clients(as, {}, 0, 0, rng), DomainError);
}

TEST_CASE("largest ties go to the lower class") {
    const auto as = sized_clusters({0, 30, 30});
    Rng rng(2);
    CHECK(select_clients(as, {}, 5, 0, rng).cluster == std::optional<std::size_t>(1));
}

TEST_CASE("shortfall returns the whole cluster") {
    const auto as = sized_clusters({20, 5});
    Rng rng(3);
    ClusterPolicy fixed{ClusterPolicy::Kind::kFixed, 1};
    const Selection s = select_clients(as, fixed, 10, 0, rng);
    CHECK(s.shortfall);
    CHECK(s.user_ids == std::vector<std::uint64_t>{20, 21, 22, 23, 24});
}

TEST_CASE("round robin visits each cluster once per cycle") {
    const auto as = sized_clusters({10, 20, 30, 40, 50, 60});
    Rng rng(4);
    const ClusterPolicy rr{ClusterPolicy::Kind::kRoundRobin, 0};
    std::set<std::size_t> seen;
    for (std::size_t r = 0; r < 6; ++r) seen.insert(*select_clients(as, rr, 5, r, rng).cluster);
    CHECK(seen.size() == 6);
}

TEST_CASE("cluster policy text form") {
    for (const std::string t : {"largest", "round_robin", "fixed:3"}) CHECK(ClusterPolicy::parse(t).to_string() == t);
    CHECK(ClusterPolicy::parse("fixed:3").fixed_class == 3);
    CHECK_THROWS(ClusterPolicy::parse("smallest"));
    CHECK_THROWS(ClusterPolicy::parse("fixed:x"));
}

TEST_CASE("availability baseline") {
    std::vector<UserProfile> users(1000);
    for (std::size_t i = 0; i < users.size(); ++i) users[i].user_id = i;
    Rng rng(5);

    for (auto& u : users) u.availability_prob = 1.0;
    CHECK(baseline_availability_select(users, 1000, rng).user_ids.size() == 1000);

    for (auto& u : users) u.availability_prob = 0.0;
    const Selection none = baseline_availability_select(users, 10, rng);
    CHECK(none.user_ids.empty());
    CHECK(none.shortfall);

    for (auto& u : users) u.availability_prob = 0.5;
    double total = 0.0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        const auto n = static_cast<double>(baseline_availability_select(users, 1000, rng).user_ids.size());
        CHECK(std::abs(n - 500.0) <= 5.0 * std::sqrt(250.0));
        total += n;
    }
    CHECK(std::abs(total / trials - 500.0) <= 3.0 * std::sqrt(250.0 / trials));

    const Selection s = baseline_availability_select(users, 50, rng);
    CHECK(s.user_ids.size() == 50);
    CHECK(std::set<std::uint64_t>(s.user_ids.begin(), s.user_ids.end()).size() == 50);
}

TEST_CASE("uniform control draws without replacement") {
    std::vector<UserProfile> users(30);
    for (std::size_t i = 0; i < users.size(); ++i) users[i].user_id = 100 + i;
    Rng a(6), b(6);
    const auto s = random_select(users, 10, a);
    CHECK(s.user_ids == random_select(users, 10, b).user_ids);
    CHECK(std::set<std::uint64_t>(s.user_ids.begin(), s.user_ids.end()).size() == 10);
    CHECK(random_select(users, 40, a).shortfall);
}

TEST_CASE("population export") {
    const auto pop = generate_population(default_archetypes(), 3, 1.0, 1);
    std::ostringstream out;
    write_population_csv(out, pop, default_archetypes(), {});
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "user_id,archetype,E_N,B,predicted_class");
    std::getline(in, line);
    CHECK(line.rfind("0," + default_archetypes()[pop[0].profile.true_archetype].name + ",", 0) == 0);
}

}  // TEST_SUITE
