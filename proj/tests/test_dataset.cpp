#include "trafficfl/dataset.hpp"
#include "trafficfl/error.hpp"
#include "trafficfl/random.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace trafficfl;
using namespace trafficfl::fl;

namespace {

// Every example as (label, features) so shards can be compared as multisets.
using Row = std::pair<std::size_t, std::vector<double>>;

std::vector<Row> rows_of(const Dataset& d) {
    std::vector<Row> out;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto r = d.row(i);
        out.emplace_back(d.labels[i], std::vector<double>(r.begin(), r.end()));
    }
    return out;
}

struct Setup {
    Dataset global;
    std::vector<std::uint64_t> ids;
    std::vector<std::size_t> archetypes;
    LabelPriors priors;
};

Setup make_setup(std::size_t users, std::size_t examples, std::size_t num_arch, const CouplingConfig& coupling,
                 std::uint64_t seed) {
    Setup s;
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> arch(0, num_arch - 1);
    for (std::size_t u = 0; u < users; ++u) {
        s.ids.push_back(1000 + 3 * u);
        s.archetypes.push_back(arch(rng));
    }
    const MixtureSpec spec{12, 5, 2.0};
    s.priors = draw_label_priors(s.archetypes, num_arch, spec.num_classes, coupling, seed);
    s.global = make_gaussian_mixture(spec, aggregate_class_counts(s.priors, examples), seed);
    return s;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("largest remainder rounding") {
    const std::vector<double> w{0.5, 0.3, 0.2};
    CHECK(largest_remainder(w, 7) == std::vector<std::size_t>{4, 2, 1});
    const std::vector<double> even{1.0, 1.0, 1.0};
    CHECK(largest_remainder(even, 5) == std::vector<std::size_t>{2, 2, 1});
    Rng rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> ws(1 + t % 17);
        for (auto& v : ws) v = u(rng);
        const std::size_t total = static_cast<std::size_t>(t * 13 % 997);
        const auto out = largest_remainder(ws, total);
        CHECK(std::accumulate(out.begin(), out.end(), std::size_t{0}) == total);
        const double sum = std::accumulate(ws.begin(), ws.end(), 0.0);
        for (std::size_t i = 0; i < ws.size(); ++i) CHECK(std::abs(double(out[i]) - total * ws[i] / sum) < 1.0 + 1e-9);
    }
    const std::vector<double> zero{0.0, 0.0};
    CHECK_THROWS_AS(largest_remainder(zero, 3), DomainError);
}

TEST_CASE("gaussian mixture") {
    const MixtureSpec spec{16, 4, 3.0};
    const std::vector<std::size_t> counts{4000, 3000, 2000, 1000};
    const Dataset d = make_gaussian_mixture(spec, counts, 3);
    CHECK(d.size() == 10000);
    CHECK(d.dim == 16);
    CHECK(d.label_histogram() == counts);
    std::vector<std::vector<double>> mean(4, std::vector<double>(16, 0.0));
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t f = 0; f < 16; ++f) mean[d.labels[i]][f] += d.row(i)[f] / double(counts[d.labels[i]]);
    }
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t f = 0; f < 16; ++f) {
            const double expect = f == c ? 3.0 : 0.0;
            CHECK(std::abs(mean[c][f] - expect) < 5.0 / std::sqrt(double(counts[c])));
        }
    }
    const Dataset again = make_gaussian_mixture(spec, counts, 3);
    CHECK(again.features == d.features);
    CHECK(again.labels == d.labels);
}

TEST_CASE("label priors are distributions and concentrate with alpha_user") {
    const std::vector<std::size_t> arch{0, 0, 1, 2, 2, 2};
    CouplingConfig c;
    const LabelPriors p = draw_label_priors(arch, 3, 10, c, 4);
    REQUIRE(p.archetype.size() == 3);
    REQUIRE(p.user.size() == 6);
    for (const auto& v : p.user) CHECK(std::accumulate(v.begin(), v.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));

    c.alpha_user = 1e6;
    const LabelPriors tight = draw_label_priors(arch, 3, 10, c, 4);
    for (std::size_t k = 0; k < arch.size(); ++k) CHECK(total_variation(tight.user[k], tight.archetype[arch[k]]) < 0.01);
    CHECK(tight.archetype == p.archetype);

    c.alpha_class = 0.0;
    CHECK_THROWS_AS(draw_label_priors(arch, 3, 10, c, 4), DomainError);
}

TEST_CASE("single user shard is the whole dataset") {
    const Setup s = make_setup(1, 300, 2, {}, 5);
    const auto shards = partition_dataset(s.global, s.ids, s.priors, 5, 5);
    REQUIRE(shards.size() == 1);
    auto a = rows_of(shards.begin()->second.data);
    auto b = rows_of(s.global);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
}

TEST_CASE("partition is disjoint and covering") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        CouplingConfig c;
        c.alpha_class = 0.1 + 0.2 * double(seed);
        const std::size_t users = 10 + 7 * seed;
        const std::size_t n = users * (5 + seed) + seed;
        const Setup s = make_setup(users, n, 1 + seed % 4, c, seed);
        const auto shards = partition_dataset(s.global, s.ids, s.priors, 5, seed);
        CHECK(shards.size() == users);
        std::vector<Row> all;
        std::size_t smallest = n, largest = 0;
        for (const auto& [id, shard] : shards) {
            CHECK(shard.user_id == id);
            CHECK(shard.label_histogram == shard.data.label_histogram());
            smallest = std::min(smallest, shard.data.size());
            largest = std::max(largest, shard.data.size());
            const auto r = rows_of(shard.data);
            all.insert(all.end(), r.begin(), r.end());
        }
        CHECK(smallest >= 5);
        auto global = rows_of(s.global);
        std::sort(all.begin(), all.end());
        std::sort(global.begin(), global.end());
        CHECK(all == global);
    }
}

TEST_CASE("infeasible partitions are rejected") {
    const Setup s = make_setup(50, 100, 2, {}, 6);
    CHECK_THROWS_AS(partition_dataset(s.global, s.ids, s.priors, 5, 6), PartitionError);
    auto dup = s.ids;
    dup[1] = dup[0];
    CHECK_THROWS_AS(partition_dataset(s.global, dup, s.priors, 1, 6), PartitionError);
}

TEST_CASE("large alpha_user makes same-archetype shards follow the archetype prior") {
    CouplingConfig c;
    c.alpha_user = 1e4;
    const Setup s = make_setup(40, 40 * 400, 3, c, 7);
    const auto shards = partition_dataset(s.global, s.ids, s.priors, 5, 7);
    for (std::size_t u = 0; u < s.ids.size(); ++u) {
        const auto& h = shards.at(s.ids[u]).label_histogram;
        const double n = std::accumulate(h.begin(), h.end(), 0.0);
        std::vector<double> freq(h.size());
        for (std::size_t k = 0; k < h.size(); ++k) freq[k] = h[k] / n;
        CHECK(total_variation(freq, s.priors.archetype[s.archetypes[u]]) < 0.05);
    }
}

TEST_CASE("partition overload draws the same priors") {
    const Setup s = make_setup(30, 900, 3, {}, 8);
    const auto a = partition_dataset(s.global, s.ids, s.priors, 5, 8);
    const auto b = partition_dataset(s.global, s.ids, s.archetypes, 3, CouplingConfig{}, 8);
    for (const auto& [id, shard] : a) CHECK(shard.data.labels == b.at(id).data.labels);
}

TEST_CASE("total variation and selection divergence") {
    const std::vector<std::size_t> a{10, 0, 0}, b{0, 5, 5}, c{5, 5, 0};
    CHECK(total_variation(a, a) == 0.0);
    CHECK(total_variation(a, b) == doctest::Approx(1.0));
    CHECK(total_variation(a, c) == doctest::Approx(0.5));
    const std::vector<std::vector<std::size_t>> same{a, a, a};
    CHECK(selection_divergence(same) == 0.0);
    const std::vector<std::vector<std::size_t>> mixed{a, b, c};
    CHECK(selection_divergence(mixed) == doctest::Approx((1.0 + 0.5 + 0.5) / 3.0));
    const std::vector<std::vector<std::size_t>> one{a};
    CHECK(selection_divergence(one) == 0.0);
}

}  // TEST_SUITE
