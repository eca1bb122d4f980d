#include "trafficfl/classifier.hpp"
#include "trafficfl/error.hpp"
#include "trafficfl/random.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace trafficfl;
using namespace trafficfl::mlr;

namespace {

MlrModel random_model(std::size_t j, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    MlrModel m = MlrModel::zeros(std::vector<std::string>(j, "c"));
    for (std::size_t i = 0; i < j; ++i) m.class_names[i] = "c" + std::to_string(i);
    for (auto& w : m.weights) w = n(rng);
    for (auto& b : m.biases) b = n(rng);
    m.scaler.mean = {0.3, 1000.0};
    m.scaler.stddev = {0.2, 500.0};
    return m;
}

std::vector<LabeledSample> random_samples(std::size_t n, std::size_t j, Rng& rng) {
    std::uniform_real_distribution<double> b(0.0, 1.0), c(0.0, 3000.0);
    std::uniform_int_distribution<std::size_t> y(0, j - 1);
    std::vector<LabeledSample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({{b(rng), c(rng)}, y(rng)});
    return out;
}

// Eq.-level recomputation without the library's helpers.
double oracle_loss(const MlrModel& m, const std::vector<LabeledSample>& data) {
    double total = 0.0;
    for (const auto& s : data) {
        const double x0 = (s.features.burstiness - m.scaler.mean[0]) / m.scaler.stddev[0];
        const double x1 = (s.features.exp_count - m.scaler.mean[1]) / m.scaler.stddev[1];
        std::vector<double> z(m.num_classes());
        for (std::size_t j = 0; j < z.size(); ++j) z[j] = m.weights[2 * j] * x0 + m.weights[2 * j + 1] * x1 + m.biases[j];
        double denom = 0.0;
        for (double v : z) denom += std::exp(v);
        total += -std::log(std::exp(z[s.label]) / denom);
    }
    return total;
}

// Three well-separated blobs in (burstiness, count).
std::vector<LabeledSample> blobs(std::size_t per_class, Rng& rng) {
    std::normal_distribution<double> nb(0.0, 0.02), nc(0.0, 50.0);
    const double cb[] = {0.1, 0.6, 0.1};
    const double cc[] = {500.0, 500.0, 3000.0};
    std::vector<LabeledSample> out;
    for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t i = 0; i < per_class; ++i) out.push_back({{cb[j] + nb(rng), cc[j] + nc(rng)}, j});
    }
    return out;
}

}  // namespace

TEST_SUITE("classifier") {

TEST_CASE("softmax at zero parameters is uniform") {
    const MlrModel m = MlrModel::zeros({"a", "b", "c", "d", "e", "f"});
    for (double p : softmax_probs(m, {0.4, 1234.0})) CHECK(p == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(predict(m, {0.4, 1234.0}) == 0);
}

TEST_CASE("softmax normalization and shift invariance") {
    Rng rng(1);
    std::normal_distribution<double> n(0.0, 20.0);
    std::uniform_int_distribution<int> len(2, 12);
    for (int t = 0; t < 10000; ++t) {
        std::vector<double> z(static_cast<std::size_t>(len(rng)));
        for (auto& v : z) v = n(rng);
        const auto p = softmax(z);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v > 0.0);
            CHECK(v <= 1.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        const double c = n(rng) * 10.0;
        for (auto& v : z) v += c;
        const auto q = softmax(z);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
    }
    const std::vector<double> bad{1.0, NAN};
    CHECK_THROWS_AS(softmax(bad), NumericError);
}

TEST_CASE("cross-entropy at zero parameters") {
    Rng rng(2);
    for (std::size_t j : {2u, 6u}) {
        std::vector<std::string> names(j, "x");
        for (std::size_t i = 0; i < j; ++i) names[i] += std::to_string(i);
        const auto data = random_samples(137, j, rng);
        const MlrModel m = MlrModel::zeros(names);
        CHECK(cross_entropy_loss(m, data) == doctest::Approx(137.0 * std::log(double(j))).epsilon(1e-14));
        CHECK(mean_cross_entropy_loss(m, data) == doctest::Approx(std::log(double(j))).epsilon(1e-14));
    }
    CHECK_THROWS_AS(cross_entropy_loss(MlrModel::zeros({"a", "b"}), {}), DomainError);
}

TEST_CASE("cross-entropy matches an independent recomputation") {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        const MlrModel m = random_model(5, rng);
        const auto data = random_samples(100, 5, rng);
        CHECK(cross_entropy_loss(m, data) == doctest::Approx(oracle_loss(m, data)).epsilon(1e-10));
    }
}

TEST_CASE("gradient matches central finite differences") {
    Rng rng(4);
    const double h = 1e-5;
    for (int t = 0; t < 20; ++t) {
        MlrModel m = random_model(4, rng, 0.5);
        const auto data = random_samples(50, 4, rng);
        const Gradient g = loss_gradient(m, data);
        auto check = [&](double& param, double analytic) {
            const double keep = param;
            param = keep + h;
            const double up = cross_entropy_loss(m, data);
            param = keep - h;
            const double down = cross_entropy_loss(m, data);
            param = keep;
            const double fd = (up - down) / (2.0 * h);
            CHECK(std::abs(fd - analytic) <= 1e-4 * std::max(std::abs(analytic), 1e-3));
        };
        for (std::size_t i = 0; i < m.weights.size(); ++i) check(m.weights[i], g.weights[i]);
        for (std::size_t i = 0; i < m.biases.size(); ++i) check(m.biases[i], g.biases[i]);
    }
}

TEST_CASE("gradient is additive over data") {
    Rng rng(5);
    const MlrModel m = random_model(3, rng);
    auto data = random_samples(40, 3, rng);
    const Gradient g1 = loss_gradient(m, data);
    auto doubled = data;
    doubled.insert(doubled.end(), data.begin(), data.end());
    const Gradient g2 = loss_gradient(m, doubled);
    for (std::size_t i = 0; i < g1.weights.size(); ++i) CHECK(g2.weights[i] == doctest::Approx(2.0 * g1.weights[i]).epsilon(1e-13));
    for (std::size_t i = 0; i < g1.biases.size(); ++i) CHECK(g2.biases[i] == doctest::Approx(2.0 * g1.biases[i]).epsilon(1e-13));
}

TEST_CASE("confident correct model has vanishing loss and gradient") {
    MlrModel m = MlrModel::zeros({"lo", "hi"});
    m.weight(0, 0) = -200.0;
    m.weight(1, 0) = 200.0;
    const std::vector<LabeledSample> data{{{-1.0, 0.0}, 0}, {{1.0, 0.0}, 1}, {{-2.0, 5.0}, 0}};
    CHECK(cross_entropy_loss(m, data) < 1e-12);
    const Gradient g = loss_gradient(m, data);
    double norm = 0.0;
    for (double v : g.weights) norm += v * v;
    for (double v : g.biases) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-8);
}

TEST_CASE("training converges with a non-increasing loss") {
    Rng rng(6);
    const auto data = blobs(100, rng);
    const TrainingReport r = train(data, 3, {}, {"a", "b", "c"});
    CHECK(accuracy(r.model, data) >= 0.99);
    for (std::size_t e = 2; e < r.loss_history.size(); ++e) CHECK(r.loss_history[e] <= r.loss_history[e - 1]);
    CHECK(r.model.final_loss == r.loss_history.back());
    CHECK(r.model.epochs > 0);

    const TrainingReport again = train(data, 3, {}, {"a", "b", "c"});
    CHECK(again.model == r.model);

    auto shuffled = data;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const TrainingReport perm = train(shuffled, 3, {}, {"a", "b", "c"});
    CHECK(perm.model.final_loss == doctest::Approx(r.model.final_loss).epsilon(1e-9));
}

TEST_CASE("training errors") {
    Rng rng(7);
    auto data = blobs(10, rng);
    for (auto& s : data) s.label = 1;
    CHECK_THROWS_AS(train(data, 3), DomainError);
    CHECK_THROWS_AS(train({}, 3), DomainError);

    const auto good = blobs(30, rng);
    TrainingParams wild;
    wild.learning_rate = 1e300;
    CHECK_THROWS_AS(train(good, 3, wild), TrainingDivergedError);
}

TEST_CASE("scaler stores the training statistics") {
    const std::vector<LabeledSample> data{{{0.1, 100.0}, 0}, {{0.3, 100.0}, 1}};
    const Scaler s = Scaler::fit(data);
    CHECK(s.mean[0] == doctest::Approx(0.2));
    CHECK(s.stddev[1] == 1.0);
    const auto z = s.transform({0.3, 100.0});
    CHECK(z[1] == 0.0);
}

TEST_CASE("prediction equals argmax of an independent posterior") {
    Rng rng(8);
    const MlrModel m = random_model(6, rng, 2.0);
    std::uniform_real_distribution<double> b(0.0, 1.0), c(0.0, 5000.0);
    for (int t = 0; t < 10000; ++t) {
        const FeatureVector x{b(rng), c(rng)};
        const double x0 = (x.burstiness - m.scaler.mean[0]) / m.scaler.stddev[0];
        const double x1 = (x.exp_count - m.scaler.mean[1]) / m.scaler.stddev[1];
        std::size_t best = 0;
        double best_z = -INFINITY;
        for (std::size_t j = 0; j < 6; ++j) {
            const double z = m.weight(j, 0) * x0 + m.weight(j, 1) * x1 + m.biases[j];
            if (z > best_z) {
                best_z = z;
                best = j;
            }
        }
        CHECK(predict(m, x) == best);

        MlrModel scaled = m;
        for (auto& w : scaled.weights) w *= 3.5;
        for (auto& v : scaled.biases) v *= 3.5;
        CHECK(predict(scaled, x) == best);
    }
    const std::vector<double> tie{1.0, 3.0, 3.0};
    CHECK(argmax(tie) == 1);
}

TEST_CASE("decision grid") {
    Rng rng(9);
    std::vector<LabeledSample> data;
    std::normal_distribution<double> n(0.0, 0.05);
    for (int i = 0; i < 50; ++i) {
        data.push_back({{0.2 + n(rng), 1000.0 + 100 * n(rng)}, 0});
        data.push_back({{0.8 + n(rng), 3000.0 + 100 * n(rng)}, 1});
    }
    const auto r = train(data, 2, {}, {"a", "b"});
    const DecisionGrid g = decision_boundary_grid(r.model, {0.0, 1.0, 0.0, 4000.0}, 30, 40);
    CHECK(g.labels.size() == 30 * 40);
    std::size_t ones = 0;
    for (std::size_t row = 0; row < g.rows; ++row) {
        int switches = 0;
        for (std::size_t col = 1; col < g.cols; ++col) switches += g.at(row, col) != g.at(row, col - 1);
        CHECK(switches <= 1);
        for (std::size_t col = 0; col < g.cols; ++col) ones += g.at(row, col);
    }
    for (std::size_t col = 0; col < g.cols; ++col) {
        int switches = 0;
        for (std::size_t row = 1; row < g.rows; ++row) switches += g.at(row, col) != g.at(row - 1, col);
        CHECK(switches <= 1);
    }
    CHECK(ones > 0);
    CHECK(ones < g.labels.size());
    for (auto l : g.labels) CHECK(l < 2);

    std::ostringstream out;
    write_grid_csv(out, g);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "b_value,count_value,class_index");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 30 * 40);
    CHECK_THROWS_AS(decision_boundary_grid(r.model, {}, 1, 5), DomainError);
}

TEST_CASE("model serialization round-trips bit-exactly") {
    Rng rng(10);
    MlrModel m = random_model(6, rng, 3.0);
    m.weights[0] = 1.0 / 3.0;
    m.biases[1] = -2.5e-300;
    m.final_loss = 0.123456789012345678;
    m.epochs = 77;
    std::stringstream s;
    save_model(s, m);
    const MlrModel back = load_model(s);
    CHECK(back == m);

    std::istringstream bad("format = other\n");
    CHECK_THROWS_AS(load_model(bad), DomainError);
}

}  // TEST_SUITE
