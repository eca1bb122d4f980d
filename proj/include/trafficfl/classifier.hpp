#pragma once

// Multinomial logistic regression over the (burstiness, expected packet
// count) feature plane. Raw features are the public interface; the model
// carries its own z-score scaler. Class indices are 0-based.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace trafficfl::mlr {

inline constexpr std::size_t kFeatureDim = 2;

struct FeatureVector {
    double burstiness = 0.0;
    double exp_count = 0.0;

    [[nodiscard]] std::array<double, kFeatureDim> as_array() const { return {burstiness, exp_count}; }
};

struct LabeledSample {
    FeatureVector features;
    std::size_t label = 0;
};

struct Scaler {
    std::array<double, kFeatureDim> mean{0.0, 0.0};
    std::array<double, kFeatureDim> stddev{1.0, 1.0};

    static Scaler fit(std::span<const LabeledSample> data);
    [[nodiscard]] std::array<double, kFeatureDim> transform(const FeatureVector& x) const;

    bool operator==(const Scaler&) const = default;
};

struct MlrModel {
    std::vector<double> weights;  ///< J x 2, row-major; row j is w_j
    std::vector<double> biases;   ///< J
    std::vector<std::string> class_names;
    Scaler scaler;
    double final_loss = 0.0;  ///< mean cross-entropy at the end of training
    std::size_t epochs = 0;

    /// Zero weights and biases, identity scaler.
    static MlrModel zeros(std::vector<std::string> class_names);

    [[nodiscard]] std::size_t num_classes() const { return biases.size(); }
    double& weight(std::size_t j, std::size_t f) { return weights[j * kFeatureDim + f]; }
    [[nodiscard]] double weight(std::size_t j, std::size_t f) const { return weights[j * kFeatureDim + f]; }

    /// Throws DomainError when J < 2, shapes disagree, or entries are non-finite.
    void validate() const;

    bool operator==(const MlrModel&) const = default;
};

/// Logits w_j . x~ + b_j on the standardized input.
std::vector<double> logits(const MlrModel& model, const FeatureVector& x);
/// Max-subtracted softmax of a logit vector. Throws NumericError on non-finite input.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> softmax_probs(const MlrModel& model, const FeatureVector& x);

/// Unnormalized cross-entropy sum over the data.
double cross_entropy_loss(const MlrModel& model, std::span<const LabeledSample> data);
double mean_cross_entropy_loss(const MlrModel& model, std::span<const LabeledSample> data);

struct Gradient {
    std::vector<double> weights;  ///< J x 2
    std::vector<double> biases;   ///< J
};

/// Gradient of the unnormalized cross-entropy sum.
Gradient loss_gradient(const MlrModel& model, std::span<const LabeledSample> data);

struct TrainingParams {
    double learning_rate = 0.1;
    std::size_t max_epochs = 5000;
    double tolerance = 1e-6;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;  ///< unused by full-batch descent; part of the determinism contract
    std::size_t divergence_patience = 10;

    bool operator==(const TrainingParams&) const = default;
};

struct TrainingReport {
    MlrModel model;
    std::vector<double> loss_history;  ///< mean loss before each update, then the final loss
    bool converged = false;
};

/// Full-batch gradient descent from zero weights on the mean cross-entropy.
/// Throws DomainError on empty or single-class data, TrainingDivergedError
/// when the loss rises for `divergence_patience` consecutive epochs.
TrainingReport train(std::span<const LabeledSample> data, std::size_t num_classes,
                     const TrainingParams& params = {}, std::vector<std::string> class_names = {});

/// argmax of the posterior, lowest index on ties.
std::size_t predict(const MlrModel& model, const FeatureVector& x);
std::size_t argmax(std::span<const double> values);

double accuracy(const MlrModel& model, std::span<const LabeledSample> data);

struct GridBounds {
    double burstiness_min = 0.0;
    double burstiness_max = 1.0;
    double count_min = 0.0;
    double count_max = 1.0;
};

struct DecisionGrid {
    GridBounds bounds;
    std::size_t rows = 0;  ///< along exp_count
    std::size_t cols = 0;  ///< along burstiness
    std::vector<std::size_t> labels;  ///< rows x cols, row-major

    [[nodiscard]] double burstiness_at(std::size_t col) const;
    [[nodiscard]] double count_at(std::size_t row) const;
    [[nodiscard]] std::size_t at(std::size_t row, std::size_t col) const { return labels[row * cols + col]; }
};

/// Evaluates predict on an inclusive rows x cols lattice; needs rows, cols >= 2.
DecisionGrid decision_boundary_grid(const MlrModel& model, const GridBounds& bounds, std::size_t rows,
                                    std::size_t cols);
/// `b_value,count_value,class_index` rows.
void write_grid_csv(std::ostream& out, const DecisionGrid& grid);

/// Plain-text key = value form; doubles use shortest round-trip notation.
void save_model(std::ostream& out, const MlrModel& model);
MlrModel load_model(std::istream& in);

}  // namespace trafficfl::mlr
