#include "trafficfl/classifier.hpp"

#include "trafficfl/error.hpp"
#include "trafficfl/text.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

namespace trafficfl::mlr {

namespace {

void require_nonempty(std::span<const LabeledSample> data) {
    if (data.empty()) throw DomainError("dataset is empty");
}

void check_labels(const MlrModel& model, std::span<const LabeledSample> data) {
    for (const auto& s : data) {
        if (s.label >= model.num_classes()) throw DomainError("label out of range");
    }
}

std::vector<std::string> default_names(std::size_t j) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < j; ++i) names.push_back("class" + std::to_string(i));
    return names;
}

}  // namespace

Scaler Scaler::fit(std::span<const LabeledSample> data) {
    require_nonempty(data);
    Scaler sc;
    const double n = static_cast<double>(data.size());
    for (std::size_t f = 0; f < kFeatureDim; ++f) {
        double sum = 0.0;
        for (const auto& s : data) sum += s.features.as_array()[f];
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& s : data) {
            const double d = s.features.as_array()[f] - mean;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / n);
        sc.mean[f] = mean;
        // A constant feature carries no information; leave it unscaled.
        sc.stddev[f] = sd > 0.0 ? sd : 1.0;
    }
    return sc;
}

std::array<double, kFeatureDim> Scaler::transform(const FeatureVector& x) const {
    const auto raw = x.as_array();
    std::array<double, kFeatureDim> z{};
    for (std::size_t f = 0; f < kFeatureDim; ++f) z[f] = (raw[f] - mean[f]) / stddev[f];
    return z;
}

MlrModel MlrModel::zeros(std::vector<std::string> class_names) {
    MlrModel m;
    m.weights.assign(class_names.size() * kFeatureDim, 0.0);
    m.biases.assign(class_names.size(), 0.0);
    m.class_names = std::move(class_names);
    return m;
}

void MlrModel::validate() const {
    const std::size_t j = biases.size();
    if (j < 2) throw DomainError("model needs at least two classes");
    if (weights.size() != j * kFeatureDim) throw DomainError("weight matrix shape mismatch");
    if (class_names.size() != j) throw DomainError("class name count mismatch");
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(weights.begin(), weights.end(), finite) ||
        !std::all_of(biases.begin(), biases.end(), finite)) {
        throw DomainError("model has non-finite parameters");
    }
    for (std::size_t f = 0; f < kFeatureDim; ++f) {
        if (!(scaler.stddev[f] > 0.0) || !std::isfinite(scaler.mean[f])) {
            throw DomainError("scaler standard deviations must be positive");
        }
    }
}

std::vector<double> logits(const MlrModel& model, const FeatureVector& x) {
    const auto z = model.scaler.transform(x);
    std::vector<double> out(model.num_classes());
    for (std::size_t j = 0; j < out.size(); ++j) {
        double v = model.biases[j];
        for (std::size_t f = 0; f < kFeatureDim; ++f) v += model.weight(j, f) * z[f];
        out[j] = v;
    }
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw DomainError("softmax of an empty vector");
    for (double v : logits) {
        if (!std::isfinite(v)) throw NumericError("non-finite logit");
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] = std::exp(logits[j] - top);
        sum += p[j];
    }
    for (double& v : p) v /= sum;
    return p;
}

std::vector<double> softmax_probs(const MlrModel& model, const FeatureVector& x) {
    return softmax(logits(model, x));
}

double cross_entropy_loss(const MlrModel& model, std::span<const LabeledSample> data) {
    require_nonempty(data);
    check_labels(model, data);
    double loss = 0.0;
    for (const auto& s : data) {
        const auto l = logits(model, s.features);
        for (double v : l) {
            if (!std::isfinite(v)) throw NumericError("non-finite logit");
        }
        // -log softmax_y = logsumexp - l_y, evaluated stably.
        const double top = *std::max_element(l.begin(), l.end());
        double sum = 0.0;
        for (double v : l) sum += std::exp(v - top);
        loss += top + std::log(sum) - l[s.label];
    }
    return loss;
}

double mean_cross_entropy_loss(const MlrModel& model, std::span<const LabeledSample> data) {
    return cross_entropy_loss(model, data) / static_cast<double>(data.size());
}

Gradient loss_gradient(const MlrModel& model, std::span<const LabeledSample> data) {
    require_nonempty(data);
    check_labels(model, data);
    const std::size_t j_count = model.num_classes();
    Gradient g{std::vector<double>(j_count * kFeatureDim, 0.0), std::vector<double>(j_count, 0.0)};
    for (const auto& s : data) {
        const auto z = model.scaler.transform(s.features);
        auto p = softmax_probs(model, s.features);
        p[s.label] -= 1.0;
        for (std::size_t j = 0; j < j_count; ++j) {
            for (std::size_t f = 0; f < kFeatureDim; ++f) g.weights[j * kFeatureDim + f] += p[j] * z[f];
            g.biases[j] += p[j];
        }
    }
    return g;
}

TrainingReport train(std::span<const LabeledSample> data, std::size_t num_classes,
                     const TrainingParams& params, std::vector<std::string> class_names) {
    require_nonempty(data);
    if (num_classes < 2) throw DomainError("need at least two classes");
    if (class_names.empty()) class_names = default_names(num_classes);
    if (class_names.size() != num_classes) throw DomainError("class name count mismatch");
    {
        std::vector<bool> seen(num_classes, false);
        std::size_t distinct = 0;
        for (const auto& s : data) {
            if (s.label >= num_classes) throw DomainError("label out of range");
            if (!seen[s.label]) {
                seen[s.label] = true;
                ++distinct;
            }
        }
        if (distinct < 2) throw DomainError("training data holds a single class");
    }
    if (!(params.learning_rate > 0.0) || params.weight_decay < 0.0) {
        throw DomainError("learning rate must be positive and weight decay nonnegative");
    }

    TrainingReport report;
    MlrModel& model = report.model;
    model = MlrModel::zeros(std::move(class_names));
    model.scaler = Scaler::fit(data);

    const double n = static_cast<double>(data.size());
    auto objective = [&]() {
        double penalty = 0.0;
        for (double w : model.weights) penalty += w * w;
        return cross_entropy_loss(model, data) / n + 0.5 * params.weight_decay * penalty;
    };

    double loss = objective();
    std::size_t rising = 0;
    std::size_t epoch = 0;
    for (; epoch < params.max_epochs; ++epoch) {
        report.loss_history.push_back(loss);
        const Gradient g = loss_gradient(model, data);
        for (std::size_t i = 0; i < model.weights.size(); ++i) {
            model.weights[i] -= params.learning_rate * (g.weights[i] / n + params.weight_decay * model.weights[i]);
        }
        for (std::size_t j = 0; j < model.biases.size(); ++j) {
            model.biases[j] -= params.learning_rate * g.biases[j] / n;
        }
        const double next = objective();
        if (!std::isfinite(next)) throw TrainingDivergedError("loss became non-finite");
        rising = next > loss ? rising + 1 : 0;
        if (rising >= params.divergence_patience) {
            throw TrainingDivergedError("loss increased for " + std::to_string(rising) + " consecutive epochs");
        }
        const double rel = loss > 0.0 ? std::abs(loss - next) / loss : 0.0;
        loss = next;
        if (rel < params.tolerance) {
            report.converged = true;
            ++epoch;
            break;
        }
    }
    report.loss_history.push_back(loss);
    model.final_loss = loss;
    model.epochs = epoch;
    return report;
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < values.size(); ++j) {
        if (values[j] > values[best]) best = j;
    }
    return best;
}

std::size_t predict(const MlrModel& model, const FeatureVector& x) {
    return argmax(softmax_probs(model, x));
}

double accuracy(const MlrModel& model, std::span<const LabeledSample> data) {
    require_nonempty(data);
    std::size_t hits = 0;
    for (const auto& s : data) hits += predict(model, s.features) == s.label ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

double DecisionGrid::burstiness_at(std::size_t col) const {
    return bounds.burstiness_min +
           (bounds.burstiness_max - bounds.burstiness_min) * static_cast<double>(col) / static_cast<double>(cols - 1);
}

double DecisionGrid::count_at(std::size_t row) const {
    return bounds.count_min +
           (bounds.count_max - bounds.count_min) * static_cast<double>(row) / static_cast<double>(rows - 1);
}

DecisionGrid decision_boundary_grid(const MlrModel& model, const GridBounds& bounds, std::size_t rows,
                                    std::size_t cols) {
    if (rows < 2 || cols < 2) throw DomainError("grid resolution must be at least 2x2");
    model.validate();
    DecisionGrid grid{bounds, rows, cols, {}};
    grid.labels.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            grid.labels[r * cols + c] = predict(model, FeatureVector{grid.burstiness_at(c), grid.count_at(r)});
        }
    }
    return grid;
}

void write_grid_csv(std::ostream& out, const DecisionGrid& grid) {
    out << "b_value,count_value,class_index\n";
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            out << text::format_double(grid.burstiness_at(c)) << ',' << text::format_double(grid.count_at(r)) << ','
                << grid.at(r, c) << '\n';
        }
    }
}

namespace {

std::string join_doubles(std::span<const double> values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ' ';
        s += text::format_double(values[i]);
    }
    return s;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : text::split(s, ' ')) {
        if (!tok.empty()) out.push_back(text::parse_double(tok));
    }
    return out;
}

}  // namespace

void save_model(std::ostream& out, const MlrModel& model) {
    model.validate();
    out << "format = trafficfl-mlr-1\n";
    out << "classes = " << model.num_classes() << '\n';
    out << "class_names = " << text::join(model.class_names, ",") << '\n';
    out << "scaler_mean = " << join_doubles(model.scaler.mean) << '\n';
    out << "scaler_std = " << join_doubles(model.scaler.stddev) << '\n';
    out << "weights = " << join_doubles(model.weights) << '\n';
    out << "biases = " << join_doubles(model.biases) << '\n';
    out << "final_loss = " << text::format_double(model.final_loss) << '\n';
    out << "epochs = " << model.epochs << '\n';
}

MlrModel load_model(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto t = text::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw DomainError("model file: malformed line '" + std::string(t) + "'");
        kv[std::string(text::trim(t.substr(0, eq)))] = std::string(text::trim(t.substr(eq + 1)));
    }
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw DomainError("model file: missing key '" + key + "'");
        return it->second;
    };
    if (get("format") != "trafficfl-mlr-1") throw DomainError("model file: unsupported format");

    try {
        MlrModel m;
        const auto j = static_cast<std::size_t>(text::parse_int(get("classes")));
        m.class_names = text::split(get("class_names"), ',');
        const auto mean = parse_doubles(get("scaler_mean"));
        const auto sd = parse_doubles(get("scaler_std"));
        if (mean.size() != kFeatureDim || sd.size() != kFeatureDim) throw DomainError("model file: bad scaler");
        std::copy(mean.begin(), mean.end(), m.scaler.mean.begin());
        std::copy(sd.begin(), sd.end(), m.scaler.stddev.begin());
        m.weights = parse_doubles(get("weights"));
        m.biases = parse_doubles(get("biases"));
        m.final_loss = text::parse_double(get("final_loss"));
        m.epochs = static_cast<std::size_t>(text::parse_int(get("epochs")));
        if (m.biases.size() != j) throw DomainError("model file: class count mismatch");
        m.validate();
        return m;
    } catch (const std::invalid_argument& e) {
        throw DomainError(std::string("model file: ") + e.what());
    }
}

}  // namespace trafficfl::mlr
