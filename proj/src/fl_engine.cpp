#include "trafficfl/fl_engine.hpp"

#include "trafficfl/error.hpp"
#include "trafficfl/text.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <istream>
#include <numeric>
#include <ostream>
#include <thread>

namespace trafficfl::fl {

namespace {

// Parameter offsets inside the flat vector.
struct Offsets {
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;

    explicit Offsets(const ModelLayout& l) {
        if (l.hidden == 0) {
            w2 = 0;
            b2 = l.classes * l.features;
        } else {
            w1 = 0;
            b1 = l.hidden * l.features;
            w2 = b1 + l.hidden;
            b2 = w2 + l.classes * l.hidden;
        }
    }
};

// Scratch buffers for one forward/backward pass.
struct Workspace {
    std::vector<double> hidden;
    std::vector<double> logits;
    std::vector<double> dlogits;
    std::vector<double> dhidden;

    explicit Workspace(const ModelLayout& l)
        : hidden(l.hidden), logits(l.classes), dlogits(l.classes), dhidden(l.hidden) {}
};

// Fills ws.logits; returns -log p(label) via a stable log-sum-exp.
double forward(const FlModel& m, const Offsets& off, std::span<const double> x, std::size_t label, Workspace& ws) {
    const ModelLayout& l = m.layout;
    const double* p = m.params.data();
    std::span<const double> input = x;
    std::size_t in_dim = l.features;
    if (l.hidden > 0) {
        for (std::size_t h = 0; h < l.hidden; ++h) {
            double v = p[off.b1 + h];
            const double* row = p + off.w1 + h * l.features;
            for (std::size_t f = 0; f < l.features; ++f) v += row[f] * x[f];
            ws.hidden[h] = std::tanh(v);
        }
        input = ws.hidden;
        in_dim = l.hidden;
    }
    for (std::size_t c = 0; c < l.classes; ++c) {
        double v = p[off.b2 + c];
        const double* row = p + off.w2 + c * in_dim;
        for (std::size_t f = 0; f < in_dim; ++f) v += row[f] * input[f];
        ws.logits[c] = v;
    }
    const double top = *std::max_element(ws.logits.begin(), ws.logits.end());
    double sum = 0.0;
    for (double v : ws.logits) sum += std::exp(v - top);
    return top + std::log(sum) - ws.logits[label];
}

// Accumulates scale * d(-log p(label))/d(params) into grad; needs a prior forward().
void backward(const FlModel& m, const Offsets& off, std::span<const double> x, std::size_t label, double scale,
              Workspace& ws, std::vector<double>& grad) {
    const ModelLayout& l = m.layout;
    const double top = *std::max_element(ws.logits.begin(), ws.logits.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < l.classes; ++c) {
        ws.dlogits[c] = std::exp(ws.logits[c] - top);
        sum += ws.dlogits[c];
    }
    for (std::size_t c = 0; c < l.classes; ++c) {
        ws.dlogits[c] = (ws.dlogits[c] / sum - (c == label ? 1.0 : 0.0)) * scale;
    }
    std::span<const double> input = x;
    std::size_t in_dim = l.features;
    if (l.hidden > 0) {
        input = ws.hidden;
        in_dim = l.hidden;
    }
    for (std::size_t c = 0; c < l.classes; ++c) {
        double* row = grad.data() + off.w2 + c * in_dim;
        for (std::size_t f = 0; f < in_dim; ++f) row[f] += ws.dlogits[c] * input[f];
        grad[off.b2 + c] += ws.dlogits[c];
    }
    if (l.hidden == 0) return;
    const double* p = m.params.data();
    for (std::size_t h = 0; h < l.hidden; ++h) {
        double v = 0.0;
        for (std::size_t c = 0; c < l.classes; ++c) v += p[off.w2 + c * l.hidden + h] * ws.dlogits[c];
        ws.dhidden[h] = v * (1.0 - ws.hidden[h] * ws.hidden[h]);
    }
    for (std::size_t h = 0; h < l.hidden; ++h) {
        double* row = grad.data() + off.w1 + h * l.features;
        for (std::size_t f = 0; f < l.features; ++f) row[f] += ws.dhidden[h] * x[f];
        grad[off.b1 + h] += ws.dhidden[h];
    }
}

void check_shapes(const FlModel& m, const Dataset& data) {
    if (data.dim != m.layout.features || data.num_classes != m.layout.classes) {
        throw DomainError("dataset shape does not match model layout");
    }
    if (m.params.size() != m.layout.param_count()) throw DomainError("parameter count does not match layout");
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the
// exception of the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    pool.clear();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

std::size_t ModelLayout::param_count() const {
    if (hidden == 0) return classes * features + classes;
    return hidden * features + hidden + classes * hidden + classes;
}

FlModel FlModel::zeros(const ModelLayout& layout) {
    if (layout.features == 0 || layout.classes < 2) throw DomainError("invalid model layout");
    return FlModel{layout, std::vector<double>(layout.param_count(), 0.0)};
}

FlModel FlModel::initial(const ModelLayout& layout, std::uint64_t seed) {
    FlModel m = zeros(layout);
    if (layout.hidden == 0) return m;
    Rng rng = make_rng(seed, {kStreamModelInit});
    const Offsets off(layout);
    const double a1 = std::sqrt(6.0 / static_cast<double>(layout.features + layout.hidden));
    const double a2 = std::sqrt(6.0 / static_cast<double>(layout.hidden + layout.classes));
    std::uniform_real_distribution<double> u1(-a1, a1);
    std::uniform_real_distribution<double> u2(-a2, a2);
    for (std::size_t i = 0; i < layout.hidden * layout.features; ++i) m.params[off.w1 + i] = u1(rng);
    for (std::size_t i = 0; i < layout.classes * layout.hidden; ++i) m.params[off.w2 + i] = u2(rng);
    return m;
}

void FlModel::validate() const {
    if (params.size() != layout.param_count()) throw DomainError("parameter count does not match layout");
    for (double v : params) {
        if (!std::isfinite(v)) throw DomainError("model has non-finite parameters");
    }
}

double mean_loss_gradient(const FlModel& model, const Dataset& data, std::span<const std::size_t> rows,
                          std::vector<double>& grad) {
    check_shapes(model, data);
    if (rows.empty()) throw DomainError("empty batch");
    const Offsets off(model.layout);
    Workspace ws(model.layout);
    grad.assign(model.params.size(), 0.0);
    const double scale = 1.0 / static_cast<double>(rows.size());
    double loss = 0.0;
    for (std::size_t i : rows) {
        const auto x = data.row(i);
        loss += forward(model, off, x, data.labels[i], ws);
        backward(model, off, x, data.labels[i], scale, ws, grad);
    }
    return loss * scale;
}

LossSum loss_sum(const FlModel& model, const Dataset& data) {
    check_shapes(model, data);
    const Offsets off(model.layout);
    Workspace ws(model.layout);
    LossSum s;
    for (std::size_t i = 0; i < data.size(); ++i) {
        s.loss += forward(model, off, data.row(i), data.labels[i], ws);
        const auto best = static_cast<std::size_t>(
            std::max_element(ws.logits.begin(), ws.logits.end()) - ws.logits.begin());
        s.correct += best == data.labels[i] ? 1 : 0;
    }
    s.count = data.size();
    return s;
}

EvalResult evaluate(const FlModel& model, const Dataset& data) {
    if (data.empty()) throw DomainError("cannot evaluate on an empty dataset");
    const LossSum s = loss_sum(model, data);
    const double n = static_cast<double>(s.count);
    return {s.loss / n, static_cast<double>(s.correct) / n};
}

FlModel local_update(const FlModel& global, const LocalDataset& shard, const LocalHyper& hp, Rng& rng) {
    check_shapes(global, shard.data);
    if (shard.data.empty()) throw DomainError("client " + std::to_string(shard.user_id) + " has an empty shard");
    FlModel local = global;
    const std::size_t n = shard.data.size();
    const std::size_t batch = hp.batch_size == 0 ? n : std::min(hp.batch_size, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grad;
    for (std::size_t e = 0; e < hp.epochs; ++e) {
        if (batch < n) std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t len = std::min(batch, n - start);
            const double loss = mean_loss_gradient(local, shard.data, std::span(order).subspan(start, len), grad);
            if (!std::isfinite(loss)) throw LocalDivergenceError(shard.user_id, "non-finite local loss");
            for (std::size_t i = 0; i < grad.size(); ++i) local.params[i] -= hp.learning_rate * grad[i];
        }
    }
    for (double v : local.params) {
        if (!std::isfinite(v)) throw LocalDivergenceError(shard.user_id, "non-finite local parameters");
    }
    FlModel delta{global.layout, std::vector<double>(global.params.size())};
    for (std::size_t i = 0; i < delta.params.size(); ++i) delta.params[i] = local.params[i] - global.params[i];
    return delta;
}

FlModel aggregate(const FlModel& global, std::span<const FlModel> updates, std::span<const double> weights) {
    if (updates.empty()) throw DomainError("no updates to aggregate");
    if (!weights.empty() && weights.size() != updates.size()) throw DomainError("one weight per update is required");
    for (const auto& z : updates) {
        if (!(z.layout == global.layout) || z.params.size() != global.params.size()) {
            throw DomainError("update layout does not match the global model");
        }
    }
    std::vector<double> w(updates.size(), 1.0 / static_cast<double>(updates.size()));
    if (!weights.empty()) {
        const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        if (!(total > 0.0)) throw DomainError("aggregation weights must sum to a positive value");
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = weights[k] / total;
    }
    FlModel next = global;
    for (std::size_t i = 0; i < next.params.size(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < updates.size(); ++k) acc += w[k] * updates[k].params[i];
        next.params[i] += acc;
    }
    return next;
}

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::kCluster: return "cluster";
        case Strategy::kAvailability: return "availability";
        case Strategy::kRandom: return "random";
    }
    return "cluster";
}

Strategy parse_strategy(const std::string& text) {
    const auto t = text::trim(text);
    if (t == "cluster") return Strategy::kCluster;
    if (t == "availability") return Strategy::kAvailability;
    if (t == "random") return Strategy::kRandom;
    throw std::invalid_argument("unknown strategy '" + std::string(t) + "'");
}

TrainingRun run_training(Strategy strategy, const FlConfig& config, const TrainingContext& context) {
    if (context.shards == nullptr || context.test == nullptr) throw DomainError("training context is incomplete");
    if (config.k_select == 0) throw DomainError("k_select must be at least 1");
    context.initial.validate();

    TrainingRun run;
    run.final_model = context.initial;
    FlModel& global = run.final_model;
    Rng select_rng = make_rng(config.seed, {kStreamSelection});
    std::map<std::uint64_t, std::size_t> predicted;
    for (const auto& a : context.assignments) predicted[a.user_id] = a.predicted_class;

    for (std::size_t n = 0; n < config.rounds; ++n) {
        const auto started = std::chrono::steady_clock::now();
        selection::Selection sel;
        switch (strategy) {
            case Strategy::kCluster:
                sel = selection::select_clients(context.assignments, config.policy, config.k_select, n, select_rng);
                for (std::uint64_t id : sel.user_ids) {
                    if (!sel.cluster || predicted.at(id) != *sel.cluster) {
                        throw DomainError("cluster selection mixed classes in round " + std::to_string(n + 1));
                    }
                }
                break;
            case Strategy::kAvailability:
                sel = selection::baseline_availability_select(context.users, config.k_select, select_rng);
                break;
            case Strategy::kRandom:
                sel = selection::random_select(context.users, config.k_select, select_rng);
                break;
        }

        RoundMetrics rm;
        rm.round = n + 1;
        rm.selected_ids = sel.user_ids;
        rm.cluster = sel.cluster;
        rm.shortfall = sel.shortfall;

        std::vector<const LocalDataset*> shards;
        for (std::uint64_t id : sel.user_ids) {
            const auto it = context.shards->find(id);
            if (it == context.shards->end()) throw DomainError("no shard for user " + std::to_string(id));
            shards.push_back(&it->second);
        }

        if (!shards.empty()) {
            std::vector<FlModel> updates(shards.size());
            parallel_for(shards.size(), config.threads, [&](std::size_t i) {
                Rng rng = make_rng(config.seed, {kStreamClient, n, shards[i]->user_id});
                updates[i] = local_update(global, *shards[i], config.local, rng);
            });
            std::vector<double> weights;
            if (config.weighted_aggregation) {
                for (const auto* s : shards) weights.push_back(static_cast<double>(s->data.size()));
            }
            global = aggregate(global, updates, weights);
        }

        // Training loss of the new global model over the data that took part.
        double loss = 0.0;
        std::size_t count = 0;
        std::vector<std::vector<std::size_t>> histograms;
        for (const auto* s : shards) {
            const LossSum ls = loss_sum(global, s->data);
            loss += ls.loss;
            count += ls.count;
            histograms.push_back(s->label_histogram);
        }
        const EvalResult held_out = evaluate(global, *context.test);
        rm.train_loss = count > 0 ? loss / static_cast<double>(count) : held_out.loss;
        rm.eval_loss = held_out.loss;
        rm.eval_acc = held_out.accuracy;
        rm.selection_divergence = selection_divergence(histograms);
        rm.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (!std::isfinite(rm.train_loss)) throw NumericError("global training loss is not finite");
        run.rounds.push_back(std::move(rm));

        if (run.rounds.back().eval_acc >= config.target_accuracy) {
            run.reached_target = true;
            break;
        }
    }
    return run;
}

void write_metrics_csv(std::ostream& out, Strategy strategy, std::span<const RoundMetrics> rounds) {
    out << "round,strategy,train_loss,eval_acc,selection_divergence,n_selected\n";
    const std::string name = to_string(strategy);
    for (const auto& r : rounds) {
        out << r.round << ',' << name << ',' << text::format_double(r.train_loss) << ','
            << text::format_double(r.eval_acc) << ',' << text::format_double(r.selection_divergence) << ','
            << r.selected_ids.size() << '\n';
    }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
    std::vector<MetricsRow> rows;
    std::string line;
    bool header = true;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        if (header) {
            header = false;
            if (line.rfind("round,", 0) == 0) continue;
        }
        const auto cells = text::split(line, ',');
        if (cells.size() != 6) throw DomainError("metrics line " + std::to_string(line_no) + ": expected 6 fields");
        try {
            rows.push_back(MetricsRow{static_cast<std::size_t>(text::parse_int(cells[0])), cells[1],
                                      text::parse_double(cells[2]), text::parse_double(cells[3]),
                                      text::parse_double(cells[4]), static_cast<std::size_t>(text::parse_int(cells[5]))});
        } catch (const std::invalid_argument& e) {
            throw DomainError("metrics line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

}  // namespace trafficfl::fl
