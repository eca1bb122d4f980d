#include "trafficfl/error.hpp"
#include "trafficfl/harness.hpp"
#include "trafficfl/text.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <ostream>

namespace trafficfl::harness {

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs `fn`, re-throwing anything it raises tagged with the stage name.
template <typename Fn>
auto staged(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

std::vector<std::string> class_names_for(const ScenarioConfig& config) {
    std::vector<std::string> names;
    if (config.mlr_labels == LabelSource::kArchetype) {
        for (const auto& a : config.archetypes) names.push_back(a.name);
    } else {
        for (std::size_t j = 0; j < selection::kNumTrafficClasses; ++j) names.push_back(selection::traffic_class_name(j));
    }
    return names;
}

mlr::GridBounds grid_bounds(std::span<const selection::PopulationMember> population) {
    double bmin = population.front().features.burstiness;
    double bmax = bmin;
    double cmin = population.front().features.exp_count;
    double cmax = cmin;
    for (const auto& m : population) {
        bmin = std::min(bmin, m.features.burstiness);
        bmax = std::max(bmax, m.features.burstiness);
        cmin = std::min(cmin, m.features.exp_count);
        cmax = std::max(cmax, m.features.exp_count);
    }
    const double bpad = 0.05 * std::max(bmax - bmin, 1e-12);
    const double cpad = 0.05 * std::max(cmax - cmin, 1e-12);
    return {std::max(0.0, bmin - bpad), bmax + bpad, std::max(0.0, cmin - cpad), cmax + cpad};
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    writer(out);
    out.flush();
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

RunManifest base_manifest(const ScenarioConfig& config) {
    RunManifest m;
    m.config_hash = config_hash(config);
    m.seed = config.seed;
    m.rounds = config.fl.rounds;
    m.target_accuracy = config.fl.target_accuracy;
    m.manifest_path = fs::path(config.output_dir) / "manifest.txt";
    return m;
}

void write_classification_outputs(const ScenarioConfig& config, const ClassificationResult& cls, RunManifest& m) {
    const fs::path dir = config.output_dir;
    write_file(dir / "grid.csv", [&](std::ostream& o) { mlr::write_grid_csv(o, cls.grid); });
    m.artifacts["grid"] = "grid.csv";
    write_file(dir / "population.csv", [&](std::ostream& o) {
        selection::write_population_csv(o, cls.population, config.archetypes, cls.assignments);
    });
    m.artifacts["population"] = "population.csv";
    write_file(dir / "mlr_model.txt", [&](std::ostream& o) { mlr::save_model(o, cls.mlr.model); });
    m.artifacts["mlr_model"] = "mlr_model.txt";
    write_file(dir / "config.ini", [&](std::ostream& o) { o << scenario_text(config); });
    m.artifacts["config"] = "config.ini";
}

// Fails the run: records the stage in a partial manifest, then rethrows.
[[noreturn]] void fail_run(RunManifest& m, const StageError& e) {
    m.complete = false;
    m.failed_stage = e.stage();
    try {
        write_manifest(m, m.manifest_path);
    } catch (const std::exception&) {
        // The original error matters more than a missing manifest.
    }
    throw e;
}

void prepare_output_dir(const ScenarioConfig& config) {
    staged("output", [&] {
        fs::create_directories(config.output_dir);
        return 0;
    });
}

}  // namespace

ClassificationResult classify_population(const ScenarioConfig& config) {
    validate(config);
    ClassificationResult r;

    selection::PopulationOptions opts;
    opts.link = config.link;
    opts.availability = config.availability;
    r.population = staged("population", [&] {
        return selection::generate_population(config.archetypes, config.k_users, config.window_s, config.seed, opts);
    });

    std::vector<traffic::TrafficStats> stats;
    stats.reserve(r.population.size());
    for (const auto& m : r.population) stats.push_back(m.stats);
    r.threshold_labels = staged("labels", [&] { return selection::label_by_thresholds(stats, config.thresholds); });

    if (config.archetypes.size() == selection::kNumTrafficClasses) {
        std::size_t agree = 0;
        for (std::size_t i = 0; i < r.population.size(); ++i) {
            agree += r.threshold_labels[i] == r.population[i].profile.true_archetype ? 1 : 0;
        }
        r.label_agreement = static_cast<double>(agree) / static_cast<double>(r.population.size());
    }

    std::size_t num_classes = 0;
    if (config.mlr_labels == LabelSource::kArchetype) {
        num_classes = config.archetypes.size();
        for (const auto& m : r.population) r.training_labels.push_back(m.profile.true_archetype);
    } else {
        num_classes = selection::kNumTrafficClasses;
        r.training_labels = r.threshold_labels;
    }

    std::vector<mlr::LabeledSample> samples;
    std::vector<mlr::FeatureVector> features;
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < r.population.size(); ++i) {
        samples.push_back({r.population[i].features, r.training_labels[i]});
        features.push_back(r.population[i].features);
        ids.push_back(r.population[i].profile.user_id);
    }

    mlr::TrainingParams params = config.mlr;
    params.seed = config.seed;
    r.mlr = staged("classify", [&] { return mlr::train(samples, num_classes, params, class_names_for(config)); });
    r.training_accuracy = mlr::accuracy(r.mlr.model, samples);
    r.assignments = staged("cluster", [&] { return selection::cluster_users(r.mlr.model, ids, features); });
    r.grid = staged("grid", [&] {
        return mlr::decision_boundary_grid(r.mlr.model, grid_bounds(r.population), config.grid_resolution,
                                           config.grid_resolution);
    });
    return r;
}

RunManifest run_classification(const ScenarioConfig& config) {
    validate(config);
    RunManifest m = base_manifest(config);
    prepare_output_dir(config);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const ClassificationResult cls = classify_population(config);
        staged("export", [&] {
            write_classification_outputs(config, cls, m);
            return 0;
        });
    } catch (const StageError& e) {
        fail_run(m, e);
    }
    m.wall_time_s["classify"] = seconds_since(t0);
    m.complete = true;
    staged("export", [&] {
        write_manifest(m, m.manifest_path);
        return 0;
    });
    return m;
}

ScenarioResult execute_scenario(const ScenarioConfig& config) {
    validate(config);
    ScenarioResult result;
    result.classification = classify_population(config);
    const auto& population = result.classification.population;

    std::vector<std::uint64_t> ids;
    std::vector<std::size_t> archetypes;
    std::vector<selection::UserProfile> users;
    for (const auto& m : population) {
        ids.push_back(m.profile.user_id);
        archetypes.push_back(m.profile.true_archetype);
        users.push_back(m.profile);
    }

    const std::size_t classes = config.data.mixture.num_classes;
    fl::LabelPriors priors;
    fl::Dataset train_set;
    fl::Dataset test_set;
    std::map<std::uint64_t, fl::LocalDataset> shards;
    staged("partition", [&] {
        priors = fl::draw_label_priors(archetypes, config.archetypes.size(), classes, config.coupling, config.seed);
        train_set = fl::make_gaussian_mixture(
            config.data.mixture, fl::aggregate_class_counts(priors, config.data.train_examples), config.seed);
        test_set = fl::make_gaussian_mixture(config.data.mixture,
                                             fl::aggregate_class_counts(priors, config.data.test_examples),
                                             derive_seed(config.seed, {kStreamTestSet}));
        shards = fl::partition_dataset(train_set, ids, priors, config.coupling.min_shard_size, config.seed);
        return 0;
    });

    const fl::ModelLayout layout{config.data.mixture.dim, config.fl.hidden_units, classes};
    fl::TrainingContext ctx;
    ctx.users = users;
    ctx.assignments = result.classification.assignments;
    ctx.shards = &shards;
    ctx.test = &test_set;
    ctx.initial = fl::FlModel::initial(layout, config.seed);

    fl::FlConfig fc;
    fc.rounds = config.fl.rounds;
    fc.k_select = config.fl.k_select;
    fc.local = config.fl.local;
    fc.target_accuracy = config.fl.target_accuracy;
    fc.threads = config.threads;
    fc.weighted_aggregation = config.fl.weighted_aggregation;
    fc.policy = config.fl.policy;
    fc.seed = config.seed;

    for (fl::Strategy s : config.strategies) {
        fl::TrainingRun run = staged("train:" + fl::to_string(s), [&] { return fl::run_training(s, fc, ctx); });
        result.outcomes.push_back({s, std::move(run)});
    }
    return result;
}

namespace {

void write_summary(std::ostream& out, const ScenarioConfig& config, const std::string& hash,
                   const StrategyOutcome& o) {
    const auto& rounds = o.run.rounds;
    long long to_target = -1;
    double div_sum = 0.0;
    std::size_t shortfalls = 0;
    for (const auto& r : rounds) {
        if (to_target < 0 && r.eval_acc >= config.fl.target_accuracy) to_target = static_cast<long long>(r.round);
        div_sum += r.selection_divergence;
        shortfalls += r.shortfall ? 1 : 0;
    }
    out << "strategy = " << fl::to_string(o.strategy) << '\n';
    out << "seed = " << config.seed << '\n';
    out << "config_hash = " << hash << '\n';
    out << "rounds_run = " << rounds.size() << '\n';
    out << "final_train_loss = " << text::format_double(rounds.empty() ? 0.0 : rounds.back().train_loss) << '\n';
    out << "final_eval_loss = " << text::format_double(rounds.empty() ? 0.0 : rounds.back().eval_loss) << '\n';
    out << "final_eval_acc = " << text::format_double(rounds.empty() ? 0.0 : rounds.back().eval_acc) << '\n';
    out << "rounds_to_target = " << to_target << '\n';
    out << "mean_selection_divergence = "
        << text::format_double(rounds.empty() ? 0.0 : div_sum / static_cast<double>(rounds.size())) << '\n';
    out << "shortfall_rounds = " << shortfalls << '\n';
}

}  // namespace

RunManifest run_scenario(const ScenarioConfig& config) {
    validate(config);
    RunManifest m = base_manifest(config);
    prepare_output_dir(config);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const ScenarioResult result = execute_scenario(config);
        staged("export", [&] {
            const fs::path dir = config.output_dir;
            write_classification_outputs(config, result.classification, m);
            for (const auto& o : result.outcomes) {
                const std::string name = fl::to_string(o.strategy);
                const std::string metrics = "metrics_" + name + ".csv";
                const std::string summary = "summary_" + name + ".txt";
                write_file(dir / metrics, [&](std::ostream& out) { fl::write_metrics_csv(out, o.strategy, o.run.rounds); });
                write_file(dir / summary, [&](std::ostream& out) { write_summary(out, config, m.config_hash, o); });
                m.metrics[name] = metrics;
                m.summaries[name] = summary;
                double t = 0.0;
                for (const auto& r : o.run.rounds) t += r.wall_time_s;
                m.wall_time_s[name] = t;
            }
            return 0;
        });
    } catch (const StageError& e) {
        fail_run(m, e);
    }
    m.wall_time_s["total"] = seconds_since(t0);
    m.complete = true;
    staged("export", [&] {
        write_manifest(m, m.manifest_path);
        return 0;
    });
    return m;
}

void write_manifest(const RunManifest& m, const fs::path& path) {
    write_file(path, [&](std::ostream& out) {
        out << "config_hash = " << m.config_hash << '\n';
        out << "version = " << m.version << '\n';
        out << "seed = " << m.seed << '\n';
        out << "rounds = " << m.rounds << '\n';
        out << "target_accuracy = " << text::format_double(m.target_accuracy) << '\n';
        out << "complete = " << (m.complete ? "true" : "false") << '\n';
        out << "failed_stage = " << m.failed_stage << '\n';
        for (const auto& [k, v] : m.metrics) out << "metrics." << k << " = " << v.generic_string() << '\n';
        for (const auto& [k, v] : m.summaries) out << "summary." << k << " = " << v.generic_string() << '\n';
        for (const auto& [k, v] : m.artifacts) out << "artifact." << k << " = " << v.generic_string() << '\n';
        for (const auto& [k, v] : m.wall_time_s) out << "wall_time_s." << k << " = " << text::format_double(v) << '\n';
    });
}

RunManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ComparisonError("cannot read manifest '" + path.string() + "'");
    RunManifest m;
    m.manifest_path = path;
    const fs::path base = path.parent_path();
    const auto resolve = [&](const std::string& v) {
        fs::path p(v);
        return p.is_absolute() ? p : base / p;
    };
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string trimmed(text::trim(line));
        if (trimmed.empty() || trimmed.front() == '#') continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw ComparisonError("manifest line " + std::to_string(lineno) + " has no '='");
        }
        const std::string key(text::trim(trimmed.substr(0, eq)));
        const std::string value(text::trim(trimmed.substr(eq + 1)));
        try {
            if (key == "config_hash") {
                m.config_hash = value;
            } else if (key == "version") {
                m.version = value;
            } else if (key == "seed") {
                m.seed = static_cast<std::uint64_t>(text::parse_int(value));
            } else if (key == "rounds") {
                m.rounds = static_cast<std::size_t>(text::parse_int(value));
            } else if (key == "target_accuracy") {
                m.target_accuracy = text::parse_double(value);
            } else if (key == "complete") {
                m.complete = value == "true";
            } else if (key == "failed_stage") {
                m.failed_stage = value;
            } else if (key.rfind("metrics.", 0) == 0) {
                m.metrics[key.substr(8)] = resolve(value);
            } else if (key.rfind("summary.", 0) == 0) {
                m.summaries[key.substr(8)] = resolve(value);
            } else if (key.rfind("artifact.", 0) == 0) {
                m.artifacts[key.substr(9)] = resolve(value);
            } else if (key.rfind("wall_time_s.", 0) == 0) {
                m.wall_time_s[key.substr(12)] = text::parse_double(value);
            } else {
                throw ComparisonError("unknown manifest key '" + key + "'");
            }
        } catch (const std::invalid_argument& e) {
            throw ComparisonError("manifest key '" + key + "': " + e.what());
        }
    }
    return m;
}

std::vector<MomentCheck> traffic_check(const ScenarioConfig& config, std::size_t draws) {
    validate(config);
    if (draws < 2) throw DomainError("traffic check needs at least two draws");
    selection::PopulationOptions opts;
    opts.link = config.link;
    opts.availability = config.availability;
    // One representative user per archetype is enough for a moment check.
    const auto population = staged("population", [&] {
        return selection::generate_population(config.archetypes, config.k_users, config.window_s, config.seed, opts);
    });
    std::vector<MomentCheck> checks;
    for (std::size_t a = 0; a < config.archetypes.size(); ++a) {
        const auto it = std::find_if(population.begin(), population.end(),
                                     [&](const auto& m) { return m.profile.true_archetype == a; });
        if (it == population.end()) continue;
        MomentCheck c;
        c.archetype = config.archetypes[a].name;
        c.analytic_mean = it->stats.exp_lambda;
        c.analytic_var = it->stats.var_lambda;
        Rng rng = make_rng(config.seed, {kStreamTrace, 0xC0FFEEu, a});
        c.estimate = staged("traffic-check", [&] {
            return traffic::monte_carlo_arrival_moments(it->stats.rate_bps, it->profile.packet_dist, it->stats.ber,
                                                        draws, rng);
        });
        c.mean_z = (c.estimate.mean - c.analytic_mean) / c.estimate.mean_stderr;
        c.var_z = (c.estimate.variance - c.analytic_var) / c.estimate.variance_stderr;
        c.spb = std::exp(it->profile.packet_dist.mu) * it->stats.ber;
        checks.push_back(c);
    }
    return checks;
}

void write_traffic_check(std::ostream& out, const std::vector<MomentCheck>& checks) {
    out << "archetype,analytic_mean,mc_mean,mean_stderr,mean_z,analytic_var,mc_var,var_stderr,var_z,s_pb\n";
    for (const auto& c : checks) {
        out << c.archetype << ',' << text::format_double(c.analytic_mean) << ','
            << text::format_double(c.estimate.mean) << ',' << text::format_double(c.estimate.mean_stderr) << ','
            << text::format_double(c.mean_z) << ',' << text::format_double(c.analytic_var) << ','
            << text::format_double(c.estimate.variance) << ',' << text::format_double(c.estimate.variance_stderr)
            << ',' << text::format_double(c.var_z) << ',' << text::format_double(c.spb) << '\n';
    }
}

}  // namespace trafficfl::harness
