#include "trafficfl/error.hpp"
#include "trafficfl/harness.hpp"
#include "trafficfl/text.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace trafficfl::harness {

namespace {

using Setter = std::function<void(ScenarioConfig&, const std::string&)>;
using Getter = std::function<std::string(const ScenarioConfig&)>;

struct Field {
    std::string section;
    std::string key;
    Setter set;
    Getter get;
};

double to_double(const std::string& v) { return text::parse_double(v); }

std::size_t to_size(const std::string& v) {
    const long long x = text::parse_int(v);
    if (x < 0) throw std::invalid_argument("expected a nonnegative integer, got '" + v + "'");
    return static_cast<std::size_t>(x);
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::string from_size(std::size_t v) { return std::to_string(v); }
std::string from_bool(bool v) { return v ? "true" : "false"; }

// Binds a double/size_t/bool member reached through `ref`.
template <typename Ref>
Field real_field(std::string section, std::string key, Ref ref) {
    return {std::move(section), std::move(key),
            [ref](ScenarioConfig& c, const std::string& v) { ref(c) = to_double(v); },
            [ref](const ScenarioConfig& c) { return text::format_double(ref(const_cast<ScenarioConfig&>(c))); }};
}

template <typename Ref>
Field size_field(std::string section, std::string key, Ref ref) {
    return {std::move(section), std::move(key),
            [ref](ScenarioConfig& c, const std::string& v) { ref(c) = to_size(v); },
            [ref](const ScenarioConfig& c) { return from_size(ref(const_cast<ScenarioConfig&>(c))); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        // [scenario]
        f.push_back({"scenario", "seed",
                     [](ScenarioConfig& c, const std::string& v) {
                         const long long s = text::parse_int(v);
                         if (s < 0) throw std::invalid_argument("seed must be nonnegative");
                         c.seed = static_cast<std::uint64_t>(s);
                     },
                     [](const ScenarioConfig& c) { return std::to_string(c.seed); }});
        f.push_back(size_field("scenario", "k_users", [](ScenarioConfig& c) -> auto& { return c.k_users; }));
        f.push_back(real_field("scenario", "window_s", [](ScenarioConfig& c) -> auto& { return c.window_s; }));
        f.push_back({"scenario", "strategies",
                     [](ScenarioConfig& c, const std::string& v) {
                         c.strategies.clear();
                         for (const auto& s : text::split(v, ',')) c.strategies.push_back(fl::parse_strategy(s));
                     },
                     [](const ScenarioConfig& c) {
                         std::vector<std::string> names;
                         for (auto s : c.strategies) names.push_back(fl::to_string(s));
                         return text::join(names, ", ");
                     }});
        f.push_back({"scenario", "output_dir", [](ScenarioConfig& c, const std::string& v) { c.output_dir = v; },
                     [](const ScenarioConfig& c) { return c.output_dir; }});
        f.push_back(size_field("scenario", "threads", [](ScenarioConfig& c) -> auto& { return c.threads; }));
        f.push_back({"scenario", "mlr_labels",
                     [](ScenarioConfig& c, const std::string& v) {
                         if (v == "archetype") {
                             c.mlr_labels = LabelSource::kArchetype;
                         } else if (v == "threshold") {
                             c.mlr_labels = LabelSource::kThreshold;
                         } else {
                             throw std::invalid_argument("expected archetype or threshold");
                         }
                     },
                     [](const ScenarioConfig& c) {
                         return std::string(c.mlr_labels == LabelSource::kArchetype ? "archetype" : "threshold");
                     }});
        // [link]
        f.push_back(real_field("link", "bandwidth_hz", [](ScenarioConfig& c) -> auto& { return c.link.bandwidth_hz; }));
        f.push_back(real_field("link", "tx_power_w", [](ScenarioConfig& c) -> auto& { return c.link.tx_power_w; }));
        f.push_back(real_field("link", "noise_psd", [](ScenarioConfig& c) -> auto& { return c.link.noise_psd; }));
        f.push_back({"link", "constellation_size",
                     [](ScenarioConfig& c, const std::string& v) {
                         c.link.constellation_size = static_cast<int>(text::parse_int(v));
                     },
                     [](const ScenarioConfig& c) { return std::to_string(c.link.constellation_size); }});
        f.push_back({"link", "noise_model",
                     [](ScenarioConfig& c, const std::string& v) {
                         if (v == "psd") {
                             c.link.noise_model = traffic::NoiseModel::kSpectralDensity;
                         } else if (v == "literal") {
                             c.link.noise_model = traffic::NoiseModel::kLiteral;
                         } else {
                             throw std::invalid_argument("expected psd or literal");
                         }
                     },
                     [](const ScenarioConfig& c) {
                         return std::string(c.link.noise_model == traffic::NoiseModel::kSpectralDensity ? "psd"
                                                                                                          : "literal");
                     }});
        f.push_back({"link", "ber_mode",
                     [](ScenarioConfig& c, const std::string& v) {
                         if (v == "standard") {
                             c.link.ber_mode = traffic::BerMode::kStandard;
                         } else if (v == "as-written") {
                             c.link.ber_mode = traffic::BerMode::kAsWritten;
                         } else {
                             throw std::invalid_argument("expected standard or as-written");
                         }
                     },
                     [](const ScenarioConfig& c) {
                         return std::string(c.link.ber_mode == traffic::BerMode::kStandard ? "standard"
                                                                                            : "as-written");
                     }});
        // [availability]
        f.push_back(real_field("availability", "min_prob", [](ScenarioConfig& c) -> auto& { return c.availability.lo; }));
        f.push_back(real_field("availability", "max_prob", [](ScenarioConfig& c) -> auto& { return c.availability.hi; }));
        // [mlr]
        f.push_back(real_field("mlr", "learning_rate", [](ScenarioConfig& c) -> auto& { return c.mlr.learning_rate; }));
        f.push_back(size_field("mlr", "max_epochs", [](ScenarioConfig& c) -> auto& { return c.mlr.max_epochs; }));
        f.push_back(real_field("mlr", "tolerance", [](ScenarioConfig& c) -> auto& { return c.mlr.tolerance; }));
        f.push_back(real_field("mlr", "weight_decay", [](ScenarioConfig& c) -> auto& { return c.mlr.weight_decay; }));
        f.push_back(size_field("mlr", "grid_resolution", [](ScenarioConfig& c) -> auto& { return c.grid_resolution; }));
        // [thresholds]
        f.push_back(real_field("thresholds", "volume_low_q",
                               [](ScenarioConfig& c) -> auto& { return c.thresholds.volume_low_q; }));
        f.push_back(real_field("thresholds", "volume_high_q",
                               [](ScenarioConfig& c) -> auto& { return c.thresholds.volume_high_q; }));
        f.push_back(real_field("thresholds", "bursty_q", [](ScenarioConfig& c) -> auto& { return c.thresholds.bursty_q; }));
        // [fl]
        f.push_back(size_field("fl", "rounds", [](ScenarioConfig& c) -> auto& { return c.fl.rounds; }));
        f.push_back(size_field("fl", "k_select", [](ScenarioConfig& c) -> auto& { return c.fl.k_select; }));
        f.push_back(size_field("fl", "local_epochs", [](ScenarioConfig& c) -> auto& { return c.fl.local.epochs; }));
        f.push_back(size_field("fl", "batch_size", [](ScenarioConfig& c) -> auto& { return c.fl.local.batch_size; }));
        f.push_back(real_field("fl", "learning_rate", [](ScenarioConfig& c) -> auto& { return c.fl.local.learning_rate; }));
        f.push_back(real_field("fl", "target_accuracy", [](ScenarioConfig& c) -> auto& { return c.fl.target_accuracy; }));
        f.push_back(size_field("fl", "hidden_units", [](ScenarioConfig& c) -> auto& { return c.fl.hidden_units; }));
        f.push_back({"fl", "cluster_policy",
                     [](ScenarioConfig& c, const std::string& v) { c.fl.policy = selection::ClusterPolicy::parse(v); },
                     [](const ScenarioConfig& c) { return c.fl.policy.to_string(); }});
        f.push_back({"fl", "weighted_aggregation",
                     [](ScenarioConfig& c, const std::string& v) { c.fl.weighted_aggregation = to_bool(v); },
                     [](const ScenarioConfig& c) { return from_bool(c.fl.weighted_aggregation); }});
        // [data]
        f.push_back(size_field("data", "features", [](ScenarioConfig& c) -> auto& { return c.data.mixture.dim; }));
        f.push_back(size_field("data", "classes", [](ScenarioConfig& c) -> auto& { return c.data.mixture.num_classes; }));
        f.push_back(real_field("data", "class_separation",
                               [](ScenarioConfig& c) -> auto& { return c.data.mixture.separation; }));
        f.push_back(size_field("data", "train_examples", [](ScenarioConfig& c) -> auto& { return c.data.train_examples; }));
        f.push_back(size_field("data", "test_examples", [](ScenarioConfig& c) -> auto& { return c.data.test_examples; }));
        // [coupling]
        f.push_back(real_field("coupling", "alpha_class", [](ScenarioConfig& c) -> auto& { return c.coupling.alpha_class; }));
        f.push_back(real_field("coupling", "alpha_user", [](ScenarioConfig& c) -> auto& { return c.coupling.alpha_user; }));
        f.push_back(size_field("coupling", "min_shard_size",
                               [](ScenarioConfig& c) -> auto& { return c.coupling.min_shard_size; }));
        return f;
    }();
    return table;
}

struct ArchetypeKey {
    const char* key;
    double selection::ArchetypeSpec::*scalar = nullptr;
    selection::Range selection::ArchetypeSpec::*range = nullptr;
    bool upper = false;
};

const ArchetypeKey kArchetypeKeys[] = {
    {"weight", &selection::ArchetypeSpec::population_weight},
    {"mu_min", nullptr, &selection::ArchetypeSpec::mu, false},
    {"mu_max", nullptr, &selection::ArchetypeSpec::mu, true},
    {"sigma_sq_min", nullptr, &selection::ArchetypeSpec::sigma_sq, false},
    {"sigma_sq_max", nullptr, &selection::ArchetypeSpec::sigma_sq, true},
    {"eb_n0_min", nullptr, &selection::ArchetypeSpec::eb_n0, false},
    {"eb_n0_max", nullptr, &selection::ArchetypeSpec::eb_n0, true},
    {"los_power_min", nullptr, &selection::ArchetypeSpec::los_power, false},
    {"los_power_max", nullptr, &selection::ArchetypeSpec::los_power, true},
    {"nlos_scale_min", nullptr, &selection::ArchetypeSpec::nlos_scale, false},
    {"nlos_scale_max", nullptr, &selection::ArchetypeSpec::nlos_scale, true},
};

double& archetype_value(selection::ArchetypeSpec& a, const ArchetypeKey& k) {
    if (k.scalar) return a.*(k.scalar);
    return k.upper ? (a.*(k.range)).hi : (a.*(k.range)).lo;
}

constexpr std::string_view kArchetypePrefix = "archetype.";

void fail_if(bool bad, const std::string& key, const std::string& what) {
    if (bad) throw ConfigError(key, what);
}

}  // namespace

void validate(const ScenarioConfig& c) {
    fail_if(c.k_users == 0, "scenario.k_users", "must be at least 1");
    fail_if(!(c.window_s > 0.0) || !std::isfinite(c.window_s), "scenario.window_s", "must be positive");
    fail_if(c.strategies.empty(), "scenario.strategies", "must list at least one strategy");
    {
        std::set<fl::Strategy> seen(c.strategies.begin(), c.strategies.end());
        fail_if(seen.size() != c.strategies.size(), "scenario.strategies", "lists a strategy twice");
    }
    fail_if(c.output_dir.empty(), "scenario.output_dir", "must not be empty");
    fail_if(c.threads == 0, "scenario.threads", "must be at least 1");

    fail_if(!(c.link.bandwidth_hz > 0.0), "link.bandwidth_hz", "must be positive");
    fail_if(!(c.link.tx_power_w > 0.0), "link.tx_power_w", "must be positive");
    fail_if(!(c.link.noise_psd > 0.0), "link.noise_psd", "must be positive");
    fail_if(c.link.constellation_size != 4 && c.link.constellation_size != 16 && c.link.constellation_size != 64,
            "link.constellation_size", "must be 4, 16 or 64");
    fail_if(c.link.ber_mode == traffic::BerMode::kAsWritten && c.link.constellation_size != 4, "link.ber_mode",
            "as-written BER is only defined for 4-QAM");

    fail_if(!(c.availability.lo >= 0.0), "availability.min_prob", "must lie in [0, 1]");
    fail_if(!(c.availability.hi <= 1.0), "availability.max_prob", "must lie in [0, 1]");
    fail_if(!(c.availability.lo <= c.availability.hi), "availability.min_prob", "must not exceed max_prob");

    fail_if(!(c.mlr.learning_rate > 0.0), "mlr.learning_rate", "must be positive");
    fail_if(c.mlr.max_epochs == 0, "mlr.max_epochs", "must be at least 1");
    fail_if(!(c.mlr.tolerance > 0.0), "mlr.tolerance", "must be positive");
    fail_if(!(c.mlr.weight_decay >= 0.0), "mlr.weight_decay", "must be nonnegative");
    fail_if(c.grid_resolution < 2, "mlr.grid_resolution", "must be at least 2");

    fail_if(!(c.thresholds.volume_low_q > 0.0 && c.thresholds.volume_low_q < c.thresholds.volume_high_q),
            "thresholds.volume_low_q", "must satisfy 0 < volume_low_q < volume_high_q");
    fail_if(!(c.thresholds.volume_high_q < 1.0), "thresholds.volume_high_q", "must be below 1");
    fail_if(!(c.thresholds.bursty_q > 0.0 && c.thresholds.bursty_q < 1.0), "thresholds.bursty_q",
            "must lie in (0, 1)");

    fail_if(c.fl.rounds == 0, "fl.rounds", "must be at least 1");
    fail_if(c.fl.k_select == 0, "fl.k_select", "must be at least 1");
    fail_if(!(c.fl.local.learning_rate > 0.0), "fl.learning_rate", "must be positive");
    fail_if(!(c.fl.target_accuracy > 0.0 && c.fl.target_accuracy <= 1.0), "fl.target_accuracy", "must lie in (0, 1]");
    {
        const std::size_t classes =
            c.mlr_labels == LabelSource::kArchetype ? c.archetypes.size() : selection::kNumTrafficClasses;
        fail_if(c.fl.policy.kind == selection::ClusterPolicy::Kind::kFixed && c.fl.policy.fixed_class >= classes,
                "fl.cluster_policy", "fixed cluster index exceeds the class count");
    }

    fail_if(c.data.mixture.num_classes < 2, "data.classes", "must be at least 2");
    fail_if(c.data.mixture.dim < c.data.mixture.num_classes, "data.features", "must be at least data.classes");
    fail_if(!(c.data.mixture.separation >= 0.0) || !std::isfinite(c.data.mixture.separation),
            "data.class_separation", "must be nonnegative");
    fail_if(c.data.test_examples == 0, "data.test_examples", "must be at least 1");
    fail_if(c.data.train_examples < c.k_users * std::max<std::size_t>(c.coupling.min_shard_size, 1),
            "data.train_examples", "must cover k_users * min_shard_size");

    fail_if(!(c.coupling.alpha_class > 0.0), "coupling.alpha_class", "must be positive");
    fail_if(!(c.coupling.alpha_user > 0.0), "coupling.alpha_user", "must be positive");
    fail_if(c.coupling.min_shard_size == 0, "coupling.min_shard_size", "must be at least 1");

    fail_if(c.archetypes.empty(), "archetype", "table must not be empty");
    fail_if(c.mlr_labels == LabelSource::kArchetype && c.archetypes.size() < 2, "scenario.mlr_labels",
            "archetype labels need at least two archetypes; use threshold");
    {
        std::set<std::string> names;
        for (const auto& a : c.archetypes) {
            fail_if(!names.insert(a.name).second, "archetype." + a.name, "duplicate archetype name");
            try {
                const selection::ArchetypeSpec one[] = {[&] {
                    auto copy = a;
                    copy.population_weight = 1.0;
                    return copy;
                }()};
                selection::validate_archetypes(one);
            } catch (const DomainError& e) {
                throw ConfigError("archetype." + a.name, e.what());
            }
        }
        try {
            selection::validate_archetypes(c.archetypes);
        } catch (const DomainError& e) {
            throw ConfigError("archetype", e.what());
        }
    }
}

ScenarioConfig parse_config(std::istream& in) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("", std::string("parse error: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
    }

    ScenarioConfig config;
    std::vector<selection::ArchetypeSpec> archetypes;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            throw ConfigError(section, "key outside of any section (or empty section value)");
        }
        if (section.rfind(kArchetypePrefix, 0) == 0) {
            selection::ArchetypeSpec a;
            a.name = section.substr(kArchetypePrefix.size());
            std::set<std::string> given;
            for (const auto& [key, value] : body) {
                const std::string full = section + "." + key;
                const auto* k = std::find_if(std::begin(kArchetypeKeys), std::end(kArchetypeKeys),
                                             [&](const ArchetypeKey& ak) { return key == ak.key; });
                if (k == std::end(kArchetypeKeys)) throw ConfigError(full, "unknown key");
                try {
                    archetype_value(a, *k) = to_double(value.data());
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(full, e.what());
                }
                given.insert(key);
            }
            for (const auto& k : kArchetypeKeys) {
                if (!given.count(k.key)) throw ConfigError(section + "." + k.key, "missing archetype key");
            }
            archetypes.push_back(std::move(a));
            continue;
        }
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            const auto it = std::find_if(fields().begin(), fields().end(),
                                         [&](const Field& f) { return f.section == section && f.key == key; });
            if (it == fields().end()) throw ConfigError(full, "unknown key");
            if (!value.empty()) throw ConfigError(full, "nested value");
            try {
                it->set(config, std::string(text::trim(value.data())));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(full, e.what());
            }
        }
    }
    if (!archetypes.empty()) config.archetypes = std::move(archetypes);
    validate(config);
    return config;
}

ScenarioConfig parse_config_string(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot read config file '" + path.string() + "'");
    return parse_config(in);
}

std::string serialize_config(const ScenarioConfig& config) {
    std::ostringstream out;
    std::string current;
    for (const auto& f : fields()) {
        if (f.section != current) {
            if (!current.empty()) out << '\n';
            out << '[' << f.section << "]\n";
            current = f.section;
        }
        out << f.key << " = " << f.get(config) << '\n';
    }
    for (const auto& a : config.archetypes) {
        out << "\n[" << kArchetypePrefix << a.name << "]\n";
        auto copy = a;
        for (const auto& k : kArchetypeKeys) out << k.key << " = " << text::format_double(archetype_value(copy, k)) << '\n';
    }
    return out.str();
}

std::string scenario_text(const ScenarioConfig& config) {
    ScenarioConfig copy = config;
    const ScenarioConfig defaults;
    copy.threads = defaults.threads;
    copy.output_dir = defaults.output_dir;
    return serialize_config(copy);
}

std::string config_hash(const ScenarioConfig& config) { return text::fnv1a_hex(scenario_text(config)); }

}  // namespace trafficfl::harness
