#include "trafficfl/error.hpp"
#include "trafficfl/harness.hpp"
#include "trafficfl/text.hpp"

#include <fstream>
#include <limits>
#include <ostream>

namespace trafficfl::harness {

namespace {

std::vector<fl::MetricsRow> read_metrics_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ComparisonError("cannot read metrics file '" + path.string() + "'");
    try {
        return fl::read_metrics_csv(in);
    } catch (const std::exception& e) {
        throw ComparisonError("'" + path.string() + "': " + e.what());
    }
}

double relative_reduction(double baseline, double cluster) {
    if (baseline == 0.0) return cluster == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
    return (baseline - cluster) / baseline;
}

}  // namespace

ComparisonSummary compare_strategies(const RunManifest& manifest) {
    if (manifest.metrics.size() < 2) throw ComparisonError("need at least two strategy metric files");
    const auto cluster_it = manifest.metrics.find("cluster");
    if (cluster_it == manifest.metrics.end()) throw ComparisonError("manifest has no cluster metrics");

    std::map<std::string, std::vector<fl::MetricsRow>> series;
    for (const auto& [name, path] : manifest.metrics) series[name] = read_metrics_file(path);

    const auto& cluster = series.at("cluster");
    ComparisonSummary summary;
    for (const auto& [name, rows] : series) {
        if (rows.size() != cluster.size()) {
            throw ComparisonError("round count mismatch: cluster has " + std::to_string(cluster.size()) + ", " +
                                  name + " has " + std::to_string(rows.size()));
        }
        if (rows.empty()) throw ComparisonError(name + " metrics are empty");
        long long to_target = -1;
        for (const auto& r : rows) {
            if (r.eval_acc >= manifest.target_accuracy) {
                to_target = static_cast<long long>(r.round);
                break;
            }
        }
        summary.rounds_to_target[name] = to_target;
    }

    for (const auto& [name, rows] : series) {
        if (name == "cluster") continue;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].round != cluster[i].round) {
                throw ComparisonError("round index mismatch between cluster and " + name);
            }
            ComparisonRow row;
            row.round = rows[i].round;
            row.baseline = name;
            row.cluster_loss = cluster[i].train_loss;
            row.baseline_loss = rows[i].train_loss;
            row.relative_reduction = relative_reduction(row.baseline_loss, row.cluster_loss);
            summary.rows.push_back(row);
        }
        summary.final_reduction[name] = summary.rows.back().relative_reduction;
    }
    return summary;
}

void write_comparison(std::ostream& out, const ComparisonSummary& summary) {
    for (const auto& [name, r] : summary.final_reduction) {
        out << "final_reduction." << name << " = " << text::format_double(r) << '\n';
    }
    for (const auto& [name, n] : summary.rounds_to_target) out << "rounds_to_target." << name << " = " << n << '\n';
    out << '\n' << "round,baseline,cluster_loss,baseline_loss,relative_reduction\n";
    for (const auto& r : summary.rows) {
        out << r.round << ',' << r.baseline << ',' << text::format_double(r.cluster_loss) << ','
            << text::format_double(r.baseline_loss) << ',' << text::format_double(r.relative_reduction) << '\n';
    }
}

}  // namespace trafficfl::harness
