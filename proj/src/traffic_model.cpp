#include "trafficfl/traffic_model.hpp"

#include "trafficfl/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

namespace trafficfl::traffic {

namespace {

bool is_square_qam(int m) { return m == 4 || m == 16 || m == 64; }

void require(bool ok, const char* what) {
    if (!ok) throw DomainError(what);
}

}  // namespace

void LinkBudget::validate() const {
    require(bandwidth_hz > 0.0 && std::isfinite(bandwidth_hz), "bandwidth_hz must be positive");
    require(tx_power_w > 0.0 && std::isfinite(tx_power_w), "tx_power_w must be positive");
    require(noise_psd > 0.0 && std::isfinite(noise_psd), "noise_psd must be positive");
    require(eb_n0 > 0.0 && std::isfinite(eb_n0), "eb_n0 must be positive");
    require(is_square_qam(constellation_size), "constellation_size must be 4, 16 or 64");
}

int LinkBudget::bits_per_symbol() const {
    require(is_square_qam(constellation_size), "constellation_size must be 4, 16 or 64");
    return std::countr_zero(static_cast<unsigned>(constellation_size));
}

double LinkBudget::noise_power_w() const {
    return noise_model == NoiseModel::kSpectralDensity ? noise_psd * bandwidth_hz : noise_psd;
}

void ChannelState::validate() const {
    require(los_power >= 0.0 && std::isfinite(los_power), "los_power must be nonnegative");
    require(nlos_scale_sq >= 0.0 && std::isfinite(nlos_scale_sq), "nlos_scale_sq must be nonnegative");
    require(los_power + nlos_scale_sq > 0.0, "degenerate channel: LOS and NLOS powers both zero");
}

double ChannelState::c_factor() const {
    if (nlos_scale_sq == 0.0) return std::numeric_limits<double>::infinity();
    return los_power / (2.0 * nlos_scale_sq);
}

ChannelState ChannelState::from_c_factor(double mean_gain, double c_factor) {
    require(mean_gain > 0.0 && c_factor >= 0.0, "mean gain must be positive and C-factor nonnegative");
    // Omega = |d|^2 + 2 Psi^2 and C = |d|^2 / (2 Psi^2)
    const double nlos = mean_gain / (2.0 * (1.0 + c_factor));
    return ChannelState{mean_gain - 2.0 * nlos, nlos};
}

void PacketSizeDist::validate() const {
    require(std::isfinite(mu), "mu must be finite");
    require(sigma_sq >= 0.0 && std::isfinite(sigma_sq), "sigma_sq must be nonnegative");
    require(std::isfinite(mean_size()), "E[S] overflows");
}

double PacketSizeDist::mean_size() const { return std::exp(mu + 0.5 * sigma_sq); }

double PacketSizeDist::mean_inverse_size() const { return std::exp(-mu + 0.5 * sigma_sq); }

void Diagnostics::reset() noexcept {
    negative_rate_clamps = 0;
    loss_prob_clamps = 0;
    ber_clamps = 0;
}

Diagnostics& diagnostics() noexcept {
    static Diagnostics d;
    return d;
}

double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double rician_mean_gain(const ChannelState& channel) {
    channel.validate();
    return channel.los_power + 2.0 * channel.nlos_scale_sq;
}

double sample_channel_gain(const ChannelState& channel, Rng& rng) {
    channel.validate();
    const double d = std::sqrt(channel.los_power);
    if (channel.nlos_scale_sq == 0.0) return channel.los_power;
    std::normal_distribution<double> scatter(0.0, std::sqrt(channel.nlos_scale_sq));
    const double re = d + scatter(rng);
    const double im = scatter(rng);
    return re * re + im * im;
}

double shannon_rate(const LinkBudget& link, double gain) {
    require(gain >= 0.0, "channel gain must be nonnegative");
    return link.bandwidth_hz * std::log2(1.0 + link.tx_power_w * gain / link.noise_power_w());
}

double qam_ber(const LinkBudget& link, BerMode mode) {
    require(link.eb_n0 > 0.0, "eb_n0 must be positive");
    const int m = link.bits_per_symbol();
    const double big_m = link.constellation_size;
    double pb = 0.0;
    if (mode == BerMode::kStandard) {
        const double arg = std::sqrt(3.0 * m / (big_m - 1.0) * link.eb_n0);
        pb = (4.0 / m) * (1.0 - 1.0 / std::sqrt(big_m)) * q_function(arg);
    } else {
        const double radicand = 3.0 * m / big_m - 1.0;
        require(radicand > 0.0, "as-written BER is undefined for this constellation");
        const double q = q_function(std::sqrt(radicand) * std::sqrt(2.0 * link.eb_n0));
        pb = q > 0.0 ? 3.0 / (2.0 * std::sqrt(big_m) * q) : std::numeric_limits<double>::infinity();
    }
    if (!(pb <= 0.5)) {
        ++diagnostics().ber_clamps;
        return 0.5;
    }
    return std::max(pb, 0.0);
}

double packet_loss_prob(double ber, double packet_bits, LossMode mode) {
    require(ber >= 0.0 && ber < 1.0, "bit error rate must lie in [0, 1)");
    require(packet_bits > 0.0, "packet size must be positive");
    if (mode == LossMode::kExact) return -std::expm1(packet_bits * std::log1p(-ber));
    const double p = -packet_bits * std::log1p(-ber);
    if (p > 1.0) {
        ++diagnostics().loss_prob_clamps;
        return 1.0;
    }
    return std::max(p, 0.0);
}

double max_arrival_rate(double rate_bps, double packet_bits) {
    require(packet_bits > 0.0, "packet size must be positive");
    return rate_bps / packet_bits;
}

double effective_rate(double lambda_max, double p_loss) {
    require(p_loss >= 0.0 && p_loss <= 1.0, "loss probability must lie in [0, 1]");
    return lambda_max * (1.0 - p_loss);
}

double expected_arrival_rate_raw(double rate_bps, const PacketSizeDist& dist, double ber) {
    require(ber >= 0.0 && ber < 1.0, "bit error rate must lie in [0, 1)");
    return rate_bps * (dist.mean_inverse_size() + std::log1p(-ber));
}

double expected_arrival_rate(double rate_bps, const PacketSizeDist& dist, double ber) {
    const double raw = expected_arrival_rate_raw(rate_bps, dist, ber);
    if (raw < 0.0) {
        ++diagnostics().negative_rate_clamps;
        return 0.0;
    }
    return raw;
}

double arrival_rate_variance(double rate_bps, const PacketSizeDist& dist) {
    const double inv = dist.mean_inverse_size();
    return rate_bps * rate_bps * std::expm1(dist.sigma_sq) * inv * inv;
}

double expected_packet_count(double exp_lambda, double window_s) {
    require(window_s >= 0.0, "window must be nonnegative");
    return window_s * exp_lambda;
}

double burstiness(double var_lambda, double exp_lambda) {
    if (!(exp_lambda > 0.0)) {
        throw UndefinedBurstinessError("burstiness undefined for zero expected arrival rate");
    }
    return var_lambda / (exp_lambda * exp_lambda);
}

std::uint64_t sample_packet_count(double exp_lambda, double window_s, Rng& rng) {
    require(exp_lambda >= 0.0 && window_s >= 0.0, "Poisson mean must be nonnegative");
    const double mean = exp_lambda * window_s;
    if (mean == 0.0) return 0;
    std::poisson_distribution<std::uint64_t> poisson(mean);
    return poisson(rng);
}

TrafficStats compute_traffic_stats(const LinkBudget& link, const ChannelState& channel,
                                   const PacketSizeDist& dist, double window_s,
                                   const StatsOptions& options) {
    link.validate();
    dist.validate();
    require(window_s > 0.0, "window must be positive");

    TrafficStats s;
    s.mean_gain = rician_mean_gain(channel);
    s.rate_bps = shannon_rate(link, s.mean_gain);
    s.ber = qam_ber(link, options.ber_mode);
    s.loss_prob = packet_loss_prob(s.ber, dist.mean_size());
    const double raw = expected_arrival_rate_raw(s.rate_bps, dist, s.ber);
    s.rate_clamped = raw < 0.0;
    s.exp_lambda = expected_arrival_rate(s.rate_bps, dist, s.ber);
    s.var_lambda = arrival_rate_variance(s.rate_bps, dist);
    s.exp_count = expected_packet_count(s.exp_lambda, window_s);
    s.burstiness = burstiness(s.var_lambda, s.exp_lambda);
    return s;
}

MomentEstimate monte_carlo_arrival_moments(double rate_bps, const PacketSizeDist& dist, double ber,
                                           std::size_t draws, Rng& rng) {
    require(draws >= 2, "need at least two draws");
    require(ber >= 0.0 && ber < 1.0, "bit error rate must lie in [0, 1)");
    std::lognormal_distribution<double> size(dist.mu, std::sqrt(dist.sigma_sq));
    const double log_keep = std::log1p(-ber);

    std::vector<double> lam(draws);
    std::vector<double> inv(draws);
    for (std::size_t i = 0; i < draws; ++i) {
        const double s = size(rng);
        inv[i] = rate_bps / s;
        lam[i] = inv[i] * (1.0 + s * log_keep);
    }

    const double n = static_cast<double>(draws);
    auto mean_of = [&](const std::vector<double>& v) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return acc / n;
    };

    MomentEstimate est;
    est.draws = draws;
    est.mean = mean_of(lam);
    double ss = 0.0;
    for (double x : lam) ss += (x - est.mean) * (x - est.mean);
    est.mean_stderr = std::sqrt(ss / (n - 1.0) / n);

    const double inv_mean = mean_of(inv);
    double m2 = 0.0;
    double m4 = 0.0;
    for (double x : inv) {
        const double d2 = (x - inv_mean) * (x - inv_mean);
        m2 += d2;
        m4 += d2 * d2;
    }
    est.variance = m2 / (n - 1.0);
    m2 /= n;
    m4 /= n;
    est.variance_stderr = std::sqrt(std::max(m4 - m2 * m2, 0.0) / n);
    return est;
}

void write_packet_trace(std::ostream& out, std::span<const TraceUser> users, double window_s,
                        std::size_t windows, std::uint64_t seed) {
    out << "user_id,window_index,packet_count\n";
    for (const auto& u : users) {
        Rng rng = make_rng(seed, {kStreamTrace, u.user_id});
        for (std::size_t w = 0; w < windows; ++w) {
            out << u.user_id << ',' << w << ',' << sample_packet_count(u.exp_lambda, window_s, rng) << '\n';
        }
    }
}

}  // namespace trafficfl::traffic
