#pragma once

// Physical-layer link budget and per-user traffic statistics: Rician mean
// gain, Shannon rate, square-QAM bit error rate, packet loss, and the
// log-normal-packet-size moments of the packet arrival rate that feed the
// (burstiness, expected packet count) feature pair.

#include "trafficfl/random.hpp"

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <span>

namespace trafficfl::traffic {

/// How the noise term of the Shannon rate is read.
enum class NoiseModel {
    kSpectralDensity,  ///< noise power = noise_psd * bandwidth_hz
    kLiteral,          ///< noise_psd used unscaled as total noise power
};

enum class BerMode {
    kStandard,   ///< Gray-coded square-QAM approximation
    kAsWritten,  ///< 3 / (2 sqrt(M) Q(sqrt(3m/M - 1) sqrt(2 Eb/N0)))
};

enum class LossMode {
    kTaylor,  ///< -S ln(1 - Pb), clamped to [0, 1]
    kExact,   ///< 1 - (1 - Pb)^S
};

struct LinkBudget {
    double bandwidth_hz = 1e6;
    double tx_power_w = 0.1;
    double noise_psd = 1e-13;
    double eb_n0 = 10.0;  ///< linear Eb/N0
    int constellation_size = 4;
    NoiseModel noise_model = NoiseModel::kSpectralDensity;

    /// Throws DomainError unless all fields are positive and M is 4, 16 or 64.
    void validate() const;
    [[nodiscard]] int bits_per_symbol() const;
    [[nodiscard]] double noise_power_w() const;
};

struct ChannelState {
    double los_power = 1.0;      ///< |d|^2
    double nlos_scale_sq = 0.0;  ///< Psi^2, per-quadrature scatter variance

    void validate() const;
    /// |d|^2 / (2 Psi^2); +inf for a pure LOS channel.
    [[nodiscard]] double c_factor() const;
    /// Builds a channel from mean gain Omega and C-factor.
    static ChannelState from_c_factor(double mean_gain, double c_factor);
};

/// Log-normal packet size in bits: ln S ~ N(mu, sigma_sq).
struct PacketSizeDist {
    double mu = 0.0;
    double sigma_sq = 0.0;

    void validate() const;
    [[nodiscard]] double mean_size() const;
    /// E[1/S] = exp(-mu + sigma_sq / 2).
    [[nodiscard]] double mean_inverse_size() const;
};

struct TrafficStats {
    double mean_gain = 0.0;
    double rate_bps = 0.0;
    double ber = 0.0;
    double loss_prob = 0.0;  ///< Taylor packet loss at the mean packet size
    double exp_lambda = 0.0;
    double var_lambda = 0.0;
    double exp_count = 0.0;
    double burstiness = 0.0;
    bool rate_clamped = false;  ///< E[lambda] closed form was negative
};

/// Process-wide counters of clamped approximations.
struct Diagnostics {
    std::atomic<std::uint64_t> negative_rate_clamps{0};
    std::atomic<std::uint64_t> loss_prob_clamps{0};
    std::atomic<std::uint64_t> ber_clamps{0};

    void reset() noexcept;
};
Diagnostics& diagnostics() noexcept;

/// Gaussian tail Q(x) = 0.5 erfc(x / sqrt 2).
double q_function(double x);

double rician_mean_gain(const ChannelState& channel);
/// One draw of |h|^2 with the LOS phasor on the real axis.
double sample_channel_gain(const ChannelState& channel, Rng& rng);

double shannon_rate(const LinkBudget& link, double gain);
double qam_ber(const LinkBudget& link, BerMode mode = BerMode::kStandard);
double packet_loss_prob(double ber, double packet_bits, LossMode mode = LossMode::kTaylor);
double max_arrival_rate(double rate_bps, double packet_bits);
double effective_rate(double lambda_max, double p_loss);

/// Unclamped closed form R (E[1/S] + ln(1 - Pb)); may be negative.
double expected_arrival_rate_raw(double rate_bps, const PacketSizeDist& dist, double ber);
/// Closed form clamped at zero (a clamp bumps the diagnostic counter).
double expected_arrival_rate(double rate_bps, const PacketSizeDist& dist, double ber);
double arrival_rate_variance(double rate_bps, const PacketSizeDist& dist);
double expected_packet_count(double exp_lambda, double window_s);
/// Var / E^2. Throws UndefinedBurstinessError when exp_lambda <= 0.
double burstiness(double var_lambda, double exp_lambda);
std::uint64_t sample_packet_count(double exp_lambda, double window_s, Rng& rng);

struct StatsOptions {
    BerMode ber_mode = BerMode::kStandard;
};

/// Mean-gain pipeline: gain -> rate -> BER -> moments -> features.
/// Throws UndefinedBurstinessError if the expected rate clamps to zero.
TrafficStats compute_traffic_stats(const LinkBudget& link, const ChannelState& channel,
                                   const PacketSizeDist& dist, double window_s,
                                   const StatsOptions& options = {});

/// Monte-Carlo moments of the arrival rate over log-normal packet sizes,
/// with standard errors for the mean and for the sample variance.
struct MomentEstimate {
    double mean = 0.0;
    double mean_stderr = 0.0;
    double variance = 0.0;
    double variance_stderr = 0.0;
    std::size_t draws = 0;
};

/// Averages (R/S)(1 + S ln(1 - Pb)) and the spread of R/S over `draws`
/// log-normal packet sizes.
MomentEstimate monte_carlo_arrival_moments(double rate_bps, const PacketSizeDist& dist, double ber,
                                           std::size_t draws, Rng& rng);

/// Writes `user_id,window_index,packet_count` rows for Poisson windows.
struct TraceUser {
    std::uint64_t user_id;
    double exp_lambda;
};
void write_packet_trace(std::ostream& out, std::span<const TraceUser> users, double window_s,
                        std::size_t windows, std::uint64_t seed);

}  // namespace trafficfl::traffic
