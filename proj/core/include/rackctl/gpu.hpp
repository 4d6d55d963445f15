#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "rackctl/config.hpp"

namespace rackctl {

// P(f, u) = cross*f*u + per_mhz*f + per_util*u + base, clamped at zero.
// Defaults are the least-squares fit to the bundled frequency profiling
// table (utilization proxy = bucket tokens / largest bucket).
struct GpuPowerCoefficients {
    double base_w = -71.179684351130348;          // a0
    double per_util_w = 35.134740307424408;       // a1
    double per_mhz_w = 0.12410622476608106;       // a2
    double cross_w_per_mhz = 0.028303453880921231; // a3

    static GpuPowerCoefficients from_config(const Config& cfg);
};

// dTheta/dt = cold_gain*theta_c + power_gain*P + offset - decay*theta.
// decay = 0 reproduces the pure-integrator form; decay > 0 gives the relaxed
// model with fixed point (cold_gain*theta_c + power_gain*P + offset)/decay.
// Defaults are calibrated so the fixed points reproduce the bundled
// tensor-parallel profiling temperatures (60 s time constant, cold-air
// sensitivity 0.35, profiling inlet 22 degC).
struct GpuThermalCoefficients {
    double cold_gain = 0.0058333333333333327;  // beta0, K/s per degC
    double power_gain = 0.001967349254827114;  // beta1, K/s per W
    double offset = 0.3198319071713554;        // gamma, K/s
    double decay = 0.016666666666666666;       // beta2, 1/s (0 = pure integrator)

    double fixed_point(double cold_temp_c, double power_w) const;
    static GpuThermalCoefficients from_config(const Config& cfg);
};

struct GpuOperatingPoint {
    double freq_mhz = 1800;
    double utilization = 0; // [0, 1]
    double temp_c = 30;
};

struct TpRow {
    int tp_mode;
    double total_tokens;
    double latency_s;
    double temp_c;
    double power_w;
};

struct DvfsRow {
    double freq_mhz;
    double bucket_tokens;
    double latency_s;
    double power_w;
    double temp_c;
};

struct TpMetrics {
    double latency_s;
    double temp_c;
    double power_w;
    bool extrapolated = false; // clamped outside the profiled token range
};

struct DvfsMetrics {
    double latency_s;
    double power_w;
    double temp_c;
};

// Profiled performance maps plus per-mode window capacities.
class ProfileTables {
public:
    static ProfileTables from_csv(const std::string& tp_csv_path, const std::string& dvfs_csv_path);
    static ProfileTables bundled(); // tables compiled into the library

    // Piecewise-linear in total_tokens, clamped at the profiled range ends.
    TpMetrics tp_metrics(int tp_mode, double total_tokens) const;

    // Nearest token bucket, then exact row lookup for the frequency.
    DvfsMetrics dvfs_metrics(double freq_mhz, double tokens) const;

    const std::vector<int>& tp_modes() const { return modes_; }
    const std::vector<double>& frequencies() const { return freqs_; }
    const std::vector<double>& buckets() const { return buckets_; }

    double nearest_bucket(double tokens) const;

    // Tokens one pool of the given mode can absorb per window.
    // Derived from the profiled throughput ratios, anchored at the largest
    // profiled load of the smallest mode; see docs/derivation in README.
    double window_capacity(int tp_mode, double window_s) const;

    double max_profiled_tokens(int tp_mode) const;

    const std::vector<TpRow>& tp_rows() const { return tp_; }
    const std::vector<DvfsRow>& dvfs_rows() const { return dvfs_; }

private:
    void index_and_validate();

    std::vector<TpRow> tp_;      // sorted by (mode, tokens)
    std::vector<DvfsRow> dvfs_;  // sorted by (bucket, freq)
    std::vector<int> modes_;
    std::vector<double> freqs_;
    std::vector<double> buckets_;
    double capacity_anchor_tokens_ = 0; // largest profiled load of smallest mode
    double capacity_anchor_latency_ = 0;
    double profile_window_s_ = 300.0;
};

double gpu_power(double freq_mhz, double utilization, const GpuPowerCoefficients& coeffs);

// One explicit-Euler step of the die-temperature model.
double gpu_temp_step(const GpuOperatingPoint& point, double cold_temp_c, double power_w,
                     const GpuThermalCoefficients& coeffs, double dt);

double utilization_from_load(double tokens_in_window, double capacity_tokens);

struct PowerFitResult {
    GpuPowerCoefficients coeffs;
    double rms_residual_w = 0;
    double max_abs_residual_w = 0;
};

struct PowerSample {
    double freq_mhz;
    double utilization;
    double power_w;
};

// Ordinary least squares on the {f*u, f, u, 1} basis via Householder QR.
PowerFitResult fit_power_coeffs(const std::vector<PowerSample>& samples);

struct ThermalFitResult {
    GpuThermalCoefficients coeffs;
    double rms_residual_c = 0;
    double max_abs_residual_c = 0;
};

// Calibrates the relaxed die-temperature model so that its fixed points
// reproduce the profiled steady temperatures. The power signal for each
// profiled row is the fitted P(f_ref, tokens_per_gpu / tokens_per_gpu_ref).
// The cold-air sensitivity and time constant are not identifiable from the
// tables (profiling ran at one inlet temperature), so they are parameters.
ThermalFitResult fit_thermal_coeffs(const ProfileTables& tables, const GpuPowerCoefficients& power,
                                    double profile_cold_temp_c, double cold_sensitivity,
                                    double time_constant_s, double freq_ref_mhz,
                                    double tokens_per_gpu_ref);

// Generic least squares: rows x cols design matrix (row-major), returns
// coefficient vector. Throws FitError on rank deficiency.
std::vector<double> least_squares(const std::vector<double>& design, std::size_t rows,
                                  std::size_t cols, const std::vector<double>& target);

} // namespace rackctl
