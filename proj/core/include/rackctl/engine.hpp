#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rackctl/config.hpp"
#include "rackctl/control.hpp"
#include "rackctl/forecast.hpp"
#include "rackctl/gpu.hpp"
#include "rackctl/thermo.hpp"
#include "rackctl/workload.hpp"

namespace rackctl {

enum class ComputePolicy { Hierarchical, StaticTp8MaxFreq };
enum class CoolingPolicy { Mpc, Pid, Constant };

struct SimConfig {
    // workload source: an explicit job list (trace file or synthetic)
    std::vector<Job> jobs;
    double horizon_s = 86400;
    uint64_t seed = 1;

    ComputePolicy compute = ComputePolicy::Hierarchical;
    CoolingPolicy cooling = CoolingPolicy::Mpc;

    // layer periods; each must divide the next one up
    double cluster_period_s = 1800;
    double window_period_s = 300;
    double cooling_period_s = 60;
    double thermal_sample_s = 30;
    double plant_substep_s = 1.0;

    int max_servers = 4;
    int min_servers = 1;
    int gpus_per_server = 8;

    // forecasting
    ForecastKind forecaster = ForecastKind::Naive;
    TrainOptions forecast_train;   // used when forecaster == Lstm
    double forecast_train_fraction = 0.5;

    // job handling
    int queue_slots_per_pool = 16;
    double dvfs_latency_slack = 1.10;
    bool oracle_length_predictor = true; // false = per-class running median
    bool allow_empty_mix = true;
    bool fallback_on_infeasible_mix = true;

    // plant + models
    ThermalCoefficients thermo;     // supply_fraction rebuilt per active count
    std::string supply_preset = "uniform";
    CoolingPowerCoefficients cooling_coeffs;
    GpuPowerCoefficients gpu_power_coeffs;
    GpuThermalCoefficients gpu_thermal_coeffs;
    MpcConfig mpc;
    PidState pid;
    CoolingCommand constant_command{18.0, 0.03};

    double ambient_temp_c = 25.0;
    double initial_temp_c = 25.0;
    double tokens_per_gpu_ref = 97500; // die-utilization normalization per window

    ProfileTables tables;

    static SimConfig from_config(const Config& cfg);

    void validate() const;
};

struct JobRecord {
    double arrival_s = 0;
    char job_class = '?';
    double freq_mhz = 0;
    double queue_wait_s = 0;
    double service_s = 0;
    double latency_s = 0;
    long long tokens = 0;
    int pool_id = -1;
    bool slo_violated = false;
    bool freq_fallback = false;
};

struct TickRow {
    double time_s = 0;
    int n_active = 0;
    double it_power_w = 0;
    double q_load_w = 0;
    double p_src_w = 0;
    double p_fan_w = 0;
    double cooling_power_w = 0;
    double return_temp_c = 0;
    double supply_temp_c = 0;
    double supply_flow_m3s = 0;
    double mean_gpu_temp_c = 0;
    double max_gpu_temp_c = 0;
};

struct ZoneRow {
    long long step = 0;
    int server_index = 0;
    double theta_c = 0;
    double theta_s = 0;
    double theta_h = 0;
    double theta_ret = 0;
    double q_load = 0;
    double p_src = 0;
    double p_fan = 0;
};

struct ClusterEvent {
    double time_s = 0;
    double forecast_tokens = 0;
    int n_servers = 0;
};

struct WindowEvent {
    double time_s = 0;
    long long window = 0;
    double forecast_tokens = 0;
    int pools_tp2 = 0, pools_tp4 = 0, pools_tp8 = 0;
    bool fallback = false;
};

struct CoolingEvent {
    double time_s = 0;
    double supply_temp_c = 0;
    double supply_flow_m3s = 0;
    bool fallback = false;
};

struct Aggregates {
    double computing_energy_wh_per_gpu = 0;
    double cooling_energy_wh_per_gpu = 0;
    double mean_gpu_temp_c = 0;
    double max_gpu_temp_c = 0;
    double mean_latency_s = 0;
    double max_return_temp_c = 0;
    long long jobs_completed = 0;
    long long slo_violations = 0;
    long long freq_fallbacks = 0;
    long long mix_fallbacks = 0;
    long long cooling_fallbacks = 0;
    bool safety_violated = false; // any tick broke the hard thermal limits
};

struct SimReport {
    std::vector<TickRow> series;   // one row per thermal sample plus the final state
    std::vector<ZoneRow> zones;
    std::vector<JobRecord> jobs;
    std::vector<ClusterEvent> cluster_events;
    std::vector<WindowEvent> window_events;
    std::vector<CoolingEvent> cooling_events;
    Aggregates aggregates;
    double horizon_s = 0;
    uint64_t seed = 0;
    int total_gpus = 0;
    std::string compute_policy;
    std::string cooling_policy;
};

SimReport run_simulation(const SimConfig& cfg);

// Same plant and metrics with the static serving policy forced: every server
// online, one max-parallelism pool per server, highest frequency.
SimReport run_baseline(SimConfig cfg);

struct MetricComparison {
    std::string metric;
    double baseline = 0;
    double controlled = 0;
    double improvement = 0; // relative for energy/temperature; absolute delta for latency
};

struct ComparisonSummary {
    std::vector<MetricComparison> metrics;
};

ComparisonSummary compare(const SimReport& baseline, const SimReport& controlled);

// Report IO: series/zones/jobs/decisions CSVs plus aggregates JSON.
void write_report(const SimReport& report, const std::string& dir);
std::string aggregates_json(const SimReport& report);

// Recompute the trapezoidal energy integral of a tick series column (Wh).
double trapezoid_energy_wh(const std::vector<TickRow>& series,
                           double TickRow::*column);

} // namespace rackctl
