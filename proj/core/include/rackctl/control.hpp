#pragma once

#include <map>
#include <string>
#include <vector>

#include "rackctl/config.hpp"
#include "rackctl/gpu.hpp"
#include "rackctl/thermo.hpp"
#include "rackctl/workload.hpp"

namespace rackctl {

// ---------------------------------------------------------------- sizing

struct ClusterPlan {
    int n_servers = 0;
    double forecast_tokens = 0;
    double reference_capacity = 0; // tokens one server absorbs per interval
};

ClusterPlan size_cluster(double forecast_tokens, double reference_capacity, int min_servers,
                         int max_servers);

// ---------------------------------------------------------------- TP mix

struct TpMix {
    std::map<int, int> pool_counts; // tp mode -> active pool count
    long long window = 0;

    int total_gpus() const;
    int total_pools() const;
    bool empty() const { return total_pools() == 0; }
};

struct TpMixOptions {
    int gpu_budget = 8;
    double cold_temp_c = 22.0;
    double gpu_temp_max_c = 50.0;
    double window_s = 300.0;
    bool allow_empty = true;
};

// Exact optimum of the pool-count integer program by bounded enumeration
// with cost pruning. The thermal screen uses the full window forecast per
// mode (a pool may transiently see the window's whole arrival rate); the
// power objective evaluates each pool at the evenly split load. Ties break
// toward fewer GPUs, then more pools of the smaller modes.
TpMix select_tp_mix(double forecast_tokens, const TpMixOptions& opt, const ProfileTables& tables);

// Objective value used by select_tp_mix, exposed for exactness tests.
double tp_mix_cost(const TpMix& mix, double forecast_tokens, const ProfileTables& tables);

bool tp_mix_feasible(const TpMix& mix, double forecast_tokens, const TpMixOptions& opt,
                     const ProfileTables& tables, std::string* why = nullptr);

// ---------------------------------------------------------------- dispatch

struct PoolRef {
    int id = 0;
    double capacity_tokens = 0;
};

struct DispatchPlan {
    std::vector<double> shares;   // per pool, sums to 1
    std::vector<int> quotas;      // per pool, sums to job count
    std::vector<int> schedule;    // pool id per job slot
    std::vector<int> assignment;  // job index -> pool id (arrival order)
};

// Capacity-proportional deterministic dispatch: largest-remainder quotas,
// then a smooth weighted interleave (pool ids break ties).
DispatchPlan dispatch(const std::vector<PoolRef>& pools, std::size_t job_count);

// ---------------------------------------------------------------- cooling MPC

struct MpcConfig {
    int horizon_steps = 2;          // prediction steps
    double step_s = 30.0;           // thermal sampling period per step
    double prediction_substep_s = 10.0;
    CoolingCommandBounds bounds;
    double cold_temp_max_c = 30.0;
    double return_temp_max_c = 70.0;
    double return_temp_margin_c = 3.0; // planning margin under the hard limit
    double gpu_temp_max_c = 50.0;
    int grid_points = 7;            // per axis per refinement level
    int refinement_levels = 3;      // levels after the initial grid

    static MpcConfig from_config(const Config& cfg);
};

// Everything the cooling planner needs to know about the plant.
struct PlantModel {
    ThermalCoefficients thermo;
    CoolingPowerCoefficients cooling;
    GpuThermalCoefficients gpu_thermal;
};

struct MpcResult {
    CoolingCommand command;
    double horizon_cost_w = 0;  // mean predicted cooling power over the horizon
    bool fallback = false;      // no feasible grid point; max cooling returned
};

// Receding-horizon cooling planner: deterministic coarse-to-fine grid search
// over the command box, dynamics advanced with step_rack. disturbance_w holds
// one per-server power vector per horizon step (the forecast d_k);
// gpu_die_power_w and gpu_temps describe the per-GPU thermal side.
MpcResult plan_cooling(const RackState& state, const std::vector<std::vector<double>>& disturbance_w,
                       const std::vector<double>& gpu_temps, const std::vector<double>& gpu_die_power_w,
                       const std::vector<int>& gpu_server, const MpcConfig& cfg,
                       const PlantModel& plant);

// ---------------------------------------------------------------- PID

struct PidState {
    double kp = 4.5;
    double ki = 0.18;
    double kd = 0.1;
    double setpoint_c = 70.0;
    double baseline_supply_c = 22.5;
    double fixed_flow_m3s = 0.0285;
    double integral = 0;
    double prev_error = 0;
    bool primed = false; // first call has no derivative history

    static PidState from_config(const Config& cfg);
};

// Feedback-only supply-temperature loop; flow stays at the configured
// constant. Integral term is clamped to the actuator authority (anti-windup).
CoolingCommand pid_step(double measured_return_c, PidState& pid, double dt,
                        const CoolingCommandBounds& bounds);

// ---------------------------------------------------------------- DVFS

struct FrequencyChoice {
    double freq_mhz = 1800;
    double power_w = 0;
    double latency_s = 0;
    double temp_c = 0;
    bool feasible = true; // false = constraint-violating fallback at max frequency
};

// Enumerates the profiled frequency set and picks the cheapest feasible one;
// infeasible jobs run at the highest frequency, flagged.
FrequencyChoice select_frequency(double job_tokens, double latency_limit_s, double gpu_temp_max_c,
                                 const ProfileTables& tables);

// Per-class latency limits: slack multiplier times the profiled latency at
// the highest frequency of the class's token bucket.
std::map<char, double> class_latency_limits(const ProfileTables& tables, double slack);

} // namespace rackctl
