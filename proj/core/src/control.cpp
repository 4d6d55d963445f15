#include "rackctl/control.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "rackctl/errors.hpp"

namespace rackctl {

// ---------------------------------------------------------------- sizing

ClusterPlan size_cluster(double forecast_tokens, double reference_capacity, int min_servers,
                         int max_servers) {
    if (reference_capacity <= 0) throw ConfigError("size_cluster: reference capacity must be > 0");
    if (forecast_tokens < 0) throw ConfigError("size_cluster: forecast must be >= 0");
    if (min_servers < 0 || max_servers < min_servers)
        throw ConfigError("size_cluster: need 0 <= min_servers <= max_servers");
    ClusterPlan plan;
    plan.forecast_tokens = forecast_tokens;
    plan.reference_capacity = reference_capacity;
    long long needed = forecast_tokens > 0
                           ? static_cast<long long>(std::ceil(forecast_tokens / reference_capacity - 1e-12))
                           : 0;
    needed = std::clamp<long long>(needed, min_servers, max_servers);
    plan.n_servers = static_cast<int>(needed);
    return plan;
}

// ---------------------------------------------------------------- TP mix

int TpMix::total_gpus() const {
    int g = 0;
    for (const auto& [mode, count] : pool_counts) g += mode * count;
    return g;
}

int TpMix::total_pools() const {
    int p = 0;
    for (const auto& [mode, count] : pool_counts) p += count;
    return p;
}

double tp_mix_cost(const TpMix& mix, double forecast_tokens, const ProfileTables& tables) {
    const int pools = mix.total_pools();
    if (pools == 0) return 0.0;
    const double per_pool = forecast_tokens / pools;
    double cost = 0;
    for (const auto& [mode, count] : mix.pool_counts)
        if (count > 0) cost += count * tables.tp_metrics(mode, per_pool).power_w;
    return cost;
}

bool tp_mix_feasible(const TpMix& mix, double forecast_tokens, const TpMixOptions& opt,
                     const ProfileTables& tables, std::string* why) {
    if (mix.total_gpus() > opt.gpu_budget) {
        if (why) *why = "gpu budget exceeded";
        return false;
    }
    double coverage = 0;
    for (const auto& [mode, count] : mix.pool_counts)
        coverage += count * tables.window_capacity(mode, opt.window_s);
    if (coverage + 1e-9 < forecast_tokens) {
        if (why)
            *why = "coverage " + std::to_string(coverage) + " tokens < demand " +
                   std::to_string(forecast_tokens);
        return false;
    }
    // Conservative thermal screen: any active pool must stay below the GPU
    // temperature limit even if it momentarily sees the window's full rate.
    for (const auto& [mode, count] : mix.pool_counts) {
        if (count == 0) continue;
        const double temp = tables.tp_metrics(mode, forecast_tokens).temp_c;
        if (temp > opt.gpu_temp_max_c + 1e-12) {
            if (why)
                *why = "tp" + std::to_string(mode) + " pool temperature " + std::to_string(temp) +
                       " degC exceeds the " + std::to_string(opt.gpu_temp_max_c) + " degC limit";
            return false;
        }
    }
    return true;
}

namespace {

// Preference order for equal-cost mixes: fewer GPUs, then more pools of the
// smaller modes.
bool mix_preferred(const TpMix& a, double cost_a, const TpMix& b, double cost_b,
                   const std::vector<int>& modes) {
    if (cost_a != cost_b) return cost_a < cost_b;
    if (a.total_gpus() != b.total_gpus()) return a.total_gpus() < b.total_gpus();
    for (int m : modes) {
        int ca = a.pool_counts.count(m) ? a.pool_counts.at(m) : 0;
        int cb = b.pool_counts.count(m) ? b.pool_counts.at(m) : 0;
        if (ca != cb) return ca > cb;
    }
    return false;
}

} // namespace

TpMix select_tp_mix(double forecast_tokens, const TpMixOptions& opt, const ProfileTables& tables) {
    if (forecast_tokens < 0) throw ConfigError("select_tp_mix: forecast must be >= 0");
    const auto& modes = tables.tp_modes();

    if (forecast_tokens <= 0 && opt.allow_empty) {
        TpMix empty;
        for (int m : modes) empty.pool_counts[m] = 0;
        return empty;
    }

    // Bounded enumeration over pool counts with cost pruning. The candidate
    // space at gpu budgets of practical size is tiny, so exactness is cheap.
    TpMix best;
    double best_cost = std::numeric_limits<double>::infinity();
    bool found = false;

    double best_coverage = 0; // diagnostics for the infeasible message
    std::string thermal_reason;

    std::vector<int> counts(modes.size(), 0);
    // minimum per-pool power across the profiled range, for pruning
    std::vector<double> min_pool_power(modes.size());
    for (size_t i = 0; i < modes.size(); ++i) {
        double mn = std::numeric_limits<double>::infinity();
        for (const auto& r : tables.tp_rows())
            if (r.tp_mode == modes[i]) mn = std::min(mn, r.power_w);
        min_pool_power[i] = mn;
    }

    const bool demand_positive = forecast_tokens > 0;
    std::function<void(size_t, int, double)> recurse = [&](size_t mi, int gpus_used,
                                                           double power_floor) {
        if (mi == modes.size()) {
            TpMix mix;
            for (size_t i = 0; i < modes.size(); ++i) mix.pool_counts[modes[i]] = counts[i];
            if (mix.total_pools() == 0 && (demand_positive || !opt.allow_empty)) return;
            std::string why;
            if (!tp_mix_feasible(mix, forecast_tokens, opt, tables, &why)) {
                if (why.find("degC") != std::string::npos && thermal_reason.empty())
                    thermal_reason = why;
                return;
            }
            double coverage = 0;
            for (const auto& [mode, count] : mix.pool_counts)
                coverage += count * tables.window_capacity(mode, opt.window_s);
            best_coverage = std::max(best_coverage, coverage);
            const double cost = tp_mix_cost(mix, forecast_tokens, tables);
            if (!found || mix_preferred(mix, cost, best, best_cost, modes)) {
                best = mix;
                best_cost = cost;
                found = true;
            }
            return;
        }
        const int limit = opt.gpu_budget >= modes[mi] ? (opt.gpu_budget - gpus_used) / modes[mi] : 0;
        for (int c = 0; c <= limit; ++c) {
            const double floor_add = c * min_pool_power[mi];
            if (found && power_floor + floor_add > best_cost) break; // costs only grow with c
            counts[mi] = c;
            recurse(mi + 1, gpus_used + c * modes[mi], power_floor + floor_add);
        }
        counts[mi] = 0;
    };
    recurse(0, 0, 0.0);

    if (!found) {
        // Report the tightest violated constraint: thermal if no mode can run
        // at this demand, otherwise the coverage shortfall under the budget.
        double max_coverage = 0;
        for (int m : modes) {
            TpMix probe;
            probe.pool_counts[m] = opt.gpu_budget / m;
            std::string why;
            if (tp_mix_feasible(probe, 0, opt, tables, &why) ||
                why.find("degC") == std::string::npos) {
                double cov = (opt.gpu_budget / m) * tables.window_capacity(m, opt.window_s);
                // thermal screen for this mode at the actual demand
                if (tables.tp_metrics(m, forecast_tokens).temp_c <= opt.gpu_temp_max_c + 1e-12)
                    max_coverage = std::max(max_coverage, cov);
            }
        }
        if (max_coverage > 0)
            throw InfeasibleError("select_tp_mix: demand " + std::to_string(forecast_tokens) +
                                  " tokens exceeds the thermally feasible coverage " +
                                  std::to_string(max_coverage) + " under a budget of " +
                                  std::to_string(opt.gpu_budget) + " GPUs");
        throw InfeasibleError("select_tp_mix: no thermally feasible pool configuration (" +
                              (thermal_reason.empty() ? std::string("no candidate modes")
                                                      : thermal_reason) +
                              ")");
    }
    return best;
}

// ---------------------------------------------------------------- dispatch

DispatchPlan dispatch(const std::vector<PoolRef>& pools, std::size_t job_count) {
    if (pools.empty()) throw ConfigError("dispatch: need at least one pool");
    double total = 0;
    for (const auto& p : pools) {
        if (p.capacity_tokens <= 0) throw ConfigError("dispatch: pool capacities must be > 0");
        total += p.capacity_tokens;
    }

    DispatchPlan plan;
    const size_t n = pools.size();
    plan.shares.resize(n);
    plan.quotas.assign(n, 0);
    for (size_t i = 0; i < n; ++i) plan.shares[i] = pools[i].capacity_tokens / total;

    // Largest-remainder rounding of s_p * J to integer quotas.
    const double J = static_cast<double>(job_count);
    std::vector<double> remainder(n);
    size_t assigned = 0;
    for (size_t i = 0; i < n; ++i) {
        const double ideal = plan.shares[i] * J;
        plan.quotas[i] = static_cast<int>(std::floor(ideal + 1e-12));
        remainder[i] = ideal - plan.quotas[i];
        assigned += plan.quotas[i];
    }
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
        return pools[a].id < pools[b].id;
    });
    for (size_t k = 0; assigned < job_count; ++k, ++assigned) plan.quotas[order[k % n]] += 1;

    // Smooth weighted interleave: every pool appears exactly quota times and
    // runs of the same pool are as short as the weights allow.
    std::vector<double> credit(n, 0.0);
    std::vector<int> remaining = plan.quotas;
    plan.schedule.reserve(job_count);
    for (size_t slot = 0; slot < job_count; ++slot) {
        size_t pick = n;
        double best = -std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < n; ++i) {
            if (remaining[i] == 0) continue;
            credit[i] += plan.quotas[i];
            if (credit[i] > best + 1e-12) {
                best = credit[i];
                pick = i;
            }
        }
        if (pick == n) throw Error("dispatch: schedule construction underflow"); // unreachable
        credit[pick] -= J;
        remaining[pick] -= 1;
        plan.schedule.push_back(pools[pick].id);
    }
    plan.assignment = plan.schedule;
    return plan;
}

// ---------------------------------------------------------------- cooling MPC

MpcConfig MpcConfig::from_config(const Config& cfg) {
    MpcConfig m;
    m.horizon_steps = static_cast<int>(cfg.get_int("control.mpc_horizon_steps", m.horizon_steps));
    m.step_s = cfg.get_double("control.mpc_step_s", m.step_s);
    m.prediction_substep_s = cfg.get_double("control.mpc_prediction_substep_s", m.prediction_substep_s);
    m.bounds.supply_temp_min = cfg.get_double("control.supply_temp_min", m.bounds.supply_temp_min);
    m.bounds.supply_temp_max = cfg.get_double("control.supply_temp_max", m.bounds.supply_temp_max);
    m.bounds.supply_flow_min = cfg.get_double("control.supply_flow_min", m.bounds.supply_flow_min);
    m.bounds.supply_flow_max = cfg.get_double("control.supply_flow_max", m.bounds.supply_flow_max);
    m.cold_temp_max_c = cfg.get_double("control.cold_temp_max", m.cold_temp_max_c);
    m.return_temp_max_c = cfg.get_double("control.return_temp_max", m.return_temp_max_c);
    m.return_temp_margin_c = cfg.get_double("control.return_temp_margin", m.return_temp_margin_c);
    m.gpu_temp_max_c = cfg.get_double("control.gpu_temp_max", m.gpu_temp_max_c);
    m.grid_points = static_cast<int>(cfg.get_int("control.mpc_grid_points", m.grid_points));
    m.refinement_levels = static_cast<int>(cfg.get_int("control.mpc_refinement_levels", m.refinement_levels));
    if (m.horizon_steps < 1) throw ConfigError("control.mpc_horizon_steps must be >= 1");
    if (m.grid_points < 2) throw ConfigError("control.mpc_grid_points must be >= 2");
    return m;
}

namespace {

struct HorizonEval {
    bool feasible = false;
    double energy_j = 0;
    RackState state_after;
    std::vector<double> gpu_after;
};

// Advances one horizon step under a fixed command, accumulating cooling
// energy and rejecting on any constraint violation along the way.
HorizonEval advance_step(const RackState& start, const std::vector<double>& gpu_start,
                         const CoolingCommand& cmd, const std::vector<double>& server_powers,
                         const std::vector<double>& gpu_die_power_w,
                         const std::vector<int>& gpu_server, const MpcConfig& cfg,
                         const PlantModel& plant) {
    HorizonEval ev;
    ev.state_after = start;
    ev.gpu_after = gpu_start;
    const double ret_limit = cfg.return_temp_max_c - cfg.return_temp_margin_c;
    const int substeps =
        std::max(1, static_cast<int>(std::ceil(cfg.step_s / cfg.prediction_substep_s - 1e-12)));
    const double h = cfg.step_s / substeps;
    for (int s = 0; s < substeps; ++s) {
        ev.state_after = step_rack(ev.state_after, cmd, server_powers, plant.thermo, h, h);
        for (size_t g = 0; g < ev.gpu_after.size(); ++g) {
            GpuOperatingPoint pt;
            pt.temp_c = ev.gpu_after[g];
            const double cold = ev.state_after.cold[gpu_server[g]];
            ev.gpu_after[g] = gpu_temp_step(pt, cold, gpu_die_power_w[g], plant.gpu_thermal, h);
        }
        for (double tc : ev.state_after.cold)
            if (tc > cfg.cold_temp_max_c + 1e-9) return ev;
        if (return_temperature(ev.state_after) > ret_limit + 1e-9) return ev;
        for (double tg : ev.gpu_after)
            if (tg > cfg.gpu_temp_max_c + 1e-9) return ev;
        const double q = thermal_load(ev.state_after, cmd, plant.thermo);
        ev.energy_j += cooling_power(q, cmd, plant.cooling).total_w * h;
    }
    ev.feasible = true;
    return ev;
}

std::vector<double> axis_grid(double lo, double hi, int points) {
    std::vector<double> g(points);
    for (int i = 0; i < points; ++i)
        g[i] = points == 1 ? lo : lo + (hi - lo) * i / static_cast<double>(points - 1);
    return g;
}

} // namespace

MpcResult plan_cooling(const RackState& state, const std::vector<std::vector<double>>& disturbance_w,
                       const std::vector<double>& gpu_temps, const std::vector<double>& gpu_die_power_w,
                       const std::vector<int>& gpu_server, const MpcConfig& cfg,
                       const PlantModel& plant) {
    state.validate();
    const int Np = cfg.horizon_steps;
    if (disturbance_w.empty()) throw ConfigError("plan_cooling: disturbance forecast is empty");
    if (gpu_die_power_w.size() != gpu_temps.size() || gpu_server.size() != gpu_temps.size())
        throw DimensionError("plan_cooling: per-GPU vectors have mismatched lengths");
    for (int s : gpu_server)
        if (s < 0 || static_cast<size_t>(s) >= state.size())
            throw DimensionError("plan_cooling: gpu_server index out of range");

    const auto& powers_at = [&](int k) -> const std::vector<double>& {
        return disturbance_w[std::min<size_t>(k, disturbance_w.size() - 1)];
    };

    // Per-step search boxes, refined around the incumbent after each pass.
    struct Box {
        double t_lo, t_hi, f_lo, f_hi;
    };
    std::vector<Box> boxes(Np, {cfg.bounds.supply_temp_min, cfg.bounds.supply_temp_max,
                                cfg.bounds.supply_flow_min, cfg.bounds.supply_flow_max});

    std::vector<CoolingCommand> incumbent(Np);
    double incumbent_energy = std::numeric_limits<double>::infinity();
    bool have_incumbent = false;

    const double min_fan_w = cooling_power(0, {cfg.bounds.supply_temp_max, cfg.bounds.supply_flow_min},
                                           plant.cooling).total_w;

    std::vector<CoolingCommand> current(Np);
    // Depth-first joint search over the per-step grids. Feasible candidates
    // at each depth are explored cheapest-first so the incumbent tightens
    // quickly and the fan-floor bound prunes most of the tree. Cost ties
    // resolve toward warmer supply air and lower flow (least cooling effort).
    std::function<void(int, const RackState&, const std::vector<double>&, double,
                       const std::vector<std::vector<double>>&, const std::vector<std::vector<double>>&)>
        search = [&](int k, const RackState& x, const std::vector<double>& gpus, double acc_energy,
                     const std::vector<std::vector<double>>& t_grids,
                     const std::vector<std::vector<double>>& f_grids) {
            if (k == Np) {
                if (acc_energy < incumbent_energy - 1e-12) {
                    incumbent_energy = acc_energy;
                    incumbent = current;
                    have_incumbent = true;
                }
                return;
            }
            // Remaining steps cost at least the fan floor.
            const double remaining_floor = min_fan_w * cfg.step_s * (Np - k);
            if (have_incumbent && acc_energy + remaining_floor >= incumbent_energy) return;
            struct Candidate {
                CoolingCommand cmd;
                HorizonEval ev;
            };
            std::vector<Candidate> feasible;
            feasible.reserve(t_grids[k].size() * f_grids[k].size());
            for (double tc : t_grids[k]) {
                for (double fc : f_grids[k]) {
                    CoolingCommand cmd{tc, fc};
                    HorizonEval ev = advance_step(x, gpus, cmd, powers_at(k), gpu_die_power_w,
                                                  gpu_server, cfg, plant);
                    if (ev.feasible) feasible.push_back({cmd, std::move(ev)});
                }
            }
            std::stable_sort(feasible.begin(), feasible.end(), [](const Candidate& a, const Candidate& b) {
                if (a.ev.energy_j != b.ev.energy_j) return a.ev.energy_j < b.ev.energy_j;
                if (a.cmd.supply_temp_c != b.cmd.supply_temp_c)
                    return a.cmd.supply_temp_c > b.cmd.supply_temp_c;
                return a.cmd.supply_flow_m3s < b.cmd.supply_flow_m3s;
            });
            const double tail_floor = min_fan_w * cfg.step_s * (Np - k - 1);
            for (const auto& cand : feasible) {
                if (have_incumbent && acc_energy + cand.ev.energy_j + tail_floor >= incumbent_energy)
                    break; // sorted, so everything after is at least as expensive
                current[k] = cand.cmd;
                search(k + 1, cand.ev.state_after, cand.ev.gpu_after,
                       acc_energy + cand.ev.energy_j, t_grids, f_grids);
            }
        };

    for (int level = 0; level <= cfg.refinement_levels; ++level) {
        std::vector<std::vector<double>> t_grids(Np), f_grids(Np);
        for (int k = 0; k < Np; ++k) {
            t_grids[k] = axis_grid(boxes[k].t_lo, boxes[k].t_hi, cfg.grid_points);
            f_grids[k] = axis_grid(boxes[k].f_lo, boxes[k].f_hi, cfg.grid_points);
        }
        search(0, state, gpu_temps, 0.0, t_grids, f_grids);
        if (!have_incumbent) break; // nothing feasible on the full box
        for (int k = 0; k < Np; ++k) {
            const double t_span = (boxes[k].t_hi - boxes[k].t_lo) / (cfg.grid_points - 1);
            const double f_span = (boxes[k].f_hi - boxes[k].f_lo) / (cfg.grid_points - 1);
            boxes[k].t_lo = std::max(cfg.bounds.supply_temp_min, incumbent[k].supply_temp_c - t_span);
            boxes[k].t_hi = std::min(cfg.bounds.supply_temp_max, incumbent[k].supply_temp_c + t_span);
            boxes[k].f_lo = std::max(cfg.bounds.supply_flow_min, incumbent[k].supply_flow_m3s - f_span);
            boxes[k].f_hi = std::min(cfg.bounds.supply_flow_max, incumbent[k].supply_flow_m3s + f_span);
        }
    }

    MpcResult result;
    if (!have_incumbent) {
        // Constant max cooling keeps the plant as safe as the actuators allow.
        result.command = {cfg.bounds.supply_temp_min, cfg.bounds.supply_flow_max};
        result.fallback = true;
        RackState x = state;
        std::vector<double> gpus = gpu_temps;
        double energy = 0;
        for (int k = 0; k < Np; ++k) {
            HorizonEval ev = advance_step(x, gpus, result.command, powers_at(k), gpu_die_power_w,
                                          gpu_server, cfg, plant);
            energy += ev.energy_j;
            x = ev.state_after;
            gpus = ev.gpu_after;
        }
        result.horizon_cost_w = energy / (Np * cfg.step_s);
        return result;
    }
    result.command = incumbent[0];
    result.horizon_cost_w = incumbent_energy / (Np * cfg.step_s);
    return result;
}

// ---------------------------------------------------------------- PID

PidState PidState::from_config(const Config& cfg) {
    PidState p;
    p.kp = cfg.get_double("control.pid_kp", p.kp);
    p.ki = cfg.get_double("control.pid_ki", p.ki);
    p.kd = cfg.get_double("control.pid_kd", p.kd);
    p.setpoint_c = cfg.get_double("control.pid_setpoint", p.setpoint_c);
    p.baseline_supply_c = cfg.get_double("control.pid_baseline_supply", p.baseline_supply_c);
    p.fixed_flow_m3s = cfg.get_double("control.pid_flow", p.fixed_flow_m3s);
    return p;
}

CoolingCommand pid_step(double measured_return_c, PidState& pid, double dt,
                        const CoolingCommandBounds& bounds) {
    if (dt <= 0) throw ConfigError("pid_step: dt must be > 0");
    const double error = pid.setpoint_c - measured_return_c;
    pid.integral += error * dt;
    if (pid.ki > 0) {
        // anti-windup: the integral term never asks for more than the actuator has
        const double lo = (bounds.supply_temp_min - pid.baseline_supply_c) / pid.ki;
        const double hi = (bounds.supply_temp_max - pid.baseline_supply_c) / pid.ki;
        pid.integral = std::clamp(pid.integral, lo, hi);
    }
    const double derivative = (error - pid.prev_error) / dt;
    pid.prev_error = error;
    const double u = pid.kp * error + pid.ki * pid.integral + pid.kd * derivative;
    CoolingCommand cmd{pid.baseline_supply_c + u, pid.fixed_flow_m3s};
    return bounds.clamp(cmd);
}

// ---------------------------------------------------------------- DVFS

FrequencyChoice select_frequency(double job_tokens, double latency_limit_s, double gpu_temp_max_c,
                                 const ProfileTables& tables) {
    const auto& freqs = tables.frequencies();
    FrequencyChoice best;
    bool found = false;
    for (double f : freqs) { // ascending, so ties resolve to the lower frequency
        const DvfsMetrics m = tables.dvfs_metrics(f, job_tokens);
        if (m.latency_s > latency_limit_s + 1e-12) continue;
        if (m.temp_c > gpu_temp_max_c + 1e-12) continue;
        if (!found || m.power_w < best.power_w - 1e-12) {
            best = {f, m.power_w, m.latency_s, m.temp_c, true};
            found = true;
        }
    }
    if (found) return best;
    const double fmax = freqs.back();
    const DvfsMetrics m = tables.dvfs_metrics(fmax, job_tokens);
    return {fmax, m.power_w, m.latency_s, m.temp_c, false};
}

std::map<char, double> class_latency_limits(const ProfileTables& tables, double slack) {
    if (slack <= 0) throw ConfigError("class_latency_limits: slack must be > 0");
    const auto& buckets = tables.buckets(); // ascending token counts
    const double fmax = tables.frequencies().back();
    const char classes[3] = {'S', 'M', 'L'};
    std::map<char, double> limits;
    for (int i = 0; i < 3; ++i) {
        const double bucket = buckets[std::min<size_t>(i, buckets.size() - 1)];
        limits[classes[i]] = slack * tables.dvfs_metrics(fmax, bucket).latency_s;
    }
    return limits;
}

} // namespace rackctl
