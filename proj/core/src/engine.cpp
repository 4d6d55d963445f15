#include "rackctl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <queue>
#include <set>

#include <json.hpp>

#include "rackctl/csv.hpp"
#include "rackctl/errors.hpp"

namespace rackctl {

namespace {

bool is_multiple(double big, double small) {
    const double q = big / small;
    return std::abs(q - std::round(q)) < 1e-9;
}

// Running median with the classic two-heap construction.
class RunningMedian {
public:
    void add(double v) {
        if (lower_.empty() || v <= lower_.top())
            lower_.push(v);
        else
            upper_.push(v);
        if (lower_.size() > upper_.size() + 1) {
            upper_.push(lower_.top());
            lower_.pop();
        } else if (upper_.size() > lower_.size()) {
            lower_.push(upper_.top());
            upper_.pop();
        }
    }
    bool empty() const { return lower_.empty(); }
    double median() const {
        if (lower_.empty()) return 0;
        if (lower_.size() > upper_.size()) return lower_.top();
        return 0.5 * (lower_.top() + upper_.top());
    }

private:
    std::priority_queue<double> lower_; // max-heap
    std::priority_queue<double, std::vector<double>, std::greater<>> upper_;
};

struct PowerEvent {
    double time;
    int delta; // +1 job starts, -1 job completes
    double freq;
};

struct Pool {
    int id = 0;
    int mode = 0;
    int first_gpu = 0; // global GPU ids [first_gpu, first_gpu + mode)
    double capacity_tokens = 0;
    double assigned_tokens = 0;
    double die_util = 0;
    double busy_power_per_gpu_fmax = 0; // profiled pool power / GPUs at assigned load

    std::priority_queue<double, std::vector<double>, std::greater<>> inflight;
    std::vector<PowerEvent> events;
    std::size_t event_ptr = 0;
    int busy_count = 0;
    double freq_sum = 0;
};

// Piecewise-linear power scale vs frequency, anchored at the top frequency,
// taken from the middle token bucket of the frequency profiling table.
class FreqPowerScale {
public:
    explicit FreqPowerScale(const ProfileTables& tables) {
        const auto& freqs = tables.frequencies();
        const double bucket = tables.buckets()[tables.buckets().size() / 2];
        const double top = tables.dvfs_metrics(freqs.back(), bucket).power_w;
        for (double f : freqs)
            points_.emplace_back(f, tables.dvfs_metrics(f, bucket).power_w / top);
    }
    double at(double f) const {
        if (f <= points_.front().first) return points_.front().second;
        if (f >= points_.back().first) return points_.back().second;
        for (size_t i = 0; i + 1 < points_.size(); ++i)
            if (f >= points_[i].first && f <= points_[i + 1].first) {
                const double t = (f - points_[i].first) / (points_[i + 1].first - points_[i].first);
                return points_[i].second + t * (points_[i + 1].second - points_[i].second);
            }
        return 1.0;
    }

private:
    std::vector<std::pair<double, double>> points_;
};

} // namespace

void SimConfig::validate() const {
    if (horizon_s <= 0) throw ConfigError("engine: horizon must be > 0");
    if (thermal_sample_s <= 0 || plant_substep_s <= 0)
        throw ConfigError("engine: sampling periods must be > 0");
    if (!is_multiple(cooling_period_s, thermal_sample_s) ||
        !is_multiple(window_period_s, cooling_period_s) ||
        !is_multiple(cluster_period_s, window_period_s))
        throw ConfigError("engine: control periods must nest (cluster % window % cooling % thermal)");
    if (max_servers < 1 || min_servers < 1 || min_servers > max_servers)
        throw ConfigError("engine: need 1 <= min_servers <= max_servers");
    if (gpus_per_server < 1) throw ConfigError("engine: gpus_per_server must be >= 1");
    if (queue_slots_per_pool < 1) throw ConfigError("engine: queue_slots_per_pool must be >= 1");
    if (tokens_per_gpu_ref <= 0) throw ConfigError("engine: tokens_per_gpu_ref must be > 0");
}

SimConfig SimConfig::from_config(const Config& cfg) {
    SimConfig sc;
    sc.horizon_s = cfg.get_double("engine.horizon_s", sc.horizon_s);
    sc.seed = static_cast<uint64_t>(cfg.get_int("engine.seed", 1));

    const std::string compute = cfg.get_string("engine.compute_policy", "hierarchical");
    if (compute == "hierarchical")
        sc.compute = ComputePolicy::Hierarchical;
    else if (compute == "static_tp8_max_freq")
        sc.compute = ComputePolicy::StaticTp8MaxFreq;
    else
        throw ConfigError("engine.compute_policy: unknown policy '" + compute + "'");

    const std::string cooling = cfg.get_string("engine.cooling_policy", "mpc");
    if (cooling == "mpc")
        sc.cooling = CoolingPolicy::Mpc;
    else if (cooling == "pid")
        sc.cooling = CoolingPolicy::Pid;
    else if (cooling == "constant")
        sc.cooling = CoolingPolicy::Constant;
    else
        throw ConfigError("engine.cooling_policy: unknown policy '" + cooling + "'");

    sc.cluster_period_s = cfg.get_double("engine.cluster_period_s", sc.cluster_period_s);
    sc.window_period_s = cfg.get_double("engine.window_period_s", sc.window_period_s);
    sc.cooling_period_s = cfg.get_double("engine.cooling_period_s", sc.cooling_period_s);
    sc.thermal_sample_s = cfg.get_double("engine.thermal_sample_s", sc.thermal_sample_s);
    sc.plant_substep_s = cfg.get_double("engine.plant_substep_s", sc.plant_substep_s);

    sc.max_servers = static_cast<int>(cfg.get_int("engine.max_servers", sc.max_servers));
    sc.min_servers = static_cast<int>(cfg.get_int("engine.min_servers", sc.min_servers));
    sc.gpus_per_server = static_cast<int>(cfg.get_int("engine.gpus_per_server", sc.gpus_per_server));

    const std::string fk = cfg.get_string("engine.forecaster", "naive");
    if (fk == "naive")
        sc.forecaster = ForecastKind::Naive;
    else if (fk == "lstm")
        sc.forecaster = ForecastKind::Lstm;
    else
        throw ConfigError("engine.forecaster: unknown kind '" + fk + "'");
    sc.forecast_train.lookback = static_cast<int>(cfg.get_int("workload.lookback", 16));
    sc.forecast_train.hidden = static_cast<int>(cfg.get_int("workload.hidden", 24));
    sc.forecast_train.epochs = static_cast<int>(cfg.get_int("workload.epochs", 200));
    sc.forecast_train.learning_rate = cfg.get_double("workload.learning_rate", 0.05);
    sc.forecast_train.seed = sc.seed;
    sc.forecast_train_fraction = cfg.get_double("engine.forecast_train_fraction", 0.5);

    sc.queue_slots_per_pool =
        static_cast<int>(cfg.get_int("engine.queue_slots_per_pool", sc.queue_slots_per_pool));
    sc.dvfs_latency_slack = cfg.get_double("control.dvfs_latency_slack", sc.dvfs_latency_slack);
    sc.oracle_length_predictor = cfg.get_bool("engine.oracle_length_predictor", true);
    sc.allow_empty_mix = cfg.get_bool("control.allow_empty_mix", true);
    sc.fallback_on_infeasible_mix = cfg.get_bool("control.fallback_on_infeasible_mix", true);

    sc.supply_preset = cfg.get_string("thermo.supply_fraction_preset", "uniform");
    sc.thermo = ThermalCoefficients::from_config(cfg, static_cast<size_t>(sc.max_servers));
    sc.cooling_coeffs = CoolingPowerCoefficients::from_config(cfg);
    sc.gpu_power_coeffs = GpuPowerCoefficients::from_config(cfg);
    sc.gpu_thermal_coeffs = GpuThermalCoefficients::from_config(cfg);
    sc.mpc = MpcConfig::from_config(cfg);
    sc.pid = PidState::from_config(cfg);
    sc.constant_command.supply_temp_c = cfg.get_double("control.constant_supply_temp", 18.0);
    sc.constant_command.supply_flow_m3s = cfg.get_double("control.constant_supply_flow", 0.03);

    sc.ambient_temp_c = cfg.get_double("engine.ambient_temp_c", sc.ambient_temp_c);
    sc.initial_temp_c = cfg.get_double("engine.initial_temp_c", sc.initial_temp_c);
    sc.tokens_per_gpu_ref = cfg.get_double("engine.tokens_per_gpu_ref", sc.tokens_per_gpu_ref);

    if (cfg.has("gpu.tp_table_csv") || cfg.has("gpu.dvfs_table_csv")) {
        sc.tables = ProfileTables::from_csv(cfg.get_string("gpu.tp_table_csv"),
                                            cfg.get_string("gpu.dvfs_table_csv"));
    } else {
        sc.tables = ProfileTables::bundled();
    }
    sc.validate();
    return sc;
}

namespace {

struct EngineState {
    const SimConfig& cfg;
    RackState plant;
    std::vector<double> gpu_temp;   // all rack GPUs, active or not
    int n_active = 0;
    std::vector<Pool> pools;
    CoolingCommand command;
    PidState pid;
    double idle_gpu_power_w = 0;
    double freq_min = 0;

    explicit EngineState(const SimConfig& c) : cfg(c), pid(c.pid) {}
};

ThermalCoefficients coefficients_for(const SimConfig& cfg, int n_active) {
    ThermalCoefficients tc = cfg.thermo;
    tc.supply_fraction = cfg.supply_preset == "linear_decay"
                             ? ThermalCoefficients::linear_decay_fractions(n_active)
                             : ThermalCoefficients::uniform_fractions(n_active);
    return tc;
}

void resize_plant(EngineState& es, int new_n) {
    if (new_n == es.n_active) return;
    RackState next = RackState::uniform(new_n, es.command.supply_temp_c);
    const int keep = std::min(es.n_active, new_n);
    for (int i = 0; i < keep; ++i) {
        next.cold[i] = es.plant.cold[i];
        next.exhaust[i] = es.plant.exhaust[i];
        next.hot[i] = es.plant.hot[i];
    }
    es.plant = std::move(next);
    es.n_active = new_n;
}

// Pools are packed onto GPU slots in mode-descending order starting at the
// servers closest to the cooling unit.
std::vector<Pool> build_pools(const TpMix& mix, const SimConfig& cfg, const ProfileTables& tables) {
    std::vector<Pool> pools;
    int next_gpu = 0;
    int id = 0;
    std::vector<int> modes;
    for (const auto& [mode, count] : mix.pool_counts) modes.push_back(mode);
    std::sort(modes.rbegin(), modes.rend());
    for (int mode : modes) {
        const int count = mix.pool_counts.at(mode);
        for (int k = 0; k < count; ++k) {
            Pool p;
            p.id = id++;
            p.mode = mode;
            p.first_gpu = next_gpu;
            p.capacity_tokens = tables.window_capacity(mode, cfg.window_period_s);
            next_gpu += mode;
            pools.push_back(std::move(p));
        }
    }
    return pools;
}

TpMix forced_tp8_mix(int gpu_budget, const ProfileTables& tables) {
    TpMix mix;
    for (int m : tables.tp_modes()) mix.pool_counts[m] = 0;
    const int top = tables.tp_modes().back();
    mix.pool_counts[top] = gpu_budget / top;
    return mix;
}

// Fallback when the pool optimizer is infeasible: maximize window coverage
// under the budget, preferring thermally clean modes; serving keeps going and
// the report tallies the risk.
TpMix max_coverage_mix(double forecast_tokens, const TpMixOptions& opt, const ProfileTables& tables) {
    const auto& modes = tables.tp_modes();
    TpMix best;
    double best_cov = -1;
    bool best_clean = false;
    std::vector<int> counts(modes.size(), 0);
    std::function<void(size_t, int)> rec = [&](size_t mi, int gpus) {
        if (mi == modes.size()) {
            TpMix mix;
            double cov = 0;
            bool clean = true;
            for (size_t i = 0; i < modes.size(); ++i) {
                mix.pool_counts[modes[i]] = counts[i];
                cov += counts[i] * tables.window_capacity(modes[i], opt.window_s);
                if (counts[i] > 0 &&
                    tables.tp_metrics(modes[i], forecast_tokens).temp_c > opt.gpu_temp_max_c)
                    clean = false;
            }
            if (mix.total_pools() == 0) return;
            const bool better = (clean && !best_clean) ||
                                (clean == best_clean && cov > best_cov + 1e-9) ||
                                (clean == best_clean && std::abs(cov - best_cov) <= 1e-9 &&
                                 mix.total_gpus() < best.total_gpus());
            if (best_cov < 0 || better) {
                best = mix;
                best_cov = cov;
                best_clean = clean;
            }
            return;
        }
        for (int c = 0; c * modes[mi] + gpus <= opt.gpu_budget; ++c) {
            counts[mi] = c;
            rec(mi + 1, gpus + c * modes[mi]);
        }
        counts[mi] = 0;
    };
    rec(0, 0);
    return best;
}

} // namespace

SimReport run_simulation(const SimConfig& cfg) {
    cfg.validate();
    const ProfileTables& tables = cfg.tables;
    const int total_gpus = cfg.max_servers * cfg.gpus_per_server;
    const double horizon = cfg.horizon_s;

    SimReport report;
    report.horizon_s = horizon;
    report.seed = cfg.seed;
    report.total_gpus = total_gpus;
    report.compute_policy =
        cfg.compute == ComputePolicy::Hierarchical ? "hierarchical" : "static_tp8_max_freq";
    report.cooling_policy = cfg.cooling == CoolingPolicy::Mpc
                                ? "mpc"
                                : (cfg.cooling == CoolingPolicy::Pid ? "pid" : "constant");

    // Sorted arrivals within the horizon.
    std::vector<Job> jobs;
    jobs.reserve(cfg.jobs.size());
    for (const auto& j : cfg.jobs)
        if (j.arrival_s < horizon) jobs.push_back(j);
    std::stable_sort(jobs.begin(), jobs.end(),
                     [](const Job& a, const Job& b) { return a.arrival_s < b.arrival_s; });

    // Realized interval series for the two forecasters.
    const auto series30 = aggregate(jobs, cfg.cluster_period_s, horizon);
    const auto series5 = aggregate(jobs, cfg.window_period_s, horizon);

    ForecastModel model30 = ForecastModel::naive();
    ForecastModel model5 = ForecastModel::naive();
    if (cfg.forecaster == ForecastKind::Lstm) {
        auto train_slice = [&](const std::vector<IntervalLoad>& s) {
            const size_t n = static_cast<size_t>(std::floor(s.size() * cfg.forecast_train_fraction));
            return std::vector<IntervalLoad>(s.begin(), s.begin() + n);
        };
        auto slice30 = train_slice(series30);
        auto slice5 = train_slice(series5);
        if (static_cast<int>(slice30.size()) > cfg.forecast_train.lookback + 1)
            model30 = train_forecaster(slice30, cfg.forecast_train);
        if (static_cast<int>(slice5.size()) > cfg.forecast_train.lookback + 1)
            model5 = train_forecaster(slice5, cfg.forecast_train);
    }

    auto forecast_interval = [&](const ForecastModel& model, const std::vector<IntervalLoad>& series,
                                 long long idx) -> double {
        if (idx == 0) // cold start: no history yet, bootstrap from the realized interval
            return idx < static_cast<long long>(series.size()) ? series[idx].total() : 0.0;
        const int lookback = model.kind == ForecastKind::Lstm ? model.lookback : 1;
        if (idx < lookback) {
            // not enough history for the trained model; persistence
            return series[idx - 1].total();
        }
        std::vector<IntervalLoad> hist(series.begin(), series.begin() + idx);
        return forecast_next(model, hist);
    };

    EngineState es(cfg);
    es.command = CoolingCommand{(cfg.mpc.bounds.supply_temp_min + cfg.mpc.bounds.supply_temp_max) / 2,
                                (cfg.mpc.bounds.supply_flow_min + cfg.mpc.bounds.supply_flow_max) / 2};
    es.gpu_temp.assign(total_gpus, cfg.initial_temp_c);
    es.freq_min = tables.frequencies().front();
    es.idle_gpu_power_w = gpu_power(es.freq_min, 0.0, cfg.gpu_power_coeffs);
    resize_plant(es, cfg.min_servers);
    es.plant = RackState::uniform(es.n_active, cfg.initial_temp_c);

    const FreqPowerScale freq_scale(tables);
    const auto latency_limits = class_latency_limits(tables, cfg.dvfs_latency_slack);
    const double fmax = tables.frequencies().back();
    const double ref_capacity_30 =
        tables.window_capacity(tables.tp_modes().back(), cfg.cluster_period_s);

    RunningMedian median_by_band[3]; // context bands: <256, <1024, rest
    auto context_band = [](long long ctx) { return ctx < 256 ? 0 : (ctx < 1024 ? 1 : 2); };

    std::vector<Job> deferred;
    size_t job_cursor = 0;

    const long long ticks = static_cast<long long>(std::round(horizon / cfg.thermal_sample_s));
    const long long cooling_every = static_cast<long long>(std::round(cfg.cooling_period_s / cfg.thermal_sample_s));
    const long long window_every = static_cast<long long>(std::round(cfg.window_period_s / cfg.thermal_sample_s));
    const long long cluster_every = static_cast<long long>(std::round(cfg.cluster_period_s / cfg.thermal_sample_s));

    report.series.reserve(ticks + 1);
    report.jobs.reserve(jobs.size());

    // scratch buffers reused across ticks
    std::vector<double> server_power(cfg.max_servers, 0.0);
    std::vector<double> gpu_die_power(total_gpus, 0.0);

    auto pool_of_gpu = [&](int g) -> const Pool* {
        for (const auto& p : es.pools)
            if (g >= p.first_gpu && g < p.first_gpu + p.mode) return &p;
        return nullptr;
    };

    auto compute_powers = [&](double now) {
        // advance pool power events to `now`
        for (auto& p : es.pools) {
            while (p.event_ptr < p.events.size() && p.events[p.event_ptr].time <= now + 1e-9) {
                p.busy_count += p.events[p.event_ptr].delta;
                p.freq_sum += p.events[p.event_ptr].delta * p.events[p.event_ptr].freq;
                ++p.event_ptr;
            }
        }
        std::fill(server_power.begin(), server_power.end(), 0.0);
        const int active_gpus = es.n_active * cfg.gpus_per_server;
        for (int g = 0; g < total_gpus; ++g) {
            double electrical = 0, die = 0;
            if (g < active_gpus) {
                const Pool* p = pool_of_gpu(g);
                if (p && p->busy_count > 0) {
                    const double f_eff = p->freq_sum / p->busy_count;
                    electrical = p->busy_power_per_gpu_fmax * freq_scale.at(f_eff);
                    die = gpu_power(f_eff, p->die_util, cfg.gpu_power_coeffs);
                } else {
                    electrical = es.idle_gpu_power_w;
                    die = es.idle_gpu_power_w;
                }
                server_power[g / cfg.gpus_per_server] += electrical;
            }
            gpu_die_power[g] = die;
        }
    };

    auto step_gpu_temps = [&](double dt) {
        const int active_gpus = es.n_active * cfg.gpus_per_server;
        for (int g = 0; g < total_gpus; ++g) {
            const double cold =
                g < active_gpus ? es.plant.cold[g / cfg.gpus_per_server] : cfg.ambient_temp_c;
            GpuOperatingPoint pt;
            pt.temp_c = es.gpu_temp[g];
            es.gpu_temp[g] = gpu_temp_step(pt, cold, gpu_die_power[g], cfg.gpu_thermal_coeffs, dt);
        }
    };

    long long current_window = -1;
    for (long long tick = 0; tick <= ticks; ++tick) {
        const double now = tick * cfg.thermal_sample_s;
        const bool final_row = tick == ticks;

        // ---- control layers (skipped on the terminal bookkeeping row)
        if (!final_row && tick % cluster_every == 0) {
            const long long idx = tick / cluster_every;
            double forecast = forecast_interval(model30, series30, idx);
            int n;
            if (cfg.compute == ComputePolicy::Hierarchical) {
                n = size_cluster(forecast, ref_capacity_30, cfg.min_servers, cfg.max_servers).n_servers;
            } else {
                n = cfg.max_servers;
            }
            resize_plant(es, n);
            report.cluster_events.push_back({now, forecast, n});
        }
        if (!final_row && tick % window_every == 0) {
            const long long widx = tick / window_every;
            current_window = widx;
            double forecast = forecast_interval(model5, series5, widx);
            TpMixOptions opt;
            opt.gpu_budget = es.n_active * cfg.gpus_per_server;
            opt.cold_temp_c = es.plant.size() ? es.plant.cold[0] : cfg.ambient_temp_c;
            opt.gpu_temp_max_c = cfg.mpc.gpu_temp_max_c;
            opt.window_s = cfg.window_period_s;
            opt.allow_empty = cfg.allow_empty_mix;
            TpMix mix;
            bool fallback = false;
            if (cfg.compute == ComputePolicy::StaticTp8MaxFreq) {
                mix = forced_tp8_mix(opt.gpu_budget, tables);
            } else {
                try {
                    mix = select_tp_mix(forecast, opt, tables);
                } catch (const InfeasibleError&) {
                    if (!cfg.fallback_on_infeasible_mix) throw;
                    mix = max_coverage_mix(forecast, opt, tables);
                    fallback = true;
                }
            }

            // carry in-flight work into the new pools by index
            std::vector<std::priority_queue<double, std::vector<double>, std::greater<>>> carried;
            std::vector<std::vector<PowerEvent>> carried_events;
            for (auto& p : es.pools) {
                std::priority_queue<double, std::vector<double>, std::greater<>> open;
                std::vector<PowerEvent> ev;
                auto q = p.inflight;
                while (!q.empty()) {
                    if (q.top() > now) {
                        open.push(q.top());
                        ev.push_back({now, +1, fmax});
                        ev.push_back({q.top(), -1, fmax});
                    }
                    q.pop();
                }
                carried.push_back(std::move(open));
                carried_events.push_back(std::move(ev));
            }
            es.pools = build_pools(mix, cfg, tables);
            for (size_t i = 0; i < es.pools.size() && i < carried.size(); ++i) {
                es.pools[i].inflight = std::move(carried[i]);
                es.pools[i].events = std::move(carried_events[i]);
            }

            auto ev = WindowEvent{now, widx, forecast, 0, 0, 0, fallback};
            for (const auto& [mode, count] : mix.pool_counts) {
                if (mode == 2) ev.pools_tp2 = count;
                if (mode == 4) ev.pools_tp4 = count;
                if (mode == 8) ev.pools_tp8 = count;
            }
            report.window_events.push_back(ev);
            if (fallback) ++report.aggregates.mix_fallbacks;

            // ---- dispatch this window's arrivals (plus anything deferred)
            std::vector<Job> window_jobs = std::move(deferred);
            deferred.clear();
            const double w_end = now + cfg.window_period_s;
            while (job_cursor < jobs.size() && jobs[job_cursor].arrival_s < w_end)
                window_jobs.push_back(jobs[job_cursor++]);

            if (es.pools.empty()) {
                deferred = std::move(window_jobs);
            } else if (!window_jobs.empty()) {
                double window_tokens = 0;
                for (const auto& j : window_jobs) window_tokens += j.total_tokens();

                std::vector<PoolRef> refs;
                for (const auto& p : es.pools) refs.push_back({p.id, p.capacity_tokens});
                DispatchPlan plan = dispatch(refs, window_jobs.size());

                // per-pool assigned tokens decide utilization and busy power
                std::vector<double> assigned(es.pools.size(), 0.0);
                for (size_t j = 0; j < window_jobs.size(); ++j)
                    assigned[plan.assignment[j]] += window_jobs[j].total_tokens();
                for (auto& p : es.pools) {
                    p.assigned_tokens = assigned[p.id];
                    p.die_util = utilization_from_load(
                        std::min(p.assigned_tokens / p.mode, cfg.tokens_per_gpu_ref),
                        cfg.tokens_per_gpu_ref);
                    p.busy_power_per_gpu_fmax =
                        tables.tp_metrics(p.mode, p.assigned_tokens).power_w / p.mode;
                }

                for (size_t j = 0; j < window_jobs.size(); ++j) {
                    Job& job = window_jobs[j];
                    const long long predicted_gen =
                        cfg.oracle_length_predictor
                            ? job.generated_tokens
                            : static_cast<long long>(
                                  median_by_band[context_band(job.context_tokens)].median());
                    job.job_class = classify_job(job.context_tokens, predicted_gen);
                    median_by_band[context_band(job.context_tokens)].add(
                        static_cast<double>(job.generated_tokens));

                    const double planning_tokens =
                        static_cast<double>(job.context_tokens + predicted_gen);
                    const double limit = latency_limits.at(job_class_letter(job.job_class));
                    FrequencyChoice fc;
                    if (cfg.compute == ComputePolicy::StaticTp8MaxFreq) {
                        const DvfsMetrics m = tables.dvfs_metrics(fmax, planning_tokens);
                        fc = {fmax, m.power_w, m.latency_s, m.temp_c, true};
                    } else {
                        fc = select_frequency(planning_tokens, limit, cfg.mpc.gpu_temp_max_c, tables);
                    }

                    Pool& pool = es.pools[plan.assignment[j]];
                    double start = std::max(job.arrival_s, now);
                    if (static_cast<int>(pool.inflight.size()) >= cfg.queue_slots_per_pool) {
                        start = std::max(start, pool.inflight.top());
                        pool.inflight.pop();
                    }
                    const double completion = start + fc.latency_s;
                    pool.inflight.push(completion);
                    pool.events.push_back({start, +1, fc.freq_mhz});
                    pool.events.push_back({completion, -1, fc.freq_mhz});

                    JobRecord rec;
                    rec.arrival_s = job.arrival_s;
                    rec.job_class = job_class_letter(job.job_class);
                    rec.freq_mhz = fc.freq_mhz;
                    rec.queue_wait_s = start - job.arrival_s;
                    rec.service_s = fc.latency_s;
                    rec.latency_s = rec.queue_wait_s + rec.service_s;
                    rec.tokens = job.total_tokens();
                    rec.pool_id = pool.id;
                    rec.freq_fallback = !fc.feasible;
                    rec.slo_violated = !fc.feasible || rec.latency_s > limit + 1e-9;
                    report.jobs.push_back(rec);
                    if (rec.slo_violated) ++report.aggregates.slo_violations;
                    if (rec.freq_fallback) ++report.aggregates.freq_fallbacks;
                }
                for (auto& p : es.pools) {
                    std::stable_sort(p.events.begin(), p.events.end(),
                                     [](const PowerEvent& a, const PowerEvent& b) {
                                         if (a.time != b.time) return a.time < b.time;
                                         return a.delta < b.delta;
                                     });
                    p.event_ptr = 0;
                    p.busy_count = 0;
                    p.freq_sum = 0;
                }
            }
        }

        compute_powers(now);

        if (!final_row && tick % cooling_every == 0) {
            if (cfg.cooling == CoolingPolicy::Mpc) {
                const int active_gpus = es.n_active * cfg.gpus_per_server;
                std::vector<double> temps(es.gpu_temp.begin(), es.gpu_temp.begin() + active_gpus);
                std::vector<double> powers(gpu_die_power.begin(), gpu_die_power.begin() + active_gpus);
                std::vector<int> servers(active_gpus);
                for (int g = 0; g < active_gpus; ++g) servers[g] = g / cfg.gpus_per_server;
                std::vector<double> active_power(server_power.begin(),
                                                 server_power.begin() + es.n_active);
                PlantModel plant{coefficients_for(cfg, es.n_active), cfg.cooling_coeffs,
                                 cfg.gpu_thermal_coeffs};
                MpcResult mr = plan_cooling(es.plant, {active_power}, temps, powers, servers,
                                            cfg.mpc, plant);
                es.command = mr.command;
                if (mr.fallback) ++report.aggregates.cooling_fallbacks;
                report.cooling_events.push_back(
                    {now, mr.command.supply_temp_c, mr.command.supply_flow_m3s, mr.fallback});
            } else if (cfg.cooling == CoolingPolicy::Pid) {
                const double measured = return_temperature(es.plant);
                es.command = pid_step(measured, es.pid, cfg.cooling_period_s, cfg.mpc.bounds);
                report.cooling_events.push_back(
                    {now, es.command.supply_temp_c, es.command.supply_flow_m3s, false});
            } else {
                es.command = cfg.mpc.bounds.clamp(cfg.constant_command);
                report.cooling_events.push_back(
                    {now, es.command.supply_temp_c, es.command.supply_flow_m3s, false});
            }
        }

        // ---- record the tick
        const ThermalCoefficients tc = coefficients_for(cfg, es.n_active);
        const double ret = return_temperature(es.plant);
        const double q_load = thermal_load(es.plant, es.command, tc);
        const CoolingPowerBreakdown cp = cooling_power(q_load, es.command, cfg.cooling_coeffs);

        TickRow row;
        row.time_s = now;
        row.n_active = es.n_active;
        for (int s = 0; s < es.n_active; ++s) row.it_power_w += server_power[s];
        row.q_load_w = q_load;
        row.p_src_w = cp.source_w;
        row.p_fan_w = cp.fan_w;
        row.cooling_power_w = cp.total_w;
        row.return_temp_c = ret;
        row.supply_temp_c = es.command.supply_temp_c;
        row.supply_flow_m3s = es.command.supply_flow_m3s;
        double tsum = 0, tmax = -1e300;
        for (double t : es.gpu_temp) {
            tsum += t;
            tmax = std::max(tmax, t);
        }
        row.mean_gpu_temp_c = tsum / total_gpus;
        row.max_gpu_temp_c = tmax;
        report.series.push_back(row);

        for (int s = 0; s < es.n_active; ++s)
            report.zones.push_back({tick, s, es.plant.cold[s], es.plant.exhaust[s], es.plant.hot[s],
                                    ret, q_load, cp.source_w, cp.fan_w});

        report.aggregates.max_return_temp_c = std::max(report.aggregates.max_return_temp_c, ret);
        report.aggregates.max_gpu_temp_c = std::max(report.aggregates.max_gpu_temp_c, tmax);
        if (ret > cfg.mpc.return_temp_max_c + 1e-9 || tmax > cfg.mpc.gpu_temp_max_c + 1e-9)
            report.aggregates.safety_violated = true;

        if (final_row) break;

        // ---- advance the plant to the next sample
        es.plant = step_rack(es.plant, es.command,
                             std::vector<double>(server_power.begin(), server_power.begin() + es.n_active),
                             tc, cfg.thermal_sample_s, cfg.plant_substep_s);
        step_gpu_temps(cfg.thermal_sample_s);
    }

    // ---- aggregates
    auto& agg = report.aggregates;
    agg.computing_energy_wh_per_gpu = trapezoid_energy_wh(report.series, &TickRow::it_power_w) / total_gpus;
    agg.cooling_energy_wh_per_gpu = trapezoid_energy_wh(report.series, &TickRow::cooling_power_w) / total_gpus;
    double tmean = 0;
    for (const auto& r : report.series) tmean += r.mean_gpu_temp_c;
    agg.mean_gpu_temp_c = report.series.empty() ? 0 : tmean / report.series.size();
    double lat = 0;
    for (const auto& j : report.jobs) lat += j.latency_s;
    agg.jobs_completed = static_cast<long long>(report.jobs.size());
    agg.mean_latency_s = report.jobs.empty() ? 0 : lat / report.jobs.size();
    return report;
}

SimReport run_baseline(SimConfig cfg) {
    cfg.compute = ComputePolicy::StaticTp8MaxFreq;
    if (cfg.cooling == CoolingPolicy::Mpc) cfg.cooling = CoolingPolicy::Pid;
    return run_simulation(cfg);
}

ComparisonSummary compare(const SimReport& baseline, const SimReport& controlled) {
    if (std::abs(baseline.horizon_s - controlled.horizon_s) > 1e-9)
        throw DimensionError("compare: reports cover different horizons");
    ComparisonSummary s;
    auto rel = [](double base, double ctrl) { return base == 0 ? 0.0 : (base - ctrl) / base; };
    s.metrics.push_back({"computing_energy_wh_per_gpu", baseline.aggregates.computing_energy_wh_per_gpu,
                         controlled.aggregates.computing_energy_wh_per_gpu,
                         rel(baseline.aggregates.computing_energy_wh_per_gpu,
                             controlled.aggregates.computing_energy_wh_per_gpu)});
    s.metrics.push_back({"cooling_energy_wh_per_gpu", baseline.aggregates.cooling_energy_wh_per_gpu,
                         controlled.aggregates.cooling_energy_wh_per_gpu,
                         rel(baseline.aggregates.cooling_energy_wh_per_gpu,
                             controlled.aggregates.cooling_energy_wh_per_gpu)});
    s.metrics.push_back({"mean_gpu_temp_c", baseline.aggregates.mean_gpu_temp_c,
                         controlled.aggregates.mean_gpu_temp_c,
                         rel(baseline.aggregates.mean_gpu_temp_c, controlled.aggregates.mean_gpu_temp_c)});
    s.metrics.push_back({"mean_latency_s", baseline.aggregates.mean_latency_s,
                         controlled.aggregates.mean_latency_s,
                         controlled.aggregates.mean_latency_s - baseline.aggregates.mean_latency_s});
    return s;
}

double trapezoid_energy_wh(const std::vector<TickRow>& series, double TickRow::*column) {
    double joules = 0;
    for (size_t i = 0; i + 1 < series.size(); ++i) {
        const double dt = series[i + 1].time_s - series[i].time_s;
        joules += 0.5 * (series[i].*column + series[i + 1].*column) * dt;
    }
    return joules / 3600.0;
}

std::string aggregates_json(const SimReport& r) {
    nlohmann::ordered_json j;
    j["compute_policy"] = r.compute_policy;
    j["cooling_policy"] = r.cooling_policy;
    j["horizon_s"] = r.horizon_s;
    j["seed"] = r.seed;
    j["total_gpus"] = r.total_gpus;
    j["computing_energy_wh_per_gpu"] = r.aggregates.computing_energy_wh_per_gpu;
    j["cooling_energy_wh_per_gpu"] = r.aggregates.cooling_energy_wh_per_gpu;
    j["mean_gpu_temp_c"] = r.aggregates.mean_gpu_temp_c;
    j["max_gpu_temp_c"] = r.aggregates.max_gpu_temp_c;
    j["mean_latency_s"] = r.aggregates.mean_latency_s;
    j["max_return_temp_c"] = r.aggregates.max_return_temp_c;
    j["jobs_completed"] = r.aggregates.jobs_completed;
    j["slo_violations"] = r.aggregates.slo_violations;
    j["freq_fallbacks"] = r.aggregates.freq_fallbacks;
    j["mix_fallbacks"] = r.aggregates.mix_fallbacks;
    j["cooling_fallbacks"] = r.aggregates.cooling_fallbacks;
    j["safety_violated"] = r.aggregates.safety_violated;
    return j.dump(2) + "\n";
}

void write_report(const SimReport& r, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        std::ofstream out(dir + "/series.csv");
        out << "time_s,n_active,it_power_w,q_load_w,p_src_w,p_fan_w,cooling_power_w,"
               "theta_ret,theta_rcu,phi_rcu,mean_gpu_temp_c,max_gpu_temp_c\n";
        for (const auto& row : r.series)
            out << format_double(row.time_s) << "," << row.n_active << ","
                << format_double(row.it_power_w) << "," << format_double(row.q_load_w) << ","
                << format_double(row.p_src_w) << "," << format_double(row.p_fan_w) << ","
                << format_double(row.cooling_power_w) << "," << format_double(row.return_temp_c)
                << "," << format_double(row.supply_temp_c) << ","
                << format_double(row.supply_flow_m3s) << "," << format_double(row.mean_gpu_temp_c)
                << "," << format_double(row.max_gpu_temp_c) << "\n";
    }
    {
        std::ofstream out(dir + "/zones.csv");
        out << "step,server_index,theta_c,theta_s,theta_h,theta_ret,q_load,p_src,p_fan\n";
        for (const auto& z : r.zones)
            out << z.step << "," << z.server_index << "," << format_double(z.theta_c) << ","
                << format_double(z.theta_s) << "," << format_double(z.theta_h) << ","
                << format_double(z.theta_ret) << "," << format_double(z.q_load) << ","
                << format_double(z.p_src) << "," << format_double(z.p_fan) << "\n";
    }
    {
        std::ofstream out(dir + "/jobs.csv");
        out << "arrival_s,class,freq_mhz,queue_wait_s,service_s,latency_s,tokens,pool_id,"
               "slo_violated,freq_fallback\n";
        for (const auto& j : r.jobs)
            out << format_double(j.arrival_s) << "," << j.job_class << ","
                << format_double(j.freq_mhz) << "," << format_double(j.queue_wait_s) << ","
                << format_double(j.service_s) << "," << format_double(j.latency_s) << ","
                << j.tokens << "," << j.pool_id << "," << (j.slo_violated ? 1 : 0) << ","
                << (j.freq_fallback ? 1 : 0) << "\n";
    }
    {
        // one row per cooling decision, joined with the enclosing window mix
        std::ofstream out(dir + "/decisions.csv");
        out << "time_s,window,y_tp2,y_tp4,y_tp8,theta_rcu,phi_rcu,flags\n";
        size_t wi = 0;
        for (const auto& c : r.cooling_events) {
            while (wi + 1 < r.window_events.size() && r.window_events[wi + 1].time_s <= c.time_s + 1e-9)
                ++wi;
            const WindowEvent* w = wi < r.window_events.size() ? &r.window_events[wi] : nullptr;
            std::string flags;
            if (c.fallback) flags += "cooling_fallback";
            if (w && w->fallback) flags += std::string(flags.empty() ? "" : ";") + "mix_fallback";
            out << format_double(c.time_s) << "," << (w ? w->window : -1) << ","
                << (w ? w->pools_tp2 : 0) << "," << (w ? w->pools_tp4 : 0) << ","
                << (w ? w->pools_tp8 : 0) << "," << format_double(c.supply_temp_c) << ","
                << format_double(c.supply_flow_m3s) << "," << flags << "\n";
        }
    }
    {
        std::ofstream out(dir + "/aggregates.json");
        out << aggregates_json(r);
    }
}

} // namespace rackctl
