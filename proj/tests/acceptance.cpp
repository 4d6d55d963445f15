// Acceptance suite: runs every release criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exit status is nonzero when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rackctl/config.hpp"
#include "rackctl/control.hpp"
#include "rackctl/engine.hpp"
#include "rackctl/errors.hpp"
#include "rackctl/forecast.hpp"
#include "rackctl/gpu.hpp"
#include "rackctl/thermo.hpp"
#include "rackctl/workload.hpp"

using namespace rackctl;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::string name;
    std::function<bool(std::string&)> run;
};

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string source_dir() {
#ifdef RACKCTL_SOURCE_DIR
    return RACKCTL_SOURCE_DIR;
#else
    return ".";
#endif
}

SimConfig reference_sim_config() {
    Config cfg = Config::from_file(source_dir() + "/data/configs/reference.conf");
    SimConfig sim = SimConfig::from_config(cfg);
    sim.jobs = synth_trace(DiurnalSpec::from_config(cfg), sim.seed);
    return sim;
}

// Shared 24 h reference runs, produced once and reused across criteria.
struct ReferenceRuns {
    SimReport controlled; // hierarchical + MPC
    SimReport baseline;   // static TP8 at max frequency + PID
    SimReport hier_pid;   // hierarchical compute, PID cooling
    double controlled_runtime_s = 0;
};

ReferenceRuns& reference_runs() {
    static ReferenceRuns runs = [] {
        ReferenceRuns r;
        SimConfig sim = reference_sim_config();
        const double t0 = now_s();
        r.controlled = run_simulation(sim);
        r.controlled_runtime_s = now_s() - t0;
        r.baseline = run_baseline(sim);
        SimConfig pid_cfg = sim;
        pid_cfg.cooling = CoolingPolicy::Pid;
        r.hier_pid = run_simulation(pid_cfg);
        return r;
    }();
    return runs;
}

// Brute-force references reimplemented from the tables for the exactness
// criteria (independent of the production search code).
struct BruteMix {
    bool feasible = false;
    std::map<int, int> counts;
    double cost = 0;
    int gpus = 0;
};

BruteMix brute_mix(double demand, int budget, double temp_cap, const ProfileTables& t) {
    BruteMix best;
    const auto modes = t.tp_modes();
    std::vector<int> limit, c(modes.size(), 0);
    for (int m : modes) limit.push_back(budget / m);
    while (true) {
        int gpus = 0, pools = 0;
        for (size_t i = 0; i < modes.size(); ++i) {
            gpus += c[i] * modes[i];
            pools += c[i];
        }
        if (pools > 0 && gpus <= budget) {
            double coverage = 0;
            bool ok = true;
            for (size_t i = 0; i < modes.size(); ++i) {
                coverage += c[i] * t.window_capacity(modes[i], 300.0);
                if (c[i] > 0 && t.tp_metrics(modes[i], demand).temp_c > temp_cap + 1e-12) ok = false;
            }
            if (ok && coverage + 1e-9 >= demand) {
                double cost = 0;
                for (size_t i = 0; i < modes.size(); ++i)
                    cost += c[i] * t.tp_metrics(modes[i], demand / pools).power_w;
                bool better = !best.feasible || cost < best.cost ||
                              (cost == best.cost && gpus < best.gpus);
                if (!better && cost == best.cost && gpus == best.gpus) {
                    for (size_t i = 0; i < modes.size(); ++i) {
                        int a = c[i], b = best.counts.at(modes[i]);
                        if (a != b) {
                            better = a > b;
                            break;
                        }
                    }
                }
                if (better) {
                    best.feasible = true;
                    best.cost = cost;
                    best.gpus = gpus;
                    best.counts.clear();
                    for (size_t i = 0; i < modes.size(); ++i) best.counts[modes[i]] = c[i];
                }
            }
        }
        size_t i = 0;
        while (i < modes.size()) {
            if (++c[i] <= limit[i]) break;
            c[i] = 0;
            ++i;
        }
        if (i == modes.size()) break;
    }
    return best;
}

bool criterion_solver_exactness(std::string& detail) {
    const double t0 = now_s();
    auto tables = ProfileTables::bundled();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> demand_dist(1000.0, 1050000.0);
    const int budgets[3] = {4, 8, 16};

    int milp_checked = 0, trial = 0;
    while (milp_checked < 200) {
        ++trial;
        if (trial > 20000) {
            detail = "could not generate 200 feasible instances";
            return false;
        }
        TpMixOptions opt;
        opt.gpu_budget = budgets[trial % 3];
        opt.gpu_temp_max_c = 46.0 + (trial % 10);
        const double d = demand_dist(rng);
        BruteMix ref = brute_mix(d, opt.gpu_budget, opt.gpu_temp_max_c, tables);
        if (!ref.feasible) continue;
        TpMix got = select_tp_mix(d, opt, tables);
        const double got_cost = tp_mix_cost(got, d, tables);
        if (std::abs(got_cost - ref.cost) > 0 || got.pool_counts != ref.counts) {
            detail = "pool program mismatch at demand " + std::to_string(d);
            return false;
        }
        ++milp_checked;
    }

    std::uniform_real_distribution<double> tok(1.0, 4000.0), lat(3.3, 4.4), cap(39.0, 56.0);
    for (int i = 0; i < 1000; ++i) {
        const double n = tok(rng), L = lat(rng), T = cap(rng);
        auto got = select_frequency(n, L, T, tables);
        double best_f = -1, best_p = 1e300;
        for (double f : tables.frequencies()) {
            auto m = tables.dvfs_metrics(f, n);
            if (m.latency_s <= L + 1e-12 && m.temp_c <= T + 1e-12 && m.power_w < best_p - 1e-12) {
                best_p = m.power_w;
                best_f = f;
            }
        }
        if (best_f < 0 ? (got.feasible || got.freq_mhz != tables.frequencies().back())
                       : (!got.feasible || got.freq_mhz != best_f)) {
            detail = "frequency selection mismatch";
            return false;
        }
    }
    const double elapsed = now_s() - t0;
    std::ostringstream os;
    os << "200 pool instances + 1000 frequency instances exact in " << elapsed << " s";
    detail = os.str();
    return elapsed < 5.0;
}

bool criterion_dvfs_case(std::string& detail) {
    auto tables = ProfileTables::bundled();
    auto fc = select_frequency(3047, 3.8, 50.0, tables);
    detail = "selected " + std::to_string(fc.freq_mhz) + " MHz at " + std::to_string(fc.power_w) + " W";
    return fc.feasible && fc.freq_mhz == 1400.0 && fc.power_w == 204.46;
}

bool criterion_tp_case(std::string& detail) {
    auto tables = ProfileTables::bundled();
    TpMixOptions opt;
    opt.gpu_budget = 8;
    opt.gpu_temp_max_c = 50.0;
    auto mix = select_tp_mix(150000, opt, tables);
    const double cost = tp_mix_cost(mix, 150000, tables);
    detail = "tp4 pools = " + std::to_string(mix.pool_counts.at(4)) + ", cost " + std::to_string(cost);
    return mix.pool_counts.at(4) == 1 && mix.pool_counts.at(2) == 0 && mix.pool_counts.at(8) == 0 &&
           cost == 289.0;
}

bool criterion_thermal_plant(std::string& detail) {
    // (a) uniform zero-power equilibrium
    ThermalCoefficients c;
    c.supply_fraction = ThermalCoefficients::uniform_fractions(4);
    CoolingCommand cmd{21.0, 0.02};
    auto flows = derive_flows(c, cmd, c.fan_flows(cmd));
    RackState eq = RackState::uniform(4, 21.0);
    RackState d = rack_derivatives(eq, cmd, flows, {0, 0, 0, 0}, c);
    double norm = 0;
    for (size_t i = 0; i < 4; ++i)
        norm += d.cold[i] * d.cold[i] + d.exhaust[i] * d.exhaust[i] + d.hot[i] * d.hot[i];
    norm = std::sqrt(norm);
    if (norm >= 1e-9) {
        detail = "equilibrium derivative norm " + std::to_string(norm);
        return false;
    }

    // (b) RK4 vs fine Euler on 50 random states, drawn in the slow-transient
    // regime where the first-order oracle itself is accurate below the bound
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> base_t(20.0, 45.0), pw(0.0, 5.0), jit(-0.15, 0.15);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const size_t n = 2 + rng() % 3;
        ThermalCoefficients ct;
        ct.supply_fraction = ThermalCoefficients::uniform_fractions(n);
        ct.leakage_flow = (trial % 2) ? 0.0004 : 0.0;
        ct.cold_volume = ct.hot_volume = 1.0;
        const double base = base_t(rng);
        RackState s;
        for (size_t i = 0; i < n; ++i) {
            s.cold.push_back(base + jit(rng));
            s.exhaust.push_back(base + jit(rng));
            s.hot.push_back(base + jit(rng));
        }
        std::vector<double> powers(n);
        for (auto& p : powers) p = pw(rng);
        CoolingCommand cc{base, 0.011};
        RackState rk = step_rack(s, cc, powers, ct, 30.0);
        // independent explicit Euler at 1 ms
        RackState eu = s;
        auto f = derive_flows(ct, cc, ct.fan_flows(cc));
        for (int k = 0; k < 30000; ++k) {
            RackState dd = rack_derivatives(eu, cc, f, powers, ct);
            for (size_t i = 0; i < n; ++i) {
                eu.cold[i] += 0.001 * dd.cold[i];
                eu.exhaust[i] += 0.001 * dd.exhaust[i];
                eu.hot[i] += 0.001 * dd.hot[i];
            }
        }
        for (size_t i = 0; i < n; ++i) {
            worst = std::max({worst, std::abs(rk.cold[i] - eu.cold[i]),
                              std::abs(rk.exhaust[i] - eu.exhaust[i]),
                              std::abs(rk.hot[i] - eu.hot[i])});
        }
    }
    if (worst >= 1e-6) {
        detail = "integrator disagreement " + std::to_string(worst);
        return false;
    }

    // (c) steady-state heat balance within 2%
    ThermalCoefficients cs;
    cs.supply_fraction = ThermalCoefficients::uniform_fractions(3);
    cs.leakage_flow = 0.0003;
    CoolingCommand cmd2{19.0, 0.024};
    std::vector<double> powers{445.0, 455.0, 450.0};
    RackState s = RackState::uniform(3, 19.0);
    for (int k = 0; k < 800; ++k) s = step_rack(s, cmd2, powers, cs, 30.0);
    const double q = thermal_load(s, cmd2, cs);
    const double total = 445.0 + 455.0 + 450.0;
    std::ostringstream os;
    os << "equilibrium norm " << norm << ", max integrator gap " << worst << ", steady q_load "
       << q << " W vs IT " << total << " W";
    detail = os.str();
    return std::abs(q - total) / total < 0.02;
}

bool criterion_dispatch(std::string& detail) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> cap(0.5, 400.0);
    for (int trial = 0; trial < 500; ++trial) {
        const size_t n = 1 + rng() % 8;
        const size_t jobs = rng() % 60;
        std::vector<PoolRef> pools;
        for (size_t i = 0; i < n; ++i) pools.push_back({static_cast<int>(i), cap(rng)});
        auto plan = dispatch(pools, jobs);
        int total = 0;
        for (size_t i = 0; i < n; ++i) {
            total += plan.quotas[i];
            if (std::abs(plan.quotas[i] - plan.shares[i] * static_cast<double>(jobs)) > 1.0 + 1e-9) {
                detail = "quota drift on trial " + std::to_string(trial);
                return false;
            }
        }
        if (total != static_cast<int>(jobs)) {
            detail = "quotas do not sum to the job count";
            return false;
        }
        auto replay = dispatch(pools, jobs);
        if (replay.schedule != plan.schedule) {
            detail = "replay differed on trial " + std::to_string(trial);
            return false;
        }
    }
    detail = "500 randomized instances exact and replayable";
    return true;
}

bool criterion_forecaster(std::string& detail) {
    // (a) gradient check on 20 random small networks
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> input(-1.0, 1.0);
    double worst_rel = 0;
    for (int net = 0; net < 20; ++net) {
        std::vector<IntervalLoad> warm(12);
        std::uniform_real_distribution<double> tok(50.0, 950.0);
        for (auto& iv : warm) {
            iv.context_tokens = tok(rng);
            iv.generated_tokens = tok(rng);
        }
        TrainOptions opt;
        opt.lookback = 3;
        opt.hidden = 3 + net % 3;
        opt.epochs = 0;
        opt.seed = 1000 + net;
        ForecastModel m = train_forecaster(warm, opt);
        std::vector<double> window(3 * ForecastModel::input_dim);
        for (auto& v : window) v = input(rng);
        const double target = input(rng);
        std::vector<double> grads(m.parameter_count(), 0.0);
        lstm_window_loss(m, window, target, &grads);
        auto params = pack_parameters(m);
        const double h = 1e-5;
        for (size_t k = 0; k < params.size(); ++k) {
            auto p1 = params, p2 = params;
            p1[k] += h;
            p2[k] -= h;
            ForecastModel ma = m, mb = m;
            unpack_parameters(ma, p1);
            unpack_parameters(mb, p2);
            const double fd = (lstm_window_loss(ma, window, target, nullptr) -
                               lstm_window_loss(mb, window, target, nullptr)) /
                              (2 * h);
            const double rel =
                std::abs(grads[k] - fd) / std::max({std::abs(grads[k]), std::abs(fd), 1e-6});
            worst_rel = std::max(worst_rel, rel);
        }
    }
    if (worst_rel > 1e-4) {
        detail = "worst gradient relative error " + std::to_string(worst_rel);
        return false;
    }

    // (b) sinusoid: trained model beats persistence by at least 30%
    std::vector<IntervalLoad> series(360);
    for (int i = 0; i < 360; ++i) {
        const double v = 1000.0 + 600.0 * std::sin(2 * M_PI * i / 48.0);
        series[i].context_tokens = 0.6 * v;
        series[i].generated_tokens = 0.4 * v;
    }
    TrainOptions opt;
    opt.lookback = 16;
    opt.hidden = 16;
    opt.epochs = 300;
    opt.learning_rate = 0.08;
    opt.seed = 5;
    auto model = train_forecaster(series, opt);
    auto naive = ForecastModel::naive();
    double mae_l = 0, mae_n = 0;
    int count = 0;
    for (size_t t = series.size() * 3 / 4; t + 1 < series.size(); ++t) {
        std::vector<IntervalLoad> hist(series.begin(), series.begin() + t + 1);
        const double truth = series[t + 1].total();
        mae_l += std::abs(forecast_next(model, hist) - truth);
        mae_n += std::abs(forecast_next(naive, hist) - truth);
        ++count;
    }
    mae_l /= count;
    mae_n /= count;
    std::ostringstream os;
    os << "worst gradient error " << worst_rel << "; sinusoid MAE " << mae_l << " vs naive "
       << mae_n << " (" << 100.0 * (1.0 - mae_l / mae_n) << "% better)";
    detail = os.str();
    return mae_l <= 0.70 * mae_n;
}

bool criterion_safety(std::string& detail) {
    auto& runs = reference_runs();
    const auto& agg = runs.controlled.aggregates;
    std::ostringstream os;
    os << "max return temp " << agg.max_return_temp_c << " degC, max GPU temp "
       << agg.max_gpu_temp_c << " degC, runtime " << runs.controlled_runtime_s << " s";
    detail = os.str();
    return !agg.safety_violated && agg.max_return_temp_c <= 70.0 && agg.max_gpu_temp_c <= 50.0 &&
           runs.controlled_runtime_s < 60.0;
}

bool criterion_policy_comparison(std::string& detail) {
    auto& runs = reference_runs();
    const auto& base = runs.baseline.aggregates;
    const auto& ctrl = runs.controlled.aggregates;
    const double compute_red =
        (base.computing_energy_wh_per_gpu - ctrl.computing_energy_wh_per_gpu) /
        base.computing_energy_wh_per_gpu;
    const double cooling_red = (base.cooling_energy_wh_per_gpu - ctrl.cooling_energy_wh_per_gpu) /
                               base.cooling_energy_wh_per_gpu;
    const double temp_drop = base.mean_gpu_temp_c - ctrl.mean_gpu_temp_c;
    const double lat_rel = base.mean_latency_s > 0
                               ? (ctrl.mean_latency_s - base.mean_latency_s) / base.mean_latency_s
                               : 0.0;
    std::ostringstream os;
    os << "computing -" << 100 * compute_red << "%, cooling -" << 100 * cooling_red
       << "%, mean GPU temp -" << temp_drop << " degC, latency " << 100 * lat_rel << "%"
       << " | hardware study (context, not a target): computing -24.2%, cooling -31.2%,"
       << " temperature -17.0%, latency ~0";
    detail = os.str();
    return compute_red >= 0.10 && cooling_red >= 0.10 && temp_drop >= 5.0 && lat_rel <= 0.05;
}

bool criterion_mpc_vs_pid(std::string& detail) {
    auto& runs = reference_runs();
    const double mpc = runs.controlled.aggregates.cooling_energy_wh_per_gpu;
    const double pid = runs.hier_pid.aggregates.cooling_energy_wh_per_gpu;
    std::ostringstream os;
    os << "MPC cooling " << mpc << " Wh/GPU vs PID " << pid << " Wh/GPU (ratio " << mpc / pid
       << ")";
    detail = os.str();
    return mpc <= 0.85 * pid;
}

bool criterion_determinism(std::string& detail) {
#ifndef RACKCTL_BIN
    detail = "CLI binary path not wired into the build";
    return false;
#else
    const fs::path tmp = fs::temp_directory_path() / "rackctl_acceptance_det";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    // a shortened copy of the reference scenario keeps this check quick
    std::ifstream ref(source_dir() + "/data/configs/reference.conf");
    std::stringstream text;
    text << ref.rdbuf();
    text << "\n[engine]\nhorizon_s = 7200\n\n[workload]\nduration_s = 7200\n";
    const std::string cfg_path = (tmp / "short.conf").string();
    std::ofstream(cfg_path) << text.str();

    for (int run = 0; run < 2; ++run) {
        const std::string cmd = std::string(RACKCTL_BIN) + " --config " + cfg_path + " --out " +
                                (tmp / ("run" + std::to_string(run))).string() +
                                " simulate > /dev/null 2>&1";
        const int rc = std::system(cmd.c_str());
        if (rc != 0) {
            detail = "simulate exited with " + std::to_string(rc);
            return false;
        }
    }
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const std::string a = slurp(tmp / "run0" / "aggregates.json");
    const std::string b = slurp(tmp / "run1" / "aggregates.json");
    detail = a == b ? "two CLI runs produced byte-identical aggregates"
                    : "aggregate JSON differs between identical runs";
    return !a.empty() && a == b;
#endif
}

} // namespace

int main() {
    std::vector<Criterion> criteria = {
        {"1 solver exactness (pool program + frequency selection)", criterion_solver_exactness},
        {"2 frequency selection worked case (3047 tokens, 3.8 s, 50 degC)", criterion_dvfs_case},
        {"3 pool selection worked case (150k tokens, budget 8)", criterion_tp_case},
        {"4 thermal plant (equilibrium, integrator oracle, heat balance)", criterion_thermal_plant},
        {"5 dispatch quotas and determinism (500 instances)", criterion_dispatch},
        {"6 forecaster gradients and sinusoid skill", criterion_forecaster},
        {"7 closed-loop thermal safety on the 24 h reference scenario", criterion_safety},
        {"8 policy comparison vs static baseline", criterion_policy_comparison},
        {"9 MPC vs PID cooling energy", criterion_mpc_vs_pid},
        {"10 byte-identical reruns of the CLI", criterion_determinism},
    };

    int failures = 0;
    for (auto& c : criteria) {
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("%s criterion %s%s%s\n", ok ? "PASS" : "FAIL", c.name.c_str(),
                    detail.empty() ? "" : " — ", detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
