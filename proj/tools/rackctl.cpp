#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rackctl/config.hpp"
#include "rackctl/csv.hpp"
#include "rackctl/engine.hpp"
#include "rackctl/errors.hpp"
#include "rackctl/forecast.hpp"
#include "rackctl/gpu.hpp"
#include "rackctl/workload.hpp"

namespace fs = std::filesystem;
using namespace rackctl;

namespace {

constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 ok, 2 configuration/input error, 3 safety violation during a
// run, 4 infeasible optimization problem.
enum ExitCode { kOk = 0, kConfigError = 2, kSafetyViolation = 3, kInfeasible = 4 };

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    long long seed = -1; // -1: take the config value
    int sweep = 1;
};

Config load_config(const GlobalArgs& g) {
    Config cfg;
    if (!g.config_path.empty()) {
        if (!fs::exists(g.config_path))
            throw ConfigError("config file does not exist: " + g.config_path);
        cfg = Config::from_file(g.config_path);
    }
    if (g.seed >= 0) cfg.set("engine.seed", std::to_string(g.seed));
    return cfg;
}

std::string config_hash(const GlobalArgs& g) {
    if (g.config_path.empty()) return fnv1a_hex("");
    std::ifstream in(g.config_path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return fnv1a_hex(ss.str());
}

void write_manifest(const GlobalArgs& g, const std::string& command, const std::string& out_dir) {
    fs::create_directories(out_dir);
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config_path"] = g.config_path;
    j["config_hash"] = config_hash(g);
    j["tool_version"] = kVersion;
    j["out_dir"] = out_dir;
    std::ofstream out(out_dir + "/manifest.json");
    out << j.dump(2) << "\n";
}

std::vector<Job> resolve_jobs(const Config& cfg, const std::string& trace_path, uint64_t seed) {
    if (!trace_path.empty()) return parse_trace_file(trace_path).jobs;
    if (cfg.has("engine.trace_csv")) return parse_trace_file(cfg.get_string("engine.trace_csv")).jobs;
    // fall back to the synthetic generator configured in [workload]
    return synth_trace(DiurnalSpec::from_config(cfg), seed);
}

void print_summary(const SimReport& r) {
    std::printf("run summary (%s compute, %s cooling, %.0f s horizon, seed %llu)\n",
                r.compute_policy.c_str(), r.cooling_policy.c_str(), r.horizon_s,
                static_cast<unsigned long long>(r.seed));
    std::printf("  computing energy   %10.3f Wh/GPU\n", r.aggregates.computing_energy_wh_per_gpu);
    std::printf("  cooling energy     %10.3f Wh/GPU\n", r.aggregates.cooling_energy_wh_per_gpu);
    std::printf("  mean GPU temp      %10.2f degC (max %.2f)\n", r.aggregates.mean_gpu_temp_c,
                r.aggregates.max_gpu_temp_c);
    std::printf("  mean latency       %10.3f s over %lld jobs (%lld SLO violations)\n",
                r.aggregates.mean_latency_s, r.aggregates.jobs_completed,
                r.aggregates.slo_violations);
    std::printf("  max return temp    %10.2f degC\n", r.aggregates.max_return_temp_c);
    std::printf("  safety violated    %10s\n", r.aggregates.safety_violated ? "yes" : "no");
}

int finish_run(const SimReport& r, const GlobalArgs& g, const std::string& command,
               const std::string& out_dir) {
    if (!out_dir.empty()) {
        write_manifest(g, command, out_dir);
        write_report(r, out_dir);
    }
    print_summary(r);
    return r.aggregates.safety_violated ? kSafetyViolation : kOk;
}

int run_sweep(const SimConfig& base, const GlobalArgs& g, const std::string& command,
              bool baseline) {
    std::vector<SimReport> reports(g.sweep);
    std::vector<std::thread> threads;
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    for (int batch = 0; batch < g.sweep; batch += hw) {
        threads.clear();
        const int end = std::min<int>(g.sweep, batch + hw);
        for (int k = batch; k < end; ++k) {
            threads.emplace_back([&, k] {
                SimConfig cfg = base;
                cfg.seed = base.seed + k;
                cfg.forecast_train.seed = cfg.seed;
                reports[k] = baseline ? run_baseline(cfg) : run_simulation(cfg);
            });
        }
        for (auto& t : threads) t.join();
    }
    int rc = kOk;
    for (int k = 0; k < g.sweep; ++k) {
        const std::string dir = g.out_dir + "/sweep_" + std::to_string(base.seed + k);
        write_manifest(g, command, dir);
        write_report(reports[k], dir);
        std::printf("--- seed %llu ---\n", static_cast<unsigned long long>(reports[k].seed));
        print_summary(reports[k]);
        if (reports[k].aggregates.safety_violated) rc = kSafetyViolation;
    }
    return rc;
}

int cmd_simulate(const GlobalArgs& g, const std::string& trace_path, bool baseline) {
    Config cfg = load_config(g);
    SimConfig sim = SimConfig::from_config(cfg);
    sim.jobs = resolve_jobs(cfg, trace_path, sim.seed);
    const std::string command = baseline ? "baseline" : "simulate";
    if (g.sweep > 1) {
        if (g.out_dir.empty()) throw ConfigError("--sweep requires --out");
        return run_sweep(sim, g, command, baseline);
    }
    SimReport r = baseline ? run_baseline(sim) : run_simulation(sim);
    return finish_run(r, g, command, g.out_dir);
}

// Reads back the parts of a report the comparison needs.
struct LoadedReport {
    SimReport report;
};

LoadedReport load_report_dir(const std::string& dir) {
    const std::string agg_path = dir + "/aggregates.json";
    std::ifstream in(agg_path);
    if (!in) throw ConfigError("not a report directory (missing aggregates.json): " + dir);
    nlohmann::json j;
    in >> j;
    LoadedReport lr;
    SimReport& r = lr.report;
    r.compute_policy = j.at("compute_policy").get<std::string>();
    r.cooling_policy = j.at("cooling_policy").get<std::string>();
    r.horizon_s = j.at("horizon_s").get<double>();
    r.seed = j.at("seed").get<uint64_t>();
    r.total_gpus = j.at("total_gpus").get<int>();
    r.aggregates.computing_energy_wh_per_gpu = j.at("computing_energy_wh_per_gpu").get<double>();
    r.aggregates.cooling_energy_wh_per_gpu = j.at("cooling_energy_wh_per_gpu").get<double>();
    r.aggregates.mean_gpu_temp_c = j.at("mean_gpu_temp_c").get<double>();
    r.aggregates.max_gpu_temp_c = j.at("max_gpu_temp_c").get<double>();
    r.aggregates.mean_latency_s = j.at("mean_latency_s").get<double>();
    r.aggregates.max_return_temp_c = j.at("max_return_temp_c").get<double>();
    r.aggregates.jobs_completed = j.at("jobs_completed").get<long long>();
    r.aggregates.slo_violations = j.at("slo_violations").get<long long>();
    r.aggregates.safety_violated = j.at("safety_violated").get<bool>();

    auto series = read_csv_file(dir + "/series.csv");
    const int c_time = series.require_column("time_s", dir);
    const int c_it = series.require_column("it_power_w", dir);
    const int c_cool = series.require_column("cooling_power_w", dir);
    const int c_ret = series.require_column("theta_ret", dir);
    const int c_mgt = series.require_column("mean_gpu_temp_c", dir);
    for (const auto& row : series.rows) {
        TickRow t;
        t.time_s = std::stod(row[c_time]);
        t.it_power_w = std::stod(row[c_it]);
        t.cooling_power_w = std::stod(row[c_cool]);
        t.return_temp_c = std::stod(row[c_ret]);
        t.mean_gpu_temp_c = std::stod(row[c_mgt]);
        r.series.push_back(t);
    }
    return lr;
}

// Reference single-server hardware study results, printed for context next
// to simulated comparisons; simulated numbers are not expected to match.
struct HardwareRow {
    const char* metric;
    double baseline, controlled;
    const char* improvement;
};
constexpr HardwareRow kHardwareReference[] = {
    {"computing energy (Wh/GPU)", 54.8, 41.6, "24.2%"},
    {"cooling energy (Wh/GPU)", 291.0, 202.2, "31.2%"},
    {"mean GPU temperature (degC)", 50.1, 41.6, "17.0%"},
    {"mean latency (s)", 2.31, 2.28, "~0"},
};

int cmd_compare(const GlobalArgs& g, const std::string& dir_a, const std::string& dir_b) {
    auto a = load_report_dir(dir_a);
    auto b = load_report_dir(dir_b);
    ComparisonSummary s = compare(a.report, b.report);

    std::printf("%-32s %12s %12s %12s\n", "metric", "baseline", "controlled", "improvement");
    nlohmann::ordered_json out;
    out["baseline_dir"] = dir_a;
    out["controlled_dir"] = dir_b;
    nlohmann::ordered_json metrics = nlohmann::ordered_json::array();
    for (const auto& m : s.metrics) {
        const bool relative = m.metric != "mean_latency_s";
        if (relative)
            std::printf("%-32s %12.4f %12.4f %11.1f%%\n", m.metric.c_str(), m.baseline,
                        m.controlled, 100.0 * m.improvement);
        else
            std::printf("%-32s %12.4f %12.4f %+12.4f\n", m.metric.c_str(), m.baseline,
                        m.controlled, m.improvement);
        nlohmann::ordered_json jm;
        jm["metric"] = m.metric;
        jm["baseline"] = m.baseline;
        jm["controlled"] = m.controlled;
        jm[relative ? "relative_improvement" : "delta"] = m.improvement;
        metrics.push_back(jm);
    }
    out["metrics"] = metrics;
    out["note"] =
        "hardware_reference rows are single-server GPU measurements included for context; "
        "the published cooling improvement of 31.2% corresponds to 30.5% at full precision "
        "of the printed energies";

    std::printf("\nhardware reference (single 8-GPU server study, for context only):\n");
    nlohmann::ordered_json hw = nlohmann::ordered_json::array();
    for (const auto& row : kHardwareReference) {
        std::printf("%-32s %12.2f %12.2f %12s\n", row.metric, row.baseline, row.controlled,
                    row.improvement);
        nlohmann::ordered_json jr;
        jr["metric"] = row.metric;
        jr["baseline"] = row.baseline;
        jr["controlled"] = row.controlled;
        jr["improvement"] = row.improvement;
        hw.push_back(jr);
    }
    out["hardware_reference"] = hw;

    if (!g.out_dir.empty()) {
        write_manifest(g, "compare", g.out_dir);
        std::ofstream jf(g.out_dir + "/comparison.json");
        jf << out.dump(2) << "\n";
        // plot-ready panels: one CSV per quantity, baseline and controlled side by side
        const size_t rows = std::min(a.report.series.size(), b.report.series.size());
        struct Panel {
            const char* name;
            double TickRow::*col;
        } panels[] = {
            {"panel_gpu_temp.csv", &TickRow::mean_gpu_temp_c},
            {"panel_gpu_power.csv", &TickRow::it_power_w},
            {"panel_cooling_power.csv", &TickRow::cooling_power_w},
            {"panel_return_temp.csv", &TickRow::return_temp_c},
        };
        for (const auto& p : panels) {
            std::ofstream pf(g.out_dir + "/" + p.name);
            pf << "time_s,baseline,controlled\n";
            for (size_t i = 0; i < rows; ++i)
                pf << format_double(a.report.series[i].time_s) << ","
                   << format_double(a.report.series[i].*(p.col)) << ","
                   << format_double(b.report.series[i].*(p.col)) << "\n";
        }
        // latency panel from the two job logs when present
        std::ofstream lat(g.out_dir + "/panel_latency.csv");
        lat << "source,arrival_s,latency_s\n";
        for (const char* which : {"baseline", "controlled"}) {
            const std::string dir = which == std::string("baseline") ? dir_a : dir_b;
            std::ifstream jin(dir + "/jobs.csv");
            if (!jin) continue;
            auto jobs = read_csv(jin, dir + "/jobs.csv");
            const int c_arr = jobs.require_column("arrival_s", dir);
            const int c_lat = jobs.require_column("latency_s", dir);
            for (const auto& row : jobs.rows)
                lat << which << "," << row[c_arr] << "," << row[c_lat] << "\n";
        }
    }
    return kOk;
}

int cmd_fit(const GlobalArgs& g, const std::string& tp_csv, const std::string& dvfs_csv,
            const std::string& out_path) {
    Config cfg = load_config(g);
    ProfileTables tables = (!tp_csv.empty() || !dvfs_csv.empty())
                               ? ProfileTables::from_csv(tp_csv, dvfs_csv)
                               : ProfileTables::bundled();

    std::vector<PowerSample> samples;
    const double max_bucket = tables.buckets().back();
    for (const auto& r : tables.dvfs_rows())
        samples.push_back({r.freq_mhz, r.bucket_tokens / max_bucket, r.power_w});
    auto power_fit = fit_power_coeffs(samples);

    const double profile_cold = cfg.get_double("fit.profile_cold_temp_c", 22.0);
    const double cold_sensitivity = cfg.get_double("fit.cold_sensitivity", 0.35);
    const double time_constant = cfg.get_double("fit.time_constant_s", 60.0);
    const double tokens_ref = cfg.get_double("fit.tokens_per_gpu_ref", 97500.0);
    auto thermal_fit =
        fit_thermal_coeffs(tables, power_fit.coeffs, profile_cold, cold_sensitivity, time_constant,
                           tables.frequencies().back(), tokens_ref);

    std::ostringstream frag;
    char buf[64];
    frag << "# fitted coefficients (least squares on the profile tables)\n[gpu]\n";
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g", power_fit.coeffs.base_w,
                  power_fit.coeffs.per_util_w, power_fit.coeffs.per_mhz_w,
                  power_fit.coeffs.cross_w_per_mhz);
    frag << "power_coefficients = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g", thermal_fit.coeffs.cold_gain,
                  thermal_fit.coeffs.power_gain, thermal_fit.coeffs.offset,
                  thermal_fit.coeffs.decay);
    frag << "thermal_coefficients = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.6g", power_fit.rms_residual_w);
    frag << "power_fit_rms_w = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.6g", power_fit.max_abs_residual_w);
    frag << "power_fit_max_abs_w = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.6g", thermal_fit.rms_residual_c);
    frag << "thermal_fit_rms_c = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.6g", thermal_fit.max_abs_residual_c);
    frag << "thermal_fit_max_abs_c = " << buf << "\n";
    frag << "\n# per-pool token capacities derived from the profiled throughput ratios\n[capacity]\n";
    for (int m : tables.tp_modes()) {
        std::snprintf(buf, sizeof(buf), "%.12g", tables.window_capacity(m, 300.0));
        frag << "tp" << m << "_tokens_per_5min = " << buf << "\n";
        std::snprintf(buf, sizeof(buf), "%.12g", tables.window_capacity(m, 1800.0));
        frag << "tp" << m << "_tokens_per_30min = " << buf << "\n";
    }

    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw ConfigError("cannot write fit output: " + out_path);
        out << frag.str();
    }
    std::fputs(frag.str().c_str(), stdout);
    return kOk;
}

int cmd_forecast_eval(const GlobalArgs& g, const std::string& trace_path, double interval_s) {
    Config cfg = load_config(g);
    SimConfig sim = SimConfig::from_config(cfg);
    auto jobs = resolve_jobs(cfg, trace_path, sim.seed);
    auto series = aggregate(jobs, interval_s);

    TrainOptions opt = sim.forecast_train;
    opt.seed = sim.seed;
    if (static_cast<int>(series.size()) <= opt.lookback + 2)
        throw ConfigError("forecast-eval: trace too short for lookback " +
                          std::to_string(opt.lookback));

    const size_t split = series.size() * 3 / 4;
    std::vector<IntervalLoad> train(series.begin(), series.begin() + split);
    auto model = train_forecaster(train, opt);
    auto naive = ForecastModel::naive();

    double mae_l = 0, mae_n = 0, mape_l = 0, mape_n = 0;
    int count = 0;
    for (size_t t = std::max<size_t>(split, opt.lookback); t + 1 < series.size(); ++t) {
        std::vector<IntervalLoad> hist(series.begin(), series.begin() + t + 1);
        const double truth = series[t + 1].total();
        const double pl = forecast_next(model, hist);
        const double pn = forecast_next(naive, hist);
        mae_l += std::abs(pl - truth);
        mae_n += std::abs(pn - truth);
        if (truth > 0) {
            mape_l += std::abs(pl - truth) / truth;
            mape_n += std::abs(pn - truth) / truth;
        }
        ++count;
    }
    if (count == 0) throw ConfigError("forecast-eval: no held-out intervals to score");
    nlohmann::ordered_json j;
    j["intervals"] = series.size();
    j["interval_s"] = interval_s;
    j["held_out"] = count;
    j["lookback"] = opt.lookback;
    j["hidden"] = opt.hidden;
    j["epochs"] = opt.epochs;
    j["seed"] = sim.seed;
    j["lstm"] = {{"mae", mae_l / count}, {"mape", count ? mape_l / count : 0}};
    j["naive"] = {{"mae", mae_n / count}, {"mape", count ? mape_n / count : 0}};
    j["final_train_loss"] = model.train_loss.empty() ? 0.0 : model.train_loss.back();
    j["final_validation_loss"] =
        model.validation_loss.empty() ? 0.0 : model.validation_loss.back();
    const std::string text = j.dump(2) + "\n";
    std::fputs(text.c_str(), stdout);
    if (!g.out_dir.empty()) {
        write_manifest(g, "forecast-eval", g.out_dir);
        std::ofstream out(g.out_dir + "/forecast_eval.json");
        out << text;
    }
    return kOk;
}

int cmd_synth(const GlobalArgs& g, const std::string& out_path) {
    Config cfg = load_config(g);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("engine.seed", 1));
    auto jobs = synth_trace(DiurnalSpec::from_config(cfg), seed);
    std::ofstream out(out_path);
    if (!out) throw ConfigError("cannot write trace: " + out_path);
    write_trace_csv(out, jobs);
    std::printf("wrote %zu jobs to %s\n", jobs.size(), out_path.c_str());
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"air-cooled GPU rack serving simulator with hierarchical cooling/compute control"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "run configuration file");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--seed", g.seed, "override the configured seed");
    app.add_option("--sweep", g.sweep, "run this many seeds (seed..seed+n-1)")->check(CLI::PositiveNumber);

    std::string trace_path, dir_a, dir_b, tp_csv, dvfs_csv, fit_out, synth_out;
    double interval_s = 1800;

    auto* simulate = app.add_subcommand("simulate", "run the hierarchical controller");
    simulate->add_option("--trace", trace_path, "trace CSV (timestamp,context_tokens,generated_tokens)");

    auto* baseline = app.add_subcommand("baseline", "run the static TP8 / fixed-frequency baseline");
    baseline->add_option("--trace", trace_path, "trace CSV");

    auto* comp = app.add_subcommand("compare", "compare two report directories");
    comp->add_option("baseline_dir", dir_a, "baseline report directory")->required();
    comp->add_option("controlled_dir", dir_b, "controlled report directory")->required();

    auto* fit = app.add_subcommand("fit", "fit model coefficients from profile tables");
    fit->add_option("--tp", tp_csv, "tensor-parallel profile CSV");
    fit->add_option("--dvfs", dvfs_csv, "frequency profile CSV");
    fit->add_option("--write", fit_out, "write the config fragment here");

    auto* feval = app.add_subcommand("forecast-eval", "score naive vs lstm forecasters on a trace");
    feval->add_option("--trace", trace_path, "trace CSV");
    feval->add_option("--interval", interval_s, "aggregation interval in seconds");

    auto* synth = app.add_subcommand("synth", "generate a synthetic diurnal trace");
    synth->add_option("--write", synth_out, "output trace CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(g, trace_path, false);
        if (baseline->parsed()) return cmd_simulate(g, trace_path, true);
        if (comp->parsed()) return cmd_compare(g, dir_a, dir_b);
        if (fit->parsed()) return cmd_fit(g, tp_csv, dvfs_csv, fit_out);
        if (feval->parsed()) return cmd_forecast_eval(g, trace_path, interval_s);
        if (synth->parsed()) return cmd_synth(g, synth_out);
    } catch (const InfeasibleError& e) {
        std::fprintf(stderr, "infeasible: %s\n", e.what());
        return kInfeasible;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigError;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return kConfigError;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return kOk;
}
