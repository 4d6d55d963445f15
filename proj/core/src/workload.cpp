#include "rackctl/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "rackctl/csv.hpp"
#include "rackctl/errors.hpp"

namespace rackctl {

char job_class_letter(JobClass c) {
    switch (c) {
        case JobClass::Short: return 'S';
        case JobClass::Medium: return 'M';
        case JobClass::Long: return 'L';
        default: return '?';
    }
}

namespace {

// days since 1970-01-01 from a civil date (Howard Hinnant's algorithm)
long long days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const long long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long long>(doe) - 719468;
}

bool parse_timestamp(const std::string& s, double& out) {
    // ISO-8601 first: YYYY-MM-DDTHH:MM:SS[.fff][Z]
    int y, mo, d, h, mi;
    double sec;
    char tail[8] = {0};
    int n = std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%lf%7s", &y, &mo, &d, &h, &mi, &sec, tail);
    if (n >= 6) {
        if (n == 7 && std::string(tail) != "Z") return false;
        if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 ||
            sec < 0 || sec >= 61)
            return false;
        out = static_cast<double>(days_from_civil(y, mo, d)) * 86400.0 + h * 3600.0 + mi * 60.0 + sec;
        return true;
    }
    // otherwise epoch seconds
    try {
        size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

long long parse_count(const std::string& s, const std::string& context) {
    try {
        size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError(context + ": not an integer: '" + s + "'");
    }
}

} // namespace

TraceParseResult parse_trace(std::istream& in, const std::string& origin) {
    std::string line;
    if (!std::getline(in, line))
        throw ParseError(origin + ": empty trace, expected a header row");
    auto header = split_csv_line(line);
    if (header.size() != 3 || header[0] != "timestamp" || header[1] != "context_tokens" ||
        header[2] != "generated_tokens")
        throw ParseError(origin + ": expected header 'timestamp,context_tokens,generated_tokens'");

    TraceParseResult result;
    std::vector<double> stamps;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto f = split_csv_line(line);
        const std::string ctx = origin + ":" + std::to_string(lineno);
        if (f.size() != 3) throw ParseError(ctx + ": expected 3 fields, got " + std::to_string(f.size()));
        double ts;
        if (!parse_timestamp(f[0], ts)) throw ParseError(ctx + ": bad timestamp '" + f[0] + "'");
        long long ctx_tokens = parse_count(f[1], ctx);
        long long gen_tokens = parse_count(f[2], ctx);
        if (ctx_tokens < 1) throw ParseError(ctx + ": context_tokens must be >= 1");
        if (gen_tokens < 0) throw ParseError(ctx + ": generated_tokens must be >= 0");
        Job j;
        j.context_tokens = ctx_tokens;
        j.generated_tokens = gen_tokens;
        stamps.push_back(ts);
        result.jobs.push_back(j);
    }
    if (result.jobs.empty()) return result;

    for (size_t i = 1; i < stamps.size(); ++i)
        if (stamps[i] < stamps[i - 1]) {
            result.resorted = true;
            break;
        }

    std::vector<size_t> order(stamps.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return stamps[a] < stamps[b]; });
    const double t0 = stamps[order.front()];
    std::vector<Job> sorted;
    sorted.reserve(result.jobs.size());
    for (size_t idx : order) {
        Job j = result.jobs[idx];
        j.arrival_s = stamps[idx] - t0;
        sorted.push_back(j);
    }
    result.jobs = std::move(sorted);
    return result;
}

TraceParseResult parse_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open trace file: " + path);
    return parse_trace(in, path);
}

void write_trace_csv(std::ostream& out, const std::vector<Job>& jobs) {
    out << "timestamp,context_tokens,generated_tokens\n";
    for (const auto& j : jobs)
        out << format_double(j.arrival_s) << "," << j.context_tokens << "," << j.generated_tokens
            << "\n";
}

std::vector<IntervalLoad> aggregate(const std::vector<Job>& jobs, double interval_s,
                                    double horizon_s) {
    if (interval_s <= 0) throw ConfigError("aggregate: interval must be > 0");
    long long bins;
    if (horizon_s >= 0) {
        bins = static_cast<long long>(std::ceil(horizon_s / interval_s - 1e-12));
    } else if (jobs.empty()) {
        bins = 0;
    } else {
        bins = static_cast<long long>(std::floor(jobs.back().arrival_s / interval_s)) + 1;
    }
    std::vector<IntervalLoad> out(static_cast<size_t>(std::max<long long>(bins, 0)));
    for (long long i = 0; i < bins; ++i) {
        out[i].index = i;
        out[i].interval_s = interval_s;
    }
    for (const auto& j : jobs) {
        long long b = static_cast<long long>(std::floor(j.arrival_s / interval_s));
        if (b < 0 || b >= bins) continue;
        out[b].context_tokens += static_cast<double>(j.context_tokens);
        out[b].generated_tokens += static_cast<double>(j.generated_tokens);
    }
    return out;
}

JobClass classify_job(long long context_tokens, long long predicted_generated) {
    if (context_tokens >= 8192)
        throw ConfigError("classify_job: context length " + std::to_string(context_tokens) +
                          " exceeds the supported range (< 8192)");
    if (context_tokens < 256 && predicted_generated < 100) return JobClass::Short;
    if (context_tokens < 1024 && predicted_generated < 350) return JobClass::Medium;
    return JobClass::Long;
}

void DiurnalSpec::validate() const {
    if (base_rate_per_s < 0 || peak_rate_per_s < base_rate_per_s)
        throw ConfigError("synthetic trace: need 0 <= base_rate <= peak_rate");
    if (period_s <= 0 || duration_s <= 0)
        throw ConfigError("synthetic trace: period and duration must be > 0");
    double mix = class_mix[0] + class_mix[1] + class_mix[2];
    if (class_mix[0] < 0 || class_mix[1] < 0 || class_mix[2] < 0 || mix <= 0)
        throw ConfigError("synthetic trace: class mix must be non-negative and non-degenerate");
}

DiurnalSpec DiurnalSpec::from_config(const Config& cfg) {
    DiurnalSpec s;
    s.base_rate_per_s = cfg.get_double("workload.base_rate_per_s", s.base_rate_per_s);
    s.peak_rate_per_s = cfg.get_double("workload.peak_rate_per_s", s.peak_rate_per_s);
    s.period_s = cfg.get_double("workload.period_s", s.period_s);
    s.duration_s = cfg.get_double("workload.duration_s", s.duration_s);
    auto mix = cfg.get_double_list("workload.class_mix",
                                   {s.class_mix[0], s.class_mix[1], s.class_mix[2]});
    if (mix.size() != 3) throw ConfigError("workload.class_mix must have 3 entries (S,M,L)");
    std::copy(mix.begin(), mix.end(), s.class_mix);
    s.validate();
    return s;
}

std::vector<Job> synth_trace(const DiurnalSpec& spec, uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const double mix_total = spec.class_mix[0] + spec.class_mix[1] + spec.class_mix[2];
    const double p_short = spec.class_mix[0] / mix_total;
    const double p_medium = spec.class_mix[1] / mix_total;

    // Token ranges per class; chosen so the drawn class always matches the
    // top-down classifier thresholds.
    std::uniform_int_distribution<long long> ctx_s(16, 255), gen_s(0, 99);
    std::uniform_int_distribution<long long> ctx_m(256, 1023), gen_m(100, 349);
    std::uniform_int_distribution<long long> ctx_l(1024, 8191), gen_l(350, 2047);

    std::vector<Job> jobs;
    const long long seconds = static_cast<long long>(std::ceil(spec.duration_s));
    for (long long s = 0; s < seconds; ++s) {
        const double t = static_cast<double>(s);
        const double rate = spec.base_rate_per_s +
                            (spec.peak_rate_per_s - spec.base_rate_per_s) * 0.5 *
                                (1.0 - std::cos(2.0 * M_PI * t / spec.period_s));
        std::poisson_distribution<int> count_dist(rate);
        const int count = rate > 0 ? count_dist(rng) : 0;
        for (int k = 0; k < count; ++k) {
            Job j;
            j.arrival_s = t + (k + 0.5) / count;
            const double u = unit(rng);
            if (u < p_short) {
                j.context_tokens = ctx_s(rng);
                j.generated_tokens = gen_s(rng);
            } else if (u < p_short + p_medium) {
                j.context_tokens = ctx_m(rng);
                j.generated_tokens = gen_m(rng);
            } else {
                j.context_tokens = ctx_l(rng);
                j.generated_tokens = gen_l(rng);
            }
            jobs.push_back(j);
        }
    }
    return jobs;
}

} // namespace rackctl
