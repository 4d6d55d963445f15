#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rackctl/config.hpp"

namespace rackctl {

enum class JobClass : uint8_t { Unset, Short, Medium, Long };

char job_class_letter(JobClass c);

struct Job {
    double arrival_s = 0;        // seconds since trace start
    long long context_tokens = 0;
    long long generated_tokens = 0;
    JobClass job_class = JobClass::Unset;

    long long total_tokens() const { return context_tokens + generated_tokens; }
};

struct IntervalLoad {
    long long index = 0;
    double context_tokens = 0;
    double generated_tokens = 0;
    double interval_s = 1800;

    double total() const { return context_tokens + generated_tokens; }
};

struct TraceParseResult {
    std::vector<Job> jobs;
    bool resorted = false; // input timestamps were not monotone
};

// CSV with header timestamp,context_tokens,generated_tokens. Timestamps are
// either epoch seconds (fractional allowed) or ISO-8601 UTC
// (YYYY-MM-DDTHH:MM:SS[.fff][Z]). Arrivals are rebased to the earliest row.
TraceParseResult parse_trace(std::istream& in, const std::string& origin = "<stream>");
TraceParseResult parse_trace_file(const std::string& path);

void write_trace_csv(std::ostream& out, const std::vector<Job>& jobs);

// Fixed-bin aggregation; empty bins are emitted as zeros. horizon_s < 0
// derives the horizon from the last arrival.
std::vector<IntervalLoad> aggregate(const std::vector<Job>& jobs, double interval_s,
                                    double horizon_s = -1);

// Threshold classification applied top-down, first match wins.
JobClass classify_job(long long context_tokens, long long predicted_generated);

struct DiurnalSpec {
    double base_rate_per_s = 0.25;
    double peak_rate_per_s = 2.5;
    double period_s = 86400;
    double duration_s = 86400;
    double class_mix[3] = {0.5, 0.35, 0.15}; // short, medium, long

    void validate() const;
    static DiurnalSpec from_config(const Config& cfg);
};

// Poisson arrivals with a sinusoidal rate (trough at t = 0); token lengths
// drawn per class so that the drawn class matches classify_job.
std::vector<Job> synth_trace(const DiurnalSpec& spec, uint64_t seed);

} // namespace rackctl
