#include "rackctl/gpu.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "rackctl/csv.hpp"
#include "rackctl/errors.hpp"

namespace rackctl {

GpuPowerCoefficients GpuPowerCoefficients::from_config(const Config& cfg) {
    GpuPowerCoefficients c;
    auto a = cfg.get_double_list("gpu.power_coefficients",
                                 {c.base_w, c.per_util_w, c.per_mhz_w, c.cross_w_per_mhz});
    if (a.size() != 4) throw ConfigError("gpu.power_coefficients must have 4 entries (a0,a1,a2,a3)");
    c.base_w = a[0];
    c.per_util_w = a[1];
    c.per_mhz_w = a[2];
    c.cross_w_per_mhz = a[3];
    return c;
}

double GpuThermalCoefficients::fixed_point(double cold_temp_c, double power_w) const {
    if (decay <= 0)
        throw ConfigError("gpu thermal model: fixed point undefined for decay <= 0");
    return (cold_gain * cold_temp_c + power_gain * power_w + offset) / decay;
}

GpuThermalCoefficients GpuThermalCoefficients::from_config(const Config& cfg) {
    GpuThermalCoefficients c;
    auto b = cfg.get_double_list("gpu.thermal_coefficients",
                                 {c.cold_gain, c.power_gain, c.offset, c.decay});
    if (b.size() != 4)
        throw ConfigError("gpu.thermal_coefficients must have 4 entries (beta0,beta1,gamma,beta2)");
    c.cold_gain = b[0];
    c.power_gain = b[1];
    c.offset = b[2];
    c.decay = b[3];
    if (c.decay < 0) throw ConfigError("gpu.thermal_coefficients: decay must be >= 0");
    return c;
}

double gpu_power(double freq_mhz, double utilization, const GpuPowerCoefficients& c) {
    if (utilization < 0 || utilization > 1)
        throw ConfigError("gpu_power: utilization must be in [0, 1]");
    double p = c.cross_w_per_mhz * freq_mhz * utilization + c.per_mhz_w * freq_mhz +
               c.per_util_w * utilization + c.base_w;
    return p < 0 ? 0.0 : p;
}

double gpu_temp_step(const GpuOperatingPoint& point, double cold_temp_c, double power_w,
                     const GpuThermalCoefficients& c, double dt) {
    if (dt <= 0) throw ConfigError("gpu_temp_step: dt must be > 0");
    double rate = c.cold_gain * cold_temp_c + c.power_gain * power_w + c.offset;
    if (c.decay > 0) rate -= c.decay * point.temp_c;
    return point.temp_c + dt * rate;
}

double utilization_from_load(double tokens_in_window, double capacity_tokens) {
    if (capacity_tokens <= 0) throw ConfigError("utilization_from_load: capacity must be > 0");
    if (tokens_in_window < 0) throw ConfigError("utilization_from_load: tokens must be >= 0");
    return std::min(1.0, tokens_in_window / capacity_tokens);
}

// ---------------------------------------------------------------------------
// Profile tables

namespace {

double parse_num(const std::string& s, const std::string& context) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError(context + ": not a number: '" + s + "'");
    }
}

// Measured profiles shipped with the library. The CSV loaders accept files
// with the same columns for alternative hardware.
const char* kTpCsv =
    "tp_mode,total_tokens,latency_s,temp_c,power_w\n"
    "2,150000,0.355,53.2,140\n"
    "2,168000,0.368,53.4,145\n"
    "2,177000,0.423,53.6,145\n"
    "2,179000,0.435,54.1,145\n"
    "2,195000,0.473,54.7,145\n"
    "4,150000,0.279,49.0,289\n"
    "4,168000,0.355,49.5,297\n"
    "4,177000,0.378,49.6,298\n"
    "4,179000,0.384,50.0,298\n"
    "4,195000,0.395,50.8,299\n"
    "8,150000,0.233,46.6,581\n"
    "8,168000,0.344,46.6,596\n"
    "8,177000,0.355,46.6,596\n"
    "8,179000,0.355,47.0,597\n"
    "8,195000,0.365,47.4,598\n";

const char* kDvfsCsv =
    "freq_mhz,bucket_tokens,latency_s,power_w,temp_c\n"
    "1000,935,3.546,67.17,40\n"
    "1200,935,3.487,77.66,40\n"
    "1400,935,3.466,163.87,43\n"
    "1600,935,3.465,164.17,43\n"
    "1800,935,3.463,156.58,43\n"
    "1000,2373,3.673,68.90,42\n"
    "1200,2373,3.641,152.78,43\n"
    "1400,2373,3.623,187.50,44\n"
    "1600,2373,3.620,193.97,45\n"
    "1800,2373,3.615,194.85,45\n"
    "1000,3047,4.169,87.71,42\n"
    "1200,3047,3.811,169.41,43\n"
    "1400,3047,3.780,204.46,45\n"
    "1600,3047,3.732,209.13,46\n"
    "1800,3047,3.712,219.99,47\n";

std::vector<TpRow> parse_tp(const CsvTable& t, const std::string& origin) {
    int cm = t.require_column("tp_mode", origin);
    int ct = t.require_column("total_tokens", origin);
    int cl = t.require_column("latency_s", origin);
    int cc = t.require_column("temp_c", origin);
    int cp = t.require_column("power_w", origin);
    std::vector<TpRow> rows;
    for (size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        std::string ctx = origin + " row " + std::to_string(i + 2);
        TpRow row;
        row.tp_mode = static_cast<int>(parse_num(r[cm], ctx));
        row.total_tokens = parse_num(r[ct], ctx);
        row.latency_s = parse_num(r[cl], ctx);
        row.temp_c = parse_num(r[cc], ctx);
        row.power_w = parse_num(r[cp], ctx);
        rows.push_back(row);
    }
    return rows;
}

std::vector<DvfsRow> parse_dvfs(const CsvTable& t, const std::string& origin) {
    int cf = t.require_column("freq_mhz", origin);
    int cb = t.require_column("bucket_tokens", origin);
    int cl = t.require_column("latency_s", origin);
    int cp = t.require_column("power_w", origin);
    int cc = t.require_column("temp_c", origin);
    std::vector<DvfsRow> rows;
    for (size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        std::string ctx = origin + " row " + std::to_string(i + 2);
        DvfsRow row;
        row.freq_mhz = parse_num(r[cf], ctx);
        row.bucket_tokens = parse_num(r[cb], ctx);
        row.latency_s = parse_num(r[cl], ctx);
        row.power_w = parse_num(r[cp], ctx);
        row.temp_c = parse_num(r[cc], ctx);
        rows.push_back(row);
    }
    return rows;
}

} // namespace

ProfileTables ProfileTables::from_csv(const std::string& tp_csv_path,
                                      const std::string& dvfs_csv_path) {
    ProfileTables t;
    t.tp_ = parse_tp(read_csv_file(tp_csv_path), tp_csv_path);
    t.dvfs_ = parse_dvfs(read_csv_file(dvfs_csv_path), dvfs_csv_path);
    t.index_and_validate();
    return t;
}

ProfileTables ProfileTables::bundled() {
    ProfileTables t;
    {
        std::istringstream in(kTpCsv);
        t.tp_ = parse_tp(read_csv(in, "<bundled tp>"), "<bundled tp>");
    }
    {
        std::istringstream in(kDvfsCsv);
        t.dvfs_ = parse_dvfs(read_csv(in, "<bundled dvfs>"), "<bundled dvfs>");
    }
    t.index_and_validate();
    return t;
}

void ProfileTables::index_and_validate() {
    if (tp_.empty() || dvfs_.empty())
        throw ParseError("profile tables: both tables must be non-empty");

    std::sort(tp_.begin(), tp_.end(), [](const TpRow& a, const TpRow& b) {
        return a.tp_mode != b.tp_mode ? a.tp_mode < b.tp_mode : a.total_tokens < b.total_tokens;
    });
    std::sort(dvfs_.begin(), dvfs_.end(), [](const DvfsRow& a, const DvfsRow& b) {
        return a.bucket_tokens != b.bucket_tokens ? a.bucket_tokens < b.bucket_tokens
                                                  : a.freq_mhz < b.freq_mhz;
    });

    std::set<int> modes;
    for (size_t i = 0; i + 1 < tp_.size(); ++i)
        if (tp_[i].tp_mode == tp_[i + 1].tp_mode && tp_[i].total_tokens == tp_[i + 1].total_tokens)
            throw ParseError("profile tables: duplicate tp row (mode " +
                             std::to_string(tp_[i].tp_mode) + ", tokens " +
                             std::to_string(tp_[i].total_tokens) + ")");
    for (const auto& r : tp_) modes.insert(r.tp_mode);
    modes_.assign(modes.begin(), modes.end());

    std::set<double> freqs, buckets;
    for (size_t i = 0; i + 1 < dvfs_.size(); ++i)
        if (dvfs_[i].bucket_tokens == dvfs_[i + 1].bucket_tokens &&
            dvfs_[i].freq_mhz == dvfs_[i + 1].freq_mhz)
            throw ParseError("profile tables: duplicate dvfs row");
    for (const auto& r : dvfs_) {
        freqs.insert(r.freq_mhz);
        buckets.insert(r.bucket_tokens);
    }
    freqs_.assign(freqs.begin(), freqs.end());
    buckets_.assign(buckets.begin(), buckets.end());

    // Every (bucket, freq) pair must exist for exact row lookup.
    for (double b : buckets_)
        for (double f : freqs_) {
            bool found = false;
            for (const auto& r : dvfs_)
                if (r.bucket_tokens == b && r.freq_mhz == f) found = true;
            if (!found)
                throw ParseError("profile tables: dvfs grid incomplete at bucket " +
                                 std::to_string(b) + ", freq " + std::to_string(f));
        }

    // Latency must not increase with frequency within a bucket.
    for (double b : buckets_) {
        double prev_lat = 1e300;
        for (double f : freqs_) {
            DvfsMetrics m = dvfs_metrics(f, b);
            if (m.latency_s > prev_lat + 1e-12)
                throw ParseError("profile tables: latency increases with frequency at bucket " +
                                 std::to_string(b));
            prev_lat = m.latency_s;
        }
    }

    // Capacity anchor: largest profiled load of the smallest mode.
    const int anchor_mode = modes_.front();
    capacity_anchor_tokens_ = max_profiled_tokens(anchor_mode);
    for (const auto& r : tp_)
        if (r.tp_mode == anchor_mode && r.total_tokens == capacity_anchor_tokens_)
            capacity_anchor_latency_ = r.latency_s;
}

TpMetrics ProfileTables::tp_metrics(int tp_mode, double total_tokens) const {
    std::vector<const TpRow*> rows;
    for (const auto& r : tp_)
        if (r.tp_mode == tp_mode) rows.push_back(&r);
    if (rows.empty())
        throw ConfigError("tp_metrics: unknown tensor-parallel mode " + std::to_string(tp_mode));

    TpMetrics m;
    if (total_tokens <= rows.front()->total_tokens) {
        m = {rows.front()->latency_s, rows.front()->temp_c, rows.front()->power_w,
             total_tokens < rows.front()->total_tokens};
        return m;
    }
    if (total_tokens >= rows.back()->total_tokens) {
        m = {rows.back()->latency_s, rows.back()->temp_c, rows.back()->power_w,
             total_tokens > rows.back()->total_tokens};
        return m;
    }
    for (size_t i = 0; i + 1 < rows.size(); ++i) {
        const TpRow* lo = rows[i];
        const TpRow* hi = rows[i + 1];
        if (total_tokens >= lo->total_tokens && total_tokens <= hi->total_tokens) {
            double t = (total_tokens - lo->total_tokens) / (hi->total_tokens - lo->total_tokens);
            m.latency_s = lo->latency_s + t * (hi->latency_s - lo->latency_s);
            m.temp_c = lo->temp_c + t * (hi->temp_c - lo->temp_c);
            m.power_w = lo->power_w + t * (hi->power_w - lo->power_w);
            m.extrapolated = false;
            return m;
        }
    }
    throw ConfigError("tp_metrics: interpolation fell through"); // unreachable
}

double ProfileTables::nearest_bucket(double tokens) const {
    double best = buckets_.front();
    double best_d = std::abs(tokens - best);
    for (double b : buckets_) {
        double d = std::abs(tokens - b);
        if (d < best_d || (d == best_d && b < best)) {
            best = b;
            best_d = d;
        }
    }
    return best;
}

DvfsMetrics ProfileTables::dvfs_metrics(double freq_mhz, double tokens) const {
    bool known = false;
    for (double f : freqs_)
        if (f == freq_mhz) known = true;
    if (!known)
        throw ConfigError("dvfs_metrics: frequency " + std::to_string(freq_mhz) +
                          " MHz is not in the profiled set");
    const double bucket = nearest_bucket(tokens);
    for (const auto& r : dvfs_)
        if (r.bucket_tokens == bucket && r.freq_mhz == freq_mhz)
            return {r.latency_s, r.power_w, r.temp_c};
    throw ConfigError("dvfs_metrics: missing row"); // unreachable after validation
}

double ProfileTables::max_profiled_tokens(int tp_mode) const {
    double mx = -1;
    for (const auto& r : tp_)
        if (r.tp_mode == tp_mode) mx = std::max(mx, r.total_tokens);
    if (mx < 0) throw ConfigError("unknown tensor-parallel mode " + std::to_string(tp_mode));
    return mx;
}

double ProfileTables::window_capacity(int tp_mode, double window_s) const {
    // Throughput ratio relative to the anchor mode at the anchor load; the
    // anchor tokens are taken as one profile window's worth of work.
    TpMetrics at_anchor = tp_metrics(tp_mode, capacity_anchor_tokens_);
    double per_window = capacity_anchor_tokens_ * capacity_anchor_latency_ / at_anchor.latency_s;
    return per_window * (window_s / profile_window_s_);
}

// ---------------------------------------------------------------------------
// Least squares

std::vector<double> least_squares(const std::vector<double>& design, std::size_t rows,
                                  std::size_t cols, const std::vector<double>& target) {
    if (design.size() != rows * cols || target.size() != rows)
        throw DimensionError("least_squares: design/target dimensions disagree");
    if (rows < cols) throw FitError("least_squares: need at least as many samples as unknowns");

    // Householder QR with column norms tracked for a rank check.
    std::vector<double> A = design;
    std::vector<double> b = target;
    auto at = [&](std::size_t r, std::size_t c) -> double& { return A[r * cols + c]; };

    for (std::size_t k = 0; k < cols; ++k) {
        double norm = 0;
        for (std::size_t i = k; i < rows; ++i) norm += at(i, k) * at(i, k);
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw FitError("least_squares: rank-deficient design matrix");
        double alpha = at(k, k) >= 0 ? -norm : norm;
        std::vector<double> v(rows - k);
        v[0] = at(k, k) - alpha;
        for (std::size_t i = k + 1; i < rows; ++i) v[i - k] = at(i, k);
        double vnorm2 = 0;
        for (double x : v) vnorm2 += x * x;
        if (vnorm2 < 1e-300) continue;
        for (std::size_t j = k; j < cols; ++j) {
            double dot = 0;
            for (std::size_t i = k; i < rows; ++i) dot += v[i - k] * at(i, j);
            double scale = 2 * dot / vnorm2;
            for (std::size_t i = k; i < rows; ++i) at(i, j) -= scale * v[i - k];
        }
        double dotb = 0;
        for (std::size_t i = k; i < rows; ++i) dotb += v[i - k] * b[i];
        double scaleb = 2 * dotb / vnorm2;
        for (std::size_t i = k; i < rows; ++i) b[i] -= scaleb * v[i - k];
    }

    std::vector<double> x(cols);
    for (std::size_t kk = cols; kk-- > 0;) {
        double s = b[kk];
        for (std::size_t j = kk + 1; j < cols; ++j) s -= at(kk, j) * x[j];
        double d = at(kk, kk);
        if (std::abs(d) < 1e-12) throw FitError("least_squares: rank-deficient design matrix");
        x[kk] = s / d;
    }
    return x;
}

PowerFitResult fit_power_coeffs(const std::vector<PowerSample>& samples) {
    if (samples.size() < 4)
        throw FitError("fit_power_coeffs: need at least 4 samples, got " +
                       std::to_string(samples.size()));
    const std::size_t n = samples.size();
    std::vector<double> design(n * 4);
    std::vector<double> target(n);
    for (std::size_t i = 0; i < n; ++i) {
        design[i * 4 + 0] = samples[i].freq_mhz * samples[i].utilization;
        design[i * 4 + 1] = samples[i].freq_mhz;
        design[i * 4 + 2] = samples[i].utilization;
        design[i * 4 + 3] = 1.0;
        target[i] = samples[i].power_w;
    }
    auto x = least_squares(design, n, 4, target);

    PowerFitResult out;
    out.coeffs.cross_w_per_mhz = x[0];
    out.coeffs.per_mhz_w = x[1];
    out.coeffs.per_util_w = x[2];
    out.coeffs.base_w = x[3];
    double ss = 0, mx = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double pred = x[0] * design[i * 4 + 0] + x[1] * design[i * 4 + 1] +
                      x[2] * design[i * 4 + 2] + x[3];
        double r = target[i] - pred;
        ss += r * r;
        mx = std::max(mx, std::abs(r));
    }
    out.rms_residual_w = std::sqrt(ss / n);
    out.max_abs_residual_w = mx;
    return out;
}

ThermalFitResult fit_thermal_coeffs(const ProfileTables& tables, const GpuPowerCoefficients& power,
                                    double profile_cold_temp_c, double cold_sensitivity,
                                    double time_constant_s, double freq_ref_mhz,
                                    double tokens_per_gpu_ref) {
    if (time_constant_s <= 0) throw FitError("fit_thermal_coeffs: time constant must be > 0");
    if (tokens_per_gpu_ref <= 0) throw FitError("fit_thermal_coeffs: token reference must be > 0");

    // One sample per profiled (mode, tokens) row: steady temp vs die power at
    // that row's per-GPU token rate.
    const auto& rows = tables.tp_rows();
    const std::size_t n = rows.size();
    if (n < 2) throw FitError("fit_thermal_coeffs: need at least 2 profile rows");
    std::vector<double> design(n * 2);
    std::vector<double> target(n);
    for (std::size_t i = 0; i < n; ++i) {
        double u = std::min(1.0, (rows[i].total_tokens / rows[i].tp_mode) / tokens_per_gpu_ref);
        double p = gpu_power(freq_ref_mhz, u, power);
        design[i * 2 + 0] = 1.0;
        design[i * 2 + 1] = p;
        target[i] = rows[i].temp_c;
    }
    auto x = least_squares(design, n, 2, target);
    const double intercept = x[0]; // steady temp at P = 0 and profiling inlet
    const double slope = x[1];     // degC per W

    ThermalFitResult out;
    out.coeffs.decay = 1.0 / time_constant_s;
    out.coeffs.cold_gain = cold_sensitivity / time_constant_s;
    out.coeffs.power_gain = slope / time_constant_s;
    out.coeffs.offset = (intercept - cold_sensitivity * profile_cold_temp_c) / time_constant_s;

    double ss = 0, mx = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double pred = intercept + slope * design[i * 2 + 1];
        double r = target[i] - pred;
        ss += r * r;
        mx = std::max(mx, std::abs(r));
    }
    out.rms_residual_c = std::sqrt(ss / n);
    out.max_abs_residual_c = mx;
    return out;
}

} // namespace rackctl
