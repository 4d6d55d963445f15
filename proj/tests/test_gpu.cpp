#include <doctest.h>

#include <cmath>
#include <random>

#include "rackctl/errors.hpp"
#include "rackctl/gpu.hpp"

using namespace rackctl;

TEST_CASE("gpu power: constant and affine behaviour") {
    GpuPowerCoefficients c;
    c.base_w = 55;
    c.per_util_w = 0;
    c.per_mhz_w = 0;
    c.cross_w_per_mhz = 0;
    CHECK(gpu_power(1000, 0.0, c) == doctest::Approx(55.0));
    CHECK(gpu_power(1800, 1.0, c) == doctest::Approx(55.0));

    // fixed utilization: affine in frequency with slope cross*u + per_mhz
    GpuPowerCoefficients d;
    d.base_w = 10;
    d.per_util_w = 20;
    d.per_mhz_w = 0.05;
    d.cross_w_per_mhz = 0.01;
    const double u = 0.6;
    const double slope = (gpu_power(1400, u, d) - gpu_power(1000, u, d)) / 400.0;
    CHECK(slope == doctest::Approx(d.cross_w_per_mhz * u + d.per_mhz_w).epsilon(1e-12));

    // negative prediction clamps to zero
    GpuPowerCoefficients neg;
    neg.base_w = -100;
    neg.per_util_w = 0;
    neg.per_mhz_w = 0;
    neg.cross_w_per_mhz = 0;
    CHECK(gpu_power(1500, 0.5, neg) == doctest::Approx(0.0));

    CHECK_THROWS_AS(gpu_power(1500, 1.5, c), ConfigError);
}

TEST_CASE("gpu power fit: exact recovery on noiseless samples") {
    GpuPowerCoefficients truth;
    truth.base_w = 42.0;
    truth.per_util_w = 31.5;
    truth.per_mhz_w = 0.08;
    truth.cross_w_per_mhz = 0.015;
    std::vector<PowerSample> samples;
    for (double f : {1000.0, 1200.0, 1400.0, 1600.0, 1800.0})
        for (double u : {0.2, 0.5, 0.9})
            samples.push_back({f, u, gpu_power(f, u, truth)});
    auto fit = fit_power_coeffs(samples);
    CHECK(fit.coeffs.base_w == doctest::Approx(truth.base_w).epsilon(1e-9));
    CHECK(fit.coeffs.per_util_w == doctest::Approx(truth.per_util_w).epsilon(1e-9));
    CHECK(fit.coeffs.per_mhz_w == doctest::Approx(truth.per_mhz_w).epsilon(1e-9));
    CHECK(fit.coeffs.cross_w_per_mhz == doctest::Approx(truth.cross_w_per_mhz).epsilon(1e-9));
    CHECK(fit.rms_residual_w < 1e-9);
}

TEST_CASE("gpu power fit: too few or degenerate samples fail") {
    std::vector<PowerSample> three = {{1000, 0.1, 60}, {1200, 0.5, 90}, {1400, 0.9, 120}};
    CHECK_THROWS_AS(fit_power_coeffs(three), FitError);
    // all samples at one operating point: rank deficient
    std::vector<PowerSample> degenerate(6, {1400, 0.5, 100});
    CHECK_THROWS_AS(fit_power_coeffs(degenerate), FitError);
}

TEST_CASE("gpu power fit: profiled table reproduces itself within the residual bound") {
    auto tables = ProfileTables::bundled();
    std::vector<PowerSample> samples;
    double max_bucket = tables.buckets().back();
    for (const auto& r : tables.dvfs_rows())
        samples.push_back({r.freq_mhz, r.bucket_tokens / max_bucket, r.power_w});
    auto fit = fit_power_coeffs(samples);
    for (const auto& r : tables.dvfs_rows()) {
        const double pred = gpu_power(r.freq_mhz, r.bucket_tokens / max_bucket, fit.coeffs);
        CHECK(std::abs(pred - r.power_w) <= fit.max_abs_residual_w + 1e-9);
    }
    // the library defaults are exactly this fit
    GpuPowerCoefficients d;
    CHECK(fit.coeffs.base_w == doctest::Approx(d.base_w).epsilon(1e-6));
    CHECK(fit.coeffs.per_util_w == doctest::Approx(d.per_util_w).epsilon(1e-6));
    CHECK(fit.coeffs.per_mhz_w == doctest::Approx(d.per_mhz_w).epsilon(1e-6));
    CHECK(fit.coeffs.cross_w_per_mhz == doctest::Approx(d.cross_w_per_mhz).epsilon(1e-6));
}

TEST_CASE("tp metrics: exact at table rows, linear between them") {
    auto t = ProfileTables::bundled();
    auto a = t.tp_metrics(2, 195000);
    CHECK(a.latency_s == doctest::Approx(0.473));
    CHECK(a.temp_c == doctest::Approx(54.7));
    CHECK(a.power_w == doctest::Approx(145));
    CHECK_FALSE(a.extrapolated);

    auto b = t.tp_metrics(8, 150000);
    CHECK(b.latency_s == doctest::Approx(0.233));
    CHECK(b.temp_c == doctest::Approx(46.6));
    CHECK(b.power_w == doctest::Approx(581));

    // halfway between the 150k and 168k rows
    auto mid = t.tp_metrics(4, 159000);
    CHECK(mid.latency_s == doctest::Approx(0.317).epsilon(1e-12));
    // three quarters of the way
    auto q3 = t.tp_metrics(4, 163500);
    CHECK(q3.latency_s == doctest::Approx(0.336).epsilon(1e-12));

    // clamped extrapolation carries a flag
    auto lo = t.tp_metrics(4, 10000);
    CHECK(lo.extrapolated);
    CHECK(lo.latency_s == doctest::Approx(0.279));
    auto hi = t.tp_metrics(4, 400000);
    CHECK(hi.extrapolated);
    CHECK(hi.power_w == doctest::Approx(299));

    CHECK_THROWS_AS(t.tp_metrics(3, 150000), ConfigError);
}

TEST_CASE("dvfs metrics: exact row lookup through nearest bucket") {
    auto t = ProfileTables::bundled();
    auto a = t.dvfs_metrics(1400, 3047);
    CHECK(a.latency_s == doctest::Approx(3.780));
    CHECK(a.power_w == doctest::Approx(204.46));
    CHECK(a.temp_c == doctest::Approx(45));

    auto b = t.dvfs_metrics(1800, 935);
    CHECK(b.latency_s == doctest::Approx(3.463));
    CHECK(b.power_w == doctest::Approx(156.58));
    CHECK(b.temp_c == doctest::Approx(43));

    auto c = t.dvfs_metrics(1000, 2373);
    CHECK(c.latency_s == doctest::Approx(3.673));
    CHECK(c.power_w == doctest::Approx(68.90));
    CHECK(c.temp_c == doctest::Approx(42));

    // nearest-bucket selection
    auto near = t.dvfs_metrics(1000, 1100);
    CHECK(near.power_w == doctest::Approx(67.17)); // 935 bucket
    auto far = t.dvfs_metrics(1000, 2900);
    CHECK(far.power_w == doctest::Approx(87.71)); // 3047 bucket

    CHECK_THROWS_AS(t.dvfs_metrics(1300, 2373), ConfigError);
}

TEST_CASE("profiled data keeps per-bucket latency and temperature monotone in frequency") {
    auto t = ProfileTables::bundled();
    for (double bucket : t.buckets()) {
        double prev_lat = 1e9, prev_temp = -1e9;
        for (double f : t.frequencies()) {
            auto m = t.dvfs_metrics(f, bucket);
            CHECK(m.latency_s <= prev_lat + 1e-12);
            CHECK(m.temp_c >= prev_temp - 1e-12);
            prev_lat = m.latency_s;
            prev_temp = m.temp_c;
        }
    }
}

TEST_CASE("gpu temperature step: integrator forms") {
    GpuThermalCoefficients zero;
    zero.cold_gain = zero.power_gain = zero.offset = zero.decay = 0;
    GpuOperatingPoint pt;
    pt.temp_c = 37.5;
    CHECK(gpu_temp_step(pt, 25.0, 150.0, zero, 30.0) == doctest::Approx(37.5));

    // relaxed form converges to its closed-form fixed point
    GpuThermalCoefficients relax; // library defaults
    const double target = relax.fixed_point(22.0, 150.0);
    double temp = 20.0;
    for (int k = 0; k < 100; ++k) {
        GpuOperatingPoint p;
        p.temp_c = temp;
        temp = gpu_temp_step(p, 22.0, 150.0, relax, 30.0);
    }
    CHECK(std::abs(temp - target) < 0.1);

    // pure integrator accumulates linearly
    GpuThermalCoefficients pure;
    pure.cold_gain = 0;
    pure.power_gain = 0.001;
    pure.offset = 0;
    pure.decay = 0;
    GpuOperatingPoint p;
    p.temp_c = 30.0;
    CHECK(gpu_temp_step(p, 22.0, 200.0, pure, 10.0) == doctest::Approx(32.0));
}

TEST_CASE("gpu thermal fit reproduces the profiled steady temperature for tp4 at 150k tokens") {
    auto tables = ProfileTables::bundled();
    GpuPowerCoefficients power; // fitted defaults
    auto fit = fit_thermal_coeffs(tables, power, 22.0, 0.35, 60.0, 1800.0, 97500.0);
    const double u = (150000.0 / 4) / 97500.0;
    const double p = gpu_power(1800.0, u, power);
    CHECK(std::abs(fit.coeffs.fixed_point(22.0, p) - 49.0) < 1.0);

    // the library defaults are exactly this calibration
    GpuThermalCoefficients d;
    CHECK(fit.coeffs.cold_gain == doctest::Approx(d.cold_gain).epsilon(1e-6));
    CHECK(fit.coeffs.power_gain == doctest::Approx(d.power_gain).epsilon(1e-6));
    CHECK(fit.coeffs.offset == doctest::Approx(d.offset).epsilon(1e-6));
    CHECK(fit.coeffs.decay == doctest::Approx(d.decay).epsilon(1e-12));
}

TEST_CASE("relaxed thermal model stays near its fixed-point envelope") {
    GpuThermalCoefficients relax; // defaults, decay > 0
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> cold(18.0, 30.0);
    std::uniform_real_distribution<double> pw(0.0, 240.0);
    const double lo = relax.fixed_point(18.0, 0.0);
    const double hi = relax.fixed_point(30.0, 240.0);
    double temp = 25.0;
    for (int k = 0; k < 2000; ++k) {
        GpuOperatingPoint p;
        p.temp_c = temp;
        temp = gpu_temp_step(p, cold(rng), pw(rng), relax, 30.0);
        CHECK(temp > lo - 1.0);
        CHECK(temp < hi + 1.0);
    }
}

TEST_CASE("utilization from load") {
    CHECK(utilization_from_load(0, 1000) == doctest::Approx(0.0));
    CHECK(utilization_from_load(1000, 1000) == doctest::Approx(1.0));
    CHECK(utilization_from_load(2000, 1000) == doctest::Approx(1.0));
    CHECK_THROWS_AS(utilization_from_load(10, 0), ConfigError);
}

TEST_CASE("window capacities follow the profiled throughput ratios") {
    auto t = ProfileTables::bundled();
    CHECK(t.window_capacity(2, 300.0) == doctest::Approx(195000.0));
    CHECK(t.window_capacity(4, 300.0) == doctest::Approx(195000.0 * 0.473 / 0.395));
    CHECK(t.window_capacity(8, 300.0) == doctest::Approx(195000.0 * 0.473 / 0.365));
    CHECK(t.window_capacity(8, 1800.0) == doctest::Approx(6 * 195000.0 * 0.473 / 0.365));
    CHECK(t.window_capacity(8, 300.0) > t.window_capacity(4, 300.0));
}

TEST_CASE("profile table loading validates its grid") {
    auto t = ProfileTables::bundled();
    CHECK(t.tp_modes() == std::vector<int>{2, 4, 8});
    CHECK(t.frequencies() == std::vector<double>{1000, 1200, 1400, 1600, 1800});
    CHECK(t.buckets() == std::vector<double>{935, 2373, 3047});
}
