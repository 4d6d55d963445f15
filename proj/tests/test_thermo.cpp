#include <doctest.h>

#include <cmath>
#include <random>

#include "rackctl/errors.hpp"
#include "rackctl/thermo.hpp"

using namespace rackctl;

namespace {

ThermalCoefficients make_coeffs(std::size_t n, double leakage = 0.0) {
    ThermalCoefficients c;
    c.leakage_flow = leakage;
    c.supply_fraction = ThermalCoefficients::uniform_fractions(n);
    return c;
}

// Independent fine-step explicit Euler used as the integration oracle.
RackState euler_oracle(RackState s, const CoolingCommand& cmd, const std::vector<double>& powers,
                       const ThermalCoefficients& c, double dt, double h) {
    const FlowField flows = derive_flows(c, cmd, c.fan_flows(cmd));
    const long long steps = static_cast<long long>(std::llround(dt / h));
    for (long long k = 0; k < steps; ++k) {
        RackState d = rack_derivatives(s, cmd, flows, powers, c);
        for (std::size_t i = 0; i < s.size(); ++i) {
            s.cold[i] += h * d.cold[i];
            s.exhaust[i] += h * d.exhaust[i];
            s.hot[i] += h * d.hot[i];
        }
    }
    return s;
}

void check_mass_balance(const FlowField& f, const ThermalCoefficients& c, double supply_flow) {
    const std::size_t n = f.server_fan.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double cold_in = c.supply_fraction[i] * supply_flow +
                               (i ? f.cold_coupling[i - 1] : 0.0) + c.leakage_flow;
        const double cold_out = f.cold_coupling[i] + f.server_fan[i];
        CHECK(std::abs(cold_in - cold_out) <= 1e-9);
        const double hot_in = f.server_fan[i] + (i ? f.hot_coupling[i - 1] : 0.0);
        const double hot_out = c.leakage_flow + f.hot_coupling[i];
        CHECK(std::abs(hot_in - hot_out) <= 1e-9);
    }
}

} // namespace

TEST_CASE("flow closure: single balanced server has no coupling flows") {
    auto c = make_coeffs(1);
    c.supply_fraction = {1.0};
    auto f = derive_flows(c, {22.0, 0.02}, {0.02});
    CHECK(f.cold_coupling[0] == doctest::Approx(0.0));
    CHECK(f.hot_coupling[0] == doctest::Approx(0.02));
    CHECK_FALSE(f.clamped);
}

TEST_CASE("flow closure: two-server hand-solved case") {
    auto c = make_coeffs(2);
    auto f = derive_flows(c, {22.0, 0.02}, {0.008, 0.012});
    CHECK(f.cold_coupling[0] == doctest::Approx(0.002));
    CHECK(f.cold_coupling[1] == doctest::Approx(0.0).scale(1));
    CHECK(f.hot_coupling[0] == doctest::Approx(0.008));
    CHECK(f.hot_coupling[1] == doctest::Approx(0.02));
    check_mass_balance(f, c, 0.02);
}

TEST_CASE("flow closure: locally balanced supply leaves all couplings at zero") {
    auto c = make_coeffs(4);
    const double phi = 0.024;
    std::vector<double> fans(4, phi / 4);
    auto f = derive_flows(c, {22.0, phi}, fans);
    for (double v : f.cold_coupling) CHECK(v == doctest::Approx(0.0).scale(1));
}

TEST_CASE("flow closure: mass conservation on randomized inputs") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> flow(0.001, 0.03);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 6;
        auto c = make_coeffs(n, trial % 2 ? 0.0005 : 0.0);
        std::vector<double> fans(n);
        // keep fans small enough that the closure never clamps
        for (auto& v : fans) v = flow(rng) / static_cast<double>(2 * n);
        auto f = derive_flows(c, {22.0, 0.03}, fans);
        if (!f.clamped) check_mass_balance(f, c, 0.03);
    }
}

TEST_CASE("flow closure rejects mismatched supply fractions") {
    auto c = make_coeffs(3);
    CHECK_THROWS_AS(derive_flows(c, {22.0, 0.02}, {0.01, 0.01}), DimensionError);
}

TEST_CASE("derivatives: uniform equilibrium is stationary") {
    auto c = make_coeffs(3, 0.0007);
    CoolingCommand cmd{21.0, 0.021};
    auto f = derive_flows(c, cmd, std::vector<double>(3, 0.004));
    REQUIRE_FALSE(f.clamped);
    RackState s = RackState::uniform(3, 21.0);
    RackState d = rack_derivatives(s, cmd, f, {0, 0, 0}, c);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(d.cold[i]) < 1e-9);
        CHECK(std::abs(d.exhaust[i]) < 1e-9);
        CHECK(std::abs(d.hot[i]) < 1e-9);
    }
}

TEST_CASE("derivatives: zero flows reduce the exhaust equation to pure heating") {
    auto c = make_coeffs(2);
    FlowField f;
    f.server_fan = {0, 0};
    f.cold_coupling = {0, 0};
    f.hot_coupling = {0, 0};
    RackState s = RackState::uniform(2, 25.0);
    RackState d = rack_derivatives(s, {22.0, 0.0}, f, {500.0, 0.0}, c);
    CHECK(d.exhaust[0] == doctest::Approx(500.0 / c.server_capacitance));
    CHECK(d.exhaust[1] == doctest::Approx(0.0));
    CHECK(d.cold[0] == doctest::Approx(0.0));
    CHECK(d.hot[0] == doctest::Approx(0.0));
}

TEST_CASE("derivatives: single-server exhaust rate matches the hand computation") {
    // fan 0.02 m^3/s, cold 20, exhaust 40, Cth 5000, P 600
    auto c = make_coeffs(1);
    c.supply_fraction = {1.0};
    FlowField f;
    f.server_fan = {0.02};
    f.cold_coupling = {0};
    f.hot_coupling = {0.02};
    RackState s;
    s.cold = {20};
    s.exhaust = {40};
    s.hot = {30};
    RackState d = rack_derivatives(s, {20.0, 0.02}, f, {600.0}, c);
    CHECK(d.exhaust[0] == doctest::Approx(0.024324).epsilon(1e-9));
}

TEST_CASE("step_rack: equilibrium state is unchanged") {
    auto c = make_coeffs(3);
    CoolingCommand cmd{21.0, 0.021};
    RackState s = RackState::uniform(3, 21.0);
    RackState next = step_rack(s, cmd, {0, 0, 0}, c, 30.0);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(next.cold[i] - 21.0) < 1e-9);
        CHECK(std::abs(next.exhaust[i] - 21.0) < 1e-9);
        CHECK(std::abs(next.hot[i] - 21.0) < 1e-9);
    }
}

TEST_CASE("step_rack: RK4 at 30 s matches millisecond Euler on randomized inputs") {
    // The first-order oracle is only accurate below the tolerance for slow
    // transients (its own truncation error is about amplitude*rate*h/2e), so
    // the comparison runs near equilibrium; an integrator defect would still
    // show up around 1e-4 here.
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> base_t(20.0, 45.0);
    std::uniform_real_distribution<double> pw(0.0, 5.0), jitter(-0.15, 0.15);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + rng() % 3;
        auto c = make_coeffs(n, 0.0004);
        c.cold_volume = c.hot_volume = 1.0;
        const double base = base_t(rng);
        RackState s;
        for (std::size_t i = 0; i < n; ++i) {
            s.cold.push_back(base + jitter(rng));
            s.exhaust.push_back(base + jitter(rng));
            s.hot.push_back(base + jitter(rng));
        }
        std::vector<double> powers(n);
        for (auto& p : powers) p = pw(rng);
        CoolingCommand cmd{base, 0.011};
        RackState rk = step_rack(s, cmd, powers, c, 30.0);
        RackState eu = euler_oracle(s, cmd, powers, c, 30.0, 0.001);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(rk.cold[i] - eu.cold[i]) < 1e-6);
            CHECK(std::abs(rk.exhaust[i] - eu.exhaust[i]) < 1e-6);
            CHECK(std::abs(rk.hot[i] - eu.hot[i]) < 1e-6);
        }
    }
}

TEST_CASE("step_rack: substep self-convergence under full load") {
    // loaded-regime cross-check: halving the internal step repeatedly moves
    // the answer by less than the tolerance budget
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> temp(18.0, 55.0), pw(0.0, 600.0);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + rng() % 3;
        auto c = make_coeffs(n, 0.0004);
        RackState s;
        for (std::size_t i = 0; i < n; ++i) {
            s.cold.push_back(temp(rng));
            s.exhaust.push_back(temp(rng));
            s.hot.push_back(temp(rng));
        }
        std::vector<double> powers(n);
        for (auto& p : powers) p = pw(rng);
        CoolingCommand cmd{20.0, 0.025};
        RackState coarse = step_rack(s, cmd, powers, c, 30.0, 1.0);
        RackState fine = step_rack(s, cmd, powers, c, 30.0, 0.05);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(coarse.cold[i] - fine.cold[i]) < 2e-5);
            CHECK(std::abs(coarse.exhaust[i] - fine.exhaust[i]) < 2e-5);
            CHECK(std::abs(coarse.hot[i] - fine.hot[i]) < 2e-5);
        }
    }
}

TEST_CASE("step_rack rejects non-positive dt") {
    auto c = make_coeffs(1);
    RackState s = RackState::uniform(1, 25.0);
    CHECK_THROWS_AS(step_rack(s, {22.0, 0.02}, {0.0}, c, 0.0), ConfigError);
}

TEST_CASE("step_rack: closed-loop heat balance at steady state") {
    auto c = make_coeffs(2, 0.0004);
    CoolingCommand cmd{20.0, 0.02};
    std::vector<double> powers{508.0, 522.0};
    RackState s = RackState::uniform(2, 20.0);
    // march to steady state
    for (int k = 0; k < 600; ++k) s = step_rack(s, cmd, powers, c, 30.0);
    const FlowField f = derive_flows(c, cmd, c.fan_flows(cmd));
    RackState d = rack_derivatives(s, cmd, f, powers, c);
    double dnorm = 0;
    for (std::size_t i = 0; i < 2; ++i)
        dnorm += d.cold[i] * d.cold[i] + d.exhaust[i] * d.exhaust[i] + d.hot[i] * d.hot[i];
    REQUIRE(std::sqrt(dnorm) < 1e-6);
    const double q = thermal_load(s, cmd, c);
    CHECK(q == doctest::Approx(508.0 + 522.0).epsilon(0.02));
}

TEST_CASE("step_rack: raising one server's power raises its own exhaust") {
    auto c = make_coeffs(3);
    CoolingCommand cmd{20.0, 0.02};
    RackState s = RackState::uniform(3, 30.0);
    RackState lo = step_rack(s, cmd, {300, 300, 300}, c, 30.0);
    RackState hi = step_rack(s, cmd, {300, 400, 300}, c, 30.0);
    CHECK(hi.exhaust[1] > lo.exhaust[1]);
    CHECK(hi.exhaust[0] == doctest::Approx(lo.exhaust[0]));
}

TEST_CASE("spatial ordering: downstream exhaust temperatures dominate upstream") {
    // uniform supply split, uniform load; downstream servers never run cooler
    auto c = make_coeffs(6, 0.0005);
    CoolingCommand cmd{19.0, 0.024};
    std::vector<double> powers(6, 350.0);
    RackState s = RackState::uniform(6, 19.0);
    for (int k = 0; k < 800; ++k) s = step_rack(s, cmd, powers, c, 30.0);
    for (std::size_t i = 1; i < 6; ++i) CHECK(s.exhaust[i] >= s.exhaust[i - 1] - 1e-9);
    for (std::size_t i = 1; i < 6; ++i) CHECK(s.hot[i] >= s.hot[i - 1] - 1e-9);

    // servers far from the cooling unit get a smaller supply share under the
    // decay preset and run strictly hotter
    auto d = make_coeffs(6, 0.0005);
    d.supply_fraction = ThermalCoefficients::linear_decay_fractions(6);
    RackState s2 = RackState::uniform(6, 19.0);
    for (int k = 0; k < 800; ++k) s2 = step_rack(s2, cmd, powers, d, 30.0);
    for (std::size_t i = 1; i < 6; ++i) CHECK(s2.exhaust[i] > s2.exhaust[i - 1] + 1e-6);
    CHECK(s2.exhaust[5] > s2.exhaust[0] + 0.5);
}

TEST_CASE("return temperature is the hot-zone mean") {
    RackState s;
    s.cold = {20, 20, 20};
    s.exhaust = {30, 30, 30};
    s.hot = {40, 40, 40};
    CHECK(return_temperature(s) == doctest::Approx(40.0));
    s.cold = {20, 20};
    s.exhaust = {30, 30};
    s.hot = {30, 50};
    CHECK(return_temperature(s) == doctest::Approx(40.0));
    s.cold = {20};
    s.exhaust = {45};
    s.hot = {47.4};
    CHECK(return_temperature(s) == doctest::Approx(47.4));
    RackState empty;
    CHECK_THROWS_AS(return_temperature(empty), DimensionError);
}

TEST_CASE("thermal load arithmetic and linearity in flow") {
    auto c = make_coeffs(1);
    RackState s;
    s.cold = {20};
    s.exhaust = {25};
    s.hot = {32};
    CHECK(thermal_load(s, {32.0, 0.02}, c) == doctest::Approx(0.0));
    s.hot = {30};
    const double q1 = thermal_load(s, {20.0, 0.02}, c);
    CHECK(q1 == doctest::Approx(239.19));
    const double q2 = thermal_load(s, {20.0, 0.04}, c);
    CHECK(q2 == doctest::Approx(2 * q1));
    // transient negative load is reported as-is
    s.hot = {15};
    CHECK(thermal_load(s, {20.0, 0.02}, c) < 0);
}

TEST_CASE("COP quadratic") {
    CoolingPowerCoefficients c;
    c.cop[0] = 3;
    c.cop[1] = 0;
    c.cop[2] = 0;
    CHECK(cop(25.0, c) == doctest::Approx(3.0));
    CoolingPowerCoefficients d; // library defaults
    CHECK(cop(18.0, d) == doctest::Approx(2.6756).epsilon(1e-12));
    CHECK(cop(27.0, d) == doctest::Approx(5.4368).epsilon(1e-12));
    CoolingPowerCoefficients bad;
    bad.cop[0] = -10;
    bad.cop[1] = 0;
    bad.cop[2] = 0;
    CHECK_THROWS_AS(cop(20.0, bad), ConfigError);
}

TEST_CASE("cooling power composition") {
    CoolingPowerCoefficients c;
    c.fan[0] = c.fan[1] = c.fan[2] = 0;
    CHECK(cooling_power(0.0, {22.0, 0.02}, c).total_w == doctest::Approx(0.0));

    CoolingPowerCoefficients d;
    d.fan[0] = d.fan[1] = d.fan[2] = 0;
    const auto p = cooling_power(239.19, {18.0, 0.02}, d);
    CHECK(p.source_w == doctest::Approx(89.397).epsilon(1e-4));

    // negative transient load draws no chiller power
    CHECK(cooling_power(-50.0, {18.0, 0.02}, d).source_w == doctest::Approx(0.0));

    // quadratic fan term makes total strictly increasing in flow
    CoolingPowerCoefficients e;
    double prev = -1;
    for (double phi = 0.009; phi <= 0.03; phi += 0.003) {
        const double tot = cooling_power(100.0, {22.0, phi}, e).total_w;
        CHECK(tot > prev);
        prev = tot;
    }
}

TEST_CASE("thermal coefficient validation") {
    auto c = make_coeffs(2);
    c.supply_fraction = {0.6, 0.5};
    CHECK_THROWS_AS(c.validate(2), ConfigError);
    c.supply_fraction = {0.5, 0.5};
    CHECK_NOTHROW(c.validate(2));
    auto decay = ThermalCoefficients::linear_decay_fractions(4);
    CHECK(decay[0] > decay[3]);
    double sum = 0;
    for (double b : decay) sum += b;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}
