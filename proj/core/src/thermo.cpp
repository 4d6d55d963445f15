#include "rackctl/thermo.hpp"

#include <algorithm>
#include <cmath>

#include "rackctl/errors.hpp"

namespace rackctl {

void ThermalCoefficients::validate(std::size_t n_servers) const {
    if (air_density <= 0 || specific_heat <= 0 || cold_volume <= 0 || hot_volume <= 0 ||
        server_capacitance <= 0)
        throw ConfigError("thermo: densities, volumes and capacitance must be positive");
    if (leakage_flow < 0) throw ConfigError("thermo: leakage_flow must be >= 0");
    if (supply_fraction.size() != n_servers)
        throw DimensionError("thermo: supply_fraction length " +
                             std::to_string(supply_fraction.size()) + " != server count " +
                             std::to_string(n_servers));
    double sum = 0;
    for (double b : supply_fraction) {
        if (b < 0) throw ConfigError("thermo: supply_fraction entries must be >= 0");
        sum += b;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("thermo: supply_fraction must sum to 1 (got " + std::to_string(sum) + ")");
}

std::vector<double> ThermalCoefficients::uniform_fractions(std::size_t n) {
    return std::vector<double>(n, n ? 1.0 / static_cast<double>(n) : 0.0);
}

std::vector<double> ThermalCoefficients::linear_decay_fractions(std::size_t n) {
    // weights n, n-1, ..., 1 normalized; server 0 sits next to the RCU.
    std::vector<double> b(n);
    double total = static_cast<double>(n) * (n + 1) / 2.0;
    for (std::size_t i = 0; i < n; ++i) b[i] = static_cast<double>(n - i) / total;
    return b;
}

std::vector<double> ThermalCoefficients::fan_flows(const CoolingCommand& cmd) const {
    std::vector<double> fans(supply_fraction.size());
    for (std::size_t i = 0; i < fans.size(); ++i)
        fans[i] = fan_tracks_supply ? supply_fraction[i] * cmd.supply_flow_m3s + leakage_flow
                                    : server_fan_flow;
    return fans;
}

ThermalCoefficients ThermalCoefficients::from_config(const Config& cfg, std::size_t n_servers) {
    ThermalCoefficients c;
    c.air_density = cfg.get_double("thermo.air_density", c.air_density);
    c.specific_heat = cfg.get_double("thermo.specific_heat", c.specific_heat);
    c.cold_volume = cfg.get_double("thermo.cold_zone_volume", c.cold_volume);
    c.hot_volume = cfg.get_double("thermo.hot_zone_volume", c.hot_volume);
    c.server_capacitance = cfg.get_double("thermo.server_capacitance", c.server_capacitance);
    c.leakage_flow = cfg.get_double("thermo.leakage_flow", c.leakage_flow);
    c.server_fan_flow = cfg.get_double("thermo.server_fan_flow", c.server_fan_flow);
    const std::string fan_mode = cfg.get_string("thermo.server_fan_mode", "tracking");
    if (fan_mode == "tracking")
        c.fan_tracks_supply = true;
    else if (fan_mode == "constant")
        c.fan_tracks_supply = false;
    else
        throw ConfigError("thermo.server_fan_mode: unknown mode '" + fan_mode + "'");
    std::string preset = cfg.get_string("thermo.supply_fraction_preset", "uniform");
    if (preset == "uniform")
        c.supply_fraction = uniform_fractions(n_servers);
    else if (preset == "linear_decay")
        c.supply_fraction = linear_decay_fractions(n_servers);
    else
        throw ConfigError("thermo.supply_fraction_preset: unknown preset '" + preset + "'");
    return c;
}

RackState RackState::uniform(std::size_t n, double temp_c) {
    RackState s;
    s.cold.assign(n, temp_c);
    s.exhaust.assign(n, temp_c);
    s.hot.assign(n, temp_c);
    return s;
}

void RackState::validate() const {
    if (exhaust.size() != cold.size() || hot.size() != cold.size())
        throw DimensionError("rack state: zone vectors have mismatched lengths");
    for (std::size_t i = 0; i < cold.size(); ++i)
        if (!std::isfinite(cold[i]) || !std::isfinite(exhaust[i]) || !std::isfinite(hot[i]))
            throw IntegrationError("rack state: non-finite temperature at server " + std::to_string(i));
}

CoolingCommand CoolingCommandBounds::clamp(CoolingCommand cmd) const {
    cmd.supply_temp_c = std::clamp(cmd.supply_temp_c, supply_temp_min, supply_temp_max);
    cmd.supply_flow_m3s = std::clamp(cmd.supply_flow_m3s, supply_flow_min, supply_flow_max);
    return cmd;
}

bool CoolingCommandBounds::contains(const CoolingCommand& cmd, double tol) const {
    return cmd.supply_temp_c >= supply_temp_min - tol && cmd.supply_temp_c <= supply_temp_max + tol &&
           cmd.supply_flow_m3s >= supply_flow_min - tol && cmd.supply_flow_m3s <= supply_flow_max + tol;
}

CoolingPowerCoefficients CoolingPowerCoefficients::from_config(const Config& cfg) {
    CoolingPowerCoefficients c;
    auto a = cfg.get_double_list("thermo.cop_coefficients", {c.cop[0], c.cop[1], c.cop[2]});
    auto d = cfg.get_double_list("thermo.fan_coefficients", {c.fan[0], c.fan[1], c.fan[2]});
    if (a.size() != 3 || d.size() != 3)
        throw ConfigError("thermo.cop_coefficients / fan_coefficients must have 3 entries");
    std::copy(a.begin(), a.end(), c.cop);
    std::copy(d.begin(), d.end(), c.fan);
    return c;
}

FlowField derive_flows(const ThermalCoefficients& coeffs, const CoolingCommand& cmd,
                       const std::vector<double>& fan_flows) {
    const std::size_t n = fan_flows.size();
    if (coeffs.supply_fraction.size() != n)
        throw DimensionError("derive_flows: supply_fraction length != server count");
    for (double f : fan_flows)
        if (f < 0) throw ConfigError("derive_flows: fan flows must be >= 0");

    FlowField ff;
    ff.server_fan = fan_flows;
    ff.cold_coupling.assign(n, 0.0);
    ff.hot_coupling.assign(n, 0.0);

    // Cold chain: zone i receives b_i*supply + upstream coupling + leakage and
    // emits fan flow plus the downstream coupling. Hot chain mirrors it.
    double cold_in = 0.0;
    double hot_in = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double out_cold = coeffs.supply_fraction[i] * cmd.supply_flow_m3s + cold_in +
                          coeffs.leakage_flow - fan_flows[i];
        if (out_cold < 0) {
            out_cold = 0;
            ff.clamped = true;
        }
        ff.cold_coupling[i] = out_cold;
        cold_in = out_cold;

        double out_hot = fan_flows[i] + hot_in - coeffs.leakage_flow;
        if (out_hot < 0) {
            out_hot = 0;
            ff.clamped = true;
        }
        ff.hot_coupling[i] = out_hot;
        hot_in = out_hot;
    }
    return ff;
}

RackState rack_derivatives(const RackState& state, const CoolingCommand& cmd,
                           const FlowField& flows, const std::vector<double>& server_powers,
                           const ThermalCoefficients& coeffs) {
    const std::size_t n = state.size();
    if (state.exhaust.size() != n || state.hot.size() != n)
        throw DimensionError("rack_derivatives: state vectors have mismatched lengths");
    if (flows.server_fan.size() != n || flows.cold_coupling.size() != n ||
        flows.hot_coupling.size() != n)
        throw DimensionError("rack_derivatives: flow field does not match server count");
    if (server_powers.size() != n)
        throw DimensionError("rack_derivatives: server_powers does not match server count");

    const double rho_cp = coeffs.air_density * coeffs.specific_heat;
    const double inv_cold = 1.0 / (rho_cp * coeffs.cold_volume);
    const double inv_hot = 1.0 / (rho_cp * coeffs.hot_volume);
    const double inv_cth = 1.0 / coeffs.server_capacitance;

    RackState d;
    d.cold.resize(n);
    d.exhaust.resize(n);
    d.hot.resize(n);

    for (std::size_t i = 0; i < n; ++i) {
        const double upstream_cold_flow = i == 0 ? 0.0 : flows.cold_coupling[i - 1];
        const double upstream_cold_temp = i == 0 ? cmd.supply_temp_c : state.cold[i - 1];
        const double upstream_hot_flow = i == 0 ? 0.0 : flows.hot_coupling[i - 1];
        const double upstream_hot_temp = i == 0 ? 0.0 : state.hot[i - 1];

        d.cold[i] = inv_cold * rho_cp *
                    (coeffs.supply_fraction[i] * cmd.supply_flow_m3s * cmd.supply_temp_c +
                     upstream_cold_flow * upstream_cold_temp +
                     coeffs.leakage_flow * state.hot[i] -
                     (flows.cold_coupling[i] + flows.server_fan[i]) * state.cold[i]);

        d.exhaust[i] = inv_cth *
                       (flows.server_fan[i] * rho_cp * (state.cold[i] - state.exhaust[i]) +
                        server_powers[i]);

        d.hot[i] = inv_hot * rho_cp *
                   (flows.server_fan[i] * state.exhaust[i] -
                    coeffs.leakage_flow * state.hot[i] +
                    upstream_hot_flow * upstream_hot_temp -
                    flows.hot_coupling[i] * state.hot[i]);
    }
    return d;
}

namespace {

void axpy(RackState& out, const RackState& base, const RackState& slope, double h) {
    const std::size_t n = base.size();
    for (std::size_t i = 0; i < n; ++i) {
        out.cold[i] = base.cold[i] + h * slope.cold[i];
        out.exhaust[i] = base.exhaust[i] + h * slope.exhaust[i];
        out.hot[i] = base.hot[i] + h * slope.hot[i];
    }
}

void check_finite(const RackState& s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!std::isfinite(s.cold[i]))
            throw IntegrationError("step_rack: non-finite cold zone at server " + std::to_string(i));
        if (!std::isfinite(s.exhaust[i]))
            throw IntegrationError("step_rack: non-finite exhaust zone at server " + std::to_string(i));
        if (!std::isfinite(s.hot[i]))
            throw IntegrationError("step_rack: non-finite hot zone at server " + std::to_string(i));
    }
}

} // namespace

RackState step_rack(const RackState& state, const CoolingCommand& cmd,
                    const std::vector<double>& server_powers, const ThermalCoefficients& coeffs,
                    double dt, double max_substep) {
    if (dt <= 0) throw ConfigError("step_rack: dt must be > 0");
    if (max_substep <= 0) throw ConfigError("step_rack: max_substep must be > 0");

    const std::size_t n = state.size();
    const FlowField flows = derive_flows(coeffs, cmd, coeffs.fan_flows(cmd));

    const int substeps = std::max(1, static_cast<int>(std::ceil(dt / max_substep)));
    const double h = dt / substeps;

    RackState x = state;
    RackState tmp = state; // scratch for stage evaluations
    for (int s = 0; s < substeps; ++s) {
        RackState k1 = rack_derivatives(x, cmd, flows, server_powers, coeffs);
        axpy(tmp, x, k1, h / 2);
        RackState k2 = rack_derivatives(tmp, cmd, flows, server_powers, coeffs);
        axpy(tmp, x, k2, h / 2);
        RackState k3 = rack_derivatives(tmp, cmd, flows, server_powers, coeffs);
        axpy(tmp, x, k3, h);
        RackState k4 = rack_derivatives(tmp, cmd, flows, server_powers, coeffs);
        for (std::size_t i = 0; i < n; ++i) {
            x.cold[i] += h / 6 * (k1.cold[i] + 2 * k2.cold[i] + 2 * k3.cold[i] + k4.cold[i]);
            x.exhaust[i] += h / 6 * (k1.exhaust[i] + 2 * k2.exhaust[i] + 2 * k3.exhaust[i] + k4.exhaust[i]);
            x.hot[i] += h / 6 * (k1.hot[i] + 2 * k2.hot[i] + 2 * k3.hot[i] + k4.hot[i]);
        }
    }
    check_finite(x);
    return x;
}

double return_temperature(const RackState& state) {
    if (state.size() == 0)
        throw DimensionError("return_temperature: undefined for an empty rack");
    double sum = 0;
    for (double t : state.hot) sum += t;
    return sum / static_cast<double>(state.size());
}

double thermal_load(const RackState& state, const CoolingCommand& cmd,
                    const ThermalCoefficients& coeffs) {
    const double ret = return_temperature(state);
    return coeffs.air_density * cmd.supply_flow_m3s * coeffs.specific_heat *
           (ret - cmd.supply_temp_c);
}

double cop(double supply_temp_c, const CoolingPowerCoefficients& coeffs) {
    const double v = coeffs.cop[0] + coeffs.cop[1] * supply_temp_c +
                     coeffs.cop[2] * supply_temp_c * supply_temp_c;
    if (v <= 0)
        throw ConfigError("cop: coefficients give non-positive COP at " +
                          std::to_string(supply_temp_c) + " degC");
    return v;
}

CoolingPowerBreakdown cooling_power(double q_load_w, const CoolingCommand& cmd,
                                    const CoolingPowerCoefficients& coeffs) {
    CoolingPowerBreakdown out;
    // Chillers don't generate from a negative transient load.
    out.source_w = std::max(q_load_w, 0.0) / cop(cmd.supply_temp_c, coeffs);
    const double phi = cmd.supply_flow_m3s;
    out.fan_w = coeffs.fan[0] + coeffs.fan[1] * phi + coeffs.fan[2] * phi * phi;
    out.total_w = out.source_w + out.fan_w;
    return out;
}

} // namespace rackctl
