#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rackctl/config.hpp"

namespace rackctl {

// RCU actuator setpoints.
struct CoolingCommand {
    double supply_temp_c = 22.5;  // degC
    double supply_flow_m3s = 0.02; // m^3/s
};

struct CoolingCommandBounds {
    double supply_temp_min = 18.0;
    double supply_temp_max = 27.0;
    double supply_flow_min = 0.009;
    double supply_flow_max = 0.03;

    CoolingCommand clamp(CoolingCommand cmd) const;
    bool contains(const CoolingCommand& cmd, double tol = 1e-12) const;
};

// Physical constants of the rack air model. supply_fraction holds one entry
// per server and must sum to 1.
struct ThermalCoefficients {
    double air_density = 1.19;        // kg/m^3
    double specific_heat = 1005.0;    // J/(kg K)
    double cold_volume = 0.1;         // m^3 per server
    double hot_volume = 0.1;          // m^3 per server
    double server_capacitance = 5000; // J/K
    double leakage_flow = 0.0;        // m^3/s, hot -> cold per server
    // Server fans either draw their share of the supplied air (tracking,
    // which closes the loop exactly) or run at a fixed constant.
    bool fan_tracks_supply = true;
    double server_fan_flow = 0.0025;  // m^3/s per server in constant mode
    std::vector<double> supply_fraction;

    // Per-server fan flows under the configured fan policy.
    std::vector<double> fan_flows(const CoolingCommand& cmd) const;

    void validate(std::size_t n_servers) const;

    static std::vector<double> uniform_fractions(std::size_t n);
    // Preset emphasizing servers near the cooling unit (index 0 gets the most
    // supply air); produces the downstream temperature gradient.
    static std::vector<double> linear_decay_fractions(std::size_t n);

    static ThermalCoefficients from_config(const Config& cfg, std::size_t n_servers);
};

// Zone temperatures for the active part of the rack, one entry per server.
struct RackState {
    std::vector<double> cold;    // cold-aisle zone, degC
    std::vector<double> exhaust; // server exhaust zone, degC
    std::vector<double> hot;     // hot-aisle zone, degC

    std::size_t size() const { return cold.size(); }
    static RackState uniform(std::size_t n, double temp_c);
    void validate() const;
};

// Inter-zone airflow pattern. cold_coupling[i] feeds cold zone i+1 from
// cold zone i; hot_coupling[i] carries hot zone i's outflow downstream.
// Index i covers the boundary leaving server i; the flow entering server 0
// from upstream is zero by construction.
struct FlowField {
    std::vector<double> server_fan;    // m^3/s through each server
    std::vector<double> cold_coupling; // m^3/s leaving cold zone i downstream
    std::vector<double> hot_coupling;  // m^3/s leaving hot zone i downstream
    bool clamped = false;              // closure hit a negative flow and was clamped
};

// Chiller COP quadratic and fan power quadratic, ascending powers.
struct CoolingPowerCoefficients {
    double cop[3] = {0.458, 0.0008, 0.0068};       // alpha0..alpha2
    double fan[3] = {5.0, 800.0, 351000.0};        // delta0..delta2, W terms

    static CoolingPowerCoefficients from_config(const Config& cfg);
};

struct CoolingPowerBreakdown {
    double source_w = 0; // chiller draw
    double fan_w = 0;
    double total_w = 0;
};

// Closes the per-zone mass balance given the supply split, server fan flows
// and leakage. Flows that would go negative are clamped to zero and flagged.
FlowField derive_flows(const ThermalCoefficients& coeffs, const CoolingCommand& cmd,
                       const std::vector<double>& fan_flows);

// Time derivative of every zone temperature.
// server_powers[i] is the total electrical power dissipated in server i (W).
RackState rack_derivatives(const RackState& state, const CoolingCommand& cmd,
                           const FlowField& flows, const std::vector<double>& server_powers,
                           const ThermalCoefficients& coeffs);

// Advances the state by dt seconds with classical RK4, sub-stepped so no
// internal step exceeds max_substep (stability margin for the fast zones).
RackState step_rack(const RackState& state, const CoolingCommand& cmd,
                    const std::vector<double>& server_powers, const ThermalCoefficients& coeffs,
                    double dt, double max_substep = 1.0);

// Mean hot-zone temperature fed back to the RCU.
double return_temperature(const RackState& state);

// Heat the RCU is removing right now; may be negative during transients.
double thermal_load(const RackState& state, const CoolingCommand& cmd,
                    const ThermalCoefficients& coeffs);

double cop(double supply_temp_c, const CoolingPowerCoefficients& coeffs);

// Chiller power (negative loads count as zero heat), fan power, and total.
CoolingPowerBreakdown cooling_power(double q_load_w, const CoolingCommand& cmd,
                                    const CoolingPowerCoefficients& coeffs);

} // namespace rackctl
