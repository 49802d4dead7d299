#pragma once

// Measurement scenarios: missing-measurement masks under several placement
// strategies, seeded noise draws, CSV persistence and the injection
// retrievability rule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gbpse/bp.hpp"
#include "gbpse/error.hpp"
#include "gbpse/factor_graph.hpp"
#include "gbpse/grid.hpp"

namespace gbpse {

/// Default measurement variance, MW^2.
inline constexpr double kDefaultVariance = 1e-4;

enum class PlacementStrategy { Uniform, LeastConnected, MinSumMoverC };

inline std::string to_string(PlacementStrategy s) {
    switch (s) {
    case PlacementStrategy::Uniform: return "uniform";
    case PlacementStrategy::LeastConnected: return "least-connected";
    case PlacementStrategy::MinSumMoverC: return "min-sum-m-over-c";
    }
    return "?";
}

inline PlacementStrategy parse_strategy(const std::string& s) {
    if (s == "uniform") return PlacementStrategy::Uniform;
    if (s == "least-connected") return PlacementStrategy::LeastConnected;
    if (s == "min-sum-m-over-c") return PlacementStrategy::MinSumMoverC;
    throw ContractError("unknown placement strategy '" + s + "'");
}

struct MissingFractions {
    double flow = 0.0;
    double injection = 0.0;

    static MissingFractions equal(double f) { return {f, f}; }
};

struct MissingMask {
    std::set<std::size_t> missing_flows;       ///< line indices
    std::set<std::size_t> missing_injections;  ///< bus indices
    PlacementStrategy strategy = PlacementStrategy::Uniform;
    MissingFractions fractions;
    bool rounded = false;  ///< a fraction * population was not integral
};

/// Half-up rounding of fraction * population; sets `rounded` when inexact.
inline std::size_t missing_count(double fraction, std::size_t population, bool& rounded) {
    const double exact = fraction * static_cast<double>(population);
    const double nearest = std::round(exact);
    if (std::abs(exact - nearest) <= 1e-9 * std::max(1.0, exact)) return static_cast<std::size_t>(nearest);
    rounded = true;
    return static_cast<std::size_t>(std::floor(exact + 0.5));
}

/// Connectivity c_i: number of lines incident to each bus.
inline std::vector<int> connectivity(const GridCase& gc) {
    std::vector<int> c(gc.buses.size(), 0);
    for (const auto& ln : gc.lines) {
        ++c[gc.bus_index(ln.from_bus)];
        ++c[gc.bus_index(ln.to_bus)];
    }
    return c;
}

/// For every bus index, the bus index at the far end of each incident line.
inline std::vector<std::vector<std::size_t>> neighbour_buses(const GridCase& gc) {
    std::vector<std::vector<std::size_t>> nb(gc.buses.size());
    for (const auto& ln : gc.lines) {
        const auto f = gc.bus_index(ln.from_bus), t = gc.bus_index(ln.to_bus);
        nb[f].push_back(t);
        nb[t].push_back(f);
    }
    return nb;
}

/// m_i: incident lines whose far-end bus lacks an injection measurement.
inline std::vector<int> missing_neighbour_counts(const GridCase& gc, const std::vector<bool>& injection_missing) {
    const auto nb = neighbour_buses(gc);
    std::vector<int> m(gc.buses.size(), 0);
    for (std::size_t i = 0; i < nb.size(); ++i)
        for (auto j : nb[i]) m[i] += injection_missing[j];
    return m;
}

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose)};
    return std::mt19937_64(seq);
}

/// k distinct indices from [0, n), uniformly.
inline std::set<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k && i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    return {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(k, n))};
}

}  // namespace detail

/// Missing-measurement mask. Flow measurements are always removed uniformly
/// at random; the strategy decides which injection measurements go.
///
/// - Uniform: uniformly random injection subset.
/// - LeastConnected: ascending connectivity, ties by ascending bus id.
/// - MinSumMoverC: greedy, each step removes the injection whose removal
///   raises sum_i m_i / c_i least (ties by bus id). Removing bus j raises the
///   sum by sum over its lines of 1 / c_(far end), independent of earlier
///   removals, so the greedy order is a sort on that increment.
inline MissingMask make_mask(const GridCase& gc, MissingFractions fractions, PlacementStrategy strategy,
                             std::uint64_t seed) {
    if (!(fractions.flow >= 0 && fractions.flow <= 1 && fractions.injection >= 0 && fractions.injection <= 1))
        throw ContractError("missing fractions must lie in [0, 1]");
    MissingMask mask;
    mask.strategy = strategy;
    mask.fractions = fractions;
    const auto n_flow = missing_count(fractions.flow, gc.lines.size(), mask.rounded);
    const auto n_inj = missing_count(fractions.injection, gc.buses.size(), mask.rounded);

    auto rng = detail::stream(seed, 1);
    mask.missing_flows = detail::sample_without_replacement(gc.lines.size(), n_flow, rng);

    switch (strategy) {
    case PlacementStrategy::Uniform:
        mask.missing_injections = detail::sample_without_replacement(gc.buses.size(), n_inj, rng);
        break;
    case PlacementStrategy::LeastConnected: {
        const auto c = connectivity(gc);
        std::vector<std::size_t> order(gc.buses.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
            return c[a] != c[b] ? c[a] < c[b] : gc.buses[a].id < gc.buses[b].id;
        });
        mask.missing_injections.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_inj));
        break;
    }
    case PlacementStrategy::MinSumMoverC: {
        const auto c = connectivity(gc);
        const auto nb = neighbour_buses(gc);
        std::vector<double> increment(gc.buses.size(), 0.0);
        for (std::size_t j = 0; j < nb.size(); ++j)
            for (auto i : nb[j]) increment[j] += 1.0 / c[i];
        std::vector<std::size_t> order(gc.buses.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
            return increment[a] != increment[b] ? increment[a] < increment[b] : gc.buses[a].id < gc.buses[b].id;
        });
        mask.missing_injections.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_inj));
        break;
    }
    }
    return mask;
}

/// z = true value + N(0, variance) for present measurements; masked entries
/// get variance +inf and no draw. Deterministic in `seed`.
inline MeasurementSet sample_measurements(const GridCase& gc, const MissingMask& mask, double variance,
                                          std::uint64_t seed) {
    if (!(variance > 0)) throw ContractError("measurement variance must be positive");
    MeasurementSet m;
    m.seed = seed;
    auto rng = detail::stream(seed, 2);
    std::normal_distribution<double> noise(0.0, std::sqrt(variance));
    m.flow.resize(gc.lines.size());
    for (std::size_t l = 0; l < gc.lines.size(); ++l) {
        if (mask.missing_flows.count(l)) continue;
        m.flow[l] = {gc.lines[l].flow_true + noise(rng), variance};
    }
    m.injection.resize(gc.buses.size());
    for (std::size_t i = 0; i < gc.buses.size(); ++i) {
        if (mask.missing_injections.count(i)) continue;
        m.injection[i] = {gc.buses[i].injection_true + noise(rng), variance};
    }
    return m;
}

/// Injection at bus index `bus` is retrievable when measured directly or
/// when every incident line flow is retrievable.
inline bool injection_retrievable(const GridCase& gc, std::size_t bus, const MeasurementSet& meas,
                                  const BpResult& bp, const std::vector<std::vector<std::size_t>>& incidence) {
    if (meas.injection.at(bus).present()) return true;
    for (auto l : incidence[bus])
        if (!bp.retrievable(l)) return false;
    (void)gc;
    return true;
}

inline bool injection_retrievable(const GridCase& gc, int bus_id, const MeasurementSet& meas, const BpResult& bp) {
    return injection_retrievable(gc, gc.bus_index(bus_id), meas, bp, gc.incidence());
}

// ---- CSV ------------------------------------------------------------------
//
//   kind,id,z,variance
//   flow,<line id>,<z>,<variance or inf>
//   injection,<bus id>,<z>,<variance or inf>

inline void write_measurements_csv(std::ostream& out, const GridCase& gc, const MeasurementSet& m) {
    char buf[128];
    out << "kind,id,z,variance\n";
    auto row = [&](const char* kind, int id, const Measurement& x) {
        if (x.present())
            std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g\n", kind, id, x.z, x.variance);
        else
            std::snprintf(buf, sizeof buf, "%s,%d,%.17g,inf\n", kind, id, x.z);
        out << buf;
    };
    for (std::size_t l = 0; l < gc.lines.size(); ++l) row("flow", gc.lines[l].id, m.flow[l]);
    for (std::size_t i = 0; i < gc.buses.size(); ++i) row("injection", gc.buses[i].id, m.injection[i]);
}

/// Rows may come in any order; lines or buses not listed are missing.
inline MeasurementSet read_measurements_csv(std::istream& in, const GridCase& gc) {
    MeasurementSet m;
    m.flow.assign(gc.lines.size(), Measurement{});
    m.injection.assign(gc.buses.size(), Measurement{});
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || (lineno == 1 && line.starts_with("kind"))) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 4) throw ParseError("expected 4 fields", lineno);
        const int id = detail::require_int(f[1], "id", lineno);
        Measurement x;
        x.z = detail::require_double(f[2], "z", lineno, false);
        const auto v = detail::trim(f[3]);
        if (v == "inf" || v == "Inf" || v == "INF") {
            x.variance = kInf;
        } else {
            x.variance = detail::require_double(v, "variance", lineno, false);
            if (!(x.variance > 0)) throw ParseError("variance must be positive", lineno);
        }
        try {
            if (f[0] == "flow")
                m.flow[gc.line_index(id)] = x;
            else if (f[0] == "injection")
                m.injection[gc.bus_index(id)] = x;
            else
                throw ParseError("unknown kind '" + f[0] + "'", lineno);
        } catch (const TopologyError& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return m;
}

}  // namespace gbpse
