#pragma once

// Coarse-grained state estimation: group buses into areas, estimate the net
// flow between each pair of areas and its full covariance. Covariances come
// from linear response, i.e. the sensitivity of BP means to a perturbation of
// a flow measurement, which is exact even where BP variances are not.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gbpse/bp.hpp"
#include "gbpse/error.hpp"
#include "gbpse/exact.hpp"
#include "gbpse/factor_graph.hpp"
#include "gbpse/grid.hpp"
#include "gbpse/parallel.hpp"

namespace gbpse {

struct Partition {
    std::string name;
    std::map<int, std::string> area_of;  ///< bus id -> area label
    std::vector<std::string> areas;      ///< ordered labels

    std::size_t area_index(const std::string& label) const {
        const auto it = std::find(areas.begin(), areas.end(), label);
        if (it == areas.end()) throw ContractError("unknown area '" + label + "'");
        return static_cast<std::size_t>(it - areas.begin());
    }

    /// Every bus assigned to a listed area, and at least two areas in use.
    void validate(const GridCase& gc) const {
        if (areas.size() < 2) throw ContractError("a partition needs at least two areas");
        std::set<std::string> used;
        for (const auto& b : gc.buses) {
            const auto it = area_of.find(b.id);
            if (it == area_of.end()) throw ContractError("bus " + std::to_string(b.id) + " has no area");
            area_index(it->second);
            used.insert(it->second);
        }
        for (const auto& [bus, label] : area_of)
            if (!gc.has_bus(bus)) throw ContractError("partition names unknown bus " + std::to_string(bus));
        if (used.size() != areas.size()) throw ContractError("every area must contain at least one bus");
    }
};

/// Whether the buses of `label` induce a connected subgraph.
inline bool area_connected(const GridCase& gc, const Partition& p, const std::string& label) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < gc.buses.size(); ++i)
        if (p.area_of.at(gc.buses[i].id) == label) members.push_back(i);
    if (members.empty()) return false;
    std::vector<std::vector<std::size_t>> adj(gc.buses.size());
    for (const auto& ln : gc.lines) {
        const auto f = gc.bus_index(ln.from_bus), t = gc.bus_index(ln.to_bus);
        adj[f].push_back(t);
        adj[t].push_back(f);
    }
    std::vector<bool> seen(gc.buses.size(), false);
    std::vector<std::size_t> stack{members.front()};
    seen[members.front()] = true;
    std::size_t reached = 0;
    while (!stack.empty()) {
        const auto u = stack.back();
        stack.pop_back();
        ++reached;
        for (auto v : adj[u])
            if (!seen[v] && p.area_of.at(gc.buses[v].id) == label) {
                seen[v] = true;
                stack.push_back(v);
            }
    }
    return reached == members.size();
}

/// Text format: one `bus_id area_label` pair per line, `#` comments allowed.
/// Areas are ordered by first appearance.
inline Partition read_partition(std::istream& in, std::string name = "partition") {
    Partition p;
    p.name = std::move(name);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string bus, label, extra;
        if (!(ss >> bus)) continue;
        if (!(ss >> label) || (ss >> extra)) throw ParseError("expected `bus_id area_label`", lineno);
        const int id = detail::require_int(bus, "bus id", lineno);
        if (!p.area_of.emplace(id, label).second)
            throw ParseError("bus " + bus + " assigned twice", lineno);
        if (std::find(p.areas.begin(), p.areas.end(), label) == p.areas.end()) p.areas.push_back(label);
    }
    return p;
}

inline void write_partition(std::ostream& out, const Partition& p) {
    for (const auto& [bus, label] : p.area_of) out << bus << ' ' << label << '\n';
}

struct BoundaryLine {
    std::size_t line = 0;  ///< line index
    int sign = 1;          ///< +1 when the line is oriented from the first area to the second
};

struct AreaFlowReport {
    std::vector<std::pair<std::string, std::string>> pairs;  ///< (Y, Z), Y before Z in area order
    std::vector<std::vector<BoundaryLine>> boundary;        ///< per pair
    std::vector<double> flows;                               ///< MW, Y -> Z
    std::vector<bool> available;                             ///< all boundary beliefs finite
    Eigen::MatrixXd covariance;                              ///< MW^2, over pairs
    double trace = 0.0;

    /// Flow from area `y` to area `z`; antisymmetric by construction.
    double flow(const std::string& y, const std::string& z) const {
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            if (pairs[k].first == y && pairs[k].second == z) return flows[k];
            if (pairs[k].first == z && pairs[k].second == y) return -flows[k];
        }
        throw ContractError("no area pair " + y + "/" + z);
    }
};

/// Area pairs in order and the signed lines crossing each.
inline AreaFlowReport boundary_structure(const GridCase& gc, const Partition& p) {
    p.validate(gc);
    AreaFlowReport r;
    const std::size_t na = p.areas.size();
    std::vector<std::vector<int>> pair_index(na, std::vector<int>(na, -1));
    for (std::size_t y = 0; y < na; ++y)
        for (std::size_t z = y + 1; z < na; ++z) {
            pair_index[y][z] = static_cast<int>(r.pairs.size());
            r.pairs.emplace_back(p.areas[y], p.areas[z]);
        }
    r.boundary.resize(r.pairs.size());
    for (std::size_t l = 0; l < gc.lines.size(); ++l) {
        const auto a = p.area_index(p.area_of.at(gc.lines[l].from_bus));
        const auto b = p.area_index(p.area_of.at(gc.lines[l].to_bus));
        if (a == b) continue;
        if (a < b)
            r.boundary[static_cast<std::size_t>(pair_index[a][b])].push_back({l, 1});
        else
            r.boundary[static_cast<std::size_t>(pair_index[b][a])].push_back({l, -1});
    }
    r.flows.assign(r.pairs.size(), 0.0);
    r.available.assign(r.pairs.size(), true);
    r.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(r.pairs.size()),
                                         static_cast<Eigen::Index>(r.pairs.size()));
    return r;
}

/// Inter-area flows as signed sums of boundary belief means. Covariance is
/// left at zero; see area_flow_covariance.
inline AreaFlowReport area_flows(const BpResult& bp, const Partition& p, const GridCase& gc) {
    auto r = boundary_structure(gc, p);
    for (std::size_t k = 0; k < r.pairs.size(); ++k)
        for (const auto& b : r.boundary[k]) {
            if (!bp.retrievable(b.line)) r.available[k] = false;
            r.flows[k] += b.sign * bp.beliefs[b.line].mean;
        }
    return r;
}

struct LinearResponseOptions {
    double epsilon_scale = 1e-3;  ///< perturbation relative to the measurement's standard deviation
    /// Tolerances for the perturbed runs. The mean difference is divided by
    /// 2 epsilon, so these must be far tighter than the defaults.
    BpOptions bp = [] {
        BpOptions o;
        o.tol_mean = 1e-13;
        o.tol_var = 1e-13;
        return o;
    }();
    int workers = 1;
};

/// cov(x_i, x_j) = sigma_j^2 * (mu_i(z_j + eps) - mu_i(z_j - eps)) / (2 eps),
/// eps = epsilon_scale * sigma_j, over the listed line indices. Perturbed runs
/// are warm-started from the converged unperturbed messages. The result is
/// symmetrized.
inline Eigen::MatrixXd linear_response_covariance(const FactorGraph& graph, const std::vector<std::size_t>& lines,
                                                  const LinearResponseOptions& lro = {}) {
    if (!(lro.epsilon_scale > 0)) throw ContractError("epsilon_scale must be positive");
    auto opts = lro.bp;
    opts.keep_messages = true;
    opts.record_trace = false;
    const auto base = run_bp(graph, opts);
    if (!base.converged) throw NumericalError("unperturbed BP run did not converge", base.iterations);
    for (auto l : lines) {
        if (l >= graph.n_variables()) throw ContractError("line index out of range");
        const auto line_id = graph.topology().variables[l].line_id;
        if (!graph.value(graph.flow_factor_of(l)).present())
            throw ContractError("line " + std::to_string(line_id) + " has no direct flow measurement to perturb");
        if (!base.retrievable(l)) throw ContractError("line " + std::to_string(line_id) + " is not retrievable");
    }

    const auto k = static_cast<Eigen::Index>(lines.size());
    Eigen::MatrixXd cov(k, k);
    std::vector<std::string> failures(lines.size());
    parallel_for(lines.size(), lro.workers, [&](std::size_t j) {
        const auto factor = graph.flow_factor_of(lines[j]);
        const auto m = graph.value(factor);
        const double eps = lro.epsilon_scale * std::sqrt(m.variance);
        const auto plus = run_bp(graph.with_value(factor, {m.z + eps, m.variance}), lro.bp, &base.messages);
        const auto minus = run_bp(graph.with_value(factor, {m.z - eps, m.variance}), lro.bp, &base.messages);
        if (!plus.converged || !minus.converged)
            throw NumericalError("perturbed BP run did not converge for line " +
                                 std::to_string(graph.topology().variables[lines[j]].line_id));
        for (std::size_t i = 0; i < lines.size(); ++i)
            cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                m.variance * (plus.beliefs[lines[i]].mean - minus.beliefs[lines[i]].mean) / (2.0 * eps);
    });
    return 0.5 * (cov + cov.transpose());
}

/// Aggregate a line covariance (indexed like `lines`) onto area pairs.
inline Eigen::MatrixXd aggregate_pair_covariance(const AreaFlowReport& r, const std::vector<std::size_t>& lines,
                                                 const Eigen::MatrixXd& line_cov) {
    std::map<std::size_t, Eigen::Index> pos;
    for (std::size_t i = 0; i < lines.size(); ++i) pos[lines[i]] = static_cast<Eigen::Index>(i);
    const auto np = static_cast<Eigen::Index>(r.pairs.size());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(np, np);
    for (Eigen::Index a = 0; a < np; ++a)
        for (Eigen::Index b = 0; b < np; ++b) {
            double s = 0.0;
            for (const auto& u : r.boundary[static_cast<std::size_t>(a)])
                for (const auto& v : r.boundary[static_cast<std::size_t>(b)])
                    s += u.sign * v.sign * line_cov(pos.at(u.line), pos.at(v.line));
            out(a, b) = s;
        }
    return out;
}

/// Flows and their covariance for a partition. Boundary lines with a direct
/// flow measurement go through linear response; covariance entries touching
/// an unmeasured boundary line come from the exact oracle. Pairs with a
/// non-retrievable boundary line are flagged unavailable and get an infinite
/// variance.
inline AreaFlowReport area_flow_covariance(const FactorGraph& graph, const Partition& p, const GridCase& gc,
                                           const LinearResponseOptions& lro = {}) {
    const auto bp = run_bp(graph, lro.bp);
    if (!bp.converged) throw NumericalError("BP did not converge", bp.iterations);
    auto r = area_flows(bp, p, gc);

    std::vector<std::size_t> lines, measured;
    std::vector<bool> usable(gc.lines.size(), false);
    for (std::size_t k = 0; k < r.pairs.size(); ++k) {
        if (!r.available[k]) continue;
        for (const auto& b : r.boundary[k])
            if (!usable[b.line]) {
                usable[b.line] = true;
                lines.push_back(b.line);
            }
    }
    std::sort(lines.begin(), lines.end());
    for (auto l : lines)
        if (graph.value(graph.flow_factor_of(l)).present()) measured.push_back(l);

    const auto n = static_cast<Eigen::Index>(lines.size());
    Eigen::MatrixXd line_cov = Eigen::MatrixXd::Zero(n, n);
    const auto lr = linear_response_covariance(graph, measured, lro);
    std::map<std::size_t, Eigen::Index> pos;
    for (std::size_t i = 0; i < lines.size(); ++i) pos[lines[i]] = static_cast<Eigen::Index>(i);
    for (std::size_t i = 0; i < measured.size(); ++i)
        for (std::size_t j = 0; j < measured.size(); ++j)
            line_cov(pos[measured[i]], pos[measured[j]]) =
                lr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    if (measured.size() != lines.size()) {
        const auto exact = wls_flows(graph);
        for (auto a : lines)
            for (auto b : lines) {
                const bool ma = graph.value(graph.flow_factor_of(a)).present();
                const bool mb = graph.value(graph.flow_factor_of(b)).present();
                if (ma && mb) continue;
                line_cov(pos[a], pos[b]) =
                    exact.covariance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            }
    }

    auto reachable = r;
    for (std::size_t k = 0; k < r.pairs.size(); ++k)
        if (!r.available[k]) reachable.boundary[k].clear();
    r.covariance = aggregate_pair_covariance(reachable, lines, line_cov);
    for (std::size_t k = 0; k < r.pairs.size(); ++k) {
        if (r.available[k]) continue;
        const auto i = static_cast<Eigen::Index>(k);
        r.covariance.row(i).setZero();
        r.covariance.col(i).setZero();
        r.covariance(i, i) = kInf;
    }
    r.trace = r.covariance.trace();
    return r;
}

/// Trace of the area-flow covariance, MW^2; lower is better.
inline double partition_score(const AreaFlowReport& r) { return r.trace; }

// ---- search -----------------------------------------------------------------

struct SearchOptions {
    std::uint64_t seed = 1;
    int steps = 20000;
    double initial_temperature = 0.1;  ///< relative to the starting objective
    double cooling = 0.9995;           ///< geometric factor per step
    double weight_trace = 1.0;
    double weight_imbalance = 0.0;     ///< times the variance of area sizes
};

struct SearchMove {
    int step = 0;
    int bus = 0;
    std::string from, to;
    double objective = 0.0;
    double temperature = 0.0;
};

struct SearchResult {
    Partition best;
    double best_objective = 0.0;
    double best_trace = 0.0;
    double initial_objective = 0.0;
    Partition initial;
    std::vector<SearchMove> accepted;  ///< audit log
    std::vector<double> objective_trace;
};

/// A connected n-area partition grown from random seed buses.
inline Partition random_connected_partition(const GridCase& gc, int n_areas, std::uint64_t seed) {
    if (n_areas < 2) throw ContractError("need at least two areas");
    if (static_cast<std::size_t>(n_areas) > gc.buses.size()) throw ContractError("more areas than buses");
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> adj(gc.buses.size());
    for (const auto& ln : gc.lines) {
        const auto f = gc.bus_index(ln.from_bus), t = gc.bus_index(ln.to_bus);
        adj[f].push_back(t);
        adj[t].push_back(f);
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<int> area(gc.buses.size(), -1);
        std::vector<std::size_t> order(gc.buses.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (int a = 0; a < n_areas; ++a) area[order[static_cast<std::size_t>(a)]] = a;
        std::size_t assigned = static_cast<std::size_t>(n_areas);
        while (assigned < gc.buses.size()) {
            std::vector<std::pair<std::size_t, int>> frontier;
            for (std::size_t u = 0; u < adj.size(); ++u)
                if (area[u] >= 0)
                    for (auto v : adj[u])
                        if (area[v] < 0) frontier.emplace_back(v, area[u]);
            if (frontier.empty()) break;
            std::uniform_int_distribution<std::size_t> pick(0, frontier.size() - 1);
            const auto [v, a] = frontier[pick(rng)];
            area[v] = a;
            ++assigned;
        }
        if (assigned < gc.buses.size()) continue;
        Partition p;
        p.name = "random";
        for (int a = 0; a < n_areas; ++a) p.areas.push_back("A" + std::to_string(a + 1));
        for (std::size_t i = 0; i < gc.buses.size(); ++i)
            p.area_of[gc.buses[i].id] = p.areas[static_cast<std::size_t>(area[i])];
        return p;
    }
    throw TopologyError("no connected " + std::to_string(n_areas) + "-area partition found");
}

/// Simulated annealing over single-bus reassignments that keep every area
/// connected and non-empty. The line covariance is computed once (it does not
/// depend on the partition), so each candidate costs a small aggregation.
inline SearchResult partition_search(const FactorGraph& graph, const GridCase& gc, int n_areas,
                                     const SearchOptions& so = {}) {
    const auto exact = wls_flows(graph);
    auto objective = [&](const Partition& p, double* trace_out) {
        const auto r = boundary_structure(gc, p);
        double tr = 0.0;
        for (std::size_t k = 0; k < r.pairs.size(); ++k)
            for (const auto& u : r.boundary[k])
                for (const auto& v : r.boundary[k])
                    tr += u.sign * v.sign *
                          exact.covariance(static_cast<Eigen::Index>(u.line), static_cast<Eigen::Index>(v.line));
        if (trace_out) *trace_out = tr;
        double imbalance = 0.0;
        if (so.weight_imbalance != 0.0) {
            std::map<std::string, double> size;
            for (const auto& [bus, label] : p.area_of) size[label] += 1.0;
            const double mean = static_cast<double>(gc.buses.size()) / static_cast<double>(p.areas.size());
            for (const auto& [label, s] : size) imbalance += (s - mean) * (s - mean);
            imbalance /= static_cast<double>(p.areas.size());
        }
        return so.weight_trace * tr + so.weight_imbalance * imbalance;
    };

    SearchResult res;
    std::mt19937_64 rng(so.seed);
    auto current = random_connected_partition(gc, n_areas, rng());
    current.name = "search";
    double cur = objective(current, &res.best_trace);
    res.initial = current;
    res.initial_objective = cur;
    res.best = current;
    res.best_objective = cur;
    double temperature = so.initial_temperature * std::max(std::abs(cur), 1e-300);

    std::vector<std::pair<int, std::string>> candidates;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int step = 1; step <= so.steps; ++step, temperature *= so.cooling) {
        candidates.clear();
        for (const auto& ln : gc.lines) {
            const auto& a = current.area_of.at(ln.from_bus);
            const auto& b = current.area_of.at(ln.to_bus);
            if (a == b) continue;
            candidates.emplace_back(ln.from_bus, b);
            candidates.emplace_back(ln.to_bus, a);
        }
        if (candidates.empty()) break;
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        const auto [bus, target] = candidates[pick(rng)];
        const auto source = current.area_of.at(bus);
        auto next = current;
        next.area_of[bus] = target;
        bool source_empty = true;
        for (const auto& [b, label] : next.area_of)
            if (label == source) {
                source_empty = false;
                break;
            }
        if (source_empty || !area_connected(gc, next, source)) {
            res.objective_trace.push_back(cur);
            continue;
        }
        double tr = 0.0;
        const double cand = objective(next, &tr);
        const double u = unit(rng);
        if (cand <= cur || u < std::exp(-(cand - cur) / temperature)) {
            current = std::move(next);
            cur = cand;
            res.accepted.push_back({step, bus, source, target, cur, temperature});
            if (cur < res.best_objective) {
                res.best = current;
                res.best_objective = cur;
                res.best_trace = tr;
            }
        }
        res.objective_trace.push_back(cur);
    }
    return res;
}

// ---- CSV --------------------------------------------------------------------

/// from,to,flow_mw,std_mw,available,boundary_lines (line ids, `-` marks reverse orientation)
inline void write_area_flows_csv(std::ostream& out, const AreaFlowReport& r, const GridCase& gc) {
    out << "from,to,flow_mw,std_mw,available,boundary_lines\n";
    char buf[64];
    for (std::size_t k = 0; k < r.pairs.size(); ++k) {
        out << r.pairs[k].first << ',' << r.pairs[k].second << ',';
        std::snprintf(buf, sizeof buf, "%.10g", r.flows[k]);
        out << buf << ',';
        const double v = r.covariance(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
        if (std::isinf(v))
            out << "inf";
        else {
            std::snprintf(buf, sizeof buf, "%.10g", std::sqrt(v));
            out << buf;
        }
        out << ',' << (r.available[k] ? 1 : 0) << ',';
        for (std::size_t i = 0; i < r.boundary[k].size(); ++i) {
            if (i) out << ' ';
            if (r.boundary[k][i].sign < 0) out << '-';
            out << gc.lines[r.boundary[k][i].line].id;
        }
        out << '\n';
    }
}

/// Square matrix with a header row and column of `Y->Z` pair labels.
inline void write_area_covariance_csv(std::ostream& out, const AreaFlowReport& r) {
    out << "pair";
    for (const auto& [y, z] : r.pairs) out << ',' << y << "->" << z;
    out << '\n';
    char buf[64];
    for (std::size_t a = 0; a < r.pairs.size(); ++a) {
        out << r.pairs[a].first << "->" << r.pairs[a].second;
        for (std::size_t b = 0; b < r.pairs.size(); ++b) {
            std::snprintf(buf, sizeof buf, "%.10g",
                          r.covariance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
            out << ',' << buf;
        }
        out << '\n';
    }
}

}  // namespace gbpse
