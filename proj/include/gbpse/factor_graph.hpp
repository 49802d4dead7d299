#pragma once

// Flows-only factor graph: one variable per line, one flow-measurement factor
// per line and one injection-measurement factor per bus. Injections are
// integrated out of the conservation constraint, so an injection factor sees
// the signed sum of the flows leaving its bus.

#include <algorithm>
#include <cstddef>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gbpse/error.hpp"
#include "gbpse/gaussian.hpp"
#include "gbpse/grid.hpp"

namespace gbpse {

struct Measurement {
    double z = 0.0;
    double variance = kInf;  ///< +inf marks a missing measurement

    bool present() const { return variance < kInf; }
};

/// Flow and injection measurements, aligned with `GridCase::lines` and
/// `GridCase::buses` order. Every line and bus has an entry.
struct MeasurementSet {
    std::vector<Measurement> flow;
    std::vector<Measurement> injection;
    unsigned long long seed = 0;

    /// Every measurement present with the true value and the given variance.
    static MeasurementSet exact(const GridCase& gc, double variance) {
        MeasurementSet m;
        for (const auto& ln : gc.lines) m.flow.push_back({ln.flow_true, variance});
        for (const auto& b : gc.buses) m.injection.push_back({b.injection_true, variance});
        return m;
    }
};

enum class FactorKind { Flow, Injection };

/// Variable node: the flow on one line, positive from -> to.
struct VariableNode {
    int line_id = 0;
};

/// Value view of one factor.
struct FactorNode {
    FactorKind kind = FactorKind::Flow;
    int id = 0;                                  ///< line id (Flow) or bus id (Injection)
    double z = 0.0;
    double variance = kInf;
    std::vector<std::pair<int, int>> signs;      ///< (line id, +1 leaving / -1 entering)
};

/// Structure shared by every graph built over the same case.
struct GraphTopology {
    std::vector<VariableNode> variables;
    std::vector<FactorKind> factor_kind;
    std::vector<int> factor_id;
    // factor -> (variable, sign), CSR.
    std::vector<std::size_t> factor_begin;
    std::vector<std::size_t> edge_variable;
    std::vector<int> edge_sign;
    // variable -> edge indices, CSR.
    std::vector<std::size_t> variable_begin;
    std::vector<std::size_t> variable_edges;
    std::size_t n_flow_factors = 0;

    std::size_t n_variables() const { return variables.size(); }
    std::size_t n_factors() const { return factor_kind.size(); }
    std::size_t n_edges() const { return edge_variable.size(); }
};

class FactorGraph {
public:
    FactorGraph() = default;
    FactorGraph(std::shared_ptr<const GraphTopology> topo, std::vector<Measurement> values)
        : topo_(std::move(topo)), values_(std::move(values)) {
        if (values_.size() != topo_->n_factors()) throw ContractError("factor value count mismatch");
    }

    const GraphTopology& topology() const { return *topo_; }
    std::shared_ptr<const GraphTopology> shared_topology() const { return topo_; }

    std::size_t n_variables() const { return topo_->n_variables(); }
    std::size_t n_factors() const { return topo_->n_factors(); }

    const Measurement& value(std::size_t factor) const { return values_[factor]; }
    std::span<const Measurement> values() const { return values_; }

    /// Same structure, new measurement values; `meas` must match the case shape.
    FactorGraph rebind(const MeasurementSet& meas) const {
        const auto& t = *topo_;
        if (meas.flow.size() != t.n_flow_factors || meas.injection.size() != t.n_factors() - t.n_flow_factors)
            throw ContractError("measurement set does not match the graph");
        std::vector<Measurement> v;
        v.reserve(t.n_factors());
        v.insert(v.end(), meas.flow.begin(), meas.flow.end());
        v.insert(v.end(), meas.injection.begin(), meas.injection.end());
        return FactorGraph(topo_, std::move(v));
    }

    /// Copy with one factor value replaced.
    FactorGraph with_value(std::size_t factor, Measurement m) const {
        auto v = values_;
        v.at(factor) = m;
        return FactorGraph(topo_, std::move(v));
    }

    /// Factor index of the flow measurement on variable `var`.
    std::size_t flow_factor_of(std::size_t var) const { return var; }
    /// Factor index of the injection measurement at bus index `bus`.
    std::size_t injection_factor_of(std::size_t bus) const { return topo_->n_flow_factors + bus; }

    /// N(X_i): factor indices adjacent to variable `var`.
    std::vector<std::size_t> factors_of(std::size_t var) const {
        const auto& t = *topo_;
        std::vector<std::size_t> out;
        for (auto k = t.variable_begin[var]; k < t.variable_begin[var + 1]; ++k)
            out.push_back(factor_of_edge(t.variable_edges[k]));
        return out;
    }
    /// N(f_a): variable indices adjacent to factor `a`.
    std::vector<std::size_t> variables_of(std::size_t a) const {
        const auto& t = *topo_;
        return {t.edge_variable.begin() + static_cast<std::ptrdiff_t>(t.factor_begin[a]),
                t.edge_variable.begin() + static_cast<std::ptrdiff_t>(t.factor_begin[a + 1])};
    }

    FactorNode factor(std::size_t a) const {
        const auto& t = *topo_;
        FactorNode f;
        f.kind = t.factor_kind[a];
        f.id = t.factor_id[a];
        f.z = values_[a].z;
        f.variance = values_[a].variance;
        for (auto e = t.factor_begin[a]; e < t.factor_begin[a + 1]; ++e)
            f.signs.emplace_back(t.variables[t.edge_variable[e]].line_id, t.edge_sign[e]);
        return f;
    }

    std::size_t factor_of_edge(std::size_t e) const {
        const auto& fb = topo_->factor_begin;
        auto it = std::upper_bound(fb.begin(), fb.end(), e);
        return static_cast<std::size_t>(it - fb.begin()) - 1;
    }

private:
    std::shared_ptr<const GraphTopology> topo_;
    std::vector<Measurement> values_;
};

inline std::shared_ptr<const GraphTopology> build_topology(const GridCase& gc) {
    auto t = std::make_shared<GraphTopology>();
    const std::size_t nl = gc.lines.size();
    const std::size_t nb = gc.buses.size();
    for (const auto& ln : gc.lines) t->variables.push_back({ln.id});
    t->n_flow_factors = nl;

    t->factor_begin.push_back(0);
    for (std::size_t l = 0; l < nl; ++l) {
        t->factor_kind.push_back(FactorKind::Flow);
        t->factor_id.push_back(gc.lines[l].id);
        t->edge_variable.push_back(l);
        t->edge_sign.push_back(1);
        t->factor_begin.push_back(t->edge_variable.size());
    }
    const auto inc = gc.incidence();
    for (std::size_t b = 0; b < nb; ++b) {
        t->factor_kind.push_back(FactorKind::Injection);
        t->factor_id.push_back(gc.buses[b].id);
        for (auto l : inc[b]) {
            t->edge_variable.push_back(l);
            t->edge_sign.push_back(gc.lines[l].from_bus == gc.buses[b].id ? 1 : -1);
        }
        t->factor_begin.push_back(t->edge_variable.size());
    }

    std::vector<std::size_t> count(nl + 1, 0);
    for (auto v : t->edge_variable) ++count[v + 1];
    t->variable_begin.assign(nl + 1, 0);
    for (std::size_t v = 0; v < nl; ++v) t->variable_begin[v + 1] = t->variable_begin[v] + count[v + 1];
    t->variable_edges.assign(t->edge_variable.size(), 0);
    std::vector<std::size_t> fill(t->variable_begin.begin(), t->variable_begin.end() - 1);
    for (std::size_t e = 0; e < t->edge_variable.size(); ++e) t->variable_edges[fill[t->edge_variable[e]]++] = e;
    return t;
}

/// One variable per line, one flow factor per line and one injection factor
/// per bus; missing measurements keep their factor with infinite variance.
inline FactorGraph build_factor_graph(const GridCase& gc, const MeasurementSet& meas) {
    if (meas.flow.size() != gc.lines.size() || meas.injection.size() != gc.buses.size())
        throw ContractError("measurement set references lines/buses not in the case");
    for (const auto& m : meas.flow)
        if (!(m.variance > 0)) throw ContractError("measurement variance must be positive");
    for (const auto& m : meas.injection)
        if (!(m.variance > 0)) throw ContractError("measurement variance must be positive");
    std::vector<Measurement> values(meas.flow);
    values.insert(values.end(), meas.injection.begin(), meas.injection.end());
    return FactorGraph(build_topology(gc), std::move(values));
}

/// Factor-to-variable message of a signed-sum (injection) factor.
///
/// `z`, `variance` describe the factor; `signs` and `incoming` are aligned
/// over the factor's neighbours and `target` indexes the receiving one.
inline Gaussian1D sum_message(double z, double variance, std::span<const int> signs,
                              std::span<const Gaussian1D> incoming, std::size_t target) {
    if (!(variance < kInf)) return Gaussian1D::uninformative();
    double mean = z;
    double var = variance;
    for (std::size_t j = 0; j < incoming.size(); ++j) {
        if (j == target) continue;
        if (!incoming[j].informative()) return Gaussian1D::uninformative();
        mean -= signs[j] * incoming[j].mean;
        var += incoming[j].variance;
    }
    return {signs[target] * mean, var};
}

/// Message from an injection factor to `target_line`, given the variable-to-
/// factor messages of every other neighbour keyed by line id.
inline Gaussian1D gaussian_sum_message(const FactorNode& factor, int target_line,
                                       const std::map<int, Gaussian1D>& incoming) {
    if (factor.kind != FactorKind::Injection) throw ContractError("sum message needs an injection factor");
    std::vector<int> signs;
    std::vector<Gaussian1D> msgs;
    std::size_t target = factor.signs.size();
    for (const auto& [line, sign] : factor.signs) {
        signs.push_back(sign);
        if (line == target_line) {
            target = msgs.size();
            msgs.push_back(Gaussian1D::uninformative());
            continue;
        }
        auto it = incoming.find(line);
        if (it == incoming.end())
            throw ContractError("missing incoming message from line " + std::to_string(line));
        msgs.push_back(it->second);
    }
    if (target == factor.signs.size())
        throw ContractError("line " + std::to_string(target_line) + " is not adjacent to the factor");
    return sum_message(factor.z, factor.variance, signs, msgs, target);
}

/// Line-oriented dump used by test fixtures:
///   VAR <line_id>
///   FAC flow|injection <id> <line ids with signs...> <z> <variance>
inline void export_factor_graph(std::ostream& out, const FactorGraph& g) {
    for (const auto& v : g.topology().variables) out << "VAR " << v.line_id << "\n";
    for (std::size_t a = 0; a < g.n_factors(); ++a) {
        const auto f = g.factor(a);
        out << "FAC " << (f.kind == FactorKind::Flow ? "flow " : "injection ") << f.id;
        for (const auto& [line, sign] : f.signs) out << ' ' << (sign > 0 ? '+' : '-') << line;
        out << ' ' << f.z << ' ';
        if (f.variance < kInf)
            out << f.variance;
        else
            out << "inf";
        out << "\n";
    }
}

}  // namespace gbpse
