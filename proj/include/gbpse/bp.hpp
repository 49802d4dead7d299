#pragma once

// Synchronous Gaussian belief propagation over the flows-only factor graph.
//
// One iteration = every variable sends to its factors (from the previous
// factor messages), then every factor sends to its variables. Initial
// variable-to-factor messages are uninformative, so a belief turns finite at
// iteration n exactly when measurements within factor-graph distance 2n-1
// pin the variable down.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "gbpse/error.hpp"
#include "gbpse/factor_graph.hpp"
#include "gbpse/gaussian.hpp"

namespace gbpse {

struct BpOptions {
    int max_iterations = 10000;
    double tol_mean = 1e-10;  ///< MW, bound on the summed absolute mean change
    double tol_var = 1e-10;   ///< MW^2, bound on the summed absolute variance change
    double damping = 0.0;     ///< in [0, 1); weight of the previous factor message
    bool record_trace = false;
    bool keep_messages = false;

    void validate() const {
        if (!(tol_mean > 0) || !(tol_var > 0)) throw ContractError("BP tolerances must be positive");
        if (!(damping >= 0.0 && damping < 1.0)) throw ContractError("damping must lie in [0, 1)");
        if (max_iterations < 1) throw ContractError("max_iterations must be at least 1");
    }
};

struct BpTraceRow {
    int iteration = 0;
    double sum_delta_mean = 0.0;
    double sum_delta_var = 0.0;
    std::size_t finite_count = 0;
};

/// Factor-to-variable messages, one per graph edge.
struct BpMessages {
    std::vector<Gaussian1D> factor_to_variable;
};

struct BpResult {
    std::vector<Gaussian1D> beliefs;               ///< per variable (graph order)
    bool converged = false;
    int iterations = 0;
    std::vector<std::optional<int>> first_finite_iter;
    std::vector<BpTraceRow> trace;
    BpMessages messages;                           ///< filled when keep_messages

    bool retrievable(std::size_t var) const { return beliefs[var].informative(); }
    std::size_t retrievable_count() const {
        std::size_t n = 0;
        for (const auto& b : beliefs) n += b.informative();
        return n;
    }
};

namespace detail {

inline Gaussian1D damp(const Gaussian1D& fresh, const Gaussian1D& old, double d) {
    if (d == 0.0 || !old.informative() || !fresh.informative()) return fresh;
    const double p = (1.0 - d) * fresh.precision() + d * old.precision();
    return {(1.0 - d) * fresh.mean + d * old.mean, 1.0 / p};
}

inline bool is_nan(const Gaussian1D& g) { return std::isnan(g.mean) || std::isnan(g.variance); }

}  // namespace detail

/// Run BP until the summed belief changes fall below the tolerances or the
/// iteration budget is spent (`converged == false`, never an exception).
///
/// `warm_start` seeds the factor-to-variable messages; depth bookkeeping
/// (`first_finite_iter`) is only meaningful for cold starts.
inline BpResult run_bp(const FactorGraph& graph, const BpOptions& opts = {},
                       const BpMessages* warm_start = nullptr) {
    opts.validate();
    const auto& t = graph.topology();
    const std::size_t nv = t.n_variables();
    const std::size_t nf = t.n_factors();
    const std::size_t ne = t.n_edges();

    std::vector<Gaussian1D> f2v(ne, Gaussian1D::uninformative());
    if (warm_start) {
        if (warm_start->factor_to_variable.size() != ne) throw ContractError("warm start message count mismatch");
        f2v = warm_start->factor_to_variable;
    }
    std::vector<Gaussian1D> v2f(ne, Gaussian1D::uninformative());
    std::vector<Gaussian1D> f2v_prev;

    BpResult res;
    res.first_finite_iter.assign(nv, std::nullopt);

    auto belief_of = [&](std::size_t v) {
        double precision = 0.0, weighted = 0.0;
        for (auto k = t.variable_begin[v]; k < t.variable_begin[v + 1]; ++k) {
            const auto& m = f2v[t.variable_edges[k]];
            if (!m.informative()) continue;
            precision += 1.0 / m.variance;
            weighted += m.mean / m.variance;
        }
        if (precision == 0.0) return Gaussian1D::uninformative();
        const double var = 1.0 / precision;
        return Gaussian1D{var * weighted, var};
    };

    std::vector<Gaussian1D> beliefs(nv);
    for (std::size_t v = 0; v < nv; ++v) beliefs[v] = belief_of(v);
    std::vector<Gaussian1D> prev_beliefs;
    std::size_t last_finite_messages = 0;
    for (const auto& m : f2v) last_finite_messages += m.informative();

    for (int it = 1; it <= opts.max_iterations; ++it) {
        // variables -> factors
        for (std::size_t v = 0; v < nv; ++v) {
            const auto b = t.variable_begin[v], e = t.variable_begin[v + 1];
            for (auto k = b; k < e; ++k) {
                double precision = 0.0, weighted = 0.0;
                for (auto j = b; j < e; ++j) {
                    if (j == k) continue;
                    const auto& m = f2v[t.variable_edges[j]];
                    if (!m.informative()) continue;
                    precision += 1.0 / m.variance;
                    weighted += m.mean / m.variance;
                }
                auto& out = v2f[t.variable_edges[k]];
                if (precision == 0.0) {
                    out = Gaussian1D::uninformative();
                } else {
                    const double var = 1.0 / precision;
                    out = {var * weighted, var};
                }
            }
        }

        // factors -> variables
        if (opts.damping > 0.0) f2v_prev = f2v;
        for (std::size_t a = 0; a < nf; ++a) {
            const auto b = t.factor_begin[a], e = t.factor_begin[a + 1];
            const auto& val = graph.value(a);
            if (t.factor_kind[a] == FactorKind::Flow) {
                for (auto k = b; k < e; ++k) f2v[k] = val.present() ? Gaussian1D{val.z, val.variance} : Gaussian1D{};
                continue;
            }
            const std::span<const int> signs(t.edge_sign.data() + b, e - b);
            const std::span<const Gaussian1D> incoming(v2f.data() + b, e - b);
            for (auto k = b; k < e; ++k) f2v[k] = sum_message(val.z, val.variance, signs, incoming, k - b);
        }
        if (opts.damping > 0.0)
            for (std::size_t k = 0; k < ne; ++k) f2v[k] = detail::damp(f2v[k], f2v_prev[k], opts.damping);

        std::size_t finite_messages = 0;
        for (std::size_t k = 0; k < ne; ++k) {
            if (detail::is_nan(f2v[k])) throw NumericalError("NaN in factor-to-variable message", it);
            finite_messages += f2v[k].informative();
        }
        // Message support only grows; a change means the fixed point is not reached.
        bool support_changed = finite_messages != last_finite_messages;
        last_finite_messages = finite_messages;

        prev_beliefs.swap(beliefs);
        beliefs.resize(nv);
        double dmean = 0.0, dvar = 0.0;
        std::size_t finite = 0;
        for (std::size_t v = 0; v < nv; ++v) {
            beliefs[v] = belief_of(v);
            const auto& now = beliefs[v];
            const auto& before = prev_beliefs[v];
            if (detail::is_nan(now)) throw NumericalError("NaN in belief", it);
            if (now.informative()) {
                ++finite;
                if (!res.first_finite_iter[v]) res.first_finite_iter[v] = it;
            }
            if (now.informative() != before.informative()) {
                support_changed = true;
            } else if (now.informative()) {
                dmean += std::abs(now.mean - before.mean);
                dvar += std::abs(now.variance - before.variance);
            }
        }
        res.iterations = it;
        if (opts.record_trace)
            res.trace.push_back({it, support_changed ? kInf : dmean, support_changed ? kInf : dvar, finite});
        if (!support_changed && dmean < opts.tol_mean && dvar < opts.tol_var) {
            res.converged = true;
            break;
        }
    }
    res.beliefs = std::move(beliefs);
    if (opts.keep_messages) res.messages.factor_to_variable = std::move(f2v);
    return res;
}

/// R(n): cumulative number of lines without a direct flow measurement whose
/// belief is finite after n iterations, for n = 1 .. deepest retrieval.
/// Empty when no such line is retrieved.
inline std::map<int, std::size_t> retrieval_profile(const BpResult& result, const MeasurementSet& meas) {
    std::map<int, std::size_t> hits;
    int deepest = 0;
    for (std::size_t v = 0; v < result.first_finite_iter.size(); ++v) {
        if (meas.flow.at(v).present()) continue;
        if (const auto& n = result.first_finite_iter[v]) {
            ++hits[*n];
            deepest = std::max(deepest, *n);
        }
    }
    std::map<int, std::size_t> profile;
    std::size_t running = 0;
    for (int n = 1; n <= deepest; ++n) {
        running += hits.count(n) ? hits[n] : 0;
        profile[n] = running;
    }
    return profile;
}

inline void write_trace_csv(std::ostream& out, const BpResult& r) {
    out << "iteration,sum_delta_mean,sum_delta_var,finite_count\n";
    for (const auto& row : r.trace)
        out << row.iteration << ',' << row.sum_delta_mean << ',' << row.sum_delta_var << ',' << row.finite_count
            << '\n';
}

}  // namespace gbpse
