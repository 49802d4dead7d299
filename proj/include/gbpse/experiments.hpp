#pragma once

// Monte-Carlo ensembles over missing-measurement masks: observability
// probability P, retrievability fraction p, effective degrees of freedom,
// the connectivity correlations C and M, iteration-depth profiles R(n) and
// belief variance by retrieval depth. Also the BP vs WLS timing benchmark.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gbpse/bp.hpp"
#include "gbpse/exact.hpp"
#include "gbpse/factor_graph.hpp"
#include "gbpse/grid.hpp"
#include "gbpse/parallel.hpp"
#include "gbpse/scenarios.hpp"

namespace gbpse {

struct EnsembleSpec {
    const GridCase* grid = nullptr;
    int n_samples = 5000;
    std::vector<MissingFractions> fractions;
    PlacementStrategy strategy = PlacementStrategy::Uniform;
    double variance = kDefaultVariance;
    std::uint64_t base_seed = 1;
    int workers = 1;
    BpOptions bp;

    void validate() const {
        if (!grid) throw ContractError("ensemble needs a grid case");
        if (n_samples <= 0) throw ContractError("n_samples must be positive");
        if (fractions.empty()) throw ContractError("ensemble needs at least one missing fraction");
        if (!(variance > 0)) throw ContractError("measurement variance must be positive");
        bp.validate();
    }
};

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    bool defined = true;
};

/// Statistics of one sample; the ensemble aggregates these in sample order.
struct SampleStats {
    bool converged = false;
    int iterations = 0;
    bool observable = false;
    double retrievable_fraction = 0.0;
    double C = 0.0;
    double M = 0.0;
    double K = 0.0;  ///< same form with delta replaced by c_i; zero in expectation
    /// R(n) / R(inf) for n = 1 .. deepest; empty when no unmeasured line is retrieved.
    std::vector<double> r_ratio;
    std::map<int, std::pair<double, std::size_t>> variance_by_depth;  ///< depth -> (sum, count)
};

struct DepthVariance {
    std::size_t count = 0;
    double mean_variance = 0.0;  ///< MW^2
    std::optional<double> ratio; ///< relative to the depth-1 group
};

struct EnsembleRow {
    MissingFractions fractions;
    std::size_t n_samples = 0;
    std::size_t n_converged = 0;
    double mean_iterations = 0.0;
    Estimate P, p, N_eff, C, M, K;
    std::map<int, Estimate> r_ratio;  ///< n -> R(n)/R(inf)
    std::size_t r_samples = 0;        ///< samples with R(inf) > 0
    std::map<int, DepthVariance> variance_by_depth;
};

struct EnsembleResult {
    PlacementStrategy strategy = PlacementStrategy::Uniform;
    std::vector<EnsembleRow> rows;
};

namespace detail {

inline Estimate mean_estimate(const std::vector<double>& xs) {
    Estimate e;
    if (xs.empty()) {
        e.defined = false;
        return e;
    }
    const double n = static_cast<double>(xs.size());
    double s = 0.0;
    for (double x : xs) s += x;
    e.value = s / n;
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - e.value) * (x - e.value);
        e.std_error = std::sqrt(ss / (n - 1.0) / n);
    }
    return e;
}

/// <sum_i a_i d_i / N - sum_i a_i sum_i d_i / N^2> for one sample.
inline double cross_moment(const std::vector<double>& a, const std::vector<double>& d) {
    const double n = static_cast<double>(a.size());
    double ad = 0.0, sa = 0.0, sd = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ad += a[i] * d[i];
        sa += a[i];
        sd += d[i];
    }
    return ad / n - sa * sd / (n * n);
}

}  // namespace detail

/// N_eff = ln P / ln p, with first-order error propagation including the
/// sample covariance of the two estimators. Undefined when P or p is 0 or 1.
inline Estimate effective_dof(double P, double p, double var_P = 0.0, double var_p = 0.0, double cov_Pp = 0.0) {
    Estimate e;
    if (!(P > 0 && P < 1 && p > 0 && p < 1)) {
        e.defined = false;
        return e;
    }
    const double lp = std::log(p);
    e.value = std::log(P) / lp;
    const double dP = 1.0 / (P * lp);
    const double dp = -std::log(P) / (p * lp * lp);
    e.std_error = std::sqrt(std::max(0.0, dP * dP * var_P + dp * dp * var_p + 2.0 * dP * dp * cov_Pp));
    return e;
}

/// Evaluate one sample: a mask and a noise draw, both seeded by `seed`.
inline SampleStats evaluate_sample(const GridCase& gc, const FactorGraph& base, MissingFractions fractions,
                                   PlacementStrategy strategy, double variance, std::uint64_t seed,
                                   const BpOptions& opts) {
    const auto mask = make_mask(gc, fractions, strategy, seed);
    const auto meas = sample_measurements(gc, mask, variance, seed);
    const auto graph = base.rebind(meas);
    const auto bp = run_bp(graph, opts);

    SampleStats s;
    s.converged = bp.converged;
    s.iterations = bp.iterations;

    const auto inc = gc.incidence();
    const std::size_t nb = gc.buses.size();
    std::vector<double> delta(nb), c(nb), mc(nb);
    std::vector<bool> inj_missing(nb);
    for (std::size_t i = 0; i < nb; ++i) inj_missing[i] = !meas.injection[i].present();
    const auto m = missing_neighbour_counts(gc, inj_missing);
    std::size_t ok = bp.retrievable_count();
    for (std::size_t i = 0; i < nb; ++i) {
        const bool r = injection_retrievable(gc, i, meas, bp, inc);
        ok += r;
        delta[i] = r ? 0.0 : 1.0;
        c[i] = static_cast<double>(inc[i].size());
        mc[i] = c[i] > 0 ? m[i] / c[i] : 0.0;
    }
    const std::size_t items = gc.lines.size() + nb;
    s.observable = ok == items;
    s.retrievable_fraction = static_cast<double>(ok) / static_cast<double>(items);
    s.C = detail::cross_moment(c, delta);
    s.M = detail::cross_moment(mc, delta);
    s.K = detail::cross_moment(mc, c);

    const auto profile = retrieval_profile(bp, meas);
    if (!profile.empty()) {
        const double total = static_cast<double>(profile.rbegin()->second);
        for (const auto& [n, count] : profile) s.r_ratio.push_back(static_cast<double>(count) / total);
    }
    if (bp.converged) {
        for (std::size_t v = 0; v < bp.beliefs.size(); ++v) {
            if (meas.flow[v].present() || !bp.first_finite_iter[v]) continue;
            auto& slot = s.variance_by_depth[*bp.first_finite_iter[v]];
            slot.first += bp.beliefs[v].variance;
            ++slot.second;
        }
    }
    return s;
}

/// Aggregate per-sample statistics in order; independent of how they were computed.
inline EnsembleRow aggregate(MissingFractions fractions, const std::vector<SampleStats>& samples) {
    EnsembleRow row;
    row.fractions = fractions;
    row.n_samples = samples.size();
    const double n = static_cast<double>(samples.size());

    std::vector<double> obs, frac, C, M, K;
    double iters = 0.0;
    std::size_t deepest = 0;
    for (const auto& s : samples) {
        obs.push_back(s.observable ? 1.0 : 0.0);
        frac.push_back(s.retrievable_fraction);
        C.push_back(s.C);
        M.push_back(s.M);
        K.push_back(s.K);
        iters += s.iterations;
        row.n_converged += s.converged;
        deepest = std::max(deepest, s.r_ratio.size());
    }
    row.mean_iterations = n > 0 ? iters / n : 0.0;

    row.P = detail::mean_estimate(obs);
    row.P.std_error = std::sqrt(row.P.value * (1.0 - row.P.value) / n);
    row.p = detail::mean_estimate(frac);
    row.C = detail::mean_estimate(C);
    row.M = detail::mean_estimate(M);
    row.K = detail::mean_estimate(K);

    double cov = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) cov += (obs[k] - row.P.value) * (frac[k] - row.p.value);
    if (samples.size() > 1) cov /= (n - 1.0) * n;
    row.N_eff = effective_dof(row.P.value, row.p.value, row.P.std_error * row.P.std_error,
                              row.p.std_error * row.p.std_error, cov);

    for (std::size_t d = 1; d <= deepest; ++d) {
        std::vector<double> xs;
        for (const auto& s : samples) {
            if (s.r_ratio.empty()) continue;
            xs.push_back(d <= s.r_ratio.size() ? s.r_ratio[d - 1] : 1.0);
        }
        row.r_ratio[static_cast<int>(d)] = detail::mean_estimate(xs);
        row.r_samples = xs.size();
    }

    std::map<int, std::pair<double, std::size_t>> pooled;
    for (const auto& s : samples)
        for (const auto& [d, acc] : s.variance_by_depth) {
            pooled[d].first += acc.first;
            pooled[d].second += acc.second;
        }
    for (const auto& [d, acc] : pooled) {
        DepthVariance dv;
        dv.count = acc.second;
        dv.mean_variance = acc.first / static_cast<double>(acc.second);
        row.variance_by_depth[d] = dv;
    }
    if (auto base = row.variance_by_depth.find(1); base != row.variance_by_depth.end())
        for (auto& [d, dv] : row.variance_by_depth) dv.ratio = dv.mean_variance / base->second.mean_variance;
    return row;
}

/// Sample k of every fraction uses seed base_seed + k, so results do not
/// depend on the worker count.
inline EnsembleResult run_ensemble(const EnsembleSpec& spec) {
    spec.validate();
    const auto& gc = *spec.grid;
    const auto base = build_factor_graph(gc, MeasurementSet::exact(gc, spec.variance));
    EnsembleResult result;
    result.strategy = spec.strategy;
    for (const auto& f : spec.fractions) {
        std::vector<SampleStats> samples(static_cast<std::size_t>(spec.n_samples));
        parallel_for(samples.size(), spec.workers, [&](std::size_t k) {
            samples[k] = evaluate_sample(gc, base, f, spec.strategy, spec.variance, spec.base_seed + k, spec.bp);
        });
        result.rows.push_back(aggregate(f, samples));
    }
    return result;
}

/// Comma-separated list of values and inclusive `start:stop:step` ranges.
inline std::vector<double> parse_fraction_range(const std::string& text) {
    std::vector<double> out;
    std::size_t begin = 0;
    while (true) {
        const auto comma = text.find(',', begin);
        const auto item = text.substr(begin, comma == std::string::npos ? std::string::npos : comma - begin);
        std::vector<double> parts;
        std::size_t pos = 0;
        while (true) {
            const auto colon = item.find(':', pos);
            const auto v = detail::parse_double(item.substr(pos, colon == std::string::npos ? std::string::npos : colon - pos));
            if (!v) throw ContractError("bad fraction range '" + text + "'");
            parts.push_back(*v);
            if (colon == std::string::npos) break;
            pos = colon + 1;
        }
        if (parts.size() == 1) {
            out.push_back(parts[0]);
        } else {
            if (parts.size() != 3 || !(parts[2] > 0) || parts[1] < parts[0])
                throw ContractError("fraction range must be start:stop:step with step > 0");
            const double tol = 1e-9 * std::max(1.0, std::abs(parts[1]));
            for (int k = 0;; ++k) {
                const double x = parts[0] + k * parts[2];
                if (x > parts[1] + tol) break;
                out.push_back(std::min(x, parts[1]));
            }
        }
        if (comma == std::string::npos) break;
        begin = comma + 1;
    }
    return out;
}

// ---- timing -----------------------------------------------------------------

struct TimingRow {
    std::string case_name;
    std::size_t lines = 0;
    std::size_t buses = 0;
    double fraction = 0.0;
    double bp_ms = 0.0;   ///< median over converged repeats
    double wls_ms = 0.0;  ///< median over the same repeats
    double bp_iterations = 0.0;
    int repeats_used = 0;
    bool flagged = false; ///< some repeat failed to converge
};

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

inline LinearFit fit_linear(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    LinearFit f;
    const double den = n * sxx - sx * sx;
    if (den == 0.0) return f;
    f.slope = (n * sxy - sx * sy) / den;
    f.intercept = (sy - f.slope * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double ym = sy / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.slope * x[i] + f.intercept);
        ss_res += r * r;
        ss_tot += (y[i] - ym) * (y[i] - ym);
    }
    f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return f;
}

namespace detail {
inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}
}  // namespace detail

/// Wall time of BP to convergence and of the WLS oracle (factorization,
/// means and covariance) on `repeats` seeded measurement draws per cell.
/// Sequential on purpose: concurrent runs would distort timings.
inline std::vector<TimingRow> timing_benchmark(const std::vector<const GridCase*>& cases,
                                               const std::vector<double>& fractions, int repeats,
                                               double variance = kDefaultVariance, std::uint64_t seed = 1,
                                               const BpOptions& opts = {}) {
    using clock = std::chrono::steady_clock;
    if (repeats < 1) throw ContractError("repeats must be at least 1");
    std::vector<TimingRow> rows;
    for (const auto* gc : cases) {
        const auto base = build_factor_graph(*gc, MeasurementSet::exact(*gc, variance));
        for (double f : fractions) {
            TimingRow row;
            row.case_name = gc->name;
            row.lines = gc->lines.size();
            row.buses = gc->buses.size();
            row.fraction = f;
            std::vector<double> bp_ms, wls_ms;
            double iters = 0;
            for (int r = 0; r < repeats; ++r) {
                const auto s = seed + static_cast<std::uint64_t>(r);
                const auto meas =
                    sample_measurements(*gc, make_mask(*gc, MissingFractions::equal(f), PlacementStrategy::Uniform, s),
                                        variance, s);
                const auto graph = base.rebind(meas);
                const auto t0 = clock::now();
                const auto res = run_bp(graph, opts);
                const auto t1 = clock::now();
                const auto wls = wls_flows(graph);
                const auto t2 = clock::now();
                (void)wls;
                if (!res.converged) {
                    row.flagged = true;
                    continue;
                }
                bp_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
                wls_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
                iters += res.iterations;
            }
            row.repeats_used = static_cast<int>(bp_ms.size());
            row.bp_ms = detail::median(bp_ms);
            row.wls_ms = detail::median(wls_ms);
            row.bp_iterations = bp_ms.empty() ? 0.0 : iters / static_cast<double>(bp_ms.size());
            rows.push_back(row);
        }
    }
    return rows;
}

// ---- CSV --------------------------------------------------------------------

namespace detail {
inline std::string fmt(double x) {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}
inline std::string fmt(const Estimate& e) { return e.defined ? fmt(e.value) + "," + fmt(e.std_error) : ","; }
}  // namespace detail

/// flow_fraction,injection_fraction,strategy,samples,converged,mean_iterations,
/// P,P_se,p,p_se,N_eff,N_eff_se,C,C_se,M,M_se,K,K_se (empty N_eff = undefined)
inline void write_ensemble_csv(std::ostream& out, const EnsembleResult& r) {
    out << "flow_fraction,injection_fraction,strategy,samples,converged,mean_iterations,"
           "P,P_se,p,p_se,N_eff,N_eff_se,C,C_se,M,M_se,K,K_se\n";
    for (const auto& row : r.rows)
        out << detail::fmt(row.fractions.flow) << ',' << detail::fmt(row.fractions.injection) << ','
            << to_string(r.strategy) << ',' << row.n_samples << ',' << row.n_converged << ','
            << detail::fmt(row.mean_iterations) << ',' << detail::fmt(row.P) << ',' << detail::fmt(row.p) << ','
            << detail::fmt(row.N_eff) << ',' << detail::fmt(row.C) << ',' << detail::fmt(row.M) << ','
            << detail::fmt(row.K) << '\n';
}

/// flow_fraction,injection_fraction,n,R_ratio,R_ratio_se
inline void write_rprofile_csv(std::ostream& out, const EnsembleResult& r) {
    out << "flow_fraction,injection_fraction,n,R_ratio,R_ratio_se\n";
    for (const auto& row : r.rows)
        for (const auto& [n, e] : row.r_ratio)
            out << detail::fmt(row.fractions.flow) << ',' << detail::fmt(row.fractions.injection) << ',' << n << ','
                << detail::fmt(e) << '\n';
}

/// flow_fraction,injection_fraction,depth,count,mean_variance,ratio
inline void write_variance_depth_csv(std::ostream& out, const EnsembleResult& r) {
    out << "flow_fraction,injection_fraction,depth,count,mean_variance,ratio\n";
    for (const auto& row : r.rows)
        for (const auto& [d, dv] : row.variance_by_depth)
            out << detail::fmt(row.fractions.flow) << ',' << detail::fmt(row.fractions.injection) << ',' << d << ','
                << dv.count << ',' << detail::fmt(dv.mean_variance) << ','
                << (dv.ratio ? detail::fmt(*dv.ratio) : "") << '\n';
}

/// case,lines,buses,fraction,bp_ms,wls_ms,bp_iterations,repeats,flagged
inline void write_timing_csv(std::ostream& out, const std::vector<TimingRow>& rows) {
    out << "case,lines,buses,fraction,bp_ms,wls_ms,bp_iterations,repeats,flagged\n";
    for (const auto& t : rows)
        out << t.case_name << ',' << t.lines << ',' << t.buses << ',' << detail::fmt(t.fraction) << ','
            << detail::fmt(t.bp_ms) << ',' << detail::fmt(t.wls_ms) << ',' << detail::fmt(t.bp_iterations) << ','
            << t.repeats_used << ',' << (t.flagged ? 1 : 0) << '\n';
}

}  // namespace gbpse
