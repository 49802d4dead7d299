#pragma once

// Weighted least squares oracle for the flows-only model and for the
// angle-based DC model. Rank-revealing: unobservable directions are detected
// and the retrievable part is still solved exactly.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <limits>
#include <cstddef>
#include <string>
#include <vector>

#include "gbpse/error.hpp"
#include "gbpse/factor_graph.hpp"
#include "gbpse/grid.hpp"

namespace gbpse {

struct WlsSolution {
    Eigen::VectorXd means;       ///< MW; meaningful where retrievable
    /// MW^2, full size. Rows/columns of non-retrievable variables are zero
    /// with +inf on the diagonal.
    Eigen::MatrixXd covariance;
    std::vector<bool> retrievable_mask;
    double residual = 0.0;       ///< sum of squared weighted residuals at the optimum
    bool rank_deficient = false;
    int rank = 0;

    std::size_t retrievable_count() const {
        std::size_t n = 0;
        for (bool b : retrievable_mask) n += b;
        return n;
    }
};

/// Singular values below this fraction of the largest count as zero.
inline constexpr double kRankThreshold = 1e-10;
/// An output functional is retrievable when at most this fraction of its norm
/// lies in the null space of the precision matrix.
inline constexpr double kNullSpaceLeak = 1e-8;

/// Sparse linear Gaussian model: rows are measurements z = h.x + noise.
struct LinearModel {
    int n_columns = 0;
    std::vector<Eigen::Triplet<double>> entries;  ///< (row, column, coefficient)
    std::vector<double> z;
    std::vector<double> weight;                   ///< 1 / variance

    int add_row(double zval, double variance) {
        z.push_back(zval);
        weight.push_back(1.0 / variance);
        return static_cast<int>(z.size()) - 1;
    }
};

namespace detail {

/// Solve the WLS problem and report the output functionals `outputs * x`.
/// `outputs` == nullptr means the identity.
inline WlsSolution solve_wls(const LinearModel& model, const Eigen::MatrixXd* outputs) {
    const int k = model.n_columns;
    const int m = static_cast<int>(model.z.size());
    Eigen::SparseMatrix<double> H(m, k);
    H.setFromTriplets(model.entries.begin(), model.entries.end());
    const Eigen::Map<const Eigen::VectorXd> w(model.weight.data(), m);
    const Eigen::Map<const Eigen::VectorXd> z(model.z.data(), m);

    Eigen::SparseMatrix<double> Ht = H.transpose();
    Eigen::SparseMatrix<double> A = Ht * w.asDiagonal() * H;
    Eigen::VectorXd b = Ht * (w.asDiagonal() * z);

    WlsSolution sol;
    const int q = outputs ? static_cast<int>(outputs->rows()) : k;
    Eigen::VectorXd x(k);
    Eigen::MatrixXd pinv;           // A^+ (dense path)
    Eigen::MatrixXd null_basis;     // columns spanning null(A)
    bool full_rank = false;

    const double max_diag = k > 0 ? A.diagonal().cwiseAbs().maxCoeff() : 0.0;
    if (k >= 500 && max_diag > 0) {
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
        if (ldlt.info() == Eigen::Success) {
            const Eigen::VectorXd d = ldlt.vectorD();
            if (d.minCoeff() > kRankThreshold * d.cwiseAbs().maxCoeff()) {
                full_rank = true;
                x = ldlt.solve(b);
                pinv = ldlt.solve(Eigen::MatrixXd(Eigen::MatrixXd::Identity(k, k)));
            }
        }
    }
    if (!full_rank && max_diag > 0) {
        const Eigen::MatrixXd Ad(A);
        Eigen::LLT<Eigen::MatrixXd> llt(Ad);
        if (llt.info() == Eigen::Success) {
            const Eigen::VectorXd piv = llt.matrixLLT().diagonal().array().square();
            if (piv.minCoeff() > kRankThreshold * piv.maxCoeff()) {
                full_rank = true;
                x = llt.solve(b);
                pinv = llt.solve(Eigen::MatrixXd(Eigen::MatrixXd::Identity(k, k)));
            }
        }
        if (!full_rank) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Ad);
            if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
            const auto& lam = eig.eigenvalues();
            const auto& V = eig.eigenvectors();
            const double top = lam.cwiseAbs().maxCoeff();
            std::vector<int> keep, drop;
            for (int i = 0; i < k; ++i) (lam(i) > kRankThreshold * top ? keep : drop).push_back(i);
            Eigen::MatrixXd Vr(k, static_cast<Eigen::Index>(keep.size()));
            Eigen::VectorXd inv(static_cast<Eigen::Index>(keep.size()));
            for (std::size_t j = 0; j < keep.size(); ++j) {
                Vr.col(static_cast<Eigen::Index>(j)) = V.col(keep[j]);
                inv(static_cast<Eigen::Index>(j)) = 1.0 / lam(keep[j]);
            }
            null_basis.resize(k, static_cast<Eigen::Index>(drop.size()));
            for (std::size_t j = 0; j < drop.size(); ++j) null_basis.col(static_cast<Eigen::Index>(j)) = V.col(drop[j]);
            pinv = Vr * inv.asDiagonal() * Vr.transpose();
            x = pinv * b;
            sol.rank = static_cast<int>(keep.size());
        }
    }
    if (max_diag == 0) {
        x = Eigen::VectorXd::Zero(k);
        pinv = Eigen::MatrixXd::Zero(k, k);
        null_basis = Eigen::MatrixXd::Identity(k, k);
    }
    if (full_rank) sol.rank = k;
    sol.rank_deficient = !full_rank;

    if (m > 0) {
        const Eigen::VectorXd r = H * x - z;
        sol.residual = r.dot(w.asDiagonal() * r);
    }

    sol.retrievable_mask.assign(static_cast<std::size_t>(q), true);
    if (!full_rank && null_basis.cols() > 0) {
        const Eigen::MatrixXd leak = outputs ? Eigen::MatrixXd(*outputs * null_basis) : null_basis;
        for (int i = 0; i < q; ++i) {
            const double norm2 = outputs ? outputs->row(i).squaredNorm() : 1.0;
            sol.retrievable_mask[static_cast<std::size_t>(i)] = leak.row(i).squaredNorm() <= kNullSpaceLeak * norm2;
        }
    }
    if (outputs) {
        sol.means = *outputs * x;
        sol.covariance = *outputs * pinv * outputs->transpose();
    } else {
        sol.means = x;
        sol.covariance = pinv;
    }
    for (int i = 0; i < q; ++i) {
        if (sol.retrievable_mask[static_cast<std::size_t>(i)]) continue;
        sol.covariance.row(i).setZero();
        sol.covariance.col(i).setZero();
        sol.covariance(i, i) = std::numeric_limits<double>::infinity();
    }
    return sol;
}

}  // namespace detail

/// Exact posterior of the flows-only model behind `graph`.
inline WlsSolution wls_flows(const FactorGraph& graph) {
    const auto& t = graph.topology();
    LinearModel model;
    model.n_columns = static_cast<int>(t.n_variables());
    for (std::size_t a = 0; a < t.n_factors(); ++a) {
        const auto& val = graph.value(a);
        if (!val.present()) continue;
        const int row = model.add_row(val.z, val.variance);
        for (auto e = t.factor_begin[a]; e < t.factor_begin[a + 1]; ++e)
            model.entries.emplace_back(row, static_cast<int>(t.edge_variable[e]), static_cast<double>(t.edge_sign[e]));
    }
    return detail::solve_wls(model, nullptr);
}

/// WLS over bus angles (DC law), reporting the implied line flows. The
/// lowest-numbered bus of each connected component is the angle reference.
inline WlsSolution wls_angles(const GridCase& gc, const MeasurementSet& meas) {
    if (meas.flow.size() != gc.lines.size() || meas.injection.size() != gc.buses.size())
        throw ContractError("measurement set does not match the case");
    const auto stats = topology_stats(gc);
    std::vector<int> slack(static_cast<std::size_t>(stats.component_count), -1);
    for (std::size_t i = 0; i < gc.buses.size(); ++i) {
        auto& s = slack[static_cast<std::size_t>(stats.component_of[i])];
        if (s < 0 || gc.buses[i].id < gc.buses[static_cast<std::size_t>(s)].id) s = static_cast<int>(i);
    }
    std::vector<int> column(gc.buses.size(), -1);
    int k = 0;
    for (std::size_t i = 0; i < gc.buses.size(); ++i) {
        const bool is_slack = slack[static_cast<std::size_t>(stats.component_of[i])] == static_cast<int>(i);
        if (!is_slack) column[i] = k++;
    }

    // Flow on line l as a functional of the angle columns.
    auto flow_terms = [&](std::size_t l) {
        const auto& ln = gc.lines[l];
        const double g = gc.base_mva * ln.susceptance;
        std::vector<std::pair<int, double>> terms;
        if (int c = column[gc.bus_index(ln.from_bus)]; c >= 0) terms.emplace_back(c, g);
        if (int c = column[gc.bus_index(ln.to_bus)]; c >= 0) terms.emplace_back(c, -g);
        return terms;
    };

    LinearModel model;
    model.n_columns = k;
    for (std::size_t l = 0; l < gc.lines.size(); ++l) {
        if (!meas.flow[l].present()) continue;
        const int row = model.add_row(meas.flow[l].z, meas.flow[l].variance);
        for (auto [c, v] : flow_terms(l)) model.entries.emplace_back(row, c, v);
    }
    const auto inc = gc.incidence();
    for (std::size_t i = 0; i < gc.buses.size(); ++i) {
        if (!meas.injection[i].present()) continue;
        const int row = model.add_row(meas.injection[i].z, meas.injection[i].variance);
        for (auto l : inc[i]) {
            const double s = gc.lines[l].from_bus == gc.buses[i].id ? 1.0 : -1.0;
            for (auto [c, v] : flow_terms(l)) model.entries.emplace_back(row, c, s * v);
        }
    }
    Eigen::MatrixXd outputs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(gc.lines.size()), k);
    for (std::size_t l = 0; l < gc.lines.size(); ++l)
        for (auto [c, v] : flow_terms(l)) outputs(static_cast<Eigen::Index>(l), c) += v;
    return detail::solve_wls(model, &outputs);
}

/// Posterior covariance block for the listed line ids (independent of z).
inline Eigen::MatrixXd exact_covariance(const FactorGraph& graph, const std::vector<int>& line_ids) {
    const auto sol = wls_flows(graph);
    const auto& vars = graph.topology().variables;
    std::vector<Eigen::Index> idx;
    for (int id : line_ids) {
        Eigen::Index found = -1;
        for (std::size_t v = 0; v < vars.size(); ++v)
            if (vars[v].line_id == id) found = static_cast<Eigen::Index>(v);
        if (found < 0) throw ContractError("unknown line id " + std::to_string(id));
        if (!sol.retrievable_mask[static_cast<std::size_t>(found)])
            throw ContractError("line " + std::to_string(id) + " is not retrievable");
        idx.push_back(found);
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < idx.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sol.covariance(idx[i], idx[j]);
    return out;
}

/// Weighted least squares objective sum_a (f_a(x) - z_a)^2 / (2 sigma_a^2).
inline double wls_objective(const FactorGraph& graph, const Eigen::VectorXd& x) {
    const auto& t = graph.topology();
    double total = 0.0;
    for (std::size_t a = 0; a < t.n_factors(); ++a) {
        const auto& val = graph.value(a);
        if (!val.present()) continue;
        double f = 0.0;
        for (auto e = t.factor_begin[a]; e < t.factor_begin[a + 1]; ++e)
            f += t.edge_sign[e] * x(static_cast<Eigen::Index>(t.edge_variable[e]));
        total += (f - val.z) * (f - val.z) / (2.0 * val.variance);
    }
    return total;
}

}  // namespace gbpse
