#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace gbpse;
using namespace gbpse::testing;

namespace {
Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }
}  // namespace

TEST(WlsFlows, BuildingBlockClosedForm) {
    const double z1 = 1.3, s1 = 2e-4, z2 = 1.9, s2 = 0.5e-4, zG = 0.4, sG = 3e-4;
    const Block b(z1, s1, z2, s2, zG, sG);
    const auto w = wls_flows(build_factor_graph(b.grid, b.meas));
    const double S2 = 1.0 / (1.0 / s2 + 1.0 / (s1 + sG));
    EXPECT_NEAR(w.means(1), S2 * (z2 / s2 + (z1 + zG) / (s1 + sG)), 1e-13);
    EXPECT_NEAR(w.covariance(1, 1), S2, 1e-18);
    EXPECT_FALSE(w.rank_deficient);
}

TEST(WlsFlows, SingleLine) {
    const auto gc = chain(2);
    MeasurementSet m;
    m.flow = {{3.5, 2e-4}};
    m.injection = {{}, {}};
    const auto w = wls_flows(build_factor_graph(gc, m));
    EXPECT_DOUBLE_EQ(w.means(0), 3.5);
    EXPECT_DOUBLE_EQ(w.covariance(0, 0), 2e-4);
    EXPECT_NEAR(w.residual, 0.0, 1e-20);
}

TEST(WlsFlows, FullyUnconstrained) {
    const auto& gc = ieee("ieee14");
    MeasurementSet m;
    m.flow.assign(gc.lines.size(), Measurement{});
    m.injection.assign(gc.buses.size(), Measurement{});
    const auto w = wls_flows(build_factor_graph(gc, m));
    EXPECT_EQ(w.retrievable_count(), 0u);
    EXPECT_TRUE(std::isinf(w.covariance(0, 0)));
}

TEST(WlsFlows, RetrievableMaskMatchesBp) {
    const auto& gc = ieee("ieee118");
    const auto base = build_factor_graph(gc, MeasurementSet::exact(gc, 1e-4));
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto m = sample_measurements(gc, make_mask(gc, MissingFractions::equal(0.1), PlacementStrategy::Uniform, s), 1e-4, s);
        const auto g = base.rebind(m);
        const auto r = run_bp(g);
        const auto w = wls_flows(g);
        for (std::size_t v = 0; v < r.beliefs.size(); ++v) EXPECT_EQ(r.retrievable(v), w.retrievable_mask[v]) << s;
    }
}

TEST(WlsFlows, ObjectiveIsMinimal) {
    const auto& gc = ieee("ieee30");
    const auto g = build_factor_graph(gc, sample_measurements(gc, make_mask(gc, {0.1, 0.1}, PlacementStrategy::Uniform, 9), 1e-4, 9));
    const auto w = wls_flows(g);
    const double best = wls_objective(g, w.means);
    for (std::size_t v = 0; v < g.n_variables(); ++v) {
        if (!w.retrievable_mask[v]) continue;
        for (double d : {-1e-6, 1e-6}) {
            Eigen::VectorXd x = w.means;
            x(ix(v)) += d;
            EXPECT_GT(wls_objective(g, x), best);
        }
    }
}

TEST(WlsFlows, SparsePathAgreesWithDense) {
    // More than 500 variables triggers the sparse factorization.
    GridCase big = chain(700);
    const auto g = build_factor_graph(big, MeasurementSet::exact(big, 1e-4));
    const auto w = wls_flows(g);
    const auto r = run_bp(g);
    EXPECT_FALSE(w.rank_deficient);
    for (std::size_t v = 0; v < r.beliefs.size(); v += 50) {
        EXPECT_NEAR(w.means(ix(v)), r.beliefs[v].mean, 1e-9);
        EXPECT_NEAR(w.covariance(ix(v), ix(v)), r.beliefs[v].variance, 1e-12);
    }
}

TEST(WlsAngles, TreeMatchesFlowModel) {
    const auto tree = random_spanning_tree(ieee("ieee57"), 4);
    const auto m = sample_measurements(tree, make_mask(tree, {0, 0}, PlacementStrategy::Uniform, 4), 1e-4, 4);
    const auto a = wls_angles(tree, m);
    const auto f = wls_flows(build_factor_graph(tree, m));
    for (std::size_t l = 0; l < tree.lines.size(); ++l) {
        EXPECT_NEAR(a.means(ix(l)), f.means(ix(l)), 1e-9);
        EXPECT_NEAR(a.covariance(ix(l), ix(l)), f.covariance(ix(l), ix(l)), 1e-12);
    }
}

TEST(WlsAngles, TriangleSatisfiesCycleLaw) {
    const auto gc = triangle();
    auto m = MeasurementSet::exact(gc, 1e-4);
    m.flow[0].z += 0.3;  // inconsistent flow readings
    m.flow[2].z -= 0.1;
    const auto a = wls_angles(gc, m);
    const auto& L = gc.lines;
    const double b1 = gc.base_mva * L[0].susceptance, b2 = gc.base_mva * L[1].susceptance,
                 b3 = gc.base_mva * L[2].susceptance;
    EXPECT_NEAR(a.means(2) / b3, a.means(0) / b1 + a.means(1) / b2, 1e-12);

    // Hand-built normal equations in (theta2, theta3) with theta1 = 0.
    Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
    Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
    auto add = [&](Eigen::Vector2d h, double z) {
        A += h * h.transpose();
        rhs += h * z;
    };
    add({-b1, 0.0}, m.flow[0].z);
    add({b2, -b2}, m.flow[1].z);
    add({0.0, -b3}, m.flow[2].z);
    add({-b1, -b3}, m.injection[0].z);
    add({b1 + b2, -b2}, m.injection[1].z);
    add({-b2, b2 + b3}, m.injection[2].z);
    const Eigen::Vector2d th = A.ldlt().solve(rhs);
    EXPECT_NEAR(a.means(0), -b1 * th(0), 1e-8);
    EXPECT_NEAR(a.means(1), b2 * (th(0) - th(1)), 1e-8);
    EXPECT_NEAR(a.means(2), -b3 * th(1), 1e-8);
}

TEST(WlsAngles, SlackChoiceDoesNotChangeFlows) {
    auto gc = ieee("ieee14");
    const auto m = sample_measurements(gc, make_mask(gc, {0.1, 0.1}, PlacementStrategy::Uniform, 6), 1e-4, 6);
    const auto a = wls_angles(gc, m);
    // Renumber bus 14 to 0 so it becomes the reference.
    GridCase renum = gc;
    for (auto& b : renum.buses)
        if (b.id == 14) b.id = 0;
    for (auto& l : renum.lines) {
        if (l.from_bus == 14) l.from_bus = 0;
        if (l.to_bus == 14) l.to_bus = 0;
    }
    renum.reindex();
    const auto b = wls_angles(renum, m);
    for (std::size_t l = 0; l < gc.lines.size(); ++l) {
        ASSERT_EQ(a.retrievable_mask[l], b.retrievable_mask[l]);
        if (a.retrievable_mask[l]) {
            EXPECT_NEAR(a.means(ix(l)), b.means(ix(l)), 1e-8);
        }
    }
}

TEST(ExactCovariance, IndependentOfZ) {
    const auto& gc = ieee("ieee14");
    const auto mask = make_mask(gc, {0.1, 0.1}, PlacementStrategy::Uniform, 2);
    const auto g1 = build_factor_graph(gc, sample_measurements(gc, mask, 1e-4, 1));
    const auto g2 = build_factor_graph(gc, sample_measurements(gc, mask, 1e-4, 2));
    const auto w = wls_flows(g1);
    std::vector<int> ids;
    for (std::size_t v = 0; v < gc.lines.size(); ++v)
        if (w.retrievable_mask[v]) ids.push_back(gc.lines[v].id);
    const auto c1 = exact_covariance(g1, ids);
    const auto c2 = exact_covariance(g2, ids);
    EXPECT_TRUE(c1 == c2);
}

TEST(ExactCovariance, ScalesWithVariance) {
    const auto& gc = ieee("ieee14");
    const auto c1 = exact_covariance(build_factor_graph(gc, MeasurementSet::exact(gc, 1e-4)), {1, 5, 9});
    const auto c4 = exact_covariance(build_factor_graph(gc, MeasurementSet::exact(gc, 4e-4)), {1, 5, 9});
    EXPECT_LT((c4 - 4.0 * c1).norm(), 1e-12 * c4.norm());
}

TEST(ExactCovariance, DiagonalMatchesBpOnTrees) {
    const auto tree = random_spanning_tree(ieee("ieee30"), 1);
    const auto g = build_factor_graph(tree, MeasurementSet::exact(tree, 1e-4));
    BpOptions o;
    o.tol_mean = o.tol_var = 1e-18;
    const auto r = run_bp(g, o);
    std::vector<int> ids;
    for (const auto& l : tree.lines) ids.push_back(l.id);
    const auto c = exact_covariance(g, ids);
    for (std::size_t v = 0; v < ids.size(); ++v)
        EXPECT_NEAR(c(ix(v), ix(v)), r.beliefs[v].variance, 1e-12 * r.beliefs[v].variance);
}

TEST(ExactCovariance, NamesNonRetrievableLine) {
    const auto gc = chain(3);
    MeasurementSet m;
    m.flow = {{1.0, 1e-4}, {}};
    m.injection = {{}, {}, {}};
    try {
        exact_covariance(build_factor_graph(gc, m), {1, 2});
        FAIL() << "expected a contract error";
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}
