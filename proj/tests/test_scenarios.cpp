#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace gbpse;
using namespace gbpse::testing;

TEST(MakeMask, ZeroFractionIsEmpty) {
    const auto m = make_mask(ieee("ieee30"), {0.0, 0.0}, PlacementStrategy::Uniform, 1);
    EXPECT_TRUE(m.missing_flows.empty());
    EXPECT_TRUE(m.missing_injections.empty());
    EXPECT_FALSE(m.rounded);
}

TEST(MakeMask, SizesFollowHalfUpRounding) {
    const auto& gc = ieee("ieee14");  // 20 lines, 14 buses
    const auto m = make_mask(gc, {0.125, 0.25}, PlacementStrategy::Uniform, 3);
    EXPECT_EQ(m.missing_flows.size(), 3u);        // 2.5 -> 3
    EXPECT_EQ(m.missing_injections.size(), 4u);   // 3.5 -> 4
    EXPECT_TRUE(m.rounded);
    const auto exact = make_mask(gc, {0.5, 0.5}, PlacementStrategy::Uniform, 3);
    EXPECT_EQ(exact.missing_flows.size(), 10u);
    EXPECT_EQ(exact.missing_injections.size(), 7u);
    EXPECT_FALSE(exact.rounded);
}

TEST(MakeMask, RejectsBadFractions) {
    EXPECT_THROW(make_mask(ieee("ieee14"), {1.5, 0.0}, PlacementStrategy::Uniform, 1), ContractError);
    EXPECT_THROW(make_mask(ieee("ieee14"), {0.0, -0.1}, PlacementStrategy::Uniform, 1), ContractError);
}

TEST(MakeMask, PureFunctionOfInputs) {
    const auto& gc = ieee("ieee118");
    for (auto s : {PlacementStrategy::Uniform, PlacementStrategy::LeastConnected, PlacementStrategy::MinSumMoverC}) {
        const auto a = make_mask(gc, {0.3, 0.2}, s, 42);
        const auto b = make_mask(gc, {0.3, 0.2}, s, 42);
        EXPECT_EQ(a.missing_flows, b.missing_flows);
        EXPECT_EQ(a.missing_injections, b.missing_injections);
    }
    EXPECT_NE(make_mask(gc, {0.3, 0.3}, PlacementStrategy::Uniform, 1).missing_flows,
              make_mask(gc, {0.3, 0.3}, PlacementStrategy::Uniform, 2).missing_flows);
}

TEST(MakeMask, LeastConnectedRemovesLeavesFirst) {
    const auto gc = star(6);
    const auto m = make_mask(gc, {0.0, 6.0 / 7.0}, PlacementStrategy::LeastConnected, 1);
    EXPECT_EQ(m.missing_injections.size(), 6u);
    EXPECT_EQ(m.missing_injections.count(0), 0u);  // the hub keeps its measurement
    const auto few = make_mask(gc, {0.0, 2.0 / 7.0}, PlacementStrategy::LeastConnected, 1);
    EXPECT_EQ(few.missing_injections, (std::set<std::size_t>{1, 2}));  // ties by bus id
}

TEST(MakeMask, MinSumMoverCKeepsHighDegreeBuses) {
    const auto& gc = ieee("ieee300");
    const auto c = connectivity(gc);
    const auto m = make_mask(gc, {0.0, 0.5}, PlacementStrategy::MinSumMoverC, 1);
    double kept = 0.0, removed = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) (m.missing_injections.count(i) ? removed : kept) += c[i];
    kept /= static_cast<double>(c.size() - m.missing_injections.size());
    removed /= static_cast<double>(m.missing_injections.size());
    EXPECT_GT(kept, removed);
}

TEST(MakeMask, MinSumMoverCIsOptimalForItsObjective) {
    const auto& big = ieee("ieee14");
    const auto greedy = make_mask(big, {0.0, 3.0 / 14.0}, PlacementStrategy::MinSumMoverC, 1);
    auto obj14 = [&](const std::set<std::size_t>& miss) {
        std::vector<bool> flag(big.buses.size());
        for (auto i : miss) flag[i] = true;
        const auto m = missing_neighbour_counts(big, flag);
        const auto c = connectivity(big);
        double s = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) s += static_cast<double>(m[i]) / c[i];
        return s;
    };
    const double g = obj14(greedy.missing_injections);
    for (std::size_t a = 0; a < 14; ++a)
        for (std::size_t b = a + 1; b < 14; ++b)
            for (std::size_t d = b + 1; d < 14; ++d) EXPECT_LE(g, obj14({a, b, d}) + 1e-12);
    EXPECT_DOUBLE_EQ(obj14({}), 0.0);
}

TEST(MakeMask, UniformRateConverges) {
    const auto& gc = ieee("ieee14");
    std::vector<int> hits(gc.lines.size(), 0);
    const int n = 5000;
    for (int s = 0; s < n; ++s)
        for (auto l : make_mask(gc, {0.3, 0.3}, PlacementStrategy::Uniform, static_cast<std::uint64_t>(s)).missing_flows)
            ++hits[l];
    for (auto h : hits) EXPECT_NEAR(static_cast<double>(h) / n, 0.3, 0.02);
}

TEST(SampleMeasurements, Deterministic) {
    const auto& gc = ieee("ieee57");
    const auto mask = make_mask(gc, {0.2, 0.2}, PlacementStrategy::Uniform, 5);
    const auto a = sample_measurements(gc, mask, 1e-4, 9);
    const auto b = sample_measurements(gc, mask, 1e-4, 9);
    for (std::size_t l = 0; l < gc.lines.size(); ++l) EXPECT_EQ(a.flow[l].z, b.flow[l].z);
    EXPECT_EQ(a.seed, 9u);
}

TEST(SampleMeasurements, MaskedEntriesAreInfinite) {
    const auto& gc = ieee("ieee57");
    const auto mask = make_mask(gc, {0.2, 0.2}, PlacementStrategy::Uniform, 5);
    const auto m = sample_measurements(gc, mask, 1e-4, 1);
    for (std::size_t l = 0; l < gc.lines.size(); ++l) EXPECT_EQ(m.flow[l].present(), !mask.missing_flows.count(l));
    for (std::size_t i = 0; i < gc.buses.size(); ++i)
        EXPECT_EQ(m.injection[i].present(), !mask.missing_injections.count(i));
}

TEST(SampleMeasurements, TinyVarianceGivesTrueValues) {
    const auto& gc = ieee("ieee14");
    const auto m = sample_measurements(gc, make_mask(gc, {0, 0}, PlacementStrategy::Uniform, 1), 1e-24, 1);
    for (std::size_t l = 0; l < gc.lines.size(); ++l) EXPECT_NEAR(m.flow[l].z, gc.lines[l].flow_true, 1e-9);
}

TEST(SampleMeasurements, NoiseVariance) {
    const auto gc = chain(2);
    const MissingMask none;
    double s = 0.0, ss = 0.0;
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
        const double e = sample_measurements(gc, none, 1e-4, static_cast<std::uint64_t>(k)).flow[0].z - gc.lines[0].flow_true;
        s += e;
        ss += e * e;
    }
    const double var = (ss - s * s / n) / (n - 1);
    EXPECT_NEAR(var, 1e-4, 0.05e-4);
}

TEST(InjectionRetrievable, Rules) {
    const auto gc = chain(3);
    MeasurementSet m;
    m.flow = {{1.0, 1e-4}, {1.0, 1e-4}};
    m.injection = {{}, {}, {0.0, 1e-4}};
    auto bp = run_bp(build_factor_graph(gc, m));
    EXPECT_TRUE(injection_retrievable(gc, 2, m, bp));  // degree-2 bus, both flows retrievable
    EXPECT_TRUE(injection_retrievable(gc, 3, m, bp));  // direct measurement
    m.flow[1] = {};
    m.injection[2] = {};
    bp = run_bp(build_factor_graph(gc, m));
    EXPECT_FALSE(injection_retrievable(gc, 2, m, bp));
    m.injection[1] = {0.0, 1e-4};
    EXPECT_TRUE(injection_retrievable(gc, 2, m, bp));
}

TEST(InjectionRetrievable, NoMissingFlowsMeansEverythingRetrievable) {
    const auto& gc = ieee("ieee118");
    const auto m = sample_measurements(gc, make_mask(gc, {0.0, 0.9}, PlacementStrategy::Uniform, 3), 1e-4, 3);
    const auto bp = run_bp(build_factor_graph(gc, m));
    EXPECT_EQ(bp.retrievable_count(), gc.lines.size());
    for (const auto& b : gc.buses) EXPECT_TRUE(injection_retrievable(gc, b.id, m, bp));
}

TEST(MeasurementCsv, RoundTrip) {
    const auto& gc = ieee("ieee14");
    const auto m = sample_measurements(gc, make_mask(gc, {0.2, 0.2}, PlacementStrategy::Uniform, 1), 1e-4, 1);
    std::stringstream ss;
    write_measurements_csv(ss, gc, m);
    EXPECT_NE(ss.str().find(",inf\n"), std::string::npos);
    const auto back = read_measurements_csv(ss, gc);
    for (std::size_t l = 0; l < gc.lines.size(); ++l) {
        EXPECT_EQ(back.flow[l].present(), m.flow[l].present());
        if (m.flow[l].present()) {
            EXPECT_EQ(back.flow[l].z, m.flow[l].z);
        }
    }
}

TEST(MeasurementCsv, Errors) {
    const auto& gc = ieee("ieee14");
    std::istringstream bad_kind("kind,id,z,variance\nvoltage,1,1.0,1e-4\n");
    EXPECT_THROW(read_measurements_csv(bad_kind, gc), ParseError);
    std::istringstream bad_id("kind,id,z,variance\nflow,999,1.0,1e-4\n");
    EXPECT_THROW(read_measurements_csv(bad_id, gc), ParseError);
    std::istringstream bad_var("kind,id,z,variance\nflow,1,1.0,-1\n");
    EXPECT_THROW(read_measurements_csv(bad_var, gc), ParseError);
}

TEST(Strategy, NamesRoundTrip) {
    for (auto s : {PlacementStrategy::Uniform, PlacementStrategy::LeastConnected, PlacementStrategy::MinSumMoverC})
        EXPECT_EQ(parse_strategy(to_string(s)), s);
    EXPECT_THROW(parse_strategy("nope"), ContractError);
}
