#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace gbpse;
using namespace gbpse::testing;

namespace {

const char* kTwoBus =
    "08/19/93 UW ARCHIVE           100.0  1962 W IEEE 2 Bus Toy\n"
    "BUS DATA FOLLOWS                            2 ITEMS\n"
    "   1 Bus 1     HV  1  1  3 1.060    0.0      0.0      0.0    50.0     0.0     0.0  1.060     0.0     0.0   0.0    0.0        0\n"
    "   2 Bus 2     HV  1  1  0 1.045   -5.73    50.0      0.0     0.0     0.0     0.0  0.000     0.0     0.0   0.0    0.0        0\n"
    "-999\n"
    "BRANCH DATA FOLLOWS                         1 ITEMS\n"
    "   1    2  1  1 1 0   0.01938   0.05917   0.0528     0     0     0    0 0  0.0       0.0 0.0    0.0     0.0    0.0   0.0\n"
    "-999\n"
    "END OF DATA\n";

}  // namespace

TEST(ImportCdf, TwoBusToy) {
    std::istringstream in(kTwoBus);
    const auto gc = derive_dc_state(parse_cdf(in, "toy"), nullptr);
    ASSERT_EQ(gc.buses.size(), 2u);
    ASSERT_EQ(gc.lines.size(), 1u);
    EXPECT_EQ(topology_stats(gc).loop_count, 0);
    EXPECT_NEAR(gc.buses[1].angle, -5.73 * M_PI / 180.0, 1e-15);
    EXPECT_NEAR(gc.lines[0].susceptance, 1.0 / 0.05917, 1e-12);
    EXPECT_NEAR(gc.lines[0].flow_true, 100.0 / 0.05917 * 5.73 * M_PI / 180.0, 1e-9);
    EXPECT_DOUBLE_EQ(gc.buses[0].listed_injection, 50.0);
    EXPECT_DOUBLE_EQ(gc.buses[1].listed_injection, -50.0);
}

TEST(ImportCdf, ZeroReactanceRejectedWithLineNumber) {
    std::string text = kTwoBus;
    text.replace(text.find("0.05917"), 7, "0.00000");
    std::istringstream in(text);
    try {
        parse_cdf(in);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 7u);
    }
}

TEST(ImportCdf, MalformedNumberReportsLine) {
    std::string text = kTwoBus;
    text.replace(text.find("-5.73"), 5, "-5x73");
    std::istringstream in(text);
    try {
        parse_cdf(in);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 4u);
    }
}

TEST(ImportCdf, DanglingEndpointIsTopologyError) {
    std::string text = kTwoBus;
    const auto pos = text.find("   1    2  1");
    text.replace(pos, 9, "   1    7");
    std::istringstream in(text);
    EXPECT_THROW(parse_cdf(in), TopologyError);
}

TEST(ImportCdf, MissingFileThrows) { EXPECT_THROW(import_cdf("/nonexistent/case.cdf"), Error); }

TEST(ImportCdf, StandardCaseSizes) {
    EXPECT_EQ(ieee("ieee14").lines.size(), 20u);
    EXPECT_EQ(ieee("ieee30").lines.size(), 41u);
    EXPECT_EQ(ieee("ieee57").lines.size(), 80u);
    EXPECT_EQ(ieee("ieee118").buses.size(), 118u);
    EXPECT_EQ(ieee("ieee118").lines.size(), 186u);
    EXPECT_EQ(ieee("ieee300").buses.size(), 300u);
    EXPECT_EQ(ieee("ieee300").lines.size(), 411u);
}

TEST(ImportCdf, MergingParallelLinesSumsSusceptance) {
    const auto merged = import_cdf(data_path("ieee118"), {true});
    const auto& plain = ieee("ieee118");
    EXPECT_LT(merged.lines.size(), plain.lines.size());
    double b_plain = 0.0, b_merged = 0.0;
    for (const auto& l : plain.lines) b_plain += l.susceptance;
    for (const auto& l : merged.lines) b_merged += l.susceptance;
    EXPECT_NEAR(b_plain, b_merged, 1e-9 * b_plain);
    int circuits = 0;
    for (const auto& l : merged.lines) circuits += l.circuits;
    EXPECT_EQ(static_cast<std::size_t>(circuits), plain.lines.size());
}

TEST(TopologyStats, LoopCountsOfStandardCases) {
    // lines - buses + components on the unmerged branch lists
    EXPECT_EQ(topology_stats(ieee("ieee118")).loop_count, 69);
    EXPECT_EQ(topology_stats(ieee("ieee300")).loop_count, 112);
    EXPECT_EQ(topology_stats(ieee("ieee14")).loop_count, 7);
}

TEST(TopologyStats, Star) {
    const auto st = topology_stats(star(5));
    EXPECT_EQ(st.loop_count, 0);
    EXPECT_EQ(st.component_count, 1);
    EXPECT_EQ(st.degree_histogram.at(1), 5);
    EXPECT_EQ(st.degree_histogram.at(5), 1);
}

TEST(TopologyStats, HistogramSumsToBusCount) {
    for (auto name : {"ieee14", "ieee57", "ieee300"}) {
        int total = 0;
        for (auto [deg, n] : topology_stats(ieee(name)).degree_histogram) total += n;
        EXPECT_EQ(static_cast<std::size_t>(total), ieee(name).buses.size()) << name;
    }
}

TEST(TopologyStats, SpanningTreeHasNoLoops) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto tree = random_spanning_tree(ieee("ieee118"), s);
        EXPECT_EQ(tree.lines.size(), 117u);
        EXPECT_EQ(topology_stats(tree).loop_count, 0);
    }
}

TEST(DeriveDcState, EqualAnglesGiveZeroFlow) {
    auto gc = chain(3);
    for (auto& b : gc.buses) b.angle = 0.3;
    gc = derive_dc_state(gc, nullptr);
    for (const auto& l : gc.lines) EXPECT_EQ(l.flow_true, 0.0);
}

TEST(DeriveDcState, InjectionsBalance) {
    for (auto name : {"ieee14", "ieee30", "ieee57", "ieee118", "ieee300"}) {
        const auto& gc = ieee(name);
        double total = 0.0, scale = 0.0;
        for (const auto& b : gc.buses) {
            total += b.injection_true;
            scale += std::abs(b.injection_true);
        }
        EXPECT_LT(std::abs(total), 1e-6 * scale) << name;
    }
}

TEST(DeriveDcState, DiffersFromListedValues) {
    const auto& gc = ieee("ieee14");
    double max_gap = 0.0;
    for (const auto& b : gc.buses) max_gap = std::max(max_gap, std::abs(b.injection_true - b.listed_injection));
    EXPECT_GT(max_gap, 1.0);
}

TEST(DeriveDcState, InvariantUnderGlobalAngleShift) {
    auto shifted = ieee("ieee30");
    for (auto& b : shifted.buses) b.angle += 0.7;
    shifted = derive_dc_state(shifted, nullptr);
    const auto& base = ieee("ieee30");
    for (std::size_t l = 0; l < base.lines.size(); ++l)
        EXPECT_NEAR(shifted.lines[l].flow_true, base.lines[l].flow_true, 1e-9);
}

TEST(DeriveDcState, WarnsOnImbalanceOnly) {
    auto gc = chain(3);
    std::ostringstream warn;
    derive_dc_state(gc, &warn);
    EXPECT_TRUE(warn.str().empty());
}

TEST(Snapshot, RoundTripIsExact) {
    for (auto name : {"ieee14", "ieee300"}) {
        std::stringstream ss;
        write_snapshot(ss, ieee(name));
        const auto back = read_snapshot(ss);
        EXPECT_TRUE(back == ieee(name)) << name;
    }
}

TEST(Snapshot, RejectsForeignInput) {
    std::istringstream in("hello\n");
    EXPECT_THROW(read_snapshot(in), ParseError);
}

TEST(GridCase, StaleIndexIsContractError) {
    auto gc = chain(3);
    gc.buses.push_back({9, 0.0, 0.0, 0.0});
    EXPECT_THROW(gc.bus_index(1), ContractError);
    gc.reindex();
    EXPECT_EQ(gc.bus_index(9), 3u);
}
