#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gbpse/gbpse.hpp"

namespace gbpse::testing {

inline std::filesystem::path data_path(const std::string& name) {
    return std::filesystem::path(GBPSE_DATA_DIR) / (name + ".cdf");
}

inline const GridCase& ieee(const std::string& name) {
    static std::map<std::string, GridCase> cache;
    auto it = cache.find(name);
    if (it == cache.end()) it = cache.emplace(name, derive_dc_state(import_cdf(data_path(name)), nullptr)).first;
    return it->second;
}

/// Chain of buses 1..n with lines 1..n-1 oriented i -> i+1.
inline GridCase chain(int n, double susceptance = 10.0) {
    GridCase gc;
    gc.name = "chain";
    gc.base_mva = 100.0;
    for (int i = 1; i <= n; ++i) gc.buses.push_back({i, 0.01 * i, 0.0, 0.0});
    for (int i = 1; i < n; ++i) gc.lines.push_back({i, i, i + 1, susceptance, 0.0, 1});
    gc.reindex();
    return derive_dc_state(gc, nullptr);
}

/// Star: hub bus 1, leaves 2..leaves+1.
inline GridCase star(int leaves) {
    GridCase gc;
    gc.name = "star";
    gc.base_mva = 100.0;
    gc.buses.push_back({1, 0.0, 0.0, 0.0});
    for (int i = 0; i < leaves; ++i) {
        gc.buses.push_back({i + 2, -0.01 * (i + 1), 0.0, 0.0});
        gc.lines.push_back({i + 1, 1, i + 2, 5.0 + i, 0.0, 1});
    }
    gc.reindex();
    return derive_dc_state(gc, nullptr);
}

/// Triangle 1-2-3 with lines 1->2, 2->3, 1->3.
inline GridCase triangle() {
    GridCase gc;
    gc.name = "triangle";
    gc.base_mva = 100.0;
    gc.buses = {{1, 0.0, 0.0, 0.0}, {2, -0.05, 0.0, 0.0}, {3, -0.08, 0.0, 0.0}};
    gc.lines = {{1, 1, 2, 10.0, 0.0, 1}, {2, 2, 3, 8.0, 0.0, 1}, {3, 1, 3, 4.0, 0.0, 1}};
    gc.reindex();
    return derive_dc_state(gc, nullptr);
}

/// Two lines meeting at a bus with an injection measurement: line 1 enters
/// bus 2, line 2 leaves it, so x2 = x1 + xG.
struct Block {
    GridCase grid = chain(3);
    MeasurementSet meas;

    Block(double z1, double s1, double z2, double s2, double zG, double sG) {
        meas.flow = {{z1, s1}, {z2, s2}};
        meas.injection = {{}, {zG, sG}, {}};
    }
};

/// Spanning tree of `gc` from a randomized depth-first search.
inline GridCase random_spanning_tree(const GridCase& gc, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(gc.buses.size());
    for (std::size_t l = 0; l < gc.lines.size(); ++l) {
        const auto f = gc.bus_index(gc.lines[l].from_bus), t = gc.bus_index(gc.lines[l].to_bus);
        adj[f].emplace_back(t, l);
        adj[t].emplace_back(f, l);
    }
    std::vector<bool> seen(gc.buses.size(), false);
    std::vector<std::size_t> keep;
    std::uniform_int_distribution<std::size_t> pick_root(0, gc.buses.size() - 1);
    std::vector<std::size_t> stack{pick_root(rng)};
    seen[stack.back()] = true;
    while (!stack.empty()) {
        const auto u = stack.back();
        std::vector<std::pair<std::size_t, std::size_t>> open;
        for (auto e : adj[u])
            if (!seen[e.first]) open.push_back(e);
        if (open.empty()) {
            stack.pop_back();
            continue;
        }
        std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
        const auto [v, l] = open[pick(rng)];
        seen[v] = true;
        keep.push_back(l);
        stack.push_back(v);
    }
    std::sort(keep.begin(), keep.end());
    return derive_dc_state(with_lines(gc, keep), nullptr);
}

}  // namespace gbpse::testing
