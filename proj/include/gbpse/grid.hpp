#pragma once

// Grid model: IEEE Common Data Format import, DC ground truth, topology
// statistics and the plain-text case snapshot.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gbpse/error.hpp"

namespace gbpse {

struct Bus {
    int id = 0;
    double angle = 0.0;            ///< radians, from the solved case
    double injection_true = 0.0;   ///< MW, net outflow implied by the DC flows
    double listed_injection = 0.0; ///< MW, generation minus load as listed in the source file
};

/// Transmission line (or transformer) oriented from `from_bus` to `to_bus`.
struct Line {
    int id = 0;
    int from_bus = 0;
    int to_bus = 0;
    double susceptance = 0.0;  ///< per unit, 1 / reactance; negative for series capacitors
    double flow_true = 0.0;    ///< MW, positive in from -> to direction
    int circuits = 1;          ///< number of parallel circuits merged into this line
};

struct GridCase {
    std::string name;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Line> lines;

    std::size_t bus_index(int id) const {
        auto it = bus_lookup().find(id);
        if (it == bus_lookup().end()) throw TopologyError("unknown bus id " + std::to_string(id));
        return it->second;
    }
    std::size_t line_index(int id) const {
        auto it = line_lookup().find(id);
        if (it == line_lookup().end()) throw TopologyError("unknown line id " + std::to_string(id));
        return it->second;
    }
    bool has_bus(int id) const { return bus_lookup().count(id) != 0; }

    /// Incident line indices per bus index, in line order.
    std::vector<std::vector<std::size_t>> incidence() const {
        std::vector<std::vector<std::size_t>> inc(buses.size());
        for (std::size_t l = 0; l < lines.size(); ++l) {
            inc[bus_index(lines[l].from_bus)].push_back(l);
            inc[bus_index(lines[l].to_bus)].push_back(l);
        }
        return inc;
    }

    /// Rebuild id lookups; call after mutating `buses` or `lines` directly.
    void reindex() {
        bus_index_.clear();
        line_index_.clear();
        for (std::size_t i = 0; i < buses.size(); ++i) {
            if (!bus_index_.emplace(buses[i].id, i).second)
                throw TopologyError("duplicate bus id " + std::to_string(buses[i].id));
        }
        for (std::size_t l = 0; l < lines.size(); ++l) {
            if (!line_index_.emplace(lines[l].id, l).second)
                throw TopologyError("duplicate line id " + std::to_string(lines[l].id));
        }
        for (const auto& ln : lines) {
            if (!bus_index_.count(ln.from_bus) || !bus_index_.count(ln.to_bus))
                throw TopologyError("line " + std::to_string(ln.id) + " has a dangling endpoint");
            if (ln.from_bus == ln.to_bus)
                throw TopologyError("line " + std::to_string(ln.id) + " is a self loop");
        }
    }

    friend bool operator==(const GridCase& a, const GridCase& b) {
        auto bus_eq = [](const Bus& x, const Bus& y) {
            return x.id == y.id && x.angle == y.angle && x.injection_true == y.injection_true;
        };
        auto line_eq = [](const Line& x, const Line& y) {
            return x.id == y.id && x.from_bus == y.from_bus && x.to_bus == y.to_bus &&
                   x.susceptance == y.susceptance && x.flow_true == y.flow_true;
        };
        return a.name == b.name && a.base_mva == b.base_mva &&
               std::equal(a.buses.begin(), a.buses.end(), b.buses.begin(), b.buses.end(), bus_eq) &&
               std::equal(a.lines.begin(), a.lines.end(), b.lines.begin(), b.lines.end(), line_eq);
    }

private:
    // Lookups are built by reindex(); a stale index is a usage error, never
    // repaired lazily, so shared const access stays read-only.
    const std::unordered_map<int, std::size_t>& bus_lookup() const {
        if (bus_index_.size() != buses.size()) throw ContractError("GridCase bus index is stale; call reindex()");
        return bus_index_;
    }
    const std::unordered_map<int, std::size_t>& line_lookup() const {
        if (line_index_.size() != lines.size()) throw ContractError("GridCase line index is stale; call reindex()");
        return line_index_;
    }

    std::unordered_map<int, std::size_t> bus_index_;
    std::unordered_map<int, std::size_t> line_index_;
};

struct ImportOptions {
    /// Merge parallel circuits between the same bus pair into one line
    /// (susceptances summed). Off by default: every CDF branch is a line.
    bool merge_parallel = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

/// Fixed-column field, 1-based inclusive columns as in the CDF documentation.
inline std::string_view column(std::string_view line, std::size_t first, std::size_t last) {
    if (line.size() < first) return {};
    return trim(line.substr(first - 1, std::min(line.size(), last) - (first - 1)));
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<int> parse_int(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

inline double require_double(std::string_view s, const char* field, std::size_t lineno, bool blank_is_zero = true) {
    if (trim(s).empty()) {
        if (blank_is_zero) return 0.0;
        throw ParseError(std::string("missing ") + field, lineno);
    }
    auto v = parse_double(s);
    if (!v) throw ParseError(std::string("bad ") + field + " '" + std::string(trim(s)) + "'", lineno);
    return *v;
}

inline int require_int(std::string_view s, const char* field, std::size_t lineno) {
    auto v = parse_int(s);
    if (!v) throw ParseError(std::string("bad ") + field + " '" + std::string(trim(s)) + "'", lineno);
    return *v;
}

inline bool starts_with_terminator(std::string_view line) {
    auto t = trim(line);
    return t.starts_with("-9");
}

}  // namespace detail

/// Merge lines that join the same unordered bus pair. The first occurrence
/// keeps its id and orientation; later circuits add their susceptance.
inline void merge_parallel_lines(GridCase& gc) {
    std::map<std::pair<int, int>, std::size_t> first;
    std::vector<Line> merged;
    for (const auto& ln : gc.lines) {
        auto key = std::minmax(ln.from_bus, ln.to_bus);
        auto it = first.find(key);
        if (it == first.end()) {
            first.emplace(key, merged.size());
            merged.push_back(ln);
            continue;
        }
        Line& keep = merged[it->second];
        keep.susceptance += ln.susceptance;
        keep.circuits += ln.circuits;
    }
    gc.lines = std::move(merged);
    gc.reindex();
}

/// Parse IEEE Common Data Format text. Line ids are assigned 1..m in branch order.
inline GridCase parse_cdf(std::istream& in, std::string fallback_name = "case", ImportOptions opts = {}) {
    GridCase gc;
    std::string line;
    std::size_t lineno = 0;
    enum class Section { Header, Buses, Branches, Other } section = Section::Header;
    bool saw_bus = false, saw_branch = false, title_done = false;
    std::string title_name;

    while (std::getline(in, line)) {
        ++lineno;
        std::string_view lv(line);
        if (!lv.empty() && lv.back() == '\r') lv.remove_suffix(1);
        if (detail::trim(lv).empty()) continue;

        if (lv.find("BUS DATA FOLLOWS") != std::string_view::npos) {
            section = Section::Buses;
            saw_bus = true;
            continue;
        }
        if (lv.find("BRANCH DATA FOLLOWS") != std::string_view::npos) {
            section = Section::Branches;
            saw_branch = true;
            continue;
        }
        if (lv.find("FOLLOWS") != std::string_view::npos || lv.find("END OF DATA") != std::string_view::npos) {
            section = Section::Other;
            continue;
        }

        switch (section) {
        case Section::Header:
            if (!title_done) {
                title_done = true;
                if (auto mva = detail::parse_double(detail::column(lv, 32, 37)); mva && *mva > 0) gc.base_mva = *mva;
                title_name = std::string(detail::column(lv, 46, 200));
            }
            break;
        case Section::Buses: {
            if (detail::starts_with_terminator(lv)) {
                section = Section::Other;
                break;
            }
            Bus b;
            b.id = detail::require_int(detail::column(lv, 1, 4), "bus number", lineno);
            const double deg = detail::require_double(detail::column(lv, 34, 40), "bus angle", lineno);
            b.angle = deg * std::numbers::pi / 180.0;
            const double load = detail::require_double(detail::column(lv, 41, 49), "load MW", lineno);
            const double gen = detail::require_double(detail::column(lv, 59, 67), "generation MW", lineno);
            b.listed_injection = gen - load;
            if (!std::isfinite(b.angle)) throw ParseError("non-finite bus angle", lineno);
            gc.buses.push_back(b);
            break;
        }
        case Section::Branches: {
            if (detail::starts_with_terminator(lv)) {
                section = Section::Other;
                break;
            }
            Line ln;
            ln.id = static_cast<int>(gc.lines.size()) + 1;
            ln.from_bus = detail::require_int(detail::column(lv, 1, 4), "tap bus", lineno);
            ln.to_bus = detail::require_int(detail::column(lv, 6, 9), "Z bus", lineno);
            const double x = detail::require_double(detail::column(lv, 30, 40), "reactance", lineno, false);
            if (x == 0.0) throw ParseError("branch with zero reactance", lineno);
            ln.susceptance = 1.0 / x;
            gc.lines.push_back(ln);
            break;
        }
        case Section::Other:
            break;
        }
    }
    if (!saw_bus) throw ParseError("no BUS DATA section", 0);
    if (!saw_branch) throw ParseError("no BRANCH DATA section", 0);
    gc.name = title_name.empty() ? std::move(fallback_name) : title_name;
    gc.reindex();
    if (opts.merge_parallel) merge_parallel_lines(gc);
    return gc;
}

/// Load a CDF file; see parse_cdf.
inline GridCase import_cdf(const std::filesystem::path& path, ImportOptions opts = {}) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    GridCase gc = parse_cdf(in, path.stem().string(), opts);
    return gc;
}

/// Fill DC line flows and bus injections from angles and susceptances.
/// A grid-wide injection imbalance above 1e-6 * base_mva is reported on `warn`.
inline GridCase derive_dc_state(GridCase gc, std::ostream* warn = &std::cerr) {
    for (auto& b : gc.buses) b.injection_true = 0.0;
    for (auto& ln : gc.lines) {
        const auto& from = gc.buses[gc.bus_index(ln.from_bus)];
        const auto& to = gc.buses[gc.bus_index(ln.to_bus)];
        ln.flow_true = gc.base_mva * ln.susceptance * (from.angle - to.angle);
    }
    for (const auto& ln : gc.lines) {
        gc.buses[gc.bus_index(ln.from_bus)].injection_true += ln.flow_true;
        gc.buses[gc.bus_index(ln.to_bus)].injection_true -= ln.flow_true;
    }
    double total = 0.0;
    for (const auto& b : gc.buses) total += b.injection_true;
    if (warn && std::abs(total) > 1e-6 * gc.base_mva)
        *warn << "warning: " << gc.name << " injection imbalance " << total << " MW\n";
    return gc;
}

struct TopologyStats {
    std::map<int, int> degree_histogram;  ///< degree -> number of buses
    int loop_count = 0;                   ///< lines - buses + components
    int component_count = 0;
    std::vector<int> component_of;        ///< per bus index
};

inline TopologyStats topology_stats(const GridCase& gc) {
    TopologyStats st;
    const auto inc = gc.incidence();
    for (const auto& e : inc) ++st.degree_histogram[static_cast<int>(e.size())];

    st.component_of.assign(gc.buses.size(), -1);
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < gc.buses.size(); ++s) {
        if (st.component_of[s] >= 0) continue;
        st.component_of[s] = st.component_count;
        stack.push_back(s);
        while (!stack.empty()) {
            auto u = stack.back();
            stack.pop_back();
            for (auto l : inc[u]) {
                const auto& ln = gc.lines[l];
                auto v = gc.bus_index(ln.from_bus) == u ? gc.bus_index(ln.to_bus) : gc.bus_index(ln.from_bus);
                if (st.component_of[v] < 0) {
                    st.component_of[v] = st.component_count;
                    stack.push_back(v);
                }
            }
        }
        ++st.component_count;
    }
    st.loop_count = static_cast<int>(gc.lines.size()) - static_cast<int>(gc.buses.size()) + st.component_count;
    return st;
}

/// Subset of `gc` keeping only the lines whose indices are listed.
inline GridCase with_lines(const GridCase& gc, const std::vector<std::size_t>& keep) {
    GridCase out;
    out.name = gc.name;
    out.base_mva = gc.base_mva;
    out.buses = gc.buses;
    for (auto l : keep) out.lines.push_back(gc.lines.at(l));
    out.reindex();
    return out;
}

// ---- snapshot ------------------------------------------------------------
//
//   gbpse-case 1
//   name <rest of line>
//   base_mva <value>
//   buses <count>
//   <id> <angle rad> <injection MW>        (one per bus)
//   lines <count>
//   <id> <from> <to> <susceptance> <flow MW>  (one per line)
//
// Reals are printed with 17 significant digits so a write/read cycle is exact.

inline void write_snapshot(std::ostream& out, const GridCase& gc) {
    char buf[160];
    out << "gbpse-case 1\n";
    out << "name " << gc.name << "\n";
    std::snprintf(buf, sizeof buf, "base_mva %.17g\n", gc.base_mva);
    out << buf;
    out << "buses " << gc.buses.size() << "\n";
    for (const auto& b : gc.buses) {
        std::snprintf(buf, sizeof buf, "%d %.17g %.17g\n", b.id, b.angle, b.injection_true);
        out << buf;
    }
    out << "lines " << gc.lines.size() << "\n";
    for (const auto& ln : gc.lines) {
        std::snprintf(buf, sizeof buf, "%d %d %d %.17g %.17g\n", ln.id, ln.from_bus, ln.to_bus, ln.susceptance,
                      ln.flow_true);
        out << buf;
    }
}

inline GridCase read_snapshot(std::istream& in) {
    GridCase gc;
    std::string line;
    std::size_t lineno = 0;
    auto next = [&]() -> std::string& {
        if (!std::getline(in, line)) throw ParseError("unexpected end of snapshot", lineno + 1);
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    };
    auto expect_key = [&](std::string_view key) -> std::string {
        std::string& l = next();
        if (!l.starts_with(key) || (l.size() > key.size() && l[key.size()] != ' '))
            throw ParseError("expected '" + std::string(key) + "'", lineno);
        return l.size() > key.size() ? l.substr(key.size() + 1) : std::string();
    };
    if (next() != "gbpse-case 1") throw ParseError("not a gbpse case snapshot", lineno);
    gc.name = expect_key("name");
    gc.base_mva = detail::require_double(expect_key("base_mva"), "base_mva", lineno, false);
    const int nb = detail::require_int(expect_key("buses"), "bus count", lineno);
    for (int i = 0; i < nb; ++i) {
        std::istringstream ss(next());
        Bus b;
        std::string a, inj;
        if (!(ss >> b.id >> a >> inj)) throw ParseError("bad bus record", lineno);
        b.angle = detail::require_double(a, "angle", lineno, false);
        b.injection_true = detail::require_double(inj, "injection", lineno, false);
        gc.buses.push_back(b);
    }
    const int nl = detail::require_int(expect_key("lines"), "line count", lineno);
    for (int i = 0; i < nl; ++i) {
        std::istringstream ss(next());
        Line ln;
        std::string b, f;
        if (!(ss >> ln.id >> ln.from_bus >> ln.to_bus >> b >> f)) throw ParseError("bad line record", lineno);
        ln.susceptance = detail::require_double(b, "susceptance", lineno, false);
        ln.flow_true = detail::require_double(f, "flow", lineno, false);
        if (ln.susceptance == 0.0) throw ParseError("zero susceptance", lineno);
        gc.lines.push_back(ln);
    }
    gc.reindex();
    return gc;
}

}  // namespace gbpse
