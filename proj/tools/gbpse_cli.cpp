// gbpse: command-line front end. Every invocation writes a run directory with
// config.json (enough to replay the run via `gbpse run`) and manifest.json.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "gbpse/gbpse.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gbpse;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitNumerical = 2;

/// Thrown when a run finishes but some BP run did not converge.
struct NotConverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

fs::path resolve_case(const std::string& name) {
    if (fs::exists(name)) return fs::absolute(name);
    std::vector<fs::path> dirs;
    if (const char* env = std::getenv("GBPSE_CASE_DIR")) dirs.emplace_back(env);
    dirs.emplace_back(GBPSE_DATA_DIR);
    for (const auto& d : dirs)
        for (const auto& candidate : {d / name, d / (name + ".cdf")})
            if (fs::exists(candidate)) return fs::absolute(candidate);
    throw ContractError("case not found: " + name);
}

GridCase load_case(const json& cfg) {
    ImportOptions opts;
    opts.merge_parallel = cfg.value("merge_parallel", false);
    const fs::path path = resolve_case(cfg.at("case").get<std::string>());
    auto gc = import_cdf(path, opts);
    gc.name = path.stem().string();
    return derive_dc_state(std::move(gc));
}

std::ofstream open_out(const fs::path& dir, const std::string& file, std::vector<std::string>& outputs) {
    std::ofstream out(dir / file);
    if (!out) throw ContractError("cannot write " + (dir / file).string());
    outputs.push_back(file);
    return out;
}

std::vector<MissingFractions> fractions_of(const json& cfg) {
    std::vector<MissingFractions> out;
    const auto inj = cfg.value("injection_fraction", json());
    for (double f : parse_fraction_range(cfg.value("fractions", std::string("0")))) {
        auto m = MissingFractions::equal(f);
        if (inj.is_number()) m.injection = inj.get<double>();
        out.push_back(m);
    }
    return out;
}

MeasurementSet measurements_of(const json& cfg, const GridCase& gc) {
    if (cfg.contains("measurements") && cfg["measurements"].is_string()) {
        std::ifstream in(cfg["measurements"].get<std::string>());
        if (!in) throw ContractError("cannot open " + cfg["measurements"].get<std::string>());
        return read_measurements_csv(in, gc);
    }
    const auto fr = fractions_of(cfg);
    if (fr.size() != 1) throw ContractError("expected a single missing fraction");
    const auto seed = cfg.at("seed").get<std::uint64_t>();
    const auto mask = make_mask(gc, fr.front(), parse_strategy(cfg.value("strategy", std::string("uniform"))), seed);
    return sample_measurements(gc, mask, cfg.at("variance").get<double>(), seed);
}

// ---- estimate ---------------------------------------------------------------

void cmd_estimate(const json& cfg, const fs::path& dir, std::vector<std::string>& outputs) {
    const auto gc = load_case(cfg);
    const auto meas = measurements_of(cfg, gc);
    {
        auto out = open_out(dir, "measurements.csv", outputs);
        write_measurements_csv(out, gc, meas);
    }
    const auto graph = build_factor_graph(gc, meas);
    BpOptions opts;
    opts.record_trace = true;
    const auto bp = run_bp(graph, opts);
    const bool oracle = cfg.value("oracle", false);
    std::optional<WlsSolution> wls;
    if (oracle) wls = wls_flows(graph);

    auto out = open_out(dir, "estimate.csv", outputs);
    out << "line_id,from_bus,to_bus,mean_mw,variance_mw2,retrievable,depth";
    if (oracle) out << ",wls_mean_mw,wls_variance_mw2,wls_retrievable";
    out << '\n';
    out.precision(12);
    double dev_mean = 0.0, dev_var = 0.0;
    for (std::size_t l = 0; l < gc.lines.size(); ++l) {
        const auto& b = bp.beliefs[l];
        out << gc.lines[l].id << ',' << gc.lines[l].from_bus << ',' << gc.lines[l].to_bus << ',';
        if (b.informative())
            out << b.mean << ',' << b.variance << ",true,";
        else
            out << ",inf,false,";
        if (bp.first_finite_iter[l]) out << *bp.first_finite_iter[l];
        if (wls) {
            const auto i = static_cast<Eigen::Index>(l);
            const bool r = wls->retrievable_mask[l];
            out << ',';
            if (r)
                out << wls->means(i) << ',' << wls->covariance(i, i);
            else
                out << ",inf";
            out << ',' << (r ? "true" : "false");
            if (r && b.informative()) {
                dev_mean = std::max(dev_mean, std::abs(b.mean - wls->means(i)));
                dev_var = std::max(dev_var, std::abs(b.variance - wls->covariance(i, i)));
            }
        }
        out << '\n';
    }
    {
        auto trace = open_out(dir, "trace.csv", outputs);
        write_trace_csv(trace, bp);
    }
    std::cout << gc.name << ": " << gc.lines.size() << " lines, " << bp.retrievable_count() << " retrievable, "
              << (bp.converged ? "converged" : "NOT converged") << " after " << bp.iterations << " iterations\n";
    if (wls)
        std::cout << "oracle: max |mean - wls| = " << dev_mean << " MW, max |variance - wls| = " << dev_var
                  << " MW^2\n";
    if (!bp.converged) throw NotConverged("belief propagation did not converge");
}

// ---- experiment -------------------------------------------------------------

void cmd_experiment(const json& cfg, const fs::path& dir, std::vector<std::string>& outputs) {
    const auto kind = cfg.at("experiment").get<std::string>();
    const auto workers = cfg.value("workers", 1);
    if (kind == "bench") {
        std::vector<GridCase> cases;
        for (const auto& name : cfg.at("cases")) {
            auto c = cfg;
            c["case"] = name;
            cases.push_back(load_case(c));
        }
        std::vector<const GridCase*> ptrs;
        for (const auto& c : cases) ptrs.push_back(&c);
        const auto rows = timing_benchmark(ptrs, parse_fraction_range(cfg.value("fractions", std::string("0"))),
                                           cfg.value("repeats", 20), cfg.at("variance").get<double>(),
                                           cfg.at("seed").get<std::uint64_t>());
        auto out = open_out(dir, "timing.csv", outputs);
        write_timing_csv(out, rows);
        std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_fraction;
        for (const auto& r : rows) {
            by_fraction[r.fraction].first.push_back(static_cast<double>(r.lines + r.buses));
            by_fraction[r.fraction].second.push_back(r.bp_ms);
        }
        for (const auto& [f, xy] : by_fraction) {
            const auto fit = fit_linear(xy.first, xy.second);
            std::cout << "missing " << f << ": bp_ms = " << fit.slope << " * (lines + buses) + " << fit.intercept
                      << ", R^2 = " << fit.r2 << '\n';
        }
        for (const auto& r : rows)
            if (r.flagged) throw NotConverged("non-converged BP runs in " + r.case_name);
        return;
    }
    if (kind != "observability" && kind != "rprofile" && kind != "correlations" && kind != "depthvar")
        throw ContractError("unknown experiment: " + kind);

    const auto gc = load_case(cfg);
    EnsembleSpec spec;
    spec.grid = &gc;
    spec.n_samples = cfg.value("samples", 5000);
    spec.fractions = fractions_of(cfg);
    spec.strategy = parse_strategy(cfg.value("strategy", std::string("uniform")));
    spec.variance = cfg.at("variance").get<double>();
    spec.base_seed = cfg.at("seed").get<std::uint64_t>();
    spec.workers = workers;
    const auto result = run_ensemble(spec);
    {
        auto out = open_out(dir, "ensemble.csv", outputs);
        write_ensemble_csv(out, result);
    }
    if (kind == "rprofile") {
        auto out = open_out(dir, "rprofile.csv", outputs);
        write_rprofile_csv(out, result);
    }
    if (kind == "depthvar") {
        auto out = open_out(dir, "variance_depth.csv", outputs);
        write_variance_depth_csv(out, result);
    }
    std::size_t unconverged = 0;
    for (const auto& row : result.rows) {
        unconverged += row.n_samples - row.n_converged;
        std::cout << "flow " << row.fractions.flow << " injection " << row.fractions.injection << ": P = " << row.P.value
                  << ", p = " << row.p.value;
        if (row.N_eff.defined) std::cout << ", N_eff = " << row.N_eff.value;
        std::cout << ", C = " << row.C.value << '\n';
    }
    if (unconverged) throw NotConverged(std::to_string(unconverged) + " samples did not converge");
}

// ---- partition --------------------------------------------------------------

void cmd_partition(const json& cfg, const fs::path& dir, std::vector<std::string>& outputs) {
    const auto gc = load_case(cfg);
    const auto graph = build_factor_graph(gc, measurements_of(cfg, gc));
    LinearResponseOptions lro;
    lro.workers = cfg.value("workers", 1);

    std::vector<Partition> parts;
    for (const auto& file : cfg.value("partitions", json::array())) {
        const fs::path path = file.get<std::string>();
        std::ifstream in(path);
        if (!in) throw ContractError("cannot open " + path.string());
        auto p = read_partition(in, path.stem().string());
        p.validate(gc);
        for (const auto& label : p.areas)
            if (!area_connected(gc, p, label))
                std::cerr << "warning: area " << label << " of " << p.name << " is not connected\n";
        parts.push_back(std::move(p));
    }
    if (const auto n = cfg.value("search", 0); n > 0) {
        SearchOptions so;
        so.seed = cfg.at("seed").get<std::uint64_t>();
        so.steps = cfg.value("steps", so.steps);
        so.weight_imbalance = cfg.value("weight_imbalance", 0.0);
        auto res = partition_search(graph, gc, n, so);
        res.best.name = "search";
        {
            auto out = open_out(dir, "search_partition.txt", outputs);
            write_partition(out, res.best);
        }
        auto out = open_out(dir, "search_moves.csv", outputs);
        out << "step,bus,from,to,objective,temperature\n";
        out.precision(12);
        for (const auto& m : res.accepted)
            out << m.step << ',' << m.bus << ',' << m.from << ',' << m.to << ',' << m.objective << ','
                << m.temperature << '\n';
        parts.push_back(res.best);
    }
    if (parts.empty()) throw ContractError("give --partition files or --search N");

    std::vector<double> scores;
    bool unavailable = false;
    for (const auto& p : parts) {
        const auto r = area_flow_covariance(graph, p, gc, lro);
        {
            auto out = open_out(dir, p.name + "_flows.csv", outputs);
            write_area_flows_csv(out, r, gc);
        }
        auto out = open_out(dir, p.name + "_covariance.csv", outputs);
        write_area_covariance_csv(out, r);
        scores.push_back(partition_score(r));
        for (bool a : r.available) unavailable |= !a;
    }
    const auto best = static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
    for (std::size_t k = 0; k < parts.size(); ++k)
        std::cout << parts[k].name << ": trace " << scores[k] << " MW^2" << (parts.size() > 1 && k == best ? "  <- lowest" : "")
                  << '\n';
    if (unavailable) std::cerr << "warning: some area pairs have unretrievable boundary flows\n";
}

// ---- driver -----------------------------------------------------------------

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

int execute(json cfg, const fs::path& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "config.json");
        out << cfg.dump(2) << '\n';
    }
    const auto started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> outputs;
    int code = 0;
    std::string error;
    try {
        const auto cmd = cfg.at("command").get<std::string>();
        if (cmd == "estimate")
            cmd_estimate(cfg, dir, outputs);
        else if (cmd == "experiment")
            cmd_experiment(cfg, dir, outputs);
        else if (cmd == "partition")
            cmd_partition(cfg, dir, outputs);
        else
            throw ContractError("unknown command in config: " + cmd);
    } catch (const NotConverged& e) {
        code = kExitNumerical;
        error = e.what();
    } catch (const NumericalError& e) {
        code = kExitNumerical;
        error = e.what();
    } catch (const json::exception& e) {
        code = kExitInput;
        error = std::string("bad config: ") + e.what();
    } catch (const std::exception& e) {
        code = kExitInput;
        error = e.what();
    }
    json manifest = {{"version", GBPSE_VERSION},
                     {"git_revision", GBPSE_GIT_REVISION},
                     {"seed", cfg.value("seed", json())},
                     {"started_utc", started},
                     {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
                     {"exit_code", code},
                     {"outputs", outputs}};
    if (!error.empty()) manifest["error"] = error;
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
    if (!error.empty()) std::cerr << "error: " << error << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian belief propagation state estimation for DC power grids"};
    app.set_version_flag("--version", std::string(GBPSE_VERSION) + " (" + GBPSE_GIT_REVISION + ")");
    app.require_subcommand(1);

    std::string case_name = "ieee14", out_dir = "gbpse-run", strategy = "uniform", fractions = "0";
    std::string measurements, experiment, cases = "ieee14,ieee30,ieee57,ieee118,ieee300", config_path;
    std::vector<std::string> partitions;
    double variance = kDefaultVariance, weight_imbalance = 0.0;
    std::optional<double> injection_fraction;
    std::uint64_t seed = 1;
    int samples = 5000, workers = default_workers(), repeats = 20, search = 0, steps = 20000;
    bool oracle = false, merge_parallel = false;

    auto common = [&](CLI::App* sub, bool sampling) {
        sub->add_option("--case", case_name, "case name or .cdf path")->capture_default_str();
        sub->add_option("--out", out_dir, "run directory")->capture_default_str();
        sub->add_option("--variance", variance, "measurement variance, MW^2")->capture_default_str();
        sub->add_option("--seed", seed)->capture_default_str();
        sub->add_option("--workers", workers)->capture_default_str();
        sub->add_flag("--merge-parallel", merge_parallel, "merge parallel circuits on import");
        if (!sampling) return;
        sub->add_option("--fractions,--missing", fractions, "missing fraction or start:stop:step")->capture_default_str();
        sub->add_option("--injection-fraction", injection_fraction, "fix the injection missing fraction");
        sub->add_option("--strategy", strategy, "uniform | least-connected | min-sum-m-over-c")->capture_default_str();
    };

    auto* est = app.add_subcommand("estimate", "run BP on one measurement set");
    common(est, true);
    est->add_option("--measurements", measurements, "measurement CSV (kind,id,z,variance)");
    est->add_flag("--oracle", oracle, "append exact WLS columns");

    auto* exp = app.add_subcommand("experiment", "ensemble and benchmark experiments");
    exp->add_option("kind", experiment, "observability | rprofile | correlations | depthvar | bench")->required();
    common(exp, true);
    exp->add_option("--samples", samples)->capture_default_str();
    exp->add_option("--cases", cases, "comma-separated cases for bench")->capture_default_str();
    exp->add_option("--repeats", repeats, "timing repeats for bench")->capture_default_str();

    auto* part = app.add_subcommand("partition", "area flows and partition scores");
    common(part, true);
    part->add_option("--measurements", measurements, "measurement CSV");
    part->add_option("--partition", partitions, "partition file (bus_id area_label per line)");
    part->add_option("--search", search, "anneal a partition with this many areas");
    part->add_option("--steps", steps, "annealing steps")->capture_default_str();
    part->add_option("--weight-imbalance", weight_imbalance)->capture_default_str();

    auto* run = app.add_subcommand("run", "replay a saved config.json");
    run->add_option("--config", config_path)->required();
    auto* run_out = run->add_option("--out", out_dir, "run directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    json cfg;
    if (run->parsed()) {
        std::ifstream in(config_path);
        if (!in) {
            std::cerr << "error: cannot open " << config_path << '\n';
            return kExitInput;
        }
        try {
            cfg = json::parse(in);
        } catch (const json::exception& e) {
            std::cerr << "error: bad config: " << e.what() << '\n';
            return kExitInput;
        }
        if (!run_out->count()) out_dir = cfg.value("out", out_dir);
    } else {
        const auto* sub = app.get_subcommands().front();
        cfg = {{"command", sub->get_name()}, {"case", case_name},  {"variance", variance}, {"seed", seed},
               {"workers", workers},         {"out", out_dir},     {"merge_parallel", merge_parallel}};
        cfg["fractions"] = fractions;
        cfg["strategy"] = strategy;
        cfg["injection_fraction"] = injection_fraction ? json(*injection_fraction) : json();
        if (!measurements.empty()) cfg["measurements"] = fs::absolute(measurements).string();
        if (sub == est) cfg["oracle"] = oracle;
        if (sub == exp) {
            cfg["experiment"] = experiment;
            cfg["samples"] = samples;
            cfg["repeats"] = repeats;
            json list = json::array();
            std::stringstream ss(cases);
            for (std::string c; std::getline(ss, c, ',');)
                if (!c.empty()) list.push_back(c);
            cfg["cases"] = list;
        }
        if (sub == part) {
            json list = json::array();
            for (const auto& p : partitions) list.push_back(fs::absolute(p).string());
            cfg["partitions"] = list;
            cfg["search"] = search;
            cfg["steps"] = steps;
            cfg["weight_imbalance"] = weight_imbalance;
        }
    }
    cfg["out"] = out_dir;
    return execute(cfg, out_dir);
}
