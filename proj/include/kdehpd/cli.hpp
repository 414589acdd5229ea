#ifndef KDEHPD_CLI_HPP
#define KDEHPD_CLI_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdehpd/io.hpp"
#include "kdehpd/sim.hpp"

namespace kdehpd::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeFailure = 1;
inline constexpr int kConfigError = 2;

/// Invalid flags or inputs; maps to kConfigError.
class ConfigError : public Error {
public:
    using Error::Error;
};

using Json = nlohmann::ordered_json;

/// Finite numbers stay numbers; the rest become "inf", "-inf" or "nan".
inline Json json_number(double v) {
    if (std::isfinite(v)) return v;
    return format_double(v);
}

/// "file: row R, column C: message".
inline std::string describe(const std::string& file, const CsvError& e) {
    std::string out = file + ": ";
    if (e.row()) out += "row " + std::to_string(e.row()) + ", ";
    if (!e.column().empty()) out += "column '" + e.column() + "', ";
    return out + e.what();
}

inline std::vector<Method> parse_methods(const std::string& list) {
    std::vector<Method> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        const std::size_t comma = std::min(list.find(',', start), list.size());
        const std::string tag = list.substr(start, comma - start);
        if (!tag.empty()) {
            const auto m = parse_method(tag);
            if (!m) throw ConfigError("unknown method '" + tag + "'; valid methods: " + method_tag_list());
            if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
        }
        start = comma + 1;
    }
    if (out.empty()) throw ConfigError("no methods given; valid methods: " + method_tag_list());
    return out;
}

inline ScenarioTag require_scenario(const std::string& tag) {
    const auto t = parse_scenario(tag);
    if (!t) throw ConfigError("unknown scenario '" + tag + "'; valid scenarios: " + scenario_tag_list());
    return *t;
}

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("--alpha must lie in (0,1)");
}

inline std::filesystem::path output_dir(const std::string& dir) {
    std::filesystem::path p(dir.empty() ? "." : dir);
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) throw ConfigError("cannot create output directory '" + p.string() + "'");
    return p;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateConfig {
    std::string scenario = "unimodal-symmetric";
    std::string methods = "kde-hpd,secpr,cqr,dcp";
    std::size_t reps = 1;
    double alpha = 0.1;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::size_t n_train = 500;
    std::size_t n_cal = 500;
    std::size_t n_test = 50;
    std::string out_dir = ".";
    bool timing = false;     // wall-clock fields are otherwise written as nan/null
    bool dump_data = false;  // observed.csv and test.csv of the first replication
    std::optional<bool> scale_model;
};

inline std::string report_csv(const SimulationResult& res, bool timing) {
    std::string out = csv_line({"method", "coverage", "coverage_se", "mean_size", "size_se", "mean_runtime_s",
                                "failures"});
    for (const auto& s : res.summaries) {
        out += csv_line({std::string(to_string(s.method)), format_double(s.coverage), format_double(s.coverage_se),
                         format_double(s.mean_size), format_double(s.size_se),
                         format_double(timing ? s.mean_runtime_s : std::numeric_limits<double>::quiet_NaN()),
                         std::to_string(s.failures)});
    }
    return out;
}

inline Json report_json(const SimulationResult& res, bool timing) {
    const Scenario& scn = res.scenario;
    Json j;
    j["scenario"] = std::string(to_string(scn.tag));
    j["alpha"] = scn.alpha;
    j["seed"] = scn.seed;
    j["reps"] = res.reps;
    j["n_train"] = scn.n_train;
    j["n_cal"] = scn.n_cal;
    j["n_test"] = scn.n_test;
    Json methods = Json::array();
    for (const auto& s : res.summaries) {
        Json m;
        m["method"] = std::string(to_string(s.method));
        m["coverage"] = json_number(s.coverage);
        m["coverage_se"] = json_number(s.coverage_se);
        m["mean_size"] = json_number(s.mean_size);
        m["size_se"] = json_number(s.size_se);
        m["mean_runtime_s"] = timing ? json_number(s.mean_runtime_s) : Json(nullptr);
        m["failures"] = s.failures;
        m["warnings"] = s.warnings;
        methods.push_back(std::move(m));
    }
    j["methods"] = std::move(methods);
    Json reps = Json::array();
    for (const auto& r : res.reports) {
        Json e;
        e["method"] = std::string(to_string(r.method));
        e["rep"] = r.rep;
        e["seed"] = r.seed;
        e["ok"] = r.ok;
        if (r.ok) {
            e["coverage"] = json_number(r.coverage);
            e["mean_size"] = json_number(r.mean_size);
            e["components"] = r.components;
            e["warnings"] = r.warnings;
        } else {
            e["error"] = r.error;
        }
        e["wall_seconds"] = timing ? json_number(r.wall_seconds) : Json(nullptr);
        reps.push_back(std::move(e));
    }
    j["replications"] = std::move(reps);
    return j;
}

inline std::string dataset_csv(const Dataset& d) {
    std::vector<std::string> head;
    for (std::size_t j = 0; j < d.dim(); ++j) head.push_back(d.dim() == 1 ? "x" : "x" + std::to_string(j + 1));
    head.push_back("y");
    std::string out = csv_line(head);
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::vector<std::string> f;
        for (double v : d.row(i)) f.push_back(format_double(v));
        f.push_back(format_double(d.y(i)));
        out += csv_line(f);
    }
    return out;
}

inline int cmd_simulate(const SimulateConfig& cfg, std::ostream& log) {
    Scenario scn;
    scn.tag = require_scenario(cfg.scenario);
    check_alpha(cfg.alpha);
    scn.alpha = cfg.alpha;
    scn.seed = cfg.seed;
    scn.n_train = cfg.n_train;
    scn.n_cal = cfg.n_cal;
    scn.n_test = cfg.n_test;
    if (cfg.reps < 1) throw ConfigError("--reps must be at least 1");
    if (cfg.n_train < 2 || cfg.n_cal < 1 || cfg.n_test < 1) throw ConfigError("sample sizes too small");
    const std::vector<Method> methods = parse_methods(cfg.methods);
    const auto dir = output_dir(cfg.out_dir);

    MethodOptions opt;
    opt.scale_model = cfg.scale_model;
    const SimulationResult res = run_replications(scn, methods, cfg.reps, std::max<std::size_t>(1, cfg.threads), opt);
    write_file((dir / "report.csv").string(), report_csv(res, cfg.timing));
    write_file((dir / "report.json").string(), report_json(res, cfg.timing).dump(2) + "\n");
    if (cfg.dump_data) {
        const SimulatedData data = generate(scn);
        write_file((dir / "observed.csv").string(), dataset_csv(data.observed));
        write_file((dir / "test.csv").string(), dataset_csv(data.test));
    }
    for (const auto& s : res.summaries) {
        log << to_string(s.method) << ": coverage " << format_double(s.coverage) << ", mean size "
            << format_double(s.mean_size) << ", failures " << s.failures << "\n";
    }
    const bool all_failed = std::all_of(res.summaries.begin(), res.summaries.end(),
                                        [](const MethodSummary& s) { return s.reps == 0; });
    return all_failed ? kRuntimeFailure : kOk;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictConfig {
    std::string train;
    std::string test;
    std::string target = "y";
    std::string method = "kde-hpd";
    double alpha = 0.1;
    double train_fraction = 0.5;  // rest of the train file calibrates
    bool scale_model = false;
    bool shuffle = false;
    std::uint64_t seed = 1;
    std::size_t knn_k = 50;
    std::size_t scale_k = 0;
    double scale_level = 0.9;
    std::string out = "predictions.csv";
};

/// Rows of `d` in a seeded random order (Fisher-Yates on a CounterRng).
inline Dataset shuffled(const Dataset& d, std::uint64_t seed) {
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    CounterRng rng(seed, 2);
    for (std::size_t i = idx.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
        std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
    }
    return d.subset(idx);
}

inline std::string predictions_csv(const std::vector<PredictionRegion>& regions) {
    std::string out = csv_line({"row", "interval_index", "lo", "hi"});
    const std::string nan = format_double(std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < regions.size(); ++i) {
        if (regions[i].empty()) {
            out += csv_line({std::to_string(i), "0", nan, nan});
            continue;
        }
        for (std::size_t k = 0; k < regions[i].size(); ++k) {
            const Interval& iv = regions[i].intervals()[k];
            out += csv_line({std::to_string(i), std::to_string(k), format_double(iv.lo), format_double(iv.hi)});
        }
    }
    return out;
}

inline int cmd_predict(const PredictConfig& cfg, std::ostream& log) {
    check_alpha(cfg.alpha);
    const auto method = parse_method(cfg.method);
    if (!method) throw ConfigError("unknown method '" + cfg.method + "'; valid methods: " + method_tag_list());
    if (*method == Method::oracle) throw ConfigError("the oracle method needs a simulation scenario");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) throw ConfigError("--train-frac must lie in (0,1)");

    LoadedData train = [&] {
        try {
            return load_dataset(read_csv(cfg.train), cfg.target);
        } catch (const CsvError& e) {
            throw ConfigError(describe(cfg.train, e));
        }
    }();
    LoadedData test = [&] {
        try {
            return load_dataset(read_csv(cfg.test), cfg.target, train.covariates, true);
        } catch (const CsvError& e) {
            throw ConfigError(describe(cfg.test, e));
        }
    }();

    const Dataset observed = cfg.shuffle ? shuffled(train.data, cfg.seed) : train.data;
    const auto n_train = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(observed.size())));
    if (n_train < 2 || n_train >= observed.size()) throw ConfigError("train fraction leaves an empty fold");

    MethodOptions opt;
    opt.knn_k = cfg.knn_k;
    opt.scale_k = cfg.scale_k;
    opt.scale_level = cfg.scale_level;
    const FittedMethod fm = fit_method(*method, observed, n_train, cfg.alpha, cfg.scale_model, opt);
    std::vector<PredictionRegion> regions;
    regions.reserve(test.data.size());
    for (std::size_t i = 0; i < test.data.size(); ++i) regions.push_back(fm.predict(test.data.row(i)));
    write_file(cfg.out, predictions_csv(regions));
    log << "wrote " << regions.size() << " prediction rows to " << cfg.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateConfig {
    std::string predictions = "predictions.csv";
    std::string truth;
    std::string target = "y";
    std::string group_by;
    std::string format = "csv";
    std::string out;  // default metrics.csv / metrics.json
};

struct Metrics {
    std::string group;
    std::size_t n = 0;
    double coverage = 0.0;
    double coverage_se = 0.0;
    double mean_size = 0.0;
    double median_size = 0.0;
};

inline Metrics metrics_of(std::string group, const std::vector<std::size_t>& rows,
                          const std::vector<PredictionRegion>& regions, const std::vector<double>& y) {
    Metrics m;
    m.group = std::move(group);
    m.n = rows.size();
    std::size_t hits = 0;
    std::vector<double> sizes;
    for (std::size_t r : rows) {
        hits += region_contains(regions[r], y[r]) ? 1 : 0;
        sizes.push_back(region_length(regions[r]));
    }
    const double n = static_cast<double>(m.n);
    m.coverage = static_cast<double>(hits) / n;
    m.coverage_se = std::sqrt(m.coverage * (1.0 - m.coverage) / n);
    m.mean_size = std::accumulate(sizes.begin(), sizes.end(), 0.0) / n;
    m.median_size = median_of(std::move(sizes));
    return m;
}

/// Regions keyed by row from a predictions file; rows must be 0..n-1 with
/// none missing. A nan interval marks an empty region.
inline std::vector<PredictionRegion> read_predictions(const CsvTable& t, std::size_t n_rows) {
    const std::size_t c_row = t.require("row");
    const std::size_t c_idx = t.require("interval_index");
    const std::size_t c_lo = t.require("lo");
    const std::size_t c_hi = t.require("hi");
    if (t.rows.empty()) throw CsvError("prediction file has no rows");
    std::vector<std::vector<Interval>> pieces(n_rows);
    std::vector<bool> seen(n_rows, false);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const double row = t.number(i, c_row);
        if (row < 0 || row != std::floor(row) || row >= static_cast<double>(n_rows)) {
            throw CsvError("row key " + t.rows[i][c_row] + " has no truth row", i + 1, "row");
        }
        t.number(i, c_idx);
        const auto r = static_cast<std::size_t>(row);
        seen[r] = true;
        const double lo = t.number(i, c_lo, true);
        const double hi = t.number(i, c_hi, true);
        if (std::isnan(lo) && std::isnan(hi)) continue;
        if (std::isnan(lo) || std::isnan(hi) || lo > hi) throw CsvError("malformed interval", i + 1);
        pieces[r].push_back({lo, hi});
    }
    for (std::size_t r = 0; r < n_rows; ++r) {
        if (!seen[r]) throw CsvError("truth row " + std::to_string(r) + " has no prediction");
    }
    std::vector<PredictionRegion> out;
    out.reserve(n_rows);
    for (auto& p : pieces) out.push_back(coalesce(PredictionRegion(std::move(p))));
    return out;
}

inline std::string metrics_csv(const std::vector<Metrics>& ms) {
    std::string out = csv_line({"group", "n", "coverage", "coverage_se", "mean_size", "median_size"});
    for (const auto& m : ms) {
        out += csv_line({m.group, std::to_string(m.n), format_double(m.coverage), format_double(m.coverage_se),
                         format_double(m.mean_size), format_double(m.median_size)});
    }
    return out;
}

inline Json metrics_json(const std::vector<Metrics>& ms) {
    Json arr = Json::array();
    for (const auto& m : ms) {
        Json j;
        j["group"] = m.group;
        j["n"] = m.n;
        j["coverage"] = json_number(m.coverage);
        j["coverage_se"] = json_number(m.coverage_se);
        j["mean_size"] = json_number(m.mean_size);
        j["median_size"] = json_number(m.median_size);
        arr.push_back(std::move(j));
    }
    return Json{{"metrics", std::move(arr)}};
}

inline int cmd_evaluate(const EvaluateConfig& cfg, std::ostream& log) {
    if (cfg.format != "csv" && cfg.format != "json") throw ConfigError("--format must be csv or json");
    std::vector<double> y;
    std::vector<std::string> groups;
    std::vector<PredictionRegion> regions;
    try {
        const CsvTable truth = read_csv(cfg.truth);
        if (truth.rows.empty()) throw CsvError("truth file has no rows");
        const std::size_t cy = truth.require(cfg.target);
        std::optional<std::size_t> cg;
        if (!cfg.group_by.empty()) cg = truth.require(cfg.group_by);
        for (std::size_t i = 0; i < truth.rows.size(); ++i) {
            y.push_back(truth.number(i, cy));
            if (cg) groups.push_back(truth.rows[i][*cg]);
        }
    } catch (const CsvError& e) {
        throw ConfigError(describe(cfg.truth, e));
    }
    try {
        regions = read_predictions(read_csv(cfg.predictions), y.size());
    } catch (const CsvError& e) {
        throw ConfigError(describe(cfg.predictions, e));
    }

    std::vector<std::size_t> all(y.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<Metrics> ms{metrics_of("all", all, regions, y)};
    if (!cfg.group_by.empty()) {
        std::map<std::string, std::vector<std::size_t>> by;
        for (std::size_t i = 0; i < groups.size(); ++i) by[groups[i]].push_back(i);
        for (const auto& [label, rows] : by) ms.push_back(metrics_of(cfg.group_by + "=" + label, rows, regions, y));
    }
    std::string out = cfg.out.empty() ? (cfg.format == "csv" ? "metrics.csv" : "metrics.json") : cfg.out;
    write_file(out, cfg.format == "csv" ? metrics_csv(ms) : metrics_json(ms).dump(2) + "\n");
    log << "coverage " << format_double(ms.front().coverage) << ", mean size " << format_double(ms.front().mean_size)
        << ", median size " << format_double(ms.front().median_size) << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// regions
// ---------------------------------------------------------------------------

struct RegionsConfig {
    std::string scenario = "unimodal-symmetric";
    std::string method = "kde-hpd";
    double alpha = 0.1;
    std::uint64_t seed = 1;
    std::size_t n_train = 500;
    std::size_t n_cal = 500;
    std::size_t grid = 200;
    double x_lo = -5.0;
    double x_hi = 5.0;
    std::optional<bool> scale_model;
    std::string out = "regions.csv";
};

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) {
        g[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return g;
}

inline std::string regions_csv(const std::vector<double>& xs, const std::vector<PredictionRegion>& regions) {
    std::string out = csv_line({"x", "interval_index", "lo", "hi"});
    for (std::size_t i = 0; i < xs.size(); ++i) {
        for (std::size_t k = 0; k < regions[i].size(); ++k) {
            const Interval& iv = regions[i].intervals()[k];
            out += csv_line({format_double(xs[i]), std::to_string(k), format_double(iv.lo), format_double(iv.hi)});
        }
    }
    return out;
}

inline int cmd_regions(const RegionsConfig& cfg, std::ostream& log) {
    Scenario scn;
    scn.tag = require_scenario(cfg.scenario);
    check_alpha(cfg.alpha);
    const auto method = parse_method(cfg.method);
    if (!method) throw ConfigError("unknown method '" + cfg.method + "'; valid methods: " + method_tag_list());
    if (cfg.grid < 1) throw ConfigError("--grid must be at least 1");
    if (!(cfg.x_lo <= cfg.x_hi)) throw ConfigError("--x-lo must not exceed --x-hi");
    scn.alpha = cfg.alpha;
    scn.seed = cfg.seed;
    scn.n_train = cfg.n_train;
    scn.n_cal = cfg.n_cal;
    MethodOptions opt;
    opt.scale_model = cfg.scale_model;
    const SimulatedData data = generate(scn);
    const FittedMethod fm = fit_method(*method, scn, data.observed, opt);
    const std::vector<double> xs = linspace(cfg.x_lo, cfg.x_hi, cfg.grid);
    std::vector<PredictionRegion> regions;
    for (double x : xs) {
        const double xv[1] = {x};
        regions.push_back(fm.predict(xv));
    }
    write_file(cfg.out, regions_csv(xs, regions));
    log << "wrote " << xs.size() << " grid points to " << cfg.out << "\n";
    return kOk;
}

}  // namespace kdehpd::cli

#endif  // KDEHPD_CLI_HPP
