// kdehpd command-line front end: simulate, predict, evaluate, regions.

#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "kdehpd/cli.hpp"

namespace {

using namespace kdehpd::cli;

std::size_t default_threads() {
    if (const char* env = std::getenv("CONFORMAL_HPD_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
        throw ConfigError("CONFORMAL_HPD_THREADS must be a positive integer");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// --scale-model / --no-scale-model; unset keeps the scenario default.
void add_scale_flags(CLI::App* cmd, std::optional<bool>& target) {
    cmd->add_flag_callback("--scale-model", [&target] { target = true; }, "Fit a scale model on a second training fold");
    cmd->add_flag_callback("--no-scale-model", [&target] { target = false; }, "Use a constant scale");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conformal prediction regions built from kernel density level sets"};
    app.require_subcommand(1);

    SimulateConfig sim;
    std::optional<std::size_t> threads;
    auto* s = app.add_subcommand("simulate", "Run replications of a synthetic scenario");
    s->add_option("--scenario", sim.scenario, "Scenario tag")->capture_default_str();
    s->add_option("--methods", sim.methods, "Comma-separated method tags")->capture_default_str();
    s->add_option("--reps", sim.reps, "Replications")->capture_default_str();
    s->add_option("--alpha", sim.alpha, "Miss level")->capture_default_str();
    s->add_option("--seed", sim.seed, "Base seed; replication r uses seed + r")->capture_default_str();
    s->add_option("--threads", threads, "Worker threads (default: CONFORMAL_HPD_THREADS or all cores)");
    s->add_option("--n-train", sim.n_train, "Training rows")->capture_default_str();
    s->add_option("--n-cal", sim.n_cal, "Calibration rows")->capture_default_str();
    s->add_option("--n-test", sim.n_test, "Test rows per replication")->capture_default_str();
    s->add_option("--out-dir", sim.out_dir, "Directory for report.csv and report.json")->capture_default_str();
    s->add_flag("--timing", sim.timing, "Record wall-clock times (reports are then not reproducible)");
    s->add_flag("--dump-data", sim.dump_data, "Also write observed.csv and test.csv of replication 0");
    add_scale_flags(s, sim.scale_model);

    PredictConfig pred;
    auto* p = app.add_subcommand("predict", "Fit on a training CSV and predict regions for a test CSV");
    p->add_option("--train", pred.train, "Training CSV (header row required)")->required();
    p->add_option("--test", pred.test, "Test CSV with the same covariate columns")->required();
    p->add_option("--target", pred.target, "Response column")->capture_default_str();
    p->add_option("--method", pred.method, "Method tag")->capture_default_str();
    p->add_option("--alpha", pred.alpha, "Miss level")->capture_default_str();
    p->add_option("--train-frac", pred.train_fraction, "Fraction of training rows used for fitting")
        ->capture_default_str();
    p->add_flag("--scale-model", pred.scale_model, "Fit a scale model (kde-hpd)");
    p->add_flag("--shuffle", pred.shuffle, "Shuffle rows before splitting");
    p->add_option("--seed", pred.seed, "Shuffle seed")->capture_default_str();
    p->add_option("--knn-k", pred.knn_k, "Neighbours for the cqr quantile band")->capture_default_str();
    p->add_option("--scale-k", pred.scale_k, "Neighbours for the scale model (0: sqrt of its fold size)")
        ->capture_default_str();
    p->add_option("--out", pred.out, "Output file")->capture_default_str();

    EvaluateConfig ev;
    auto* e = app.add_subcommand("evaluate", "Score stored predictions against true responses");
    e->add_option("--predictions", ev.predictions, "predictions.csv")->capture_default_str();
    e->add_option("--truth", ev.truth, "CSV holding the true responses, one row per prediction row")->required();
    e->add_option("--target", ev.target, "Response column in the truth file")->capture_default_str();
    e->add_option("--group-by", ev.group_by, "Truth column for conditional coverage");
    e->add_option("--format", ev.format, "csv or json")->capture_default_str();
    e->add_option("--out", ev.out, "Output file (default metrics.csv or metrics.json)");

    RegionsConfig reg;
    auto* r = app.add_subcommand("regions", "Trace one fitted method's region over an x grid");
    r->add_option("--scenario", reg.scenario, "Scenario tag")->capture_default_str();
    r->add_option("--method", reg.method, "Method tag")->capture_default_str();
    r->add_option("--alpha", reg.alpha, "Miss level")->capture_default_str();
    r->add_option("--seed", reg.seed, "Seed")->capture_default_str();
    r->add_option("--n-train", reg.n_train, "Training rows")->capture_default_str();
    r->add_option("--n-cal", reg.n_cal, "Calibration rows")->capture_default_str();
    r->add_option("--grid", reg.grid, "Grid points")->capture_default_str();
    r->add_option("--x-lo", reg.x_lo, "Grid start")->capture_default_str();
    r->add_option("--x-hi", reg.x_hi, "Grid end")->capture_default_str();
    r->add_option("--out", reg.out, "Output file")->capture_default_str();
    add_scale_flags(r, reg.scale_model);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*s) {
            sim.threads = threads ? *threads : default_threads();
            return cmd_simulate(sim, std::cout);
        }
        if (*p) return cmd_predict(pred, std::cout);
        if (*e) return cmd_evaluate(ev, std::cout);
        if (*r) return cmd_regions(reg, std::cout);
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kConfigError;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kRuntimeFailure;
    }
    return kConfigError;
}
