// eivtest: fit, test and simulate structural errors-in-variables models.
//
// Exit codes: 0 success, 2 input error, 3 numerical failure, 4 internal error.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "eivtest/eivtest.hpp"

namespace {

using eiv::io::Json;

enum Exit { kOk = 0, kInput = 2, kNumerical = 3, kInternal = 4 };

struct Input {
    std::string path;
    std::string digest;
};

Json manifest(const std::string& command, const std::vector<Input>& inputs, std::uint64_t seed, double seconds) {
    Json m;
    m["command"] = command;
    m["tool_version"] = EIVTEST_VERSION;
    m["seed"] = seed;
    Json in = Json::array();
    std::string all;
    for (const auto& i : inputs) {
        in.push_back({{"path", i.path}, {"digest", i.digest}});
        all += i.digest;
    }
    m["inputs"] = in;
    m["config_digest"] = eiv::io::fnv1a_hex(all);
    m["timings"] = {{"wall_seconds", seconds}};
    return m;
}

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw eiv::io::InputError(out_path, 0, 0, "cannot write file");
    out << text;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int default_threads() {
    if (const char* env = std::getenv("EIV_THREADS")) {
        if (const auto v = eiv::io::parse_int(env); v && *v >= 1) return static_cast<int>(*v);
        std::cerr << "warning: ignoring EIV_THREADS='" << env << "'\n";
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

struct Loaded {
    eiv::io::ModelConfig model;
    eiv::LikelihoodContext ctx;
    std::vector<Input> inputs;
};

Loaded load(const std::string& data_path, const std::string& model_path) {
    const std::string model_text = eiv::io::read_file(model_path);
    const auto kv = eiv::io::KeyValues::parse(model_text, model_path);
    kv.require_only(eiv::io::kModelKeys);
    const auto model = eiv::io::parse_model_config(kv);
    const std::string data_text = eiv::io::read_file(data_path);
    eiv::Dataset data = eiv::io::parse_csv(data_text, data_path, model.l, model.p);
    std::vector<int> sizes;
    for (const auto& g : data.groups) sizes.push_back(static_cast<int>(g.rows()));
    eiv::LikelihoodContext ctx(model.spec(sizes), model.generator(), std::move(data));
    return {model, std::move(ctx), {{model_path, eiv::io::fnv1a_hex(model_text)}, {data_path, eiv::io::fnv1a_hex(data_text)}}};
}

int cmd_fit(const std::string& data_path, const std::string& model_path, const std::string& out_path,
            std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const Loaded in = load(data_path, model_path);
    eiv::FitOptions opt;
    opt.seed = seed;
    const eiv::FitResult fit = eiv::fit_mle(in.ctx, eiv::default_init(in.ctx), std::nullopt, opt);
    Json doc;
    doc["result"] = eiv::io::fit_json(in.ctx, fit);
    doc["manifest"] = manifest("fit", in.inputs, seed, seconds_since(t0));
    emit(out_path, eiv::io::dump_json(doc));
    if (!fit.converged) {
        std::cerr << "error: fit did not converge" << (fit.on_boundary ? " (estimate on the parameter boundary)" : "")
                  << "\n";
        return kNumerical;
    }
    return kOk;
}

eiv::RhoExponent exponent_option(const std::string& text) {
    const auto e = eiv::io::parse_rho_exponent(text);
    if (!e) throw eiv::io::InputError("--rho-exponent", 0, 0, "expected q-half, p-half or m-half, got '" + text + "'");
    return *e;
}

int cmd_test(const std::string& data_path, const std::string& model_path, const std::string& null_spec,
             const std::string& out_path, std::uint64_t seed, const std::string& exponent) {
    const auto t0 = std::chrono::steady_clock::now();
    const Loaded in = load(data_path, model_path);
    eiv::Hypothesis h = [&] {
        try {
            return eiv::io::parse_null_spec(in.ctx.spec(), null_spec);
        } catch (const eiv::DomainError& e) {
            throw eiv::io::InputError("--null", 0, 0, e.what());
        }
    }();
    eiv::FitOptions opt;
    opt.seed = seed;
    eiv::TestOptions topt;
    topt.exponent = exponent_option(exponent);
    Json doc;
    int code = kOk;
    try {
        const auto t = eiv::test_hypothesis(in.ctx, h, opt, topt);
        Json r = eiv::io::test_json(in.ctx.spec(), h, t.result);
        r["rho_exponent"] = eiv::to_string(topt.exponent);
        r["full_fit"] = eiv::io::fit_json(in.ctx, t.full);
        r["restricted_fit"] = eiv::io::fit_json(in.ctx, t.restricted);
        doc["result"] = r;
    } catch (const eiv::FitNotConverged& e) {
        Json r;
        r["error"] = e.what();
        r["full_fit"] = eiv::io::fit_json(in.ctx, e.full());
        if (e.restricted().theta.values.size() > 0) r["restricted_fit"] = eiv::io::fit_json(in.ctx, e.restricted());
        doc["result"] = r;
        std::cerr << "error: " << e.what() << "\n";
        code = kNumerical;
    }
    doc["manifest"] = manifest("test", in.inputs, seed, seconds_since(t0));
    emit(out_path, eiv::io::dump_json(doc));
    return code;
}

int cmd_simulate(const std::string& config_path, const std::string& out_path, const std::string& table_path,
                 std::optional<long long> reps, std::optional<long long> seed, int threads, bool quiet,
                 const std::string& exponent) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string text = eiv::io::read_file(config_path);
    eiv::io::SimPlan plan = eiv::io::parse_sim_config(eiv::io::KeyValues::parse(text, config_path));
    if (reps && *reps < 1) throw eiv::io::InputError("--reps", 0, 0, "replications must be positive");
    if (seed && *seed < 0) throw eiv::io::InputError("--seed", 0, 0, "seed must be non-negative");
    if (threads < 1) throw eiv::io::InputError("--threads", 0, 0, "threads must be positive");
    for (auto& cell : plan.cells) {
        if (reps) cell.config.replications = static_cast<int>(*reps);
        if (seed) cell.config.master_seed = static_cast<std::uint64_t>(*seed);
        cell.config.threads = threads;
        if (!exponent.empty()) cell.config.test.exponent = exponent_option(exponent);
    }

    std::vector<eiv::SimReport> reports;
    Json cells = Json::array();
    for (const auto& cell : plan.cells) {
        reports.push_back(eiv::rejection_study(cell.config));
        cells.push_back(eiv::io::sim_cell_json(cell, reports.back()));
        if (!quiet) {
            std::cerr << "q=" << cell.q << " n=" << cell.n << ": " << reports.back().used << "/"
                      << reports.back().replications << " used, " << reports.back().wall_seconds << " s\n";
        }
    }
    const auto& first = plan.cells.front().config;
    Json report;
    report["name"] = plan.name;
    report["case"] = eiv::to_string(plan.model.kind);
    report["family"] = eiv::to_string(plan.model.family);
    report["nu"] = plan.model.nu;
    report["l"] = plan.model.l;
    report["p"] = plan.model.p;
    report["replications"] = first.replications;
    report["master_seed"] = first.master_seed;
    report["cells"] = cells;
    report["rho_exponent"] = eiv::to_string(first.test.exponent);

    Json doc;
    doc["report"] = report;
    doc["manifest"] = manifest("simulate", {{config_path, eiv::io::fnv1a_hex(text)}}, first.master_seed,
                               seconds_since(t0));
    doc["manifest"]["threads"] = threads;
    emit(out_path, eiv::io::dump_json(doc));

    const std::string table = eiv::io::sim_table(plan.cells, reports);
    if (!table_path.empty()) emit(table_path, table);
    if (!quiet && !out_path.empty() && out_path != "-") std::cout << table;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Likelihood-ratio tests with Skovgaard adjustments for elliptical errors-in-variables models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(EIVTEST_VERSION));

    std::string data, model, out, null_spec, config, table, exponent;
    std::uint64_t seed = 1;
    std::optional<long long> reps, sim_seed;
    int threads = default_threads();
    bool quiet = false;

    auto* fit = app.add_subcommand("fit", "Maximum-likelihood fit of a model to a CSV dataset");
    fit->add_option("-d,--data", data, "CSV with header group,y1..yl,x")->required();
    fit->add_option("-m,--model", model, "Model config (key = value)")->required();
    fit->add_option("-o,--out", out, "Output JSON (default: stdout)");
    fit->add_option("--seed", seed, "Seed for optimizer restarts");

    auto* test = app.add_subcommand("test", "Likelihood-ratio test of a null hypothesis with adjusted statistics");
    test->add_option("-d,--data", data, "CSV with header group,y1..yl,x")->required();
    test->add_option("-m,--model", model, "Model config (key = value)")->required();
    test->add_option("-n,--null", null_spec, "Null hypothesis, e.g. beta1@1=0,beta1@2=0")->required();
    test->add_option("-o,--out", out, "Output JSON (default: stdout)");
    test->add_option("--seed", seed, "Seed for optimizer restarts");
    test->add_option("--rho-exponent", exponent, "Exponent of the score quadratic form in rho: q-half (default), p-half, m-half");

    auto* sim = app.add_subcommand("simulate", "Monte Carlo null rejection rates");
    sim->add_option("-c,--config", config, "Simulation config (key = value)")->required();
    sim->add_option("-o,--out", out, "Output JSON (default: stdout)");
    sim->add_option("-t,--table", table, "Also write the text table to this file");
    sim->add_option("--reps", reps, "Override replications");
    sim->add_option("--seed", sim_seed, "Override the master seed");
    sim->add_option("--threads", threads, "Worker threads (default: EIV_THREADS or hardware concurrency)");
    sim->add_option("--rho-exponent", exponent, "Override the config's rho_exponent");
    sim->add_flag("-q,--quiet", quiet, "No progress or table on the terminal");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInput;
    }

    try {
        if (*fit) return cmd_fit(data, model, out, seed);
        if (*test) return cmd_test(data, model, null_spec, out, seed, exponent.empty() ? "q-half" : exponent);
        if (*sim) return cmd_simulate(config, out, table, reps, sim_seed, threads, quiet, exponent);
    } catch (const eiv::io::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInput;
    } catch (const eiv::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInput;
    } catch (const eiv::InitializationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumerical;
    } catch (const eiv::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kInternal;
}
