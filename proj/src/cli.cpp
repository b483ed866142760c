#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mflb/harness.hpp"

namespace mflb::harness {

namespace fs = std::filesystem;

namespace {

fs::path output_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("MFLB_OUT"); env && *env) return env;
    return ".";
}

std::ofstream open_output(const fs::path& dir, const std::string& name) {
    fs::create_directories(dir);
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    return out;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

struct RunArgs {
    std::string config, out, algorithm;
    std::optional<std::uint64_t> seed;
};

struct AnalyzeArgs {
    std::string input, out;
    std::size_t T = 0, shift = 0;
    std::optional<double> qmin, qmax;
    double dt = 1.0;
    int order = 1;
};

struct CompareArgs {
    std::string config, out, algorithms;
    std::size_t seeds = 0;
};

int do_run(const RunArgs& a, std::ostream& out) {
    Scenario s = load_scenario(a.config);
    if (a.seed) s.seed = *a.seed;
    if (!a.algorithm.empty()) {
        auto algo = parse_algorithm(a.algorithm);
        if (!algo) throw std::runtime_error("--algorithm: unknown algorithm '" + a.algorithm + "'");
        s.algorithm = *algo;
    }
    const RunOutput result = run_scenario(s);
    const fs::path dir = output_dir(a.out);
    {
        auto f = open_output(dir, "trace.csv");
        qsim::write_trace_csv(f, result.trace);
    }
    {
        std::vector<balancer::WindowLogRow> rows;
        for (const auto& w : result.windows) rows.push_back(w.row);
        auto f = open_output(dir, "windows.csv");
        balancer::write_window_log_csv(f, rows, s.servers.size());
    }
    {
        auto f = open_output(dir, "metrics.json");
        write_metrics_json(f, result.metrics);
    }
    out << "run: " << to_string(s.algorithm) << " seed " << s.seed << ", " << result.metrics.arrivals << " arrivals, "
        << result.window_count << " windows -> " << dir.string() << '\n';
    return 0;
}

int do_analyze(const AnalyzeArgs& a, std::ostream& out) {
    std::ifstream in(a.input);
    if (!in) throw std::runtime_error("cannot open input file '" + a.input + "'");
    traffic::TimeSeries series;
    try {
        series = traffic::read_series_csv(in, a.dt);
    } catch (const std::exception& e) {
        throw std::runtime_error(a.input + ": " + e.what());
    }
    const mfa::WindowConfig wcfg{a.T, a.shift};
    wcfg.validate();

    mfa::MfdfaConfig cfg = mfa::MfdfaConfig::defaults(a.T);
    cfg.order = a.order;
    std::vector<double> q;
    for (double v : cfg.q_grid)
        if ((!a.qmin || v >= *a.qmin) && (!a.qmax || v <= *a.qmax)) q.push_back(v);
    cfg.q_grid = q;
    cfg.validate(a.T);

    const auto windows = mfa::sliding_windows(series.values, wcfg);
    const fs::path dir = output_dir(a.out);
    auto win_csv = open_output(dir, "windows.csv");
    auto spec_csv = open_output(dir, "spectrum.csv");
    win_csv << "window_start,H,delta_h,low_confidence\n";
    spec_csv << "window_start,q,h,r2\n";
    nlohmann::json summary = nlohmann::json::object();
    std::size_t flagged = 0;
    for (const auto& w : windows) {
        const auto spec = mfa::mfdfa(w.values, cfg);
        const bool low = spec.low_confidence();
        flagged += low ? 1 : 0;
        win_csv << w.start << ',' << spec.H << ',' << spec.delta_h << ',' << (low ? 1 : 0) << '\n';
        for (std::size_t i = 0; i < spec.q_grid.size(); ++i)
            spec_csv << w.start << ',' << spec.q_grid[i] << ',' << spec.h[i] << ',' << spec.fit_r2[i] << '\n';
        summary[std::to_string(w.start)] = {{"H", spec.H}, {"delta_h", spec.delta_h}, {"T", a.T}, {"shift", a.shift}};
    }
    auto js = open_output(dir, "summary.json");
    js << summary.dump(2) << '\n';
    out << "analyze: " << windows.size() << " windows (" << flagged << " with a low-confidence fit) -> " << dir.string()
        << '\n';
    return 0;
}

int do_compare(const CompareArgs& a, std::ostream& out) {
    const Scenario s = load_scenario(a.config);
    std::vector<Algorithm> algos;
    for (const auto& name : split_list(a.algorithms)) {
        auto algo = parse_algorithm(name);
        if (!algo) throw std::runtime_error("--algorithms: unknown algorithm '" + name + "'");
        algos.push_back(*algo);
    }
    if (algos.size() < 2) throw std::runtime_error("--algorithms: at least two algorithms are required");
    if (a.seeds < 1) throw std::runtime_error("--seeds: at least one seed is required");
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < a.seeds; ++k) seeds.push_back(s.seed + k);
    const auto table = compare_algorithms(s, algos, seeds);
    const fs::path dir = output_dir(a.out);
    auto f = open_output(dir, "comparison.csv");
    write_comparison_csv(f, table);
    for (const auto& row : table.rows)
        out << to_string(row.algorithm) << ": jain " << row.metrics.at("jain").mean << ", loss "
            << row.metrics.at("loss_total").mean << ", jain wins " << row.jain_wins << ", loss wins " << row.loss_wins
            << '\n';
    return 0;
}

}  // namespace

int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multifractal load-balancing simulation toolkit", "mflb"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "Simulate a scenario and write trace.csv, windows.csv and metrics.json");
    run->add_option("--config", run_args.config, "Scenario JSON file")->required();
    run->add_option("--seed", run_args.seed, "Override the scenario seed");
    run->add_option("--out", run_args.out, "Output directory (default: $MFLB_OUT or .)");
    run->add_option("--algorithm", run_args.algorithm, "Override the scenario algorithm");

    AnalyzeArgs an_args;
    auto* analyze = app.add_subcommand("analyze", "Sliding-window MF-DFA over a series CSV (slot_index,value)");
    analyze->add_option("--input", an_args.input, "Series CSV file")->required();
    analyze->add_option("--t", an_args.T, "Window length T in samples")->required()->check(CLI::PositiveNumber);
    analyze->add_option("--shift", an_args.shift, "Window shift in samples")->required()->check(CLI::PositiveNumber);
    analyze->add_option("--qmin", an_args.qmin, "Smallest q kept from the default grid");
    analyze->add_option("--qmax", an_args.qmax, "Largest q kept from the default grid");
    analyze->add_option("--dt", an_args.dt, "Slot duration in seconds")->check(CLI::PositiveNumber);
    analyze->add_option("--order", an_args.order, "Detrending order")->check(CLI::PositiveNumber);
    analyze->add_option("--out", an_args.out, "Output directory (default: $MFLB_OUT or .)");

    CompareArgs cmp_args;
    auto* compare = app.add_subcommand("compare", "Run several algorithms over paired seeds and write comparison.csv");
    compare->add_option("--config", cmp_args.config, "Scenario JSON file")->required();
    compare->add_option("--algorithms", cmp_args.algorithms, "Comma-separated algorithm names")->required();
    compare->add_option("--seeds", cmp_args.seeds, "Number of seeds, starting at the scenario seed")->required();
    compare->add_option("--out", cmp_args.out, "Output directory (default: $MFLB_OUT or .)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        const auto subs = app.get_subcommands();
        out << (subs.empty() ? app.help() : subs.front()->help());
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    try {
        if (*run) return do_run(run_args, out);
        if (*analyze) return do_analyze(an_args, out);
        if (*compare) return do_compare(cmp_args, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace mflb::harness
