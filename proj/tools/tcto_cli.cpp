// tcto command line: train / apply / export / report.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tcto/tcto.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json read_json(const fs::path& p) {
    try {
        return json::parse(tcto::read_text(p.string()));
    } catch (const json::parse_error& e) {
        throw tcto::SchemaError("'" + p.string() + "' is not valid JSON: " + e.what());
    }
}

tcto::Split load_split(const std::string& data, tcto::TaskKind task, const std::string& label,
                       const tcto::RunConfig& cfg) {
    auto load = tcto::load_csv(data, task, label);
    if (load.dropped_rows > 0) std::cerr << "warning: dropped " << load.dropped_rows << " malformed rows\n";
    auto split = tcto::stratified_split(load.data, cfg.test_fraction, cfg.seed);
    for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";
    return split;
}

void print_summary(const tcto::RunReport& rep) {
    std::printf("train rows %zu, test rows %zu, node budget %zu\n", rep.train_rows, rep.test_rows, rep.budget);
    std::printf("train-cv baseline %.6f  start %.6f  best %.6f  (alive %zu)\n", rep.baseline_score, rep.start_score,
                rep.best_score, rep.best_snapshot.alive.size());
    if (rep.test_best)
        std::printf("test  baseline %.6f  best roadmap %.6f\n", *rep.test_baseline, *rep.test_best);
}

int cmd_train(const std::string& data, const std::string& task_s, const std::string& label, const std::string& out,
              std::optional<std::size_t> episodes, std::optional<std::size_t> steps, std::optional<std::uint64_t> seed,
              const std::string& config_path) {
    tcto::RunConfig cfg;
    tcto::TaskKind task;
    try {
        task = tcto::parse_task(task_s);
        if (!config_path.empty()) tcto::apply_config_json(cfg, read_json(config_path));
        tcto::apply_seed_env(cfg);
        if (episodes) cfg.episodes = *episodes;
        if (steps) cfg.steps_per_episode = *steps;
        if (seed) cfg.seed = *seed;
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    auto split = load_split(data, task, label, cfg);
    tcto::Pipeline pipe(std::move(split.train), std::move(split.test), cfg);
    const auto rep = pipe.run_training();

    tcto::write_report(out, rep);
    tcto::write_text((fs::path(out) / "checkpoint.json").string(), pipe.checkpoint_json().dump() + "\n");
    json rc = tcto::config_to_json(cfg);
    json meta{{"config", rc}, {"data", data}, {"task", tcto::task_name(task)}, {"label", label}};
    tcto::write_text((fs::path(out) / "run_config.json").string(), meta.dump(2) + "\n");
    print_summary(rep);
    return 0;
}

int cmd_apply(const std::string& data, const std::string& roadmap_path, const std::string& out,
              std::optional<std::size_t> episodes) {
    const fs::path dir = fs::path(roadmap_path).parent_path();
    const json meta = read_json(dir / "run_config.json");
    tcto::RunConfig cfg;
    tcto::TaskKind task;
    std::string label;
    try {
        tcto::apply_config_json(cfg, meta.at("config"));
        task = tcto::parse_task(meta.at("task").get<std::string>());
        label = meta.at("label").get<std::string>();
    } catch (const std::exception& e) {
        throw tcto::SchemaError(std::string("malformed run_config.json: ") + e.what());
    }
    auto roadmap = tcto::Roadmap::import_json(tcto::read_text(roadmap_path));
    auto checkpoint = tcto::checkpoint_from_json(read_json(dir / "checkpoint.json"));
    auto split = load_split(data, task, label, cfg);
    tcto::Pipeline pipe(std::move(split.train), std::move(split.test), cfg, std::move(roadmap), std::move(checkpoint));
    const auto rep = pipe.run_application(episodes);

    tcto::write_report(out, rep);
    auto summary = tcto::summary_to_json(rep);
    summary["replay_train_score"] = rep.start_score;
    if (fs::exists(dir / "summary.json")) {
        const double logged = read_json(dir / "summary.json").at("best_score").get<double>();
        summary["logged_best_score"] = logged;
        summary["replay_matches"] = std::abs(logged - rep.start_score) <= 1e-9;
    }
    tcto::write_text((fs::path(out) / "summary.json").string(), summary.dump(2) + "\n");
    std::printf("replay train-cv score %.12f\n", rep.start_score);
    print_summary(rep);
    return 0;
}

int cmd_export(const std::string& roadmap_path, const std::string& format) {
    const auto r = tcto::Roadmap::import_json(tcto::read_text(roadmap_path));
    std::cout << (format == "dot" ? r.export_dot() : r.export_json()) << "\n";
    return 0;
}

int cmd_report(const std::string& run) {
    std::istringstream lines(tcto::read_text((fs::path(run) / "steps.jsonl").string()));
    const json summary = read_json(fs::path(run) / "summary.json");
    std::printf("%-8s %-8s %8s %12s %8s %8s\n", "phase", "episode", "steps", "best_score", "prunes", "alive");
    std::string line, phase;
    std::size_t episode = 0, steps = 0, prunes = 0, alive = 0;
    double best = 0.0;
    bool open = false;
    auto flush = [&] {
        if (open) std::printf("%-8s %-8zu %8zu %12.6f %8zu %8zu\n", phase.c_str(), episode, steps, best, prunes, alive);
    };
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        json s;
        try {
            s = json::parse(line);
        } catch (const json::parse_error& e) {
            throw tcto::SchemaError(std::string("malformed steps.jsonl: ") + e.what());
        }
        const auto ph = s.at("phase").get<std::string>();
        const auto ep = s.at("episode").get<std::size_t>();
        if (!open || ph != phase || ep != episode) {
            flush();
            phase = ph;
            episode = ep;
            steps = prunes = 0;
            open = true;
        }
        ++steps;
        if (s.at("prune").get<std::string>() != "none") ++prunes;
        best = s.at("best_score").get<double>();
        alive = s.at("alive_after").get<std::size_t>();
    }
    flush();
    std::printf("baseline %.6f  best %.6f\n", summary.at("baseline_score").get<double>(),
                summary.at("best_score").get<double>());
    if (!summary.at("test_best").is_null())
        std::printf("test baseline %.6f  test best %.6f\n", summary.at("test_baseline").get<double>(),
                    summary.at("test_best").get<double>());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Feature transformation with a transformation roadmap and cascading agents"};
    app.require_subcommand(1);

    std::string data, task, label, out, config, roadmap, format = "json", run;
    std::optional<std::size_t> episodes, steps, apply_episodes;
    std::optional<std::uint64_t> seed;

    auto* train = app.add_subcommand("train", "explore transformations and train the agents");
    train->add_option("--data", data, "CSV file")->required();
    train->add_option("--task", task, "cls or reg")->required()->check(CLI::IsMember({"cls", "reg"}));
    train->add_option("--label", label, "label column")->required();
    train->add_option("--out", out, "output directory")->required();
    train->add_option("--episodes", episodes);
    train->add_option("--steps", steps);
    train->add_option("--seed", seed);
    train->add_option("--config", config, "flat JSON overriding defaults");

    auto* apply = app.add_subcommand("apply", "greedy application episodes from a saved run");
    apply->add_option("--data", data, "CSV file")->required();
    apply->add_option("--roadmap", roadmap, "best_roadmap.json of a train run")->required();
    apply->add_option("--out", out, "output directory")->required();
    apply->add_option("--episodes", apply_episodes, "override application episodes");

    auto* exp = app.add_subcommand("export", "print a roadmap as JSON or DOT");
    exp->add_option("--roadmap", roadmap)->required();
    exp->add_option("--format", format)->check(CLI::IsMember({"json", "dot"}));

    auto* rep = app.add_subcommand("report", "per-episode best scores of a run");
    rep->add_option("--run", run, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }

    try {
        if (*train) return cmd_train(data, task, label, out, episodes, steps, seed, config);
        if (*apply) return cmd_apply(data, roadmap, out, apply_episodes);
        if (*exp) return cmd_export(roadmap, format);
        if (*rep) return cmd_report(run);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const tcto::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
