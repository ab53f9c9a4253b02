// Command-line driver. Every subcommand reads its inputs from files, writes
// its artifacts plus the resolved config.json under --out, and exits 0 on
// success, 2 on invalid input and 1 when a computation fails.

#include "ded/analysis.hpp"
#include "ded/config.hpp"
#include "ded/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace ded;

namespace {

struct Common {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON config file (any subset of keys)");
    sub->add_option("--out", c.out, "output directory")->capture_default_str();
    sub->add_option("--seed", c.seed, "master seed for every component");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (c.seed) cfg.set_seed(*c.seed);
    return cfg;
}

void finish(const fs::path& out, const RunConfig& cfg) {
    cfg.validate();
    write_resolved_config(out, cfg);
}

nlohmann::json read_json(const fs::path& p) {
    try {
        return nlohmann::json::parse(read_text_file(p));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(0, p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text_file(p, j.dump(2) + "\n"); }

std::size_t max_state(const std::vector<Trajectory>& trajs) {
    std::size_t n = 0;
    for (const auto& t : trajs)
        for (const auto& s : t.steps)
            if (s.state) n = std::max(n, *s.state + 1);
    return n;
}

std::string series_csv(const std::string& header, const std::vector<std::vector<double>>& cols) {
    std::string out = header + "\n";
    const std::size_t n = cols.empty() ? 0 : cols.front().size();
    for (std::size_t i = 0; i < n; ++i) {
        out += std::to_string(i);
        for (const auto& c : cols) out += "," + (i < c.size() ? format_double(c[i]) : std::string());
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------

int gen_lifegate(const Common& com, const std::optional<std::string>& layout,
                 std::optional<std::size_t> transitions) {
    RunConfig cfg = resolve(com);
    if (layout) cfg.lifegate.layout = *layout;
    if (transitions) cfg.lifegate.transitions = *transitions;
    cfg.validate();
    const auto g = build_lifegate(configured_layout(cfg.lifegate));
    const fs::path out = com.out;
    write_text_file(out / "layout.txt", layout_to_text(g.layout));
    write_text_file(out / "mdp.json", to_json(g.mdp).dump() + "\n");
    const auto data = lifegate_dataset(g, cfg.lifegate.transitions, cfg.tabular.seed);
    save_jsonl(out / "trajectories.jsonl", data);
    finish(out, cfg);
    std::cerr << "life-gate: " << g.mdp.n_states() << " states, " << data.size() << " trajectories, "
              << transition_count(data) << " transitions\n";
    return 0;
}

int gen_synthetic(const Common& com, std::optional<std::size_t> n_traj) {
    RunConfig cfg = resolve(com);
    if (n_traj) cfg.n_trajectories = *n_traj;
    cfg.validate();
    const auto c = make_synthetic_cohort(cfg);
    write_cohort_bundle(com.out, c.generated, c.emitter, c.trajectories, &c.exact);
    finish(com.out, cfg);
    const auto [pos, neg] = outcome_counts(c.trajectories);
    std::cerr << "synthetic cohort: " << c.trajectories.size() << " trajectories (" << pos << " positive, " << neg
              << " negative), " << c.discarded << " truncated rollouts regenerated\n";
    return 0;
}

int split_cmd(const Common& com, const std::string& in) {
    RunConfig cfg = resolve(com);
    cfg.validate();
    const auto trajs = load_jsonl(in);
    const auto r = split(trajs, cfg.split);
    const fs::path out = com.out;
    save_jsonl(out / "train.jsonl", r.train);
    save_jsonl(out / "val.jsonl", r.val);
    save_jsonl(out / "test.jsonl", r.test);
    write_json(out / "split.json", {{"train", r.train.size()},
                                    {"val", r.val.size()},
                                    {"test", r.test.size()},
                                    {"warnings", r.warnings}});
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    finish(out, cfg);
    return 0;
}

int train_sc_cmd(const Common& com, const std::string& train, const std::string& val,
                 std::optional<std::size_t> epochs) {
    RunConfig cfg = resolve(com);
    if (epochs) cfg.encoder.epochs = *epochs;
    cfg.validate();
    const auto tr = load_jsonl(train);
    std::vector<Trajectory> va;
    if (!val.empty()) va = load_jsonl(val);
    const auto res = train_sc(tr, cfg.cohort.n_actions, cfg.encoder, val.empty() ? nullptr : &va);
    const fs::path out = com.out;
    write_text_file(out / "sc.json", sc_checkpoint(res.model).dump() + "\n");
    write_text_file(out / "sc_curve.csv", series_csv("epoch,nll,val_sse", {res.epoch_nll, res.val_sse}));
    finish(out, cfg);
    std::cerr << "state construction: final nll " << res.epoch_nll.back() << ", max identity error "
              << res.max_identity_error << "\n";
    return 0;
}

int train_value(const Common& com, DualKind kind, const std::string& train, const std::string& sc,
                std::optional<std::size_t> updates, std::optional<std::size_t> n_states) {
    RunConfig cfg = resolve(com);
    if (updates) cfg.dqn.updates = *updates;
    cfg.validate();
    const auto tr = load_jsonl(train);
    const fs::path out = com.out;
    const std::string name = kind == DualKind::D ? "q_d" : "q_r";
    if (!sc.empty()) {
        const auto model = sc_from_checkpoint(read_json(sc));
        const auto emb = embed_cohort(model.encoder, tr);
        const auto fit = fit_double_q(tr, emb, model.encoder.n_actions(), cfg.dqn, kind);
        write_text_file(out / (name + ".json"), qnet_checkpoint(fit.online, cfg.dqn).dump() + "\n");
        write_text_file(out / (name + "_loss.csv"), series_csv("point,loss", {fit.loss_curve}));
    } else {
        const std::size_t S = n_states ? *n_states : max_state(tr);
        const auto res = tabular_q_learning(tr, S, cfg.cohort.n_actions, kind, cfg.tabular);
        write_text_file(out / (name + ".json"), to_json(res.q).dump() + "\n");
        write_text_file(out / (name + "_residual.csv"), series_csv("sweep,residual", {res.sweep_residual}));
    }
    finish(out, cfg);
    return 0;
}

int solve_exact_cmd(const Common& com, const std::optional<std::string>& layout, const std::string& mdp_path) {
    RunConfig cfg = resolve(com);
    if (layout) cfg.lifegate.layout = *layout;
    cfg.validate();
    const fs::path out = com.out;
    std::optional<LifeGate> g;
    TabularMDP mdp;
    if (!mdp_path.empty()) {
        mdp = mdp_from_json(read_json(mdp_path));
    } else {
        g = build_lifegate(configured_layout(cfg.lifegate));
        mdp = g->mdp;
    }
    const auto sol = solve_exact(mdp);
    write_text_file(out / "q_d.json", to_json(sol.q_d).dump() + "\n");
    write_text_file(out / "q_r.json", to_json(sol.q_r).dump() + "\n");
    write_json(out / "special_states.json", to_json(sol.sets));
    const auto report = verify_theorem1(mdp);
    write_json(out / "theorem_report.json", to_json(report));
    write_text_file(out / "theorem_report.txt", report.to_text());
    if (g) {
        write_text_file(out / "v_d_grid.csv", render_value_grid(g->layout, sol.q_d.state_values()));
        write_text_file(out / "v_r_grid.csv", render_value_grid(g->layout, sol.q_r.state_values()));
    }
    finish(out, cfg);
    std::cerr << report.to_text();
    return report.passed() ? 0 : 1;
}

int verify_cmd(const Common& com, std::optional<std::size_t> seeds) {
    RunConfig cfg = resolve(com);
    if (seeds) cfg.verify_seeds = *seeds;
    cfg.validate();
    std::string csv = "seed,n_states,n_actions,dead_ends,rescues,passed,failed_checks\n";
    std::size_t failed = 0;
    for (std::size_t i = 0; i < cfg.verify_seeds; ++i) {
        const std::uint64_t s = derive_seed(cfg.seed, 0x7665, i);
        const auto g = generate_synthetic(random_suite_spec(s));
        const auto rep = verify_theorem1(g.mdp);
        std::string bad;
        for (const auto& c : rep.checks)
            if (!c.passed) bad += (bad.empty() ? "" : ";") + c.name;
        failed += !rep.passed();
        csv += std::to_string(s) + "," + std::to_string(g.mdp.n_states()) + "," +
               std::to_string(g.mdp.n_actions()) + "," + std::to_string(rep.n_dead_ends) + "," +
               std::to_string(rep.n_rescues) + "," + (rep.passed() ? "1" : "0") + "," + bad + "\n";
    }
    write_text_file(fs::path(com.out) / "theorem_suite.csv", csv);
    finish(com.out, cfg);
    std::cerr << cfg.verify_seeds - failed << "/" << cfg.verify_seeds << " random MDPs pass every check\n";
    return failed ? 1 : 0;
}

int flag_cmd(const Common& com, const std::string& data, const std::string& qd_path,
             const std::string& qr_path, const std::string& sc) {
    RunConfig cfg = resolve(com);
    cfg.validate();
    const auto trajs = load_jsonl(data);
    const auto qd = value_model_from_json(read_json(qd_path));
    const auto qr = value_model_from_json(read_json(qr_path));
    std::optional<SCModel> model;
    if (!sc.empty()) model = sc_from_checkpoint(read_json(sc));
    const auto flagged = flag_cohort(trajs, qd, qr, model ? &model->encoder : nullptr);
    const fs::path out = com.out;
    save_flagged(out / "flagged.jsonl", flagged);
    write_text_file(out / "flags.csv", flag_report_csv(flag_records(flagged, cfg.thresholds)));
    write_json(out / "flag_manifest.json",
               {{"data", data}, {"q_d", qd_path}, {"q_r", qr_path}, {"sc", sc}, {"seed", cfg.seed}});
    finish(out, cfg);
    return 0;
}

int analyze_cmd(const Common& com, const std::string& flagged_path) {
    RunConfig cfg = resolve(com);
    cfg.validate();
    const auto cohort = load_flagged(flagged_path);
    const auto& an = cfg.analysis;
    const fs::path out = com.out;
    std::vector<std::string> outputs{"flag_emergence.csv", "flag_duration_runs.csv", "flag_duration_ends.csv",
                                     "value_histogram.csv"};
    write_text_file(out / outputs[0],
                    emergence_csv(flag_emergence(cohort, cfg.thresholds, an.horizon, an.hours_per_step)));
    const auto dur = flag_duration(cohort, cfg.thresholds, an.duration_k);
    write_text_file(out / outputs[1], duration_runs_csv(dur));
    write_text_file(out / outputs[2], duration_ends_csv(dur));
    write_text_file(out / outputs[3], histogram_csv(value_histogram(cohort)));

    nlohmann::json manifest{{"cohort", flagged_path},
                            {"thresholds", to_json(cfg.thresholds)},
                            {"seed", cfg.seed},
                            {"n_trajectories", cohort.size()}};
    const fs::path fm = fs::path(flagged_path).parent_path() / "flag_manifest.json";
    if (fs::exists(fm)) manifest["checkpoints"] = read_json(fm);
    try {
        const auto al = first_flag_alignment(cohort, cfg.thresholds, {an.pre_steps, an.post_steps});
        write_text_file(out / "first_flag_alignment.csv", alignment_csv(al));
        outputs.push_back("first_flag_alignment.csv");
        manifest["alignment"] = {{"flagged", al.flagged}, {"eligible", al.eligible}, {"excluded", al.excluded}};
    } catch (const NoEligibleTrajectories& e) {
        std::cerr << "warning: " << e.what() << "\n";
        manifest["alignment"] = {{"error", e.what()}};
    }
    outputs.push_back("config.json");
    manifest["outputs"] = outputs;
    write_json(out / "manifest.json", manifest);
    finish(out, cfg);
    return 0;
}

/// Plain-text summary of an analysis directory.
int report_cmd(const Common& com, const std::string& in) {
    RunConfig cfg = resolve(com);
    cfg.validate();
    std::istringstream csv(read_text_file(fs::path(in) / "flag_emergence.csv"));
    std::string line;
    std::getline(csv, line);
    std::ostringstream os;
    os << "Red-flag percentage by steps before the terminal (Full criterion)\n";
    os << "bucket  hours  basis  negative  positive\n";
    std::map<std::tuple<int, std::string>, std::pair<std::string, std::string>> red;
    while (std::getline(csv, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
        if (f.size() != 9) throw ParseError(0, "flag_emergence.csv row has " + std::to_string(f.size()) + " fields");
        if (f[3] != "Full") continue;
        auto& slot = red[{std::stoi(f[0]), f[4]}];
        (f[2] == "negative" ? slot.first : slot.second) = f[8];
    }
    for (const auto& [key, v] : red) {
        const auto& [bucket, basis] = key;
        os << bucket << "  " << bucket * cfg.analysis.hours_per_step << "  " << basis << "  "
           << (v.first.empty() ? "-" : v.first) << "  " << (v.second.empty() ? "-" : v.second) << "\n";
    }
    write_text_file(fs::path(com.out) / "report.txt", os.str());
    finish(com.out, cfg);
    std::cout << os.str();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dead-end discovery: dual value estimation, exact oracles and flag analysis"};
    app.require_subcommand(1);
    Common com;
    int status = 0;

    auto* s = app.add_subcommand("gen-lifegate", "build the Life-Gate MDP and a uniform-behavior dataset");
    add_common(s, com);
    auto layout = std::make_shared<std::optional<std::string>>();
    auto transitions = std::make_shared<std::optional<std::size_t>>();
    s->add_option("--layout", *layout, "'default' or a layout file");
    s->add_option("--transitions", *transitions, "minimum number of recorded transitions");
    s->callback([&, layout, transitions] { status = gen_lifegate(com, *layout, *transitions); });

    s = app.add_subcommand("gen-synthetic", "generate a synthetic POMDP cohort with known dead-ends");
    add_common(s, com);
    auto n_traj = std::make_shared<std::optional<std::size_t>>();
    s->add_option("--n-trajectories", *n_traj, "number of trajectories");
    s->callback([&, n_traj] { status = gen_synthetic(com, *n_traj); });

    s = app.add_subcommand("split", "stratified train/val/test split of a trajectory file");
    add_common(s, com);
    auto in = std::make_shared<std::string>();
    s->add_option("--in", *in, "trajectories.jsonl")->required();
    s->callback([&, in] { status = split_cmd(com, *in); });

    s = app.add_subcommand("train-sc", "train the state-construction encoder");
    add_common(s, com);
    auto train = std::make_shared<std::string>();
    auto val = std::make_shared<std::string>();
    auto epochs = std::make_shared<std::optional<std::size_t>>();
    s->add_option("--train", *train, "training trajectories")->required();
    s->add_option("--val", *val, "validation trajectories");
    s->add_option("--epochs", *epochs, "training epochs");
    s->callback([&, train, val, epochs] { status = train_sc_cmd(com, *train, *val, *epochs); });

    for (auto kind : {DualKind::D, DualKind::R}) {
        const std::string name = kind == DualKind::D ? "train-d" : "train-r";
        s = app.add_subcommand(name, std::string("fit the ") + (kind == DualKind::D ? "D" : "R") +
                                         " value function (double-Q with --sc, tabular otherwise)");
        add_common(s, com);
        auto tr = std::make_shared<std::string>();
        auto sc = std::make_shared<std::string>();
        auto updates = std::make_shared<std::optional<std::size_t>>();
        auto n_states = std::make_shared<std::optional<std::size_t>>();
        s->add_option("--train", *tr, "training trajectories")->required();
        s->add_option("--sc", *sc, "state-construction checkpoint");
        s->add_option("--updates", *updates, "double-Q gradient updates");
        s->add_option("--n-states", *n_states, "tabular state count (default: inferred from data)");
        s->callback([&, kind, tr, sc, updates, n_states] {
            status = train_value(com, kind, *tr, *sc, *updates, *n_states);
        });
    }

    s = app.add_subcommand("solve-exact", "exact D/R values, special states and theorem checks");
    add_common(s, com);
    auto sl = std::make_shared<std::optional<std::string>>();
    auto mdp = std::make_shared<std::string>();
    s->add_option("--layout", *sl, "Life-Gate layout: 'default' or a file");
    s->add_option("--mdp", *mdp, "mdp.json instead of a Life-Gate layout")->excludes("--layout");
    s->callback([&, sl, mdp] { status = solve_exact_cmd(com, *sl, *mdp); });

    s = app.add_subcommand("verify-theorems", "theorem checks over seeded random MDPs");
    add_common(s, com);
    auto seeds = std::make_shared<std::optional<std::size_t>>();
    s->add_option("--seeds", *seeds, "number of random MDPs");
    s->callback([&, seeds] { status = verify_cmd(com, *seeds); });

    s = app.add_subcommand("flag", "per-step red/yellow/none flags for a trajectory file");
    add_common(s, com);
    auto data = std::make_shared<std::string>();
    auto qd = std::make_shared<std::string>();
    auto qr = std::make_shared<std::string>();
    auto fsc = std::make_shared<std::string>();
    s->add_option("--data", *data, "trajectories to flag")->required();
    s->add_option("--qd", *qd, "D checkpoint")->required();
    s->add_option("--qr", *qr, "R checkpoint")->required();
    s->add_option("--sc", *fsc, "state-construction checkpoint (network models)");
    s->callback([&, data, qd, qr, fsc] { status = flag_cmd(com, *data, *qd, *qr, *fsc); });

    s = app.add_subcommand("analyze", "flag emergence, duration, alignment and histograms");
    add_common(s, com);
    auto flagged = std::make_shared<std::string>();
    s->add_option("--flagged", *flagged, "flagged.jsonl from the flag stage")->required();
    s->callback([&, flagged] { status = analyze_cmd(com, *flagged); });

    s = app.add_subcommand("report", "text summary of an analysis directory");
    add_common(s, com);
    auto rin = std::make_shared<std::string>();
    s->add_option("--in", *rin, "analysis output directory")->required();
    s->callback([&, rin] { status = report_cmd(com, *rin); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.is_validation() ? 2 : 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed JSON input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return status;
}
