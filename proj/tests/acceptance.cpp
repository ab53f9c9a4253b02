// Acceptance suite. Each criterion prints one PASS/FAIL line; with
// `--criterion N` only that one runs (ctest registers one entry per criterion).

#include "ded/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace ded;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

// C1: Life-Gate exact solve.
Outcome lifegate_exact() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto g = build_lifegate(default_layout());
    const auto sol = solve_exact(g.mdp);
    double worst_d = 0.0, worst_r = 0.0;
    for (std::size_t s : g.yellow_states) {
        worst_d = std::max(worst_d, std::abs(sol.q_d.state_value(s) + 1.0));
        worst_r = std::max(worst_r, std::abs(sol.q_r.state_value(s)));
    }
    std::size_t misclassified = 0;
    for (std::size_t s = 0; s < g.mdp.n_states(); ++s) {
        if (g.mdp.is_terminal(s)) continue;
        const bool predicted = sol.q_d.state_value(s) < -0.7 && sol.q_r.state_value(s) < 0.7;
        misclassified += predicted != sol.sets.is_dead_end(s);
    }
    auto yellow = g.yellow_states;
    std::sort(yellow.begin(), yellow.end());
    const bool sets_match = yellow == sol.sets.dead_ends;
    const double secs = seconds_since(t0);
    return {worst_d <= 1e-6 && worst_r <= 1e-6 && misclassified == 0 && sets_match && secs < 5.0,
            "yellow |V_D+1| " + fmt(worst_d) + ", |V_R| " + fmt(worst_r) + ", misclassified " +
                std::to_string(misclassified) + ", dead-ends==yellow " + (sets_match ? "yes" : "no") +
                ", " + fmt(secs, 3) + " s"};
}

// C2: theorem suite on 100 seeded random MDPs.
Outcome theorem_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t failed = 0, max_states = 0, max_actions = 0;
    double lemma2 = 0.0, min_margin = std::numeric_limits<double>::infinity();
    std::string first_failure;
    for (std::uint64_t i = 0; i < 100; ++i) {
        const auto g = generate_synthetic(random_suite_spec(i));
        max_states = std::max(max_states, g.mdp.n_states());
        max_actions = std::max(max_actions, g.mdp.n_actions());
        const auto rep = verify_theorem1(g.mdp);
        lemma2 = std::max({lemma2, rep.max_lemma2_error_d, rep.max_lemma2_error_r});
        for (const auto* s : {&rep.separation_d, &rep.separation_r})
            if (s->margin) min_margin = std::min(min_margin, *s->margin);
        if (!rep.passed()) {
            ++failed;
            if (first_failure.empty())
                for (const auto& c : rep.checks)
                    if (!c.passed) first_failure = " first failure: seed " + std::to_string(i) + " " + c.name;
        }
    }
    const double secs = seconds_since(t0);
    return {failed == 0 && lemma2 < 1e-6 && max_states <= 50 && max_actions <= 5 && secs < 60.0,
            std::to_string(100 - failed) + "/100 MDPs pass T1-T5, max lemma-2 error " + fmt(lemma2) +
                ", min separation margin " + fmt(min_margin) + ", sizes <= " + std::to_string(max_states) +
                "x" + std::to_string(max_actions) + ", " + fmt(secs, 3) + " s" + first_failure};
}

struct LifeGateRun {
    LifeGate g;
    ExactSolution sol;
    std::vector<Trajectory> data;
};

LifeGateRun lifegate_run(const RunConfig& cfg) {
    LifeGateRun r{build_lifegate(configured_layout(cfg.lifegate)), {}, {}};
    r.sol = solve_exact(r.g.mdp);
    r.data = lifegate_dataset(r.g, cfg.lifegate.transitions, cfg.seed);
    return r;
}

/// Checkpoints with a violation when the uniform policy is secured by the
/// learned Q_D and certified against the oracle.
std::pair<std::size_t, std::size_t> security_during_training(const LifeGateRun& run, TabularQConfig cfg) {
    std::size_t checkpoints = 0, violating = 0;
    const auto uniform = uniform_policy(run.g.mdp.n_states(), kGridActions);
    cfg.checkpoint_every = 20000;
    cfg.on_checkpoint = [&](std::size_t, const QTable& q) {
        ++checkpoints;
        const auto sec = secure_policy_matrix(run.g.mdp, uniform, q);
        violating += !certify_security(run.g.mdp, sec.policy, run.sol.oracle).ok();
    };
    tabular_q_learning(run.data, run.g.mdp.n_states(), kGridActions, DualKind::D, cfg);
    return {violating, checkpoints};
}

// C3: zero-init clamped tabular Q-learning keeps the secured policy secure.
Outcome security_along_training() {
    RunConfig cfg;
    const auto run = lifegate_run(cfg);
    TabularQConfig tq = cfg.tabular; // zero init, clamped, constant step size
    const auto [bad, total] = security_during_training(run, tq);
    tq.init = -1.0;
    const auto [bad_pess, total_pess] = security_during_training(run, tq);
    return {bad == 0 && total > 0,
            std::to_string(bad) + "/" + std::to_string(total) + " checkpoints with violations (zero init); "
                "with init -1: " + std::to_string(bad_pess) + "/" + std::to_string(total_pess)};
}

// C4: offline tabular convergence on Life-Gate.
Outcome tabular_convergence() {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg;
    cfg.tabular.schedule = LrSchedule::visit_decay;
    const auto run = lifegate_run(cfg);
    const std::size_t transitions = transition_count(run.data);
    double err[2] = {0.0, 0.0};
    std::size_t pairs = 0;
    for (auto kind : {DualKind::D, DualKind::R}) {
        const auto res = tabular_q_learning(run.data, run.g.mdp.n_states(), kGridActions, kind, cfg.tabular);
        const QTable& ref = kind == DualKind::D ? run.sol.q_d : run.sol.q_r;
        pairs = 0;
        for (std::size_t s = 0; s < run.g.mdp.n_states(); ++s)
            for (std::size_t a = 0; a < kGridActions; ++a) {
                if (res.visits[s * kGridActions + a] / cfg.tabular.sweeps < 50) continue;
                ++pairs;
                err[kind == DualKind::R] = std::max(err[kind == DualKind::R], std::abs(res.q(s, a) - ref(s, a)));
            }
    }
    const double secs = seconds_since(t0);
    return {transitions >= 200000 && err[0] <= 0.05 && err[1] <= 0.05 && secs < 120.0,
            "max |Q-Q*| over " + std::to_string(pairs) + " pairs visited >= 50: D " + fmt(err[0], 4) + ", R " +
                fmt(err[1], 4) + " (" + std::to_string(transitions) + " transitions, omega " +
                fmt(cfg.tabular.omega, 3) + ", " + std::to_string(cfg.tabular.sweeps) + " sweeps, seed " +
                std::to_string(cfg.seed) + "), " + fmt(secs, 3) + " s"};
}

// C5: learned-model separation on a synthetic cohort.
Outcome learned_separation() {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig cfg;
    const auto run = run_learned_pipeline(cfg);
    const auto neg = red_series(run.emergence, TerminalKind::negative, Criterion::Full, Basis::V);
    const auto pos = red_series(run.emergence, TerminalKind::positive, Criterion::Full, Basis::V);
    if (neg.size() < 6 || pos.empty()) return {false, "too few emergence buckets"};
    bool monotone = true;
    std::string tail;
    for (std::size_t i = neg.size() - 6; i < neg.size(); ++i) {
        if (i > neg.size() - 6 && neg[i] < neg[i - 1]) monotone = false;
        tail += (tail.empty() ? "" : " ") + fmt(neg[i], 4);
    }
    const double n_last = neg.back(), p_last = pos.back();
    const bool gap = n_last > 0.0 && n_last - p_last >= 10.0 * p_last;
    return {monotone && gap,
            "negative red % over final 6 buckets: " + tail + (monotone ? " (nondecreasing)" : " (NOT monotone)") +
                "; final bucket negative " + fmt(n_last, 4) + "% vs positive " + fmt(p_last, 4) + "%, " +
                std::to_string(run.cohort.trajectories.size()) + " trajectories, " + fmt(seconds_since(t0), 3) +
                " s"};
}

int run_cli(const fs::path& cwd, const std::string& args) {
    const std::string cmd = "cd '" + cwd.string() + "' && '" + std::string(DED_CLI) + "' " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

/// Runs the network route of the CLI in `dir` with relative paths.
bool cli_chain(const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_text_file(dir / "cfg.json",
                    R"({"seed": 3, "encoder": {"epochs": 5, "embed_dim": 16, "hidden": [32]},)"
                    R"( "dqn": {"updates": 300, "hidden": 16, "log_every": 50}})");
    const char* steps[] = {
        "gen-synthetic --config cfg.json --n-trajectories 500 --out cohort",
        "split --config cfg.json --in cohort/trajectories.jsonl --out split",
        "train-sc --config cfg.json --train split/train.jsonl --val split/val.jsonl --out sc",
        "train-d --config cfg.json --train split/train.jsonl --sc sc/sc.json --out d",
        "train-r --config cfg.json --train split/train.jsonl --sc sc/sc.json --out r",
        "flag --config cfg.json --data split/test.jsonl --qd d/q_d.json --qr r/q_r.json --sc sc/sc.json --out flags",
        "analyze --config cfg.json --flagged flags/flagged.jsonl --out analysis",
        "solve-exact --config cfg.json --mdp cohort/mdp.json --out exact",
    };
    for (const char* s : steps)
        if (run_cli(dir, s) != 0) {
            std::cerr << "  command failed in " << dir << ": " << s << '\n';
            return false;
        }
    return true;
}

// C6: gradient checks, loss identity, determinism.
Outcome numerical_hygiene() {
    RunConfig cfg;
    cfg.n_trajectories = 2000;
    const auto cohort = make_synthetic_cohort(cfg);
    const auto sp = split(cohort.trajectories, cfg.split);
    const std::size_t A = cfg.cohort.n_actions;

    // Encoder and decoder, through the observation-prediction loss.
    EncoderConfig ec = cfg.encoder;
    ec.epochs = 20;
    const auto sc = train_sc(sp.train, A, ec, &sp.val);
    SCModel m = sc.model;
    std::vector<TransitionRef> refs = sc_transitions(sp.train);
    refs.resize(64);
    const auto batch = make_sc_batch(m.encoder, sp.train, refs);
    SCForward f;
    const auto batch_loss = sc_loss(m, batch, &f);
    const auto g = sc_gradients(m, batch, f);
    auto params = m.encoder.net().parameter_pointers();
    const auto dec = m.decoder.parameter_pointers();
    params.insert(params.end(), dec.begin(), dec.end());
    auto analytic = nn::flatten(g.encoder);
    const auto gd = nn::flatten(g.decoder);
    analytic.insert(analytic.end(), gd.begin(), gd.end());
    auto sc_pattern = [&] {
        auto p = m.encoder.net().relu_pattern(batch.windows);
        const nn::Matrix emb = m.encoder.net().forward(batch.windows);
        nn::Matrix dec_in(emb.rows() + batch.actions.rows(), emb.cols());
        dec_in << emb, batch.actions;
        const auto q = m.decoder.relu_pattern(dec_in);
        p.insert(p.end(), q.begin(), q.end());
        return p;
    };
    const auto gc_sc = nn::gradient_check(params, analytic, [&] { return sc_loss(m, batch).nll; }, sc_pattern, 400, 1);

    // D and R Q-networks on embedded transitions.
    const auto emb = embed_cohort(sc.model.encoder, sp.train);
    double gc_q = 0.0;
    std::size_t gc_q_checked = 0;
    for (auto kind : {DualKind::D, DualKind::R}) {
        Rng rng(derive_seed(cfg.seed, 0x6763, static_cast<std::uint64_t>(kind)));
        QNetwork q(ec.embed_dim, A, cfg.dqn.hidden, kind, rng);
        QBatch b{nn::Matrix(static_cast<Eigen::Index>(ec.embed_dim), 64), std::vector<std::size_t>(64),
                 std::vector<double>(64)};
        for (Eigen::Index c = 0; c < 64; ++c) {
            const auto& r = refs[static_cast<std::size_t>(c)];
            b.x.col(c) = emb.embeddings.col(emb.column(r.traj, r.step));
            b.actions[static_cast<std::size_t>(c)] = sp.train[r.traj].steps[r.step].action;
            b.targets[static_cast<std::size_t>(c)] = kind == DualKind::D ? -uniform01(rng) : uniform01(rng);
        }
        const auto grads = nn::flatten(q_gradients(q, b, 1.0 / 64.0));
        const auto res = nn::gradient_check(
            q.net.parameter_pointers(), grads, [&] { return q_loss(q, b, 1.0 / 64.0); },
            [&] { return q.net.relu_pattern(b.x); }, 400, 2);
        gc_q = std::max(gc_q, res.max_rel_error);
        gc_q_checked += res.checked;
    }
    const double identity = std::max(sc.max_identity_error, std::abs(batch_loss.identity_error()));

    // Byte-identical artifacts from two CLI runs with the same seed.
    const fs::path root = fs::temp_directory_path() / "ded_acceptance_determinism";
    bool same = cli_chain(root / "a") && cli_chain(root / "b");
    std::size_t compared = 0;
    std::string differing;
    if (same) {
        for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
            if (!e.is_regular_file()) continue;
            const auto rel = fs::relative(e.path(), root / "a");
            ++compared;
            if (!fs::exists(root / "b" / rel) || slurp(e.path()) != slurp(root / "b" / rel)) {
                same = false;
                differing += " " + rel.string();
            }
        }
    }
    fs::remove_all(root);

    const bool pass = gc_sc.max_rel_error < 1e-4 && gc_q < 1e-4 && identity < 1e-9 && same && compared > 0;
    return {pass, "gradcheck SC " + fmt(gc_sc.max_rel_error, 3) + " (" + std::to_string(gc_sc.checked) +
                      " params), Q " + fmt(gc_q, 3) + " (" + std::to_string(gc_q_checked) +
                      " params); NLL identity " + fmt(identity, 3) + "; " + std::to_string(compared) +
                      " artifacts " + (same ? "byte-identical" : "DIFFER:" + differing)};
}

// C7: the flagging and filtering worked examples.
Outcome engine_examples() {
    std::vector<std::string> failures;
    auto expect_flag = [&](const std::string& what, Flag got, Flag want) {
        if (got != want) failures.push_back(what + " gave " + std::string(to_string(got)));
    };
    auto med = [](double d, double r) {
        return flag_state(std::vector<double>{d - 0.1, d, d + 0.05}, std::vector<double>{r - 0.1, r, r + 0.05}).level;
    };
    expect_flag("medians (-0.30, 0.70)", med(-0.30, 0.70), Flag::red);
    expect_flag("medians (-0.20, 0.80)", med(-0.20, 0.80), Flag::yellow);
    expect_flag("medians (-0.30, 0.90)", med(-0.30, 0.90), Flag::none);
    expect_flag("treatment (-1, 0)", flag_treatment(-1.0, 0.0).level, Flag::red);
    expect_flag("treatment (0, 1)", flag_treatment(0.0, 1.0).level, Flag::none);
    expect_flag("treatment (-0.18, 0.82)", flag_treatment(-0.18, 0.82).level, Flag::yellow);

    auto expect_row = [&](const std::string& what, const std::vector<double>& pi, const std::vector<double>& qd,
                          const std::vector<double>& want) {
        const auto got = secure_policy(pi, qd);
        for (std::size_t i = 0; i < want.size(); ++i)
            if (std::abs(got[i] - want[i]) > 1e-12) {
                failures.push_back(what + " entry " + std::to_string(i) + " = " + fmt(got[i], 17));
                return;
            }
    };
    expect_row("qd all zero", {0.2, 0.3, 0.5}, {0, 0, 0}, {0.2, 0.3, 0.5});
    expect_row("qd [-1,0,0]", {0.5, 0.25, 0.25}, {-1, 0, 0}, {0.0, 0.5, 0.5});
    expect_row("qd [-0.9,-0.2,-0.2]", {0.8, 0.1, 0.1}, {-0.9, -0.2, -0.2}, {0.1, 0.45, 0.45});

    const auto g = build_lifegate(default_layout());
    const auto sol = solve_exact(g.mdp);
    const auto uniform = uniform_policy(g.mdp.n_states(), kGridActions);
    const auto secured = certify_security(g.mdp, secure_policy_matrix(g.mdp, uniform, sol.q_d).policy, sol.oracle);
    if (!secured.ok()) failures.push_back("secured uniform on Life-Gate has violations");
    if (certify_security(g.mdp, uniform, sol.oracle).ok()) failures.push_back("unfiltered uniform not flagged");

    std::string detail = "12 examples";
    for (const auto& f : failures) detail += "; " + f;
    return {failures.empty(), detail};
}

struct Check {
    const char* label;
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv) {
    const std::vector<Check> all{
        {"Life-Gate exact solve", lifegate_exact},
        {"theorem suite on 100 random MDPs", theorem_suite},
        {"security of the secured policy along tabular training", security_along_training},
        {"offline tabular convergence", tabular_convergence},
        {"learned-model flag separation", learned_separation},
        {"numerical hygiene", numerical_hygiene},
        {"flagging unit contract", engine_examples},
    };
    std::vector<std::size_t> selected;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--criterion" && i + 1 < argc) {
            const auto n = std::stoul(argv[++i]);
            if (n < 1 || n > all.size()) {
                std::cerr << "criterion must be 1.." << all.size() << '\n';
                return 2;
            }
            selected.push_back(n - 1);
        } else {
            std::cerr << "usage: acceptance [--criterion N]...\n";
            return 2;
        }
    }
    if (selected.empty())
        for (std::size_t i = 0; i < all.size(); ++i) selected.push_back(i);

    bool ok = true;
    for (std::size_t i : selected) {
        Outcome o;
        try {
            o = all[i].run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw ") + e.what()};
        }
        ok = ok && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " C" << i + 1 << " " << all[i].label << ": " << o.detail
                  << std::endl;
    }
    return ok ? 0 : 1;
}
