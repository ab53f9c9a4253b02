#pragma once

#include "ded/ded_engine.hpp"
#include "ded/errors.hpp"
#include "ded/format.hpp"
#include "ded/mdp.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace ded {

/// Per-step values of one trajectory, as produced by the flag stage.
struct FlaggedStep {
    std::vector<double> qd;
    std::vector<double> qr;
    std::size_t action = 0;
    std::vector<double> obs;
};

struct FlaggedTrajectory {
    std::string id;
    TerminalKind outcome = TerminalKind::none;
    std::vector<FlaggedStep> steps;
};

enum class Criterion { D, R, Full };
enum class Basis { V, Q };

inline std::string_view to_string(Criterion c) {
    return c == Criterion::D ? "D" : (c == Criterion::R ? "R" : "Full");
}
inline std::string_view to_string(Basis b) { return b == Basis::V ? "V" : "Q"; }

/// Flag of one step. V basis uses the medians over actions, Q basis the
/// administered action. D and R criteria test one side only; Full requires both.
inline Flag step_flag(const FlaggedStep& st, Criterion c, Basis b, const Thresholds& th) {
    if (st.action >= st.qd.size() || st.qd.size() != st.qr.size())
        throw ShapeMismatch("flagged step has inconsistent value rows");
    const double qd = b == Basis::V ? median(st.qd) : st.qd[st.action];
    const double qr = b == Basis::V ? median(st.qr) : st.qr[st.action];
    auto level = [&](bool red, bool yellow) {
        return red ? Flag::red : (yellow ? Flag::yellow : Flag::none);
    };
    switch (c) {
    case Criterion::D: return level(qd < th.red.d, qd < th.yellow.d);
    case Criterion::R: return level(qr < th.red.r, qr < th.yellow.r);
    default: return flag_level(qd, qr, th);
    }
}

inline std::vector<Flag> trajectory_flags(const FlaggedTrajectory& t, Criterion c, Basis b,
                                          const Thresholds& th) {
    std::vector<Flag> out;
    out.reserve(t.steps.size());
    for (const auto& st : t.steps) out.push_back(step_flag(st, c, b, th));
    return out;
}

// ---------------------------------------------------------------------------
// Flag emergence

struct EmergenceRow {
    int bucket_step = 0;  // -1 is the last recorded step
    int bucket_hours = 0;
    TerminalKind outcome = TerminalKind::none;
    Criterion criterion = Criterion::Full;
    Basis basis = Basis::V;
    std::size_t n = 0;
    double pct_none = 0.0, pct_yellow = 0.0, pct_red = 0.0;
};

/// Percentage of trajectories at each flag level, per step-before-terminal
/// bucket -horizon..-1, outcome group, criterion and basis. A bucket only
/// counts trajectories long enough to reach it; empty groups are omitted.
inline std::vector<EmergenceRow> flag_emergence(const std::vector<FlaggedTrajectory>& cohort,
                                                const Thresholds& th, std::size_t horizon = 18,
                                                int hours_per_step = 4) {
    std::vector<EmergenceRow> rows;
    for (auto outcome : {TerminalKind::negative, TerminalKind::positive}) {
        for (auto c : {Criterion::D, Criterion::R, Criterion::Full}) {
            for (auto b : {Basis::V, Basis::Q}) {
                std::vector<std::vector<Flag>> flags;
                for (const auto& t : cohort)
                    if (t.outcome == outcome) flags.push_back(trajectory_flags(t, c, b, th));
                for (std::size_t k = horizon; k >= 1; --k) {
                    std::size_t n = 0, yellow = 0, red = 0;
                    for (const auto& f : flags) {
                        if (f.size() < k) continue;
                        ++n;
                        const Flag level = f[f.size() - k];
                        yellow += level == Flag::yellow;
                        red += level == Flag::red;
                    }
                    if (n == 0) continue;
                    EmergenceRow r;
                    r.bucket_step = -static_cast<int>(k);
                    r.bucket_hours = r.bucket_step * hours_per_step;
                    r.outcome = outcome;
                    r.criterion = c;
                    r.basis = b;
                    r.n = n;
                    r.pct_red = 100.0 * static_cast<double>(red) / static_cast<double>(n);
                    r.pct_yellow = 100.0 * static_cast<double>(yellow) / static_cast<double>(n);
                    r.pct_none = 100.0 * static_cast<double>(n - red - yellow) / static_cast<double>(n);
                    rows.push_back(r);
                }
            }
        }
    }
    return rows;
}

inline std::string emergence_csv(const std::vector<EmergenceRow>& rows) {
    std::string out = "bucket_step,bucket_hours,outcome,criterion,basis,n,pct_none,pct_yellow,pct_red\n";
    for (const auto& r : rows) {
        out += std::to_string(r.bucket_step) + ',' + std::to_string(r.bucket_hours) + ',' +
               std::string(to_string(r.outcome)) + ',' + std::string(to_string(r.criterion)) + ',' +
               std::string(to_string(r.basis)) + ',' + std::to_string(r.n) + ',' +
               format_double(r.pct_none) + ',' + format_double(r.pct_yellow) + ',' +
               format_double(r.pct_red) + '\n';
    }
    return out;
}

/// Red percentage for one (outcome, criterion, basis), ordered from the
/// earliest bucket to the last step.
inline std::vector<double> red_series(const std::vector<EmergenceRow>& rows, TerminalKind outcome,
                                      Criterion c, Basis b) {
    std::vector<std::pair<int, double>> pts;
    for (const auto& r : rows)
        if (r.outcome == outcome && r.criterion == c && r.basis == b) pts.emplace_back(r.bucket_step, r.pct_red);
    std::sort(pts.begin(), pts.end());
    std::vector<double> out;
    for (const auto& p : pts) out.push_back(p.second);
    return out;
}

// ---------------------------------------------------------------------------
// Flag duration

struct DurationRunRow {
    TerminalKind outcome;
    std::size_t run_length; // longest consecutive red run of a trajectory
    std::size_t count;
    double pct;
};

struct DurationEndRow {
    TerminalKind outcome;
    std::size_t k;
    std::size_t n; // trajectories with at least k steps
    double pct_end_red;       // final k steps all red
    double pct_end_yellow;    // final k steps all at yellow or above
    double pct_start_none;    // first k steps all unflagged
};

struct DurationReport {
    std::vector<DurationRunRow> runs;
    std::vector<DurationEndRow> ends;
};

inline std::size_t longest_red_run(const std::vector<Flag>& f) {
    std::size_t best = 0, cur = 0;
    for (Flag x : f) {
        cur = x == Flag::red ? cur + 1 : 0;
        best = std::max(best, cur);
    }
    return best;
}

inline DurationReport flag_duration(const std::vector<FlaggedTrajectory>& cohort,
                                    const Thresholds& th, std::size_t max_k = 6,
                                    Criterion c = Criterion::Full, Basis b = Basis::V) {
    DurationReport rep;
    for (auto outcome : {TerminalKind::negative, TerminalKind::positive}) {
        std::vector<std::vector<Flag>> flags;
        for (const auto& t : cohort)
            if (t.outcome == outcome) flags.push_back(trajectory_flags(t, c, b, th));
        if (flags.empty()) continue;
        std::map<std::size_t, std::size_t> hist;
        for (const auto& f : flags) ++hist[longest_red_run(f)];
        for (const auto& [len, count] : hist)
            rep.runs.push_back({outcome, len, count,
                                100.0 * static_cast<double>(count) / static_cast<double>(flags.size())});
        for (std::size_t k = 1; k <= max_k; ++k) {
            std::size_t n = 0, end_red = 0, end_yellow = 0, start_none = 0;
            for (const auto& f : flags) {
                if (f.size() < k) continue;
                ++n;
                bool all_red = true, all_flagged = true, all_none = true;
                for (std::size_t i = 0; i < k; ++i) {
                    const Flag last = f[f.size() - 1 - i];
                    all_red = all_red && last == Flag::red;
                    all_flagged = all_flagged && last != Flag::none;
                    all_none = all_none && f[i] == Flag::none;
                }
                end_red += all_red;
                end_yellow += all_flagged;
                start_none += all_none;
            }
            if (n == 0) continue;
            const double dn = static_cast<double>(n);
            rep.ends.push_back({outcome, k, n, 100.0 * static_cast<double>(end_red) / dn,
                                100.0 * static_cast<double>(end_yellow) / dn,
                                100.0 * static_cast<double>(start_none) / dn});
        }
    }
    return rep;
}

inline std::string duration_runs_csv(const DurationReport& r) {
    std::string out = "outcome,run_length,count,pct\n";
    for (const auto& x : r.runs)
        out += std::string(to_string(x.outcome)) + ',' + std::to_string(x.run_length) + ',' +
               std::to_string(x.count) + ',' + format_double(x.pct) + '\n';
    return out;
}

inline std::string duration_ends_csv(const DurationReport& r) {
    std::string out = "outcome,k,n,pct_end_red,pct_end_yellow,pct_start_none\n";
    for (const auto& x : r.ends)
        out += std::string(to_string(x.outcome)) + ',' + std::to_string(x.k) + ',' +
               std::to_string(x.n) + ',' + format_double(x.pct_end_red) + ',' +
               format_double(x.pct_end_yellow) + ',' + format_double(x.pct_start_none) + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Value gap

struct ValueGap {
    double max = 0.0;
    double kth_best = 0.0;
    double administered = 0.0;
};

/// Largest value, the ceil(k_frac * n)-th largest, and the administered value.
inline ValueGap value_gap(std::span<const double> row, std::size_t administered,
                          double k_frac = 0.2) {
    if (row.empty()) throw EmptyRow("value_gap on an empty row");
    if (administered >= row.size())
        throw BadIndex("administered action " + std::to_string(administered) + " out of range");
    if (!(k_frac > 0.0 && k_frac <= 1.0)) throw ConfigError("k_frac must lie in (0,1]");
    std::vector<double> sorted(row.begin(), row.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    auto k = static_cast<std::size_t>(std::ceil(k_frac * static_cast<double>(row.size()) - 1e-12));
    k = std::clamp<std::size_t>(k, 1, row.size());
    return {sorted.front(), sorted[k - 1], row[administered]};
}

// ---------------------------------------------------------------------------
// First-flag alignment

struct AlignmentWindow {
    std::size_t pre_steps = 6;
    std::size_t post_steps = 4;
};

struct AlignedRow {
    TerminalKind outcome;
    std::string series;
    int offset;
    std::size_t n;
    double mean;
    double sd;
};

struct AlignmentReport {
    std::vector<AlignedRow> rows;
    std::size_t eligible = 0;
    std::size_t flagged = 0;
    std::size_t excluded = 0; // flagged but too early or too late
};

/// First step whose flag reaches `level`, or -1.
inline long first_flag(const std::vector<Flag>& f, Flag level) {
    for (std::size_t i = 0; i < f.size(); ++i)
        if (f[i] >= level) return static_cast<long>(i);
    return -1;
}

inline bool alignment_eligible(long first, std::size_t length, const AlignmentWindow& w) {
    return first >= 0 && static_cast<std::size_t>(first) >= w.pre_steps &&
           length - 1 - static_cast<std::size_t>(first) >= w.post_steps;
}

/// Series tracked around the first flag: medians, administered and best
/// values, the k-th best (20%) values, and every observation coordinate.
inline std::vector<std::pair<std::string, double>> alignment_series(const FlaggedStep& st) {
    const auto gd = value_gap(st.qd, st.action);
    const auto gr = value_gap(st.qr, st.action);
    std::vector<std::pair<std::string, double>> out{
        {"qd_median", median(st.qd)}, {"qr_median", median(st.qr)},
        {"qd_admin", gd.administered}, {"qr_admin", gr.administered},
        {"vd_max", gd.max},           {"vr_max", gr.max},
        {"qd_kth_best", gd.kth_best}, {"qr_kth_best", gr.kth_best}};
    for (std::size_t i = 0; i < st.obs.size(); ++i)
        out.emplace_back("obs_" + std::to_string(i), st.obs[i]);
    return out;
}

inline AlignmentReport first_flag_alignment(const std::vector<FlaggedTrajectory>& cohort,
                                            const Thresholds& th, const AlignmentWindow& w = {},
                                            Flag level = Flag::red, Criterion c = Criterion::Full,
                                            Basis b = Basis::V) {
    AlignmentReport rep;
    // (outcome, series, offset) -> values
    std::map<std::tuple<int, std::string, int>, std::vector<double>> acc;
    std::vector<std::string> series_order;
    for (const auto& t : cohort) {
        const auto f = trajectory_flags(t, c, b, th);
        const long first = first_flag(f, level);
        if (first < 0) continue;
        ++rep.flagged;
        if (!alignment_eligible(first, t.steps.size(), w)) {
            ++rep.excluded;
            continue;
        }
        ++rep.eligible;
        for (long off = -static_cast<long>(w.pre_steps); off <= static_cast<long>(w.post_steps); ++off) {
            const auto& st = t.steps[static_cast<std::size_t>(first + off)];
            for (auto& [name, v] : alignment_series(st)) {
                if (std::find(series_order.begin(), series_order.end(), name) == series_order.end())
                    series_order.push_back(name);
                acc[{static_cast<int>(t.outcome), name, static_cast<int>(off)}].push_back(v);
            }
        }
    }
    if (rep.eligible == 0)
        throw NoEligibleTrajectories("no trajectory has a first flag with " +
                                     std::to_string(w.pre_steps) + " steps before and " +
                                     std::to_string(w.post_steps) + " after");
    for (auto outcome : {TerminalKind::negative, TerminalKind::positive}) {
        for (const auto& name : series_order) {
            for (long off = -static_cast<long>(w.pre_steps); off <= static_cast<long>(w.post_steps); ++off) {
                const auto it = acc.find({static_cast<int>(outcome), name, static_cast<int>(off)});
                if (it == acc.end()) continue;
                const auto& v = it->second;
                double mean = 0.0;
                for (double x : v) mean += x;
                mean /= static_cast<double>(v.size());
                double ss = 0.0;
                for (double x : v) ss += (x - mean) * (x - mean);
                const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
                rep.rows.push_back({outcome, name, static_cast<int>(off), v.size(), mean, sd});
            }
        }
    }
    return rep;
}

inline std::string alignment_csv(const AlignmentReport& r) {
    std::string out = "outcome,series,offset,n,mean,sd\n";
    for (const auto& x : r.rows)
        out += std::string(to_string(x.outcome)) + ',' + x.series + ',' + std::to_string(x.offset) +
               ',' + std::to_string(x.n) + ',' + format_double(x.mean) + ',' + format_double(x.sd) + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Value histograms, for choosing thresholds by inspection

struct HistogramRow {
    TerminalKind outcome;
    DualKind kind;
    Basis basis;
    double lo, hi;
    std::size_t count;
};

/// Counts of per-step values in `bins` equal-width bins over the kind's range.
/// The top bin is closed on the right.
inline std::vector<HistogramRow> value_histogram(const std::vector<FlaggedTrajectory>& cohort,
                                                 std::size_t bins = 20) {
    if (bins == 0) throw ConfigError("histogram needs at least one bin");
    std::vector<HistogramRow> rows;
    for (auto outcome : {TerminalKind::negative, TerminalKind::positive}) {
        for (auto kind : {DualKind::D, DualKind::R}) {
            for (auto b : {Basis::V, Basis::Q}) {
                const auto r = value_range(kind);
                std::vector<std::size_t> counts(bins, 0);
                for (const auto& t : cohort) {
                    if (t.outcome != outcome) continue;
                    for (const auto& st : t.steps) {
                        const auto& row = kind == DualKind::D ? st.qd : st.qr;
                        const double v = b == Basis::V ? median(row) : row.at(st.action);
                        auto k = static_cast<std::size_t>((v - r.lo) / (r.hi - r.lo) * static_cast<double>(bins));
                        ++counts[std::min(k, bins - 1)];
                    }
                }
                const double w = (r.hi - r.lo) / static_cast<double>(bins);
                for (std::size_t k = 0; k < bins; ++k)
                    rows.push_back({outcome, kind, b, r.lo + w * static_cast<double>(k),
                                    r.lo + w * static_cast<double>(k + 1), counts[k]});
            }
        }
    }
    return rows;
}

inline std::string histogram_csv(const std::vector<HistogramRow>& rows) {
    std::string out = "outcome,kind,basis,bin_lo,bin_hi,count\n";
    for (const auto& x : rows)
        out += std::string(to_string(x.outcome)) + ',' + std::string(to_string(x.kind)) + ',' +
               std::string(to_string(x.basis)) + ',' + format_double(x.lo) + ',' + format_double(x.hi) +
               ',' + std::to_string(x.count) + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Flag report CSV and flagged-cohort IO

inline std::string flag_report_csv(const std::vector<FlagRecord>& records) {
    std::string out = "traj_id,step,flag_state,flag_treatment,qd_median,qr_median,qd_admin,qr_admin\n";
    for (const auto& r : records)
        out += r.traj_id + ',' + std::to_string(r.step) + ',' + std::string(to_string(r.flag_state)) +
               ',' + std::string(to_string(r.flag_treatment)) + ',' + format_double(r.qd_median) +
               ',' + format_double(r.qr_median) + ',' + format_double(r.qd_admin) + ',' +
               format_double(r.qr_admin) + '\n';
    return out;
}

inline std::vector<FlagRecord> flag_records(const std::vector<FlaggedTrajectory>& cohort,
                                            const Thresholds& th) {
    std::vector<FlagRecord> out;
    for (const auto& t : cohort)
        for (std::size_t k = 0; k < t.steps.size(); ++k)
            out.push_back(make_flag_record(t.id, k, t.steps[k].qd, t.steps[k].qr, t.steps[k].action, th));
    return out;
}

inline nlohmann::json to_json(const FlaggedTrajectory& t) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& st : t.steps) {
        nlohmann::json j{{"qd", st.qd}, {"qr", st.qr}, {"action", st.action}};
        if (!st.obs.empty()) j["obs"] = st.obs;
        steps.push_back(std::move(j));
    }
    return {{"id", t.id}, {"outcome", std::string(to_string(t.outcome))}, {"steps", std::move(steps)}};
}

inline void save_flagged(const std::filesystem::path& path, const std::vector<FlaggedTrajectory>& cohort) {
    std::string text;
    for (const auto& t : cohort) text += to_json(t).dump() + '\n';
    write_text_file(path, text);
}

inline std::vector<FlaggedTrajectory> load_flagged(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<FlaggedTrajectory> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            FlaggedTrajectory t;
            t.id = j.at("id").get<std::string>();
            t.outcome = terminal_kind_from_string(j.at("outcome").get<std::string>());
            for (const auto& js : j.at("steps")) {
                FlaggedStep st;
                st.qd = js.at("qd").get<std::vector<double>>();
                st.qr = js.at("qr").get<std::vector<double>>();
                st.action = js.at("action").get<std::size_t>();
                if (js.contains("obs")) st.obs = js.at("obs").get<std::vector<double>>();
                t.steps.push_back(std::move(st));
            }
            out.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        } catch (const InvalidMDP& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return out;
}

} // namespace ded
