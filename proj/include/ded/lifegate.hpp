#pragma once

#include "ded/errors.hpp"
#include "ded/format.hpp"
#include "ded/mdp.hpp"

#include <array>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ded {

enum class CellKind : std::uint8_t { black, yellow, wall, life_gate, death_gate };

/// Reconstructed default map: life gates along the top, death gates down the
/// right edge, a yellow dead-end corridor in front of the lower death gates.
inline constexpr std::string_view kDefaultLifeGateLayout = "############\n"
                                                           "#LLLLL....L#\n"
                                                           "#.........D#\n"
                                                           "#.........D#\n"
                                                           "#.........D#\n"
                                                           "#.......yyD#\n"
                                                           "#.......yyD#\n"
                                                           "#.......yyD#\n"
                                                           "#.......yyD#\n"
                                                           "#.......yyD#\n"
                                                           "############\n";

/// Actions in index order.
enum class GridAction : std::uint8_t { up = 0, down = 1, left = 2, right = 3, stay = 4 };
inline constexpr std::size_t kGridActions = 5;

struct LifeGateLayout {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<CellKind> cells; // row-major, row 0 at the top
    double death_drift = 0.4;
    double deadend_drift_right = 0.7;

    [[nodiscard]] CellKind at(std::size_t row, std::size_t col) const {
        return cells[row * width + col];
    }

    void validate() const {
        if (width == 0 || height == 0 || cells.size() != width * height)
            throw InvalidLayout("layout dimensions do not match its cell list");
        if (!(death_drift >= 0.0 && death_drift <= 1.0))
            throw InvalidLayout("death_drift must lie in [0,1]");
        if (!(deadend_drift_right >= 0.0 && deadend_drift_right <= 1.0))
            throw InvalidLayout("deadend_drift_right must lie in [0,1]");
        bool life = false, death = false;
        for (auto c : cells) {
            life = life || c == CellKind::life_gate;
            death = death || c == CellKind::death_gate;
        }
        if (!life) throw InvalidLayout("layout has no life gate");
        if (!death) throw InvalidLayout("layout has no death gate");
    }
};

inline char cell_char(CellKind k) {
    switch (k) {
    case CellKind::black: return '.';
    case CellKind::yellow: return 'y';
    case CellKind::wall: return '#';
    case CellKind::life_gate: return 'L';
    default: return 'D';
    }
}

inline LifeGateLayout parse_layout(std::string_view text) {
    LifeGateLayout layout;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (layout.width == 0) layout.width = line.size();
        if (line.size() != layout.width)
            throw InvalidLayout("row " + std::to_string(line_no) + " has width " +
                                std::to_string(line.size()) + ", expected " +
                                std::to_string(layout.width));
        for (char ch : line) {
            switch (ch) {
            case '.': layout.cells.push_back(CellKind::black); break;
            case 'y': layout.cells.push_back(CellKind::yellow); break;
            case '#': layout.cells.push_back(CellKind::wall); break;
            case 'L': layout.cells.push_back(CellKind::life_gate); break;
            case 'D': layout.cells.push_back(CellKind::death_gate); break;
            default:
                throw InvalidLayout("unknown cell character '" + std::string(1, ch) + "' on row " +
                                    std::to_string(line_no));
            }
        }
        ++layout.height;
    }
    layout.validate();
    return layout;
}

inline LifeGateLayout load_layout(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open layout file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_layout(ss.str());
}

inline LifeGateLayout default_layout() { return parse_layout(kDefaultLifeGateLayout); }

inline std::string layout_to_text(const LifeGateLayout& layout) {
    std::string out;
    for (std::size_t r = 0; r < layout.height; ++r) {
        for (std::size_t c = 0; c < layout.width; ++c) out.push_back(cell_char(layout.at(r, c)));
        out.push_back('\n');
    }
    return out;
}

struct LifeGate {
    LifeGateLayout layout;
    TabularMDP mdp;
    /// State index per cell (row-major), empty for walls.
    std::vector<std::optional<std::size_t>> state_of_cell;
    /// (row, col) per state.
    std::vector<std::pair<std::size_t, std::size_t>> cell_of_state;
    std::vector<std::size_t> black_states;
    std::vector<std::size_t> yellow_states;

    [[nodiscard]] std::size_t state_at(std::size_t row, std::size_t col) const {
        const auto s = state_of_cell.at(row * layout.width + col);
        if (!s) throw BadIndex("cell (" + std::to_string(row) + "," + std::to_string(col) +
                               ") is a wall");
        return *s;
    }
    [[nodiscard]] CellKind kind_of_state(std::size_t s) const {
        const auto [r, c] = cell_of_state.at(s);
        return layout.at(r, c);
    }
};

/// One state per non-wall cell in row-major order. Gates are absorbing
/// terminals. Black cells drift right with death_drift, otherwise take the
/// chosen cardinal move; yellow cells ignore the action and move right with
/// deadend_drift_right, else stay. Moves into walls or off the grid stay put.
inline LifeGate build_lifegate(const LifeGateLayout& layout) {
    layout.validate();
    LifeGate g;
    g.layout = layout;
    g.state_of_cell.assign(layout.cells.size(), std::nullopt);
    for (std::size_t r = 0; r < layout.height; ++r) {
        for (std::size_t c = 0; c < layout.width; ++c) {
            const CellKind k = layout.at(r, c);
            if (k == CellKind::wall) continue;
            const std::size_t s = g.cell_of_state.size();
            g.state_of_cell[r * layout.width + c] = s;
            g.cell_of_state.emplace_back(r, c);
            if (k == CellKind::black) g.black_states.push_back(s);
            if (k == CellKind::yellow) g.yellow_states.push_back(s);
        }
    }
    const std::size_t S = g.cell_of_state.size(), A = kGridActions;
    constexpr std::array<std::pair<int, int>, kGridActions> moves{
        {{-1, 0}, {1, 0}, {0, -1}, {0, 1}, {0, 0}}};
    auto target = [&](std::size_t r, std::size_t c, std::pair<int, int> d) {
        const long rr = static_cast<long>(r) + d.first, cc = static_cast<long>(c) + d.second;
        if (rr >= 0 && cc >= 0 && rr < static_cast<long>(layout.height) &&
            cc < static_cast<long>(layout.width)) {
            const auto s = g.state_of_cell[static_cast<std::size_t>(rr) * layout.width +
                                           static_cast<std::size_t>(cc)];
            if (s) return *s;
        }
        return *g.state_of_cell[r * layout.width + c];
    };

    std::vector<double> T(S * A * S, 0.0);
    std::vector<TerminalKind> kinds(S, TerminalKind::none);
    for (std::size_t s = 0; s < S; ++s) {
        const auto [r, c] = g.cell_of_state[s];
        const CellKind k = layout.at(r, c);
        auto p = [&](std::size_t a, std::size_t next) -> double& { return T[(s * A + a) * S + next]; };
        if (k == CellKind::life_gate || k == CellKind::death_gate) {
            kinds[s] = k == CellKind::life_gate ? TerminalKind::positive : TerminalKind::negative;
            for (std::size_t a = 0; a < A; ++a) p(a, s) = 1.0;
            continue;
        }
        const std::size_t right = target(r, c, moves[3]);
        for (std::size_t a = 0; a < A; ++a) {
            if (k == CellKind::yellow) {
                p(a, right) += layout.deadend_drift_right;
                p(a, s) += 1.0 - layout.deadend_drift_right;
            } else {
                p(a, right) += layout.death_drift;
                p(a, target(r, c, moves[a])) += 1.0 - layout.death_drift;
            }
        }
    }
    g.mdp = TabularMDP(S, A, std::move(T), std::move(kinds), 1.0);
    return g;
}

/// Grid-shaped CSV of per-state values: one line per layout row, walls as "#".
inline std::string render_value_grid(const LifeGateLayout& layout,
                                     const std::vector<double>& values) {
    std::size_t n_cells = 0;
    for (auto k : layout.cells) n_cells += k != CellKind::wall;
    if (values.size() != n_cells)
        throw DimensionMismatch("render_value_grid: " + std::to_string(values.size()) +
                                " values for " + std::to_string(n_cells) + " non-wall cells");
    std::string out;
    std::size_t s = 0;
    for (std::size_t r = 0; r < layout.height; ++r) {
        for (std::size_t c = 0; c < layout.width; ++c) {
            if (c) out.push_back(',');
            if (layout.at(r, c) == CellKind::wall) out.push_back('#');
            else out += format_fixed(values[s++], 6);
        }
        out.push_back('\n');
    }
    return out;
}

} // namespace ded
