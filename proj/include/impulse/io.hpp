#pragma once

// Tabular output. Every table is written either as CSV (header line, LF line
// endings) or as a JSON array of row objects carrying the same text for every
// number. Reals use 17 significant digits.

#include <string>
#include <variant>
#include <vector>

#include "impulse/adjoint.hpp"
#include "impulse/propagate.hpp"

namespace impulse {

enum class TableFormat { Csv, Json };

using Cell = std::variant<double, long long, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
};

std::string format_real(double v);

std::string to_csv(const Table& t);
std::string to_json(const Table& t);
std::string render(const Table& t, TableFormat f);

/// Columns t, side, x1..xn, u1..um, xi1..xin, a1..al. Jump nodes emit a "left"
/// and a "right" row; other nodes one "point" row. `a` is the value on the
/// cell to the right of the node (the last cell at T).
Table trajectory_table(const SystemSpec& s, const Trajectory& traj);

/// Columns t, side, pi_x1..pi_xn, pi_z1..pi_zm, p_x1..p_xn, p_z1..p_zm with the
/// same row convention. p columns are empty (NaN) before the pull-back.
Table adjoint_table(const SystemSpec& s, const AdjointArc& arc);

/// Writes `content` to `path`; throws InputError on failure.
void write_text_file(const std::string& path, const std::string& content);

}  // namespace impulse
