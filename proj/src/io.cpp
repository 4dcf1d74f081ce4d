#include "impulse/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "impulse/error.hpp"

namespace impulse {

namespace {

std::string cell_text(const Cell& c) {
  if (const double* d = std::get_if<double>(&c)) return format_real(*d);
  if (const long long* i = std::get_if<long long>(&c)) return std::to_string(*i);
  return std::get<std::string>(c);
}

std::string json_string(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') {
      out += '\\';
      out += ch;
    } else if (static_cast<unsigned char>(ch) < 0x20) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\u%04x", ch);
      out += buf;
    } else {
      out += ch;
    }
  }
  return out + "\"";
}

std::vector<std::string> numbered(const std::string& prefix, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

void append(std::vector<Cell>& row, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) row.emplace_back(v[i]);
}

void append_nan(std::vector<Cell>& row, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) row.emplace_back(std::nan(""));
}

}  // namespace

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t c = 0; c < t.columns.size(); ++c) out += (c ? "," : "") + t.columns[c];
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      out += cell_text(row[c]);
    }
    out += '\n';
  }
  return out;
}

std::string to_json(const Table& t) {
  std::string out = "[";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out += r ? ",\n  {" : "\n  {";
    const auto& row = t.rows[r];
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ", ";
      out += json_string(t.columns[c]) + ": ";
      if (const auto* s = std::get_if<std::string>(&row[c])) {
        out += json_string(*s);
      } else if (const auto* d = std::get_if<double>(&row[c]); d && !std::isfinite(*d)) {
        out += "null";
      } else {
        out += cell_text(row[c]);
      }
    }
    out += "}";
  }
  out += t.rows.empty() ? "]\n" : "\n]\n";
  return out;
}

std::string render(const Table& t, TableFormat f) { return f == TableFormat::Csv ? to_csv(t) : to_json(t); }

Table trajectory_table(const SystemSpec& s, const Trajectory& traj) {
  Table t;
  t.columns = {"t", "side"};
  const std::pair<const char*, std::size_t> groups[] = {{"x", s.n()}, {"u", s.m()}, {"xi", s.n()}, {"a", s.l()}};
  for (const auto& [prefix, count] : groups) {
    for (auto& name : numbered(prefix, count)) t.columns.push_back(name);
  }
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const TrajectoryNode& node = traj.nodes[k];
    const Vec& a = traj.cells.empty() ? Vec() : traj.cells[std::min(k, traj.cells.size() - 1)].a;
    for (std::size_t side = 0; side < (node.jump ? 2u : 1u); ++side) {
      const std::size_t i = node.jump ? side : TrajectoryNode::index(Side::Pointwise, node.pointwise);
      std::vector<Cell> row{node.t, std::string(node.jump ? (side == 0 ? "left" : "right") : "point")};
      append(row, node.x[i]);
      append(row, node.u[i]);
      append(row, node.xi[i]);
      if (a.size()) {
        append(row, a);
      } else {
        append_nan(row, s.l());
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

Table adjoint_table(const SystemSpec& s, const AdjointArc& arc) {
  Table t;
  t.columns = {"t", "side"};
  for (auto& c : numbered("pi_x", s.n())) t.columns.push_back(c);
  for (auto& c : numbered("pi_z", s.m())) t.columns.push_back(c);
  for (auto& c : numbered("p_x", s.n())) t.columns.push_back(c);
  for (auto& c : numbered("p_z", s.m())) t.columns.push_back(c);
  for (const AdjointNode& node : arc.nodes) {
    for (std::size_t side = 0; side < (node.jump ? 2u : 1u); ++side) {
      const std::size_t i = node.jump ? side : TrajectoryNode::index(Side::Pointwise, node.pointwise);
      std::vector<Cell> row{node.t, std::string(node.jump ? (side == 0 ? "left" : "right") : "point")};
      append(row, node.pi);
      if (arc.pulled_back) {
        append(row, node.p[i]);
      } else {
        append_nan(row, s.dim());
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError(path, "cannot open file for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  f.close();
  if (!f) throw InputError(path, "write failed");
}

}  // namespace impulse
