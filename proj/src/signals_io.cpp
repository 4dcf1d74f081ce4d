#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "impulse/signals.hpp"
#include "internal/json_read.hpp"

namespace impulse {

namespace {

using jsonread::json;

std::vector<Vec> read_rows(const json& j, const std::string& path) {
  jsonread::array(j, path);
  std::vector<Vec> out;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const auto row = jsonread::reals(j[k], jsonread::child(path, k));
    out.push_back(Eigen::Map<const Vec>(row.data(), static_cast<Eigen::Index>(row.size())));
  }
  return out;
}

std::vector<double> read_breakpoints(const json& doc, std::optional<double> T) {
  auto t = jsonread::reals(jsonread::field(doc, "breakpoints", ""), "/breakpoints");
  if (T && !t.empty()) {
    const double tol = 1e-12 * std::max(1.0, std::abs(*T));
    if (std::abs(t.back() - *T) <= tol) t.back() = *T;
    if (t.back() != *T) throw InputError("/breakpoints", "last breakpoint must equal the horizon T");
  }
  return t;
}

ControlSignal control_from(const json& doc, std::optional<double> T) {
  if (!doc.is_object()) throw InputError("/", "signal document must be an object");
  const std::string kind = jsonread::text(jsonread::field(doc, "kind", ""), "/kind");
  SignalKind k;
  if (kind == "pwc") {
    k = SignalKind::PiecewiseConstant;
  } else if (kind == "pwl") {
    k = SignalKind::PiecewiseLinear;
  } else {
    throw InputError("/kind", "kind must be \"pwc\" or \"pwl\"");
  }
  auto t = read_breakpoints(doc, T);
  auto left = read_rows(jsonread::field(doc, "left", ""), "/left");
  auto right = read_rows(jsonread::field(doc, "right", ""), "/right");
  std::vector<Side> sides;
  if (auto it = doc.find("pointwise_side"); it != doc.end()) {
    jsonread::array(*it, "/pointwise_side");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string p = jsonread::child("/pointwise_side", i);
      const std::string v = jsonread::text((*it)[i], p);
      if (v == "left") {
        sides.push_back(Side::Left);
      } else if (v == "right") {
        sides.push_back(Side::Right);
      } else {
        throw InputError(p, "side must be \"left\" or \"right\"");
      }
    }
  }
  return ControlSignal::make(k, std::move(t), std::move(left), std::move(right), std::move(sides));
}

OrdinarySignal ordinary_from(const json& doc, double T) {
  if (!doc.is_object()) throw InputError("/", "signal document must be an object");
  if (doc.contains("values")) {
    std::vector<double> t = doc.contains("breakpoints") ? read_breakpoints(doc, T) : std::vector<double>{0.0, T};
    return OrdinarySignal::make(std::move(t), read_rows(doc["values"], "/values"));
  }
  // Control-style document: the right values of every piece.
  const ControlSignal c = control_from(doc, T);
  if (c.kind() != SignalKind::PiecewiseConstant) throw InputError("/kind", "ordinary controls must be piecewise constant");
  std::vector<Vec> values;
  for (std::size_t k = 0; k + 1 < c.size(); ++k) values.push_back(c.right(k));
  return OrdinarySignal::make(c.breakpoints(), std::move(values));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json row_json(const Vec& v) {
  json r = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) r.push_back(v[i]);
  return r;
}

}  // namespace

ControlSignal parse_control(std::string_view json_text) {
  return control_from(jsonread::parse_document(json_text), std::nullopt);
}

OrdinarySignal parse_ordinary(std::string_view json_text, double T) {
  return ordinary_from(jsonread::parse_document(json_text), T);
}

std::string control_to_json(const ControlSignal& u) {
  json doc;
  doc["kind"] = u.kind() == SignalKind::PiecewiseConstant ? "pwc" : "pwl";
  doc["breakpoints"] = u.breakpoints();
  json left = json::array(), right = json::array(), sides = json::array();
  for (std::size_t k = 0; k < u.size(); ++k) {
    left.push_back(row_json(u.left(k)));
    right.push_back(row_json(u.right(k)));
    sides.push_back(side_name(u.pointwise_side(k)));
  }
  doc["left"] = left;
  doc["right"] = right;
  doc["pointwise_side"] = sides;
  return doc.dump(2) + "\n";
}

ControlSignal load_control_file(const std::string& path, const SystemSpec& s) {
  ControlSignal u;
  try {
    u = control_from(jsonread::parse_document(slurp(path)), s.T());
  } catch (const InputError& e) {
    throw InputError(path + ":" + e.path(), e.detail());
  }
  validate_control(u, s, path);
  return u;
}

OrdinarySignal load_ordinary_file(const std::string& path, const SystemSpec& s) {
  OrdinarySignal a;
  try {
    a = ordinary_from(jsonread::parse_document(slurp(path)), s.T());
  } catch (const InputError& e) {
    throw InputError(path + ":" + e.path(), e.detail());
  }
  validate_ordinary(a, s, path);
  return a;
}

}  // namespace impulse
