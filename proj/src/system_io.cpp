#include <fstream>
#include <sstream>

#include "impulse/error.hpp"
#include "impulse/system.hpp"
#include "internal/json_read.hpp"

namespace impulse {

namespace {

std::vector<Interval> read_box(const jsonread::json& j, const std::string& path) {
  jsonread::array(j, path);
  std::vector<Interval> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = jsonread::child(path, i);
    const auto pair = jsonread::reals(j[i], p);
    if (pair.size() != 2) throw InputError(p, "interval must be [lo, hi]");
    out.push_back({pair[0], pair[1]});
  }
  return out;
}

}  // namespace

SystemSpec load_system(std::string_view json_text) {
  using namespace jsonread;
  const json doc = parse_document(json_text);
  if (!doc.is_object()) throw InputError("/", "system document must be an object");
  SystemDefinition def;
  def.n = positive_int(field(doc, "n", ""), "/n");
  def.m = positive_int(field(doc, "m", ""), "/m");
  def.l = positive_int(field(doc, "l", ""), "/l");
  def.T = real(field(doc, "T", ""), "/T");
  def.x0 = reals(field(doc, "x0", ""), "/x0");
  def.u0 = reals(field(doc, "u0", ""), "/u0");
  def.U = read_box(field(doc, "U", ""), "/U");
  def.A = read_box(field(doc, "A", ""), "/A");
  const json& f = array(field(doc, "f", ""), "/f");
  for (std::size_t j = 0; j < f.size(); ++j) def.f.push_back(text(f[j], child("/f", j)));
  const json& g = array(field(doc, "g", ""), "/g");
  for (std::size_t a = 0; a < g.size(); ++a) {
    const std::string row = child("/g", a);
    array(g[a], row);
    std::vector<std::string> exprs;
    for (std::size_t j = 0; j < g[a].size(); ++j) exprs.push_back(text(g[a][j], child(row, j)));
    def.g.push_back(std::move(exprs));
  }
  def.gamma = text(field(doc, "gamma", ""), "/gamma");
  return SystemSpec::build(def);
}

SystemSpec load_system_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_system(ss.str());
}

}  // namespace impulse
