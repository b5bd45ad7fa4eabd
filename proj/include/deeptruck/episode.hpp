#pragma once

// Time-aligned driving record and its CSV form.
//
// Row k holds the commands applied at step k, the road grade at step k and
// the response measured at step k. Metadata travels as leading "# key=value"
// comment lines. Numbers are written with 17 significant digits, which
// round-trips IEEE doubles exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deeptruck/config.hpp"
#include "deeptruck/error.hpp"

namespace deeptruck {

struct Episode {
  double dt = 0.1;
  std::vector<double> t;
  std::vector<double> engine_cmd;  // %
  std::vector<double> brake_cmd;   // %
  std::vector<double> grade;       // %, empty when the record has no grade channel
  std::vector<double> v;           // m/s
  std::vector<double> a;           // m/s^2
  std::vector<double> f_rate;      // cm^3/s

  std::uint64_t seed = 0;
  std::string kind;                // spanning | coasting | braking | ...
  std::uint64_t plant_hash = 0;

  std::size_t size() const { return t.size(); }
  bool has_grade() const { return !grade.empty(); }
  std::size_t w_dim() const { return has_grade() ? 1 : 0; }
  double duration() const { return t.empty() ? 0.0 : t.back() - t.front(); }

  void push(double time, double e, double b, double w, double speed, double accel, double fuel) {
    t.push_back(time);
    engine_cmd.push_back(e);
    brake_cmd.push_back(b);
    grade.push_back(w);
    v.push_back(speed);
    a.push_back(accel);
    f_rate.push_back(fuel);
  }

  /// Copy of rows [begin, begin + count).
  Episode slice(std::size_t begin, std::size_t count) const {
    if (begin + count > size()) throw Error(ErrorKind::InvalidInput, "episode slice out of range");
    Episode e;
    e.dt = dt;
    e.seed = seed;
    e.kind = kind;
    e.plant_hash = plant_hash;
    auto cut = [&](const std::vector<double>& src, std::vector<double>& dst) {
      if (!src.empty()) dst.assign(src.begin() + begin, src.begin() + begin + count);
    };
    cut(t, e.t);
    cut(engine_cmd, e.engine_cmd);
    cut(brake_cmd, e.brake_cmd);
    cut(grade, e.grade);
    cut(v, e.v);
    cut(a, e.a);
    cut(f_rate, e.f_rate);
    return e;
  }

  bool operator==(const Episode&) const = default;
};

inline void write_episode(std::ostream& out, const Episode& ep) {
  out << "# dt=" << format_double(ep.dt) << "\n";
  out << "# seed=" << ep.seed << "\n";
  out << "# kind=" << ep.kind << "\n";
  out << "# plant_hash=" << ep.plant_hash << "\n";
  out << (ep.has_grade() ? "t,E_cmd,B_cmd,theta_rdg,v,a,f_rate" : "t,E_cmd,B_cmd,v,a,f_rate") << "\n";
  for (std::size_t k = 0; k < ep.size(); ++k) {
    out << format_double(ep.t[k]) << ',' << format_double(ep.engine_cmd[k]) << ',' << format_double(ep.brake_cmd[k]);
    if (ep.has_grade()) out << ',' << format_double(ep.grade[k]);
    out << ',' << format_double(ep.v[k]) << ',' << format_double(ep.a[k]) << ',' << format_double(ep.f_rate[k])
        << '\n';
  }
}

inline void write_episode(const std::filesystem::path& path, const Episode& ep) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write episode '" + path.string() + "'");
  write_episode(out, ep);
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

inline Episode read_episode(std::istream& in, const std::string& source = "<episode>") {
  Episode ep;
  std::map<std::string, std::string> meta;
  std::string line;
  int lineno = 0;
  std::vector<std::string> header;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::Parse, source + ":" + std::to_string(lineno) + ": " + what);
  };

  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto body = trim(std::string_view(t).substr(1));
      const auto eq = body.find('=');
      if (eq != std::string::npos) meta[trim(std::string_view(body).substr(0, eq))] = trim(std::string_view(body).substr(eq + 1));
      continue;
    }
    header = split(t, ',');
    break;
  }
  if (header.empty()) fail("missing header");

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (col.count(header[i])) fail("duplicate column '" + header[i] + "'");
    col[header[i]] = i;
  }
  for (const char* required : {"t", "E_cmd", "B_cmd", "v", "a", "f_rate"})
    if (!col.count(required)) fail(std::string("missing column '") + required + "'");
  const bool graded = col.count("theta_rdg") != 0;
  std::vector<int> row_line;

  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cells = split(t, ',');
    if (cells.size() != header.size())
      fail("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    auto get = [&](const char* name) {
      try {
        return parse_double(cells[col.at(name)], name);
      } catch (const Error& e) {
        fail(e.what());
      }
      return 0.0;
    };
    row_line.push_back(lineno);
    ep.t.push_back(get("t"));
    ep.engine_cmd.push_back(get("E_cmd"));
    ep.brake_cmd.push_back(get("B_cmd"));
    if (graded) ep.grade.push_back(get("theta_rdg"));
    ep.v.push_back(get("v"));
    ep.a.push_back(get("a"));
    ep.f_rate.push_back(get("f_rate"));
  }

  if (meta.count("dt")) {
    ep.dt = parse_double(meta["dt"], "dt");
  } else if (ep.t.size() >= 2) {
    ep.dt = ep.t[1] - ep.t[0];
  }
  if (!(ep.dt > 0.0)) throw Error(ErrorKind::Parse, source + ": non-positive dt");
  for (std::size_t k = 1; k < ep.t.size(); ++k) {
    const double step = ep.t[k] - ep.t[k - 1];
    if (std::abs(step - ep.dt) > 1e-6 * ep.dt)
      throw Error(ErrorKind::Parse, source + ":" + std::to_string(row_line[k]) + ": non-uniform time grid");
  }
  if (meta.count("seed")) ep.seed = static_cast<std::uint64_t>(std::stoull(meta["seed"]));
  if (meta.count("kind")) ep.kind = meta["kind"];
  if (meta.count("plant_hash")) ep.plant_hash = static_cast<std::uint64_t>(std::stoull(meta["plant_hash"]));
  return ep;
}

inline Episode read_episode(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open episode '" + path.string() + "'");
  return read_episode(in, path.string());
}

/// All `*.csv` episodes of a directory, in lexicographic file order.
inline std::vector<Episode> read_episode_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<Episode> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_episode(f));
  return out;
}

}  // namespace deeptruck
