#pragma once

// File formats used by the command-line tool: numeric CSV tables, transition
// and state-pair datasets, design trajectories, and DH documents.

#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "design.hpp"
#include "dynamics.hpp"
#include "estimation.hpp"
#include "model.hpp"

namespace diffrbd::io {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

/// Header line followed by numeric rows; blank lines are skipped.
inline Table parse_csv(std::istream& in) {
  Table t;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw std::runtime_error("CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                               " fields, expected " + std::to_string(t.header.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(c, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != c.size()) throw std::runtime_error("CSV line " + std::to_string(line_no) + ": bad number '" + c + "'");
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw std::runtime_error("CSV input is empty");
  return t;
}

inline Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return parse_csv(in);
}

inline void write_number(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

inline void write_csv(std::ostream& out, const Table& t) {
  for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
  out << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      write_number(out, row[i]);
    }
    out << "\n";
  }
}

inline void write_csv_file(const std::string& path, const Table& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_csv(out, t);
}

// Columns sharing a prefix followed by a 0-based index, in index order.
inline std::vector<int> indexed_columns(const Table& t, const std::string& prefix) {
  std::vector<int> cols;
  for (int k = 0;; ++k) {
    const int c = t.column(prefix + std::to_string(k));
    if (c < 0) break;
    cols.push_back(c);
  }
  return cols;
}

inline std::vector<double> pick(const std::vector<double>& row, const std::vector<int>& cols) {
  std::vector<double> v;
  v.reserve(cols.size());
  for (int c : cols) v.push_back(row[static_cast<std::size_t>(c)]);
  return v;
}

/// Transitions as `x0..,u0..,xn0..`.
inline Table transitions_table(const ReplayBuffer& buffer) {
  Table t;
  if (buffer.empty()) return t;
  const auto& f = buffer[0];
  for (std::size_t i = 0; i < f.x.size(); ++i) t.header.push_back("x" + std::to_string(i));
  for (std::size_t i = 0; i < f.u.size(); ++i) t.header.push_back("u" + std::to_string(i));
  for (std::size_t i = 0; i < f.x_next.size(); ++i) t.header.push_back("xn" + std::to_string(i));
  for (const auto& tr : buffer) {
    std::vector<double> row = tr.x;
    row.insert(row.end(), tr.u.begin(), tr.u.end());
    row.insert(row.end(), tr.x_next.begin(), tr.x_next.end());
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline bool is_transitions_table(const Table& t) { return t.column("x0") >= 0 && t.column("xn0") >= 0; }

inline ReplayBuffer transitions_from_table(const Table& t) {
  const auto xs = indexed_columns(t, "x");
  const auto us = indexed_columns(t, "u");
  const auto xns = indexed_columns(t, "xn");
  if (xs.empty() || xs.size() != xns.size()) throw std::runtime_error("transition table needs matching x and xn columns");
  ReplayBuffer buffer;
  for (const auto& row : t.rows) buffer.add({pick(row, xs), pick(row, us), pick(row, xns)});
  return buffer;
}

/// State pairs as `q0..,qd0..,qt0..,qdt0..` (start state, then the state H steps later).
inline Table pairs_table(const std::vector<StatePair>& pairs) {
  Table t;
  if (pairs.empty()) return t;
  const auto& p0 = pairs.front();
  for (std::size_t i = 0; i < p0.start.q.size(); ++i) t.header.push_back("q" + std::to_string(i));
  for (std::size_t i = 0; i < p0.start.qd.size(); ++i) t.header.push_back("qd" + std::to_string(i));
  for (std::size_t i = 0; i < p0.target.q.size(); ++i) t.header.push_back("qt" + std::to_string(i));
  for (std::size_t i = 0; i < p0.target.qd.size(); ++i) t.header.push_back("qdt" + std::to_string(i));
  for (const auto& p : pairs) {
    std::vector<double> row = p.start.q;
    row.insert(row.end(), p.start.qd.begin(), p.start.qd.end());
    row.insert(row.end(), p.target.q.begin(), p.target.q.end());
    row.insert(row.end(), p.target.qd.begin(), p.target.qd.end());
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::vector<StatePair> pairs_from_table(const Table& t, const KinematicTree<double>& tree) {
  const auto qs = indexed_columns(t, "q");
  const auto qds = indexed_columns(t, "qd");
  const auto qts = indexed_columns(t, "qt");
  const auto qdts = indexed_columns(t, "qdt");
  if (qs.size() != static_cast<std::size_t>(tree.nq()) || qts.size() != qs.size() ||
      qds.size() != static_cast<std::size_t>(tree.nv()) || qdts.size() != qds.size())
    throw std::runtime_error("state-pair table does not match the model dimensions");
  std::vector<StatePair> pairs;
  for (const auto& row : t.rows) {
    StatePair p;
    p.start = JointState<double>::zero(tree.nq(), tree.nv());
    p.target = p.start;
    p.start.q = pick(row, qs);
    p.start.qd = pick(row, qds);
    p.target.q = pick(row, qts);
    p.target.qd = pick(row, qdts);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

/// State trajectories as `traj,step,q0..,qd0..`; rows of one trajectory are consecutive.
inline Table trajectories_table(const std::vector<StateTrajectory>& trajectories) {
  Table t;
  if (trajectories.empty() || trajectories.front().empty()) return t;
  const auto& s0 = trajectories.front().front();
  t.header = {"traj", "step"};
  for (std::size_t i = 0; i < s0.q.size(); ++i) t.header.push_back("q" + std::to_string(i));
  for (std::size_t i = 0; i < s0.qd.size(); ++i) t.header.push_back("qd" + std::to_string(i));
  for (std::size_t k = 0; k < trajectories.size(); ++k)
    for (std::size_t j = 0; j < trajectories[k].size(); ++j) {
      std::vector<double> row{static_cast<double>(k), static_cast<double>(j)};
      row.insert(row.end(), trajectories[k][j].q.begin(), trajectories[k][j].q.end());
      row.insert(row.end(), trajectories[k][j].qd.begin(), trajectories[k][j].qd.end());
      t.rows.push_back(std::move(row));
    }
  return t;
}

inline bool is_trajectories_table(const Table& t) { return t.column("traj") >= 0 && t.column("step") >= 0; }

inline std::vector<StateTrajectory> trajectories_from_table(const Table& t, const KinematicTree<double>& tree) {
  const int traj = t.column("traj"), step = t.column("step");
  const auto qs = indexed_columns(t, "q");
  const auto qds = indexed_columns(t, "qd");
  if (traj < 0 || step < 0) throw std::runtime_error("trajectory table needs traj and step columns");
  if (qs.size() != static_cast<std::size_t>(tree.nq()) || qds.size() != static_cast<std::size_t>(tree.nv()))
    throw std::runtime_error("trajectory table does not match the model dimensions");
  std::vector<StateTrajectory> out;
  double current = std::numeric_limits<double>::quiet_NaN();
  for (const auto& row : t.rows) {
    const double id = row[static_cast<std::size_t>(traj)];
    const double k = row[static_cast<std::size_t>(step)];
    if (id != current) {
      out.emplace_back();
      current = id;
    }
    if (k != static_cast<double>(out.back().size()))
      throw std::runtime_error("trajectory table: steps must count up from 0 within each trajectory");
    JointState<double> s = JointState<double>::zero(tree.nq(), tree.nv());
    s.q = pick(row, qs);
    s.qd = pick(row, qds);
    out.back().push_back(std::move(s));
  }
  return out;
}

/// Joint trajectory `t,q0..` and target path `t,px,py,pz`.
inline Table joint_trajectory_table(const std::vector<std::vector<double>>& q, double dt = 1.0) {
  Table t;
  t.header.push_back("t");
  if (!q.empty())
    for (std::size_t i = 0; i < q.front().size(); ++i) t.header.push_back("q" + std::to_string(i));
  for (std::size_t k = 0; k < q.size(); ++k) {
    std::vector<double> row{static_cast<double>(k) * dt};
    row.insert(row.end(), q[k].begin(), q[k].end());
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Table path_table(const std::vector<Vec3<double>>& p, double dt = 1.0) {
  Table t;
  t.header = {"t", "px", "py", "pz"};
  for (std::size_t k = 0; k < p.size(); ++k) t.rows.push_back({static_cast<double>(k) * dt, p[k].x, p[k].y, p[k].z});
  return t;
}

inline std::vector<std::vector<double>> joint_trajectory_from_table(const Table& t) {
  const auto qs = indexed_columns(t, "q");
  if (qs.empty()) throw std::runtime_error("joint trajectory needs q0.. columns");
  std::vector<std::vector<double>> q;
  for (const auto& row : t.rows) q.push_back(pick(row, qs));
  return q;
}

inline std::vector<Vec3<double>> path_from_table(const Table& t) {
  const int x = t.column("px"), y = t.column("py"), z = t.column("pz");
  if (x < 0 || y < 0 || z < 0) throw std::runtime_error("target path needs px, py, pz columns");
  std::vector<Vec3<double>> p;
  for (const auto& row : t.rows)
    p.emplace_back(row[static_cast<std::size_t>(x)], row[static_cast<std::size_t>(y)], row[static_cast<std::size_t>(z)]);
  return p;
}

/// `[{"d":..,"a":..,"alpha":..}, ...]` <-> flat (d, a, alpha) per joint.
inline nlohmann::json dh_to_json(std::span<const double> R) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i + 2 < R.size(); i += 3) j.push_back({{"d", R[i]}, {"a", R[i + 1]}, {"alpha", R[i + 2]}});
  return j;
}

inline std::vector<double> dh_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw std::runtime_error("DH document must be a non-empty array");
  std::vector<double> R;
  for (const auto& e : j) {
    R.push_back(e.at("d").get<double>());
    R.push_back(e.at("a").get<double>());
    R.push_back(e.at("alpha").get<double>());
  }
  return R;
}

}  // namespace diffrbd::io
