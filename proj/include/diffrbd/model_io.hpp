#pragma once

// JSON model documents:
//
// {"gravity": [x, y, z],
//  "bodies": [{"name", "mass", "com": [3], "inertia": [Ixx, Iyy, Izz, Ixy, Ixz, Iyz],
//              "length"?, "length_axis"?: [3], "com_along_length"?}],
//  "joints": [{"name", "type": "revolute|prismatic|fixed|floating", "parent", "child",
//              "origin": {"xyz": [3], "rpy": [3], "along_parent_length"?}, "axis": [3]}],
//  "free_parameters": ["bodies/<name>/mass", "joints/<name>/origin/xyz/0", ...]}
//
// The parent of a root joint is "world". Bodies may appear in any order; the
// loaded tree is sorted parents-first.

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"
#include "model.hpp"

namespace diffrbd {

namespace detail {

inline Vec3<double> read_vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ModelError(std::string("expected a 3-vector for ") + what);
  for (const auto& e : j)
    if (!e.is_number()) throw ModelError(std::string("non-numeric entry in ") + what);
  Vec3<double> v(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z))
    throw ModelError(std::string("non-finite entry in ") + what);
  return v;
}

inline JointType parse_joint_type(const std::string& s) {
  if (s == "revolute") return JointType::Revolute;
  if (s == "prismatic") return JointType::Prismatic;
  if (s == "fixed") return JointType::Fixed;
  if (s == "floating") return JointType::Floating;
  throw ModelError("unknown joint type '" + s + "'");
}

inline const char* joint_type_name(JointType t) {
  switch (t) {
    case JointType::Revolute:
      return "revolute";
    case JointType::Prismatic:
      return "prismatic";
    case JointType::Fixed:
      return "fixed";
    case JointType::Floating:
      return "floating";
  }
  return "fixed";
}

// Principal moments of a symmetric 3x3 matrix by cyclic Jacobi sweeps.
inline std::array<double, 3> symmetric_eigenvalues(Mat3<double> a) {
  for (int sweep = 0; sweep < 50; ++sweep) {
    const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    if (off < 1e-30) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        Mat3<double> r = Mat3<double>::identity();
        r(p, p) = c;
        r(q, q) = c;
        r(p, q) = s;
        r(q, p) = -s;
        a = r.transpose() * a * r;
      }
    }
  }
  return {a(0, 0), a(1, 1), a(2, 2)};
}

inline void validate_inertia(const Mat3<double>& I, const std::string& body) {
  const double scale = std::max({1.0, std::abs(I(0, 0)), std::abs(I(1, 1)), std::abs(I(2, 2))});
  const auto ev = symmetric_eigenvalues(I);
  const double tol = 1e-12 * scale;
  for (double e : ev)
    if (e < -tol) throw ModelError("inertia of body '" + body + "' is not positive semi-definite");
  if (ev[0] > ev[1] + ev[2] + tol || ev[1] > ev[0] + ev[2] + tol || ev[2] > ev[0] + ev[1] + tol)
    throw ModelError("inertia of body '" + body + "' violates the triangle inequality");
}

inline Vec3<double> checked_axis(const Vec3<double>& axis, const std::string& joint) {
  const double n = std::sqrt(squared_norm(axis));
  if (std::abs(n - 1.0) <= 1e-9) return axis;
  if (std::abs(n - 1.0) <= 1e-3) return (1.0 / n) * axis;
  throw ModelError("axis of joint '" + joint + "' is not a unit vector");
}

}  // namespace detail

/// Parses and validates a model document. Throws ModelError on any schema or
/// consistency violation (cycles, unknown parents, non-positive mass, ...).
inline KinematicTree<double> load_model(const std::string& document) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelError(std::string("malformed model document: ") + e.what());
  }
  if (!doc.is_object()) throw ModelError("malformed model document: top level must be an object");

  try {
    KinematicTree<double> staged;
    if (doc.contains("gravity")) staged.gravity = detail::read_vec3(doc["gravity"], "gravity");

    if (!doc.contains("bodies") || !doc["bodies"].is_array()) throw ModelError("model document needs a 'bodies' array");
    if (!doc.contains("joints") || !doc["joints"].is_array()) throw ModelError("model document needs a 'joints' array");

    std::map<std::string, Body<double>> bodies;
    std::vector<std::string> body_order;
    for (const auto& jb : doc["bodies"]) {
      Body<double> b;
      b.name = jb.at("name").get<std::string>();
      if (b.name.empty() || b.name == "world") throw ModelError("invalid body name '" + b.name + "'");
      if (bodies.count(b.name)) throw ModelError("duplicate body name '" + b.name + "'");
      b.mass = jb.at("mass").get<double>();
      if (!(b.mass > 0.0) || !std::isfinite(b.mass)) throw ModelError("body '" + b.name + "' has non-positive mass");
      if (jb.contains("com")) b.com = detail::read_vec3(jb["com"], "com");
      if (jb.contains("inertia")) {
        const auto& in = jb["inertia"];
        if (!in.is_array() || in.size() != 6) throw ModelError("inertia of body '" + b.name + "' needs 6 entries");
        const double ixx = in[0], iyy = in[1], izz = in[2], ixy = in[3], ixz = in[4], iyz = in[5];
        b.inertia(0, 0) = ixx;
        b.inertia(1, 1) = iyy;
        b.inertia(2, 2) = izz;
        b.inertia(0, 1) = b.inertia(1, 0) = ixy;
        b.inertia(0, 2) = b.inertia(2, 0) = ixz;
        b.inertia(1, 2) = b.inertia(2, 1) = iyz;
      }
      if (jb.contains("length")) {
        const double L = jb["length"].get<double>();
        if (!(L > 0.0)) throw ModelError("body '" + b.name + "' has non-positive length");
        b.length = L;
        if (jb.contains("length_axis"))
          b.length_axis = detail::checked_axis(detail::read_vec3(jb["length_axis"], "length_axis"), b.name);
        if (jb.contains("com_along_length")) b.com_along_length = jb["com_along_length"].get<double>();
      }
      if (!b.length) detail::validate_inertia(b.inertia, b.name);
      body_order.push_back(b.name);
      bodies.emplace(b.name, std::move(b));
    }

    std::map<std::string, Joint<double>> joint_of_child;
    std::map<std::string, std::string> parent_of;
    std::map<std::string, std::vector<std::string>> children;
    std::vector<std::string> joint_names;
    for (const auto& jj : doc["joints"]) {
      Joint<double> j;
      j.name = jj.at("name").get<std::string>();
      for (const auto& n : joint_names)
        if (n == j.name) throw ModelError("duplicate joint name '" + j.name + "'");
      joint_names.push_back(j.name);
      j.type = detail::parse_joint_type(jj.at("type").get<std::string>());
      const std::string parent = jj.at("parent").get<std::string>();
      const std::string child = jj.at("child").get<std::string>();
      if (!bodies.count(child)) throw ModelError("joint '" + j.name + "' has unknown child '" + child + "'");
      if (parent != "world" && !bodies.count(parent))
        throw ModelError("joint '" + j.name + "' has unknown parent '" + parent + "'");
      if (parent == child) throw ModelError("cycle detected: body '" + child + "' is its own parent");
      if (joint_of_child.count(child)) throw ModelError("body '" + child + "' has more than one parent joint");
      if (jj.contains("origin")) {
        const auto& o = jj["origin"];
        if (o.contains("xyz")) j.origin_xyz = detail::read_vec3(o["xyz"], "origin xyz");
        if (o.contains("rpy")) j.origin_rpy = detail::read_vec3(o["rpy"], "origin rpy");
        if (o.contains("along_parent_length")) j.origin_along_parent_length = o["along_parent_length"].get<bool>();
      }
      if (j.type == JointType::Revolute || j.type == JointType::Prismatic) {
        const Vec3<double> axis = jj.contains("axis") ? detail::read_vec3(jj["axis"], "axis") : Vec3<double>(0.0, 0.0, 1.0);
        j.axis = detail::checked_axis(axis, j.name);
      }
      parent_of[child] = parent;
      children[parent].push_back(child);
      joint_of_child.emplace(child, std::move(j));
    }

    for (const auto& name : body_order)
      if (!joint_of_child.count(name)) throw ModelError("body '" + name + "' has no parent joint");

    // Breadth-first from the world; anything not reached sits on a cycle.
    std::vector<std::string> order;
    std::vector<std::string> frontier{"world"};
    while (!frontier.empty()) {
      std::vector<std::string> next;
      for (const auto& p : frontier) {
        auto it = children.find(p);
        if (it == children.end()) continue;
        for (const auto& c : it->second) {
          order.push_back(c);
          next.push_back(c);
        }
      }
      frontier = std::move(next);
    }
    if (order.size() != body_order.size()) throw ModelError("cycle detected: some bodies are not reachable from the world");

    std::map<std::string, int> index;
    for (std::size_t i = 0; i < order.size(); ++i) index[order[i]] = static_cast<int>(i);
    for (const auto& name : order) {
      staged.bodies.push_back(bodies.at(name));
      Joint<double> j = joint_of_child.at(name);
      const std::string& p = parent_of.at(name);
      j.parent = p == "world" ? -1 : index.at(p);
      staged.joints.push_back(std::move(j));
    }
    staged.refresh();

    if (doc.contains("free_parameters")) {
      for (const auto& p : doc["free_parameters"]) staged.bindings.push_back(parse_binding(staged, p.get<std::string>()));
    }
    return staged;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed model document: ") + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline KinematicTree<double> load_model_file(const std::string& path) { return load_model(read_text_file(path)); }

/// Serializes a tree (current field values) back into the document schema.
inline nlohmann::json model_to_json(const KinematicTree<double>& tree) {
  auto v3 = [](const Vec3<double>& v) { return nlohmann::json::array({v.x, v.y, v.z}); };
  nlohmann::json doc;
  doc["gravity"] = v3(tree.gravity);
  doc["bodies"] = nlohmann::json::array();
  doc["joints"] = nlohmann::json::array();
  for (std::size_t i = 0; i < tree.size(); ++i) {
    const Body<double>& b = tree.bodies[i];
    nlohmann::json jb;
    jb["name"] = b.name;
    jb["mass"] = b.mass;
    jb["com"] = v3(b.com);
    jb["inertia"] = {b.inertia(0, 0), b.inertia(1, 1), b.inertia(2, 2), b.inertia(0, 1), b.inertia(0, 2), b.inertia(1, 2)};
    if (b.length) {
      jb["length"] = *b.length;
      jb["length_axis"] = v3(b.length_axis);
      if (b.com_along_length) jb["com_along_length"] = *b.com_along_length;
    }
    doc["bodies"].push_back(jb);

    const Joint<double>& j = tree.joints[i];
    nlohmann::json jj;
    jj["name"] = j.name;
    jj["type"] = detail::joint_type_name(j.type);
    jj["parent"] = j.parent < 0 ? std::string("world") : tree.bodies[static_cast<std::size_t>(j.parent)].name;
    jj["child"] = b.name;
    jj["origin"] = {{"xyz", v3(j.origin_xyz)}, {"rpy", v3(j.origin_rpy)}};
    if (j.origin_along_parent_length) jj["origin"]["along_parent_length"] = true;
    jj["axis"] = v3(j.axis);
    doc["joints"].push_back(jj);
  }
  doc["free_parameters"] = nlohmann::json::array();
  for (const auto& bnd : tree.bindings) doc["free_parameters"].push_back(bnd.path);
  return doc;
}

}  // namespace diffrbd
