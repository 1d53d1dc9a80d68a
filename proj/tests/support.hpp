#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "diffrbd/diffrbd.hpp"

namespace testing {

inline std::string model_path(const std::string& name) { return std::string(DIFFRBD_MODELS_DIR) + "/" + name; }

inline diffrbd::KinematicTree<double> load(const std::string& name) { return diffrbd::load_model_file(model_path(name)); }

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& e : v) e = d(rng);
  return v;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double inf_norm(const std::vector<double>& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

// max_i |a_i - b_i| / max(||b||_inf, floor)
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
  return max_abs_diff(a, b) / std::max(inf_norm(b), floor);
}

}  // namespace testing
