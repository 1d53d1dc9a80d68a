// Command-line scenario runner: simulation, gradient checks, identification,
// design and adaptive MPC, all driven by files and a single seed.
//
// Exit codes: 0 success, 1 operational error, 2 verification failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "diffrbd/diffrbd.hpp"
#include "diffrbd/io.hpp"

using namespace diffrbd;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kCheckFailed = 2;

// Options double as the resolved configuration: every command serializes
// the struct it ran with next to its output.

struct SimulateConfig {
  std::string model;
  int steps = 100;
  double dt = 0.05;
  std::string out;
  std::vector<double> q0, qd0, tau;
};

struct GradcheckConfig {
  std::string model;
  std::string target = "fd";
  double eps = 1e-6;
  int trials = 100;
  std::uint64_t seed = 0;
  int horizon = 20;
  double dt = 0.05;
  double tolerance = 1e-4;
  int parallel = 1;
};

struct FitConfig {
  std::string model;
  std::string data;
  int horizon = 20;
  double dt = 0.05;
  int substeps = 1;
  std::vector<std::string> actuate;
  std::vector<double> init;
  int max_iterations = 100;
  std::string out;
  std::string log;
};

struct DesignConfig {
  int dof = 0;
  std::string qtraj, ptraj, init, out, log;
  std::uint64_t seed = 0;
  int max_iterations = 500;
};

struct MpcConfig {
  std::string env, model;
  std::vector<double> init_value;
  int episodes = 3;
  int steps = 140;
  int horizon = 20;
  std::uint64_t seed = 0;
  std::string outdir = ".";
  std::vector<std::string> actuate{"slider"};
  int substeps = 1;
  double dt = 0.05;
  double bound = 200.0;
  double w_x = 1.0;
  double w_u = 1e-4;
  std::vector<double> state_scale;
  std::vector<double> initial_q;
  double initial_noise = 0.05;
  double warm_amplitude = 0.0;
  int fit_iterations = 10;
  int fit_interval = 50;
  int ilqr_iterations = 100;
  int parallel = 1;
};

struct GenerateConfig {
  std::string kind = "pairs";
  std::string model;
  int count = 64;
  int horizon = 20;
  double dt = 0.05;
  int substeps = 1;
  std::vector<std::string> actuate;
  double bound = 10.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string qout;
  int dof = 4;
};

// Fills options that were not given on the command line from a JSON document
// whose keys are the long option names without dashes.
void apply_config(CLI::App& cmd, const std::string& path) {
  if (path.empty()) return;
  const json doc = json::parse(read_text_file(path));
  if (!doc.is_object()) throw std::runtime_error("config document must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    CLI::Option* opt = nullptr;
    try {
      opt = cmd.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw std::runtime_error("config key '" + key + "' is not an option of '" + cmd.get_name() + "'");
    }
    if (opt->count() > 0) continue;
    auto as_string = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (value.is_array()) {
      for (const auto& e : value) opt->add_result(as_string(e));
    } else {
      opt->add_result(as_string(value));
    }
    opt->run_callback();
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

bool is_dh_document(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  return !j.is_discarded() && j.is_array();
}

std::vector<double> uniform_vector(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& e : v) e = d(rng);
  return v;
}

// Random valid configuration: revolute angles in [-pi, pi], prismatic in
// [-1, 1], floating joints get a random position and unit quaternion.
std::vector<double> random_configuration(const KinematicTree<double>& tree, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ang(-M_PI, M_PI), lin(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> q(static_cast<std::size_t>(tree.nq()), 0.0);
  for (const auto& j : tree.joints) {
    const auto k = static_cast<std::size_t>(j.q_index);
    switch (j.type) {
      case JointType::Revolute:
        q[k] = ang(rng);
        break;
      case JointType::Prismatic:
        q[k] = lin(rng);
        break;
      case JointType::Floating: {
        for (int i = 0; i < 3; ++i) q[k + static_cast<std::size_t>(i)] = lin(rng);
        double w = gauss(rng), x = gauss(rng), y = gauss(rng), z = gauss(rng);
        const double n = std::sqrt(w * w + x * x + y * y + z * z);
        q[k + 3] = w / n;
        q[k + 4] = x / n;
        q[k + 5] = y / n;
        q[k + 6] = z / n;
        break;
      }
      case JointType::Fixed:
        break;
    }
  }
  return q;
}

std::vector<std::string> one_dof_joints(const KinematicTree<double>& tree) {
  std::vector<std::string> names;
  for (const auto& j : tree.joints)
    if (j.nv() == 1) names.push_back(j.name);
  return names;
}

// Physical-space initial values -> theta (log for positive roles).
std::vector<double> theta_from_physical(const KinematicTree<double>& tree, const std::vector<double>& values) {
  std::vector<double> theta(tree.bindings.size());
  if (values.size() != 1 && values.size() != theta.size())
    throw std::runtime_error("expected 1 or " + std::to_string(theta.size()) + " initial parameter values");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double v = values.size() == 1 ? values[0] : values[i];
    if (tree.bindings[i].role == ParameterRole::LogPositive) {
      if (!(v > 0.0)) throw std::runtime_error("parameter '" + tree.bindings[i].path + "' must be positive");
      theta[i] = std::log(v);
    } else {
      theta[i] = v;
    }
  }
  return theta;
}

json physical_parameters(const KinematicTree<double>& tree) {
  json j = json::object();
  const auto theta = get_parameters(tree);
  for (std::size_t i = 0; i < theta.size(); ++i)
    j[tree.bindings[i].path] = tree.bindings[i].role == ParameterRole::LogPositive ? std::exp(theta[i]) : theta[i];
  return j;
}

std::vector<double> upright_goal(const StateEmbedding& emb) {
  std::vector<double> goal(emb.dim(), 0.0);
  for (std::size_t k = 0; k < emb.angular.size(); ++k) goal[emb.angle_offset(k) + 1] = 1.0;
  return goal;
}

// Cart terms weigh 0.1, pole orientation 1, angular rates 0.01, and
// accelerations nothing. Uniform weights let the cart term dominate and the
// pole is never swung up.
std::vector<double> default_state_scale(const StateEmbedding& emb) {
  std::vector<double> s;
  s.insert(s.end(), 2 * emb.linear.size(), 0.1);
  s.insert(s.end(), 2 * emb.angular.size(), 1.0);
  s.insert(s.end(), emb.angular.size(), 0.01);
  if (emb.include_accelerations) s.insert(s.end(), emb.angular.size(), 0.0);
  return s;
}

// ---------------------------------------------------------------- simulate

int run_simulate(const SimulateConfig& c) {
  const KinematicTree<double> tree = load_model_file(c.model);
  if (c.steps < 0) throw std::runtime_error("--steps must be non-negative");
  if (!(c.dt > 0.0)) throw std::runtime_error("--dt must be positive");
  JointState<double> s = neutral_state(tree);
  if (!c.q0.empty()) {
    if (c.q0.size() != s.q.size()) throw std::runtime_error("--q0 has the wrong dimension");
    s.q = c.q0;
  }
  if (!c.qd0.empty()) {
    if (c.qd0.size() != s.qd.size()) throw std::runtime_error("--qd0 has the wrong dimension");
    s.qd = c.qd0;
  }
  std::vector<std::vector<double>> schedule;
  if (!c.tau.empty()) {
    if (c.tau.size() != s.qd.size()) throw std::runtime_error("--tau has the wrong dimension");
    schedule.push_back(c.tau);
  }
  RolloutOptions opts;
  opts.dt = c.dt;
  const auto traj = rollout(tree, s, schedule, c.steps, opts);
  if (c.out.empty() || c.out == "-") {
    write_trajectory_csv(std::cout, tree, traj);
  } else {
    std::ofstream out(c.out);
    if (!out) throw std::runtime_error("cannot write '" + c.out + "'");
    write_trajectory_csv(out, tree, traj);
    write_json_file(c.out + ".config.json", {{"command", "simulate"},
                                             {"model", c.model},
                                             {"steps", c.steps},
                                             {"dt", c.dt},
                                             {"q0", s.q},
                                             {"qd0", s.qd},
                                             {"tau", c.tau}});
  }
  return kOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradPair {
  std::vector<double> reverse;
  std::vector<double> finite;
};

// Max component error relative to the gradient's largest component.
double relative_error(const GradPair& g) {
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < g.finite.size(); ++i) {
    scale = std::max(scale, std::abs(g.finite[i]));
    err = std::max(err, std::abs(g.reverse[i] - g.finite[i]));
  }
  return err / std::max(scale, 1e-12);
}

template <class Program>
GradPair check_program(const Program& program, const std::vector<double>& x, double eps) {
  GradPair g;
  g.reverse = ad::grad(program, x).gradient;
  g.finite = ad::finite_diff_gradient_relative(program, x, eps);
  return g;
}

template <class S>
S weighted(const std::vector<S>& values, const std::vector<double>& w) {
  S s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += w[i] * values[i];
  return s;
}

GradPair gradcheck_trial(const GradcheckConfig& c, const KinematicTree<double>& tree, const std::vector<double>& dh,
                         std::uint64_t trial_seed) {
  std::mt19937_64 rng(trial_seed);
  const auto nq = static_cast<std::size_t>(tree.nq());
  const auto nv = static_cast<std::size_t>(tree.nv());

  if (c.target == "fd") {
    std::vector<double> x = random_configuration(tree, rng);
    const auto qd = uniform_vector(rng, nv, -1.0, 1.0);
    const auto tau = uniform_vector(rng, nv, -1.0, 1.0);
    x.insert(x.end(), qd.begin(), qd.end());
    x.insert(x.end(), tau.begin(), tau.end());
    const auto w = uniform_vector(rng, nv, -1.0, 1.0);
    auto program = [&](const auto& z) {
      using S = typename std::decay_t<decltype(z)>::value_type;
      const auto t = cast_tree<S>(tree);
      const std::span<const S> all(z);
      return weighted(forward_dynamics_aba(t, all.subspan(0, nq), all.subspan(nq, nv), all.subspan(nq + nv, nv)), w);
    };
    return check_program(program, x, c.eps);
  }

  if (c.target == "kin") {
    std::vector<double> x = random_configuration(tree, rng);
    const bool with_dh = !dh.empty();
    if (with_dh) {
      std::normal_distribution<double> n(0.0, 0.1);
      for (double r : dh) x.push_back(r + n(rng));
    }
    const auto w = uniform_vector(rng, 3 * tree.size(), -1.0, 1.0);
    auto program = [&](const auto& z) {
      using S = typename std::decay_t<decltype(z)>::value_type;
      const std::span<const S> all(z);
      const auto t = with_dh ? from_dh<S>(dh_from_vector<S>(all.subspan(nq))) : cast_tree<S>(tree);
      const auto poses = forward_kinematics(t, all.subspan(0, nq));
      S s = 0.0;
      for (std::size_t i = 0; i < poses.size(); ++i)
        s += w[3 * i] * poses[i].position.x + w[3 * i + 1] * poses[i].position.y + w[3 * i + 2] * poses[i].position.z;
      return s;
    };
    return check_program(program, x, c.eps);
  }

  if (c.target == "rollout") {
    std::vector<double> x = random_configuration(tree, rng);
    const auto qd = uniform_vector(rng, nv, -0.5, 0.5);
    x.insert(x.end(), qd.begin(), qd.end());
    const auto theta = get_parameters(tree);
    x.insert(x.end(), theta.begin(), theta.end());
    const auto w = uniform_vector(rng, nq + nv, -1.0, 1.0);
    auto program = [&](const auto& z) {
      using S = typename std::decay_t<decltype(z)>::value_type;
      const std::span<const S> all(z);
      const auto t = with_parameters<S>(tree, all.subspan(nq + nv));
      JointState<S> s = JointState<S>::zero(tree.nq(), tree.nv());
      std::copy_n(all.begin(), nq, s.q.begin());
      std::copy_n(all.begin() + static_cast<std::ptrdiff_t>(nq), nv, s.qd.begin());
      const std::vector<S> zero(nv, S(0.0));
      for (int k = 0; k < c.horizon; ++k) s = step(t, s, std::span<const S>(zero), c.dt);
      std::vector<S> out = s.q;
      out.insert(out.end(), s.qd.begin(), s.qd.end());
      return weighted(out, w);
    };
    return check_program(program, x, c.eps);
  }

  if (c.target == "design") {
    const std::size_t dof = dh.empty() ? 3 : dh.size() / 3;
    std::normal_distribution<double> n(0.0, 0.3);
    std::vector<double> truth = dh;
    if (truth.empty()) truth = uniform_vector(rng, 3 * dof, -1.0, 1.0);
    DesignProblem p;
    p.dof = static_cast<int>(dof);
    for (int t = 0; t < 10; ++t) p.q_trajectory.push_back(uniform_vector(rng, dof, -M_PI, M_PI));
    p.p_trajectory = end_effector_path<double>(truth, p.q_trajectory);
    std::vector<double> R = truth;
    for (auto& r : R) r += n(rng);
    auto program = [&](const auto& z) {
      using S = typename std::decay_t<decltype(z)>::value_type;
      return design_objective<S>(std::span<const S>(z), p);
    };
    return check_program(program, R, c.eps);
  }

  if (c.target == "loss") {
    if (tree.bindings.empty()) throw std::runtime_error("loss target needs a model with free_parameters");
    const SystemSpec spec = SystemSpec::for_tree(tree, one_dof_joints(tree), c.dt, true);
    ReplayBuffer buffer;
    for (int k = 0; k < 5; ++k) {
      JointState<double> s = JointState<double>::zero(tree.nq(), tree.nv());
      s.q = random_configuration(tree, rng);
      s.qd = uniform_vector(rng, nv, -1.0, 1.0);
      const auto x = spec.embedding.embed(s);
      const auto u = uniform_vector(rng, spec.control_dim(), -1.0, 1.0);
      buffer.add({x, u, spec.transition(tree, std::span<const double>(x), std::span<const double>(u))});
    }
    std::normal_distribution<double> n(0.0, 0.1);
    std::vector<double> theta = get_parameters(tree);
    for (auto& t : theta) t += n(rng);
    GradPair g;
    g.reverse = prediction_loss(tree, theta, buffer, spec).gradient;
    g.finite = ad::finite_diff_gradient_relative(
        [&](const std::vector<double>& th) {
          return prediction_loss_value(with_parameters<double>(tree, std::span<const double>(th)), buffer, spec);
        },
        theta, c.eps);
    return g;
  }

  throw std::runtime_error("unknown gradcheck target '" + c.target + "'");
}

int run_gradcheck(const GradcheckConfig& c) {
  if (!(c.eps > 0.0)) throw std::runtime_error("--eps must be positive");
  if (c.trials < 1) throw std::runtime_error("--trials must be at least 1");
  const std::string text = read_text_file(c.model);
  std::vector<double> dh;
  KinematicTree<double> tree;
  if (is_dh_document(text)) {
    dh = io::dh_from_json(json::parse(text));
    tree = from_dh<double>(dh_from_vector<double>(dh));
  } else {
    tree = load_model(text);
  }

  std::mt19937_64 master(c.seed);
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(c.trials));
  for (auto& s : seeds) s = master();
  std::vector<double> errors(seeds.size(), 0.0);
  std::vector<std::string> failures(seeds.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < seeds.size(); i += stride) {
      try {
        errors[i] = relative_error(gradcheck_trial(c, tree, dh, seeds[i]));
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  const unsigned threads = static_cast<unsigned>(std::max(1, c.parallel));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures)
    if (!f.empty()) throw std::runtime_error(f);

  const double worst = *std::max_element(errors.begin(), errors.end());
  const bool pass = worst < c.tolerance;
  std::cout << "target " << c.target << " trials " << c.trials << " eps " << c.eps << " max_rel_err " << worst << " "
            << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------- fit

int run_fit(const FitConfig& c) {
  KinematicTree<double> tree = load_model_file(c.model);
  if (tree.bindings.empty()) throw std::runtime_error("model has no free_parameters to fit");
  if (!c.init.empty()) set_parameters(tree, theta_from_physical(tree, c.init));
  const io::Table table = io::read_csv(c.data);
  if (table.rows.empty()) throw std::runtime_error("data file '" + c.data + "' contains no samples");

  OptimizeOptions opts;
  opts.max_iterations = c.max_iterations;
  FitResult result;
  json config = {{"command", "fit"}, {"model", c.model}, {"data", c.data}, {"max_iterations", c.max_iterations},
                 {"init", c.init}};
  json stages;
  int iterations = 0;
  if (io::is_transitions_table(table)) {
    const auto actuate = c.actuate.empty() ? one_dof_joints(tree) : c.actuate;
    const SystemSpec spec = SystemSpec::for_tree(tree, actuate, c.dt, true, c.substeps);
    const ReplayBuffer buffer = io::transitions_from_table(table);
    result = fit_dynamics(tree, buffer, spec, opts);
    iterations = result.optimizer.iterations;
    config["kind"] = "transitions";
    config["dt"] = c.dt;
    config["substeps"] = c.substeps;
    config["actuate"] = actuate;
  } else if (io::is_trajectories_table(table)) {
    const auto trajectories = io::trajectories_from_table(table, tree);
    const StagedFitResult staged = fit_dynamics_staged(tree, trajectories, c.horizon, c.dt, opts);
    result = staged.fit;
    iterations = staged.total_iterations();
    config["kind"] = "trajectories";
    config["horizon"] = c.horizon;
    config["dt"] = c.dt;
    config["schedule"] = staged.horizons;
    stages = json::array();
    for (std::size_t k = 0; k < staged.stages.size(); ++k)
      stages.push_back({{"horizon", staged.horizons[k]},
                        {"iterations", staged.stages[k].optimizer.iterations},
                        {"status", to_string(staged.stages[k].optimizer.status)},
                        {"loss_before", staged.stages[k].loss_before},
                        {"loss_after", staged.stages[k].loss_after}});
  } else {
    const auto pairs = io::pairs_from_table(table, tree);
    result = fit_dynamics(tree, pairs, c.horizon, c.dt, opts);
    iterations = result.optimizer.iterations;
    config["kind"] = "pairs";
    config["horizon"] = c.horizon;
    config["dt"] = c.dt;
  }

  json history = json::array();
  for (const auto& it : result.optimizer.history)
    history.push_back({{"iteration", it.iteration}, {"loss", it.value}, {"grad_inf_norm", it.grad_inf_norm}, {"theta", it.x}});
  json log = {{"config", config},
                    {"status", to_string(result.optimizer.status)},
                    {"iterations", iterations},
                    {"loss_before", result.loss_before},
                    {"loss_after", result.loss_after},
                    {"theta_before", result.theta_before},
                    {"theta_after", result.theta_after},
                    {"parameters", physical_parameters(tree)},
                    {"history", history}};
  if (!stages.is_null()) log["stages"] = stages;
  const std::string out = c.out.empty() ? "fitted_model.json" : c.out;
  write_json_file(out, model_to_json(tree));
  write_json_file(c.log.empty() ? out + ".convergence.json" : c.log, log);
  std::cout << "fit " << to_string(result.optimizer.status) << " iterations " << iterations << " loss "
            << result.loss_before << " -> " << result.loss_after << "\n";
  const json params = physical_parameters(tree);
  for (const auto& [path, value] : params.items()) std::cout << "  " << path << " = " << value << "\n";
  return kOk;
}

// ---------------------------------------------------------------- design

int run_design(const DesignConfig& c) {
  DesignProblem p;
  p.q_trajectory = io::joint_trajectory_from_table(io::read_csv(c.qtraj));
  p.p_trajectory = io::path_from_table(io::read_csv(c.ptraj));
  p.dof = c.dof > 0 ? c.dof : static_cast<int>(p.q_trajectory.empty() ? 0 : p.q_trajectory.front().size());
  if (!c.init.empty()) p.initial = io::dh_from_json(json::parse(read_text_file(c.init)));
  DesignOptions opts;
  opts.seed = c.seed;
  opts.optimizer.max_iterations = c.max_iterations;
  const DesignResult r = design_arm(p, opts);

  json series = json::array();
  for (const auto& it : r.optimizer.history) series.push_back({{"iteration", it.iteration}, {"loss", it.value}, {"R", it.x}});
  const json log = {{"config",
                     {{"command", "design"},
                      {"dof", p.dof},
                      {"qtraj", c.qtraj},
                      {"ptraj", c.ptraj},
                      {"init", c.init},
                      {"seed", c.seed},
                      {"max_iterations", c.max_iterations}}},
                    {"status", to_string(r.optimizer.status)},
                    {"iterations", r.optimizer.iterations},
                    {"initial_loss", r.initial_loss},
                    {"final_loss", r.final_loss},
                    {"rmse", r.rmse},
                    {"history", series}};
  const std::string out = c.out.empty() ? "design.json" : c.out;
  write_json_file(out, io::dh_to_json(r.R));
  write_json_file(c.log.empty() ? out + ".convergence.json" : c.log, log);
  std::cout << "design " << to_string(r.optimizer.status) << " iterations " << r.optimizer.iterations << " loss "
            << r.initial_loss << " -> " << r.final_loss << " rmse " << r.rmse << "\n";
  return kOk;
}

// ---------------------------------------------------------------- mpc

int run_mpc(const MpcConfig& c) {
  const KinematicTree<double> env = load_model_file(c.env);
  KinematicTree<double> model = load_model_file(c.model.empty() ? c.env : c.model);
  if (!c.init_value.empty()) set_parameters(model, theta_from_physical(model, c.init_value));

  AdaptiveMpcOptions o;
  o.episodes = c.episodes;
  o.steps = c.steps;
  o.horizon = c.horizon;
  o.first_episode_fit_interval = c.fit_interval;
  o.actuated_joints = c.actuate;
  o.dt = c.dt;
  o.substeps = c.substeps;
  o.bounds = ControlBounds::uniform(c.actuate.size(), -c.bound, c.bound);
  const StateEmbedding emb = StateEmbedding::for_tree(model, true);
  o.cost.goal = upright_goal(emb);
  o.cost.w_x = c.w_x;
  o.cost.w_u = c.w_u;
  o.cost.state_scale = c.state_scale.empty() ? default_state_scale(emb) : c.state_scale;
  o.ilqr.max_iterations = c.ilqr_iterations;
  o.fit.max_iterations = c.fit_iterations;
  o.initial_q = c.initial_q;
  if (o.initial_q.empty()) {
    // Default start: the first revolute joint hanging down, all else at zero.
    o.initial_q.assign(static_cast<std::size_t>(model.nq()), 0.0);
    if (!emb.angular.empty()) o.initial_q[static_cast<std::size_t>(emb.angular.front().q_index)] = M_PI;
  }
  o.initial_noise = c.initial_noise;
  o.warm_start_amplitude = c.warm_amplitude;
  o.seed = c.seed;

  const RunLog log = adaptive_mpc_run(env, model, o);

  std::filesystem::create_directories(c.outdir);
  json episodes = json::array();
  std::cout << "episode  cumulative_cost  fits  diagnostic\n";
  for (const auto& ep : log.episodes) {
    json fits = json::array();
    for (const auto& f : ep.fit_events)
      fits.push_back({{"step", f.step},
                      {"theta_before", f.theta_before},
                      {"theta_after", f.theta_after},
                      {"loss_before", f.loss_before},
                      {"loss_after", f.loss_after},
                      {"iterations", f.iterations},
                      {"status", f.status}});
    episodes.push_back({{"episode", ep.episode},
                        {"cumulative_cost", ep.cumulative_cost},
                        {"fit_events", fits},
                        {"prediction_error", ep.prediction_error},
                        {"diagnostic", ep.diagnostic}});

    Trajectory<double> traj;
    traj.dt = c.dt;
    traj.states = ep.states;
    std::vector<std::pair<std::string, std::vector<double>>> extra;
    for (std::size_t k = 0; k < c.actuate.size(); ++k) {
      std::vector<double> col;
      for (const auto& u : ep.controls) col.push_back(u[k]);
      extra.emplace_back(c.actuate.size() == 1 ? std::string("u") : "u" + std::to_string(k), std::move(col));
    }
    std::ofstream csv(c.outdir + "/episode_" + std::to_string(ep.episode) + ".csv");
    if (!csv) throw std::runtime_error("cannot write into '" + c.outdir + "'");
    write_trajectory_csv(csv, env, traj, extra);

    char line[160];
    std::snprintf(line, sizeof line, "%7d  %15.6f  %4zu  %s\n", ep.episode, ep.cumulative_cost, ep.fit_events.size(),
                  ep.diagnostic.c_str());
    std::cout << line;
  }
  const json run = {{"config",
                     {{"command", "mpc"},
                      {"env", c.env},
                      {"model", c.model.empty() ? c.env : c.model},
                      {"init_value", c.init_value},
                      {"episodes", c.episodes},
                      {"steps", c.steps},
                      {"horizon", c.horizon},
                      {"seed", c.seed},
                      {"actuate", c.actuate},
                      {"dt", c.dt},
                      {"substeps", c.substeps},
                      {"bound", c.bound},
                      {"w_x", c.w_x},
                      {"w_u", c.w_u},
                      {"state_scale", o.cost.state_scale},
                      {"goal", o.cost.goal},
                      {"initial_q", o.initial_q},
                      {"initial_noise", c.initial_noise},
                      {"warm_amplitude", c.warm_amplitude},
                      {"fit_iterations", c.fit_iterations},
                      {"fit_interval", c.fit_interval},
                      {"ilqr_iterations", c.ilqr_iterations}}},
                    {"episodes", episodes},
                    {"theta_final", log.theta_final},
                    {"parameters_final", physical_parameters(model)}};
  write_json_file(c.outdir + "/run_log.json", run);
  return kOk;
}

// ---------------------------------------------------------------- generate

int run_generate(const GenerateConfig& c) {
  std::mt19937_64 rng(c.seed);
  if (c.out.empty()) throw std::runtime_error("--out is required");
  if (c.kind == "design") {
    // --model is a DH document; writes the joint trajectory to --qout and the path to --out.
    if (c.qout.empty()) throw std::runtime_error("--qout is required for design data");
    const auto R = io::dh_from_json(json::parse(read_text_file(c.model)));
    const std::size_t dof = R.size() / 3;
    std::vector<std::vector<double>> q;
    for (int t = 0; t < c.count; ++t) q.push_back(uniform_vector(rng, dof, -M_PI, M_PI));
    io::write_csv_file(c.qout, io::joint_trajectory_table(q));
    io::write_csv_file(c.out, io::path_table(end_effector_path<double>(R, q)));
    return kOk;
  }
  const KinematicTree<double> tree = load_model_file(c.model);
  const auto nv = static_cast<std::size_t>(tree.nv());
  if (c.kind == "pairs") {
    std::vector<JointState<double>> starts;
    for (int k = 0; k < c.count; ++k) {
      JointState<double> s = JointState<double>::zero(tree.nq(), tree.nv());
      s.q = uniform_vector(rng, static_cast<std::size_t>(tree.nq()), -1.0, 1.0);
      s.qd = uniform_vector(rng, nv, -1.0, 1.0);
      starts.push_back(std::move(s));
    }
    io::write_csv_file(c.out, io::pairs_table(make_state_pairs(tree, starts, c.horizon, c.dt)));
    return kOk;
  }
  if (c.kind == "trajectories") {
    // Same start distribution as pairs; every trajectory covers one full horizon.
    std::vector<JointState<double>> starts;
    for (int k = 0; k < c.count; ++k) {
      JointState<double> s = JointState<double>::zero(tree.nq(), tree.nv());
      s.q = uniform_vector(rng, static_cast<std::size_t>(tree.nq()), -1.0, 1.0);
      s.qd = uniform_vector(rng, nv, -1.0, 1.0);
      starts.push_back(std::move(s));
    }
    io::write_csv_file(c.out, io::trajectories_table(make_state_trajectories(tree, starts, c.horizon, c.dt)));
    return kOk;
  }
  if (c.kind == "transitions") {
    const auto actuate = c.actuate.empty() ? one_dof_joints(tree) : c.actuate;
    const SystemSpec spec = SystemSpec::for_tree(tree, actuate, c.dt, true, c.substeps);
    ReplayBuffer buffer;
    for (int k = 0; k < c.count; ++k) {
      JointState<double> s = JointState<double>::zero(tree.nq(), tree.nv());
      s.q = random_configuration(tree, rng);
      s.qd = uniform_vector(rng, nv, -1.0, 1.0);
      const auto x = spec.embedding.embed(s);
      const auto u = uniform_vector(rng, spec.control_dim(), -c.bound, c.bound);
      buffer.add({x, u, spec.transition(tree, std::span<const double>(x), std::span<const double>(u))});
    }
    io::write_csv_file(c.out, io::transitions_table(buffer));
    return kOk;
  }
  throw std::runtime_error("unknown data kind '" + c.kind + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable rigid-body dynamics: simulation, gradients, identification, design and adaptive MPC"};
  app.require_subcommand(1);

  std::string config;
  auto add_config = [&](CLI::App* cmd) { cmd->add_option("--config", config, "JSON document of option defaults"); };

  SimulateConfig sim;
  auto* simulate = app.add_subcommand("simulate", "Roll out a model and write a trajectory CSV");
  simulate->add_option("model,--model", sim.model, "Model document")->required();
  simulate->add_option("--steps", sim.steps, "Number of integration steps");
  simulate->add_option("--dt", sim.dt, "Time step in seconds");
  simulate->add_option("--out", sim.out, "Output CSV path (stdout when omitted)");
  simulate->add_option("--q0", sim.q0, "Initial positions")->delimiter(',');
  simulate->add_option("--qd0", sim.qd0, "Initial velocities")->delimiter(',');
  simulate->add_option("--tau", sim.tau, "Constant generalized forces")->delimiter(',');
  add_config(simulate);

  GradcheckConfig gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare reverse-mode gradients against central differences");
  gradcheck->add_option("model,--model", gc.model, "Model document or DH document")->required();
  gradcheck->add_option("--target", gc.target, "fd | kin | rollout | design | loss")
      ->check(CLI::IsMember({"fd", "kin", "rollout", "design", "loss"}));
  gradcheck->add_option("--eps", gc.eps, "Relative finite-difference step");
  gradcheck->add_option("--trials", gc.trials, "Random configurations");
  gradcheck->add_option("--seed", gc.seed, "Random seed");
  gradcheck->add_option("--horizon", gc.horizon, "Rollout horizon for the rollout target");
  gradcheck->add_option("--dt", gc.dt, "Time step in seconds");
  gradcheck->add_option("--tolerance", gc.tolerance, "Pass threshold on the max relative error");
  gradcheck->add_option("--parallel", gc.parallel, "Worker threads for trials");
  add_config(gradcheck);

  FitConfig fc;
  auto* fit = app.add_subcommand("fit", "Fit free model parameters to transitions or state pairs");
  fit->add_option("--model", fc.model, "Model document (initial parameters)")->required();
  fit->add_option("--data", fc.data, "Transitions CSV (x..,u..,xn..), state-pair CSV (q..,qd..,qt..,qdt..) or trajectory CSV (traj,step,q..,qd..)")->required();
  fit->add_option("--horizon", fc.horizon, "Steps between the states of a pair");
  fit->add_option("--dt", fc.dt, "Time step in seconds");
  fit->add_option("--substeps", fc.substeps, "Integrator steps per transition");
  fit->add_option("--actuate", fc.actuate, "Actuated joints for transition data")->delimiter(',');
  fit->add_option("--init", fc.init, "Initial parameter values in physical units (one value or one per parameter)")
      ->delimiter(',');
  fit->add_option("--max-iterations", fc.max_iterations, "L-BFGS iteration cap");
  fit->add_option("--out", fc.out, "Fitted model document");
  fit->add_option("--log", fc.log, "Convergence record (JSON)");
  add_config(fit);

  DesignConfig dc;
  auto* design = app.add_subcommand("design", "Optimize DH parameters to follow a target end-effector path");
  design->add_option("--dof", dc.dof, "Number of joints (defaults to the joint trajectory width)");
  design->add_option("--qtraj", dc.qtraj, "Joint trajectory CSV (t,q0..)")->required();
  design->add_option("--ptraj", dc.ptraj, "Target path CSV (t,px,py,pz)")->required();
  design->add_option("--init", dc.init, "Initial DH document (blind initialization when omitted)");
  design->add_option("--seed", dc.seed, "Seed for the blind initialization");
  design->add_option("--max-iterations", dc.max_iterations, "L-BFGS iteration cap");
  design->add_option("--out", dc.out, "Output DH document");
  design->add_option("--log", dc.log, "Convergence record (JSON)");
  add_config(design);

  MpcConfig mc;
  auto* mpc = app.add_subcommand("mpc", "Adaptive MPC against a ground-truth environment model");
  mpc->add_option("--env", mc.env, "Environment model document (hidden parameters)")->required();
  mpc->add_option("--model", mc.model, "Controller model document (defaults to --env)");
  mpc->add_option("--init-value", mc.init_value, "Reset the controller model's free parameters (physical units)")
      ->delimiter(',');
  mpc->add_option("--episodes", mc.episodes, "Episodes");
  mpc->add_option("--steps", mc.steps, "Steps per episode");
  mpc->add_option("--horizon", mc.horizon, "iLQR horizon");
  mpc->add_option("--seed", mc.seed, "Random seed");
  mpc->add_option("--outdir", mc.outdir, "Output directory");
  mpc->add_option("--actuate", mc.actuate, "Actuated joints")->delimiter(',');
  mpc->add_option("--substeps", mc.substeps, "Integrator steps per control interval");
  mpc->add_option("--dt", mc.dt, "Control interval in seconds");
  mpc->add_option("--bound", mc.bound, "Symmetric control bound");
  mpc->add_option("--w-x", mc.w_x, "State cost weight");
  mpc->add_option("--w-u", mc.w_u, "Control cost weight");
  mpc->add_option("--state-scale", mc.state_scale, "Per-dimension state cost scale")->delimiter(',');
  mpc->add_option("--initial-q", mc.initial_q, "Initial joint positions")->delimiter(',');
  mpc->add_option("--initial-noise", mc.initial_noise, "Std. dev. of seeded noise on the initial positions");
  mpc->add_option("--warm-amplitude", mc.warm_amplitude, "Seeded random warm start half-width");
  mpc->add_option("--fit-iterations", mc.fit_iterations, "L-BFGS cap per fit");
  mpc->add_option("--fit-interval", mc.fit_interval, "Fit period in the first episode");
  mpc->add_option("--ilqr-iterations", mc.ilqr_iterations, "iLQR iteration cap per MPC step");
  add_config(mpc);

  GenerateConfig gen;
  auto* generate = app.add_subcommand("generate", "Generate datasets from a ground-truth model");
  generate->add_option("--kind", gen.kind, "pairs | trajectories | transitions | design")
      ->check(CLI::IsMember({"pairs", "trajectories", "transitions", "design"}));
  generate->add_option("--model", gen.model, "Model document (DH document for design data)")->required();
  generate->add_option("--count", gen.count, "Number of samples or waypoints");
  generate->add_option("--horizon", gen.horizon, "Steps between the states of a pair");
  generate->add_option("--dt", gen.dt, "Time step in seconds");
  generate->add_option("--substeps", gen.substeps, "Integrator steps per transition");
  generate->add_option("--actuate", gen.actuate, "Actuated joints for transitions")->delimiter(',');
  generate->add_option("--bound", gen.bound, "Control range for transitions");
  generate->add_option("--seed", gen.seed, "Random seed");
  generate->add_option("--out", gen.out, "Output CSV (target path for design data)");
  generate->add_option("--qout", gen.qout, "Joint trajectory CSV for design data");
  add_config(generate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kError;
  }

  try {
    for (CLI::App* cmd : app.get_subcommands()) {
      apply_config(*cmd, config);
      if (cmd == simulate) return run_simulate(sim);
      if (cmd == gradcheck) return run_gradcheck(gc);
      if (cmd == fit) return run_fit(fc);
      if (cmd == design) return run_design(dc);
      if (cmd == mpc) return run_mpc(mc);
      if (cmd == generate) return run_generate(gen);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
