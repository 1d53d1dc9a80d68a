#include <doctest.h>

#include <random>
#include <sstream>

#include "support.hpp"

using namespace diffrbd;

namespace {

io::Table parse(const std::string& text) {
  std::istringstream in(text);
  return io::parse_csv(in);
}

std::string render(const io::Table& t) {
  std::ostringstream out;
  io::write_csv(out, t);
  return out.str();
}

}  // namespace

TEST_CASE("CSV parsing") {
  const auto t = parse("a, b,c\r\n1,2.5,-3e-2\n\n4,5,6\n");
  CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0] == std::vector<double>{1.0, 2.5, -0.03});
  CHECK(t.column("c") == 2);
  CHECK(t.column("z") == -1);

  CHECK_THROWS_WITH_AS(parse("a,b\n1,x\n"), doctest::Contains("bad number"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse("a,b\n1,2x\n"), doctest::Contains("bad number"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse("a,b\n1,2,3\n"), doctest::Contains("fields"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse(""), doctest::Contains("empty"), std::runtime_error);
  CHECK_THROWS_AS(io::read_csv("/nonexistent/file.csv"), std::runtime_error);
}

TEST_CASE("numbers survive a CSV round trip bit for bit") {
  std::mt19937_64 rng(1);
  io::Table t;
  t.header = {"x", "y"};
  for (int k = 0; k < 50; ++k) t.rows.push_back(testing::uniform(rng, 2, -1e6, 1e6));
  t.rows.push_back({1e-300, -0.1});
  const auto back = parse(render(t));
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK(render(back) == render(t));
}

TEST_CASE("dataset tables round-trip") {
  const auto tree = testing::load("double_cartpole.json");
  const auto spec = SystemSpec::for_tree(tree, {"slider"}, 0.05);
  std::mt19937_64 rng(2);

  ReplayBuffer buffer;
  std::vector<JointState<double>> starts;
  for (int k = 0; k < 5; ++k) {
    JointState<double> s = JointState<double>::zero(3, 3);
    s.q = testing::uniform(rng, 3, -1, 1);
    s.qd = testing::uniform(rng, 3, -1, 1);
    starts.push_back(s);
    const auto x = spec.embedding.embed(s);
    const std::vector<double> u{testing::uniform(rng, 1, -3, 3)[0]};
    buffer.add({x, u, spec.transition(tree, std::span<const double>(x), std::span<const double>(u))});
  }

  const auto tt = parse(render(io::transitions_table(buffer)));
  CHECK(io::is_transitions_table(tt));
  CHECK_FALSE(io::is_trajectories_table(tt));
  const auto b2 = io::transitions_from_table(tt);
  REQUIRE(b2.size() == buffer.size());
  for (std::size_t k = 0; k < buffer.size(); ++k) {
    CHECK(b2[k].x == buffer[k].x);
    CHECK(b2[k].u == buffer[k].u);
    CHECK(b2[k].x_next == buffer[k].x_next);
  }

  const auto pairs = make_state_pairs(tree, starts, 4, 0.05);
  const auto p2 = io::pairs_from_table(parse(render(io::pairs_table(pairs))), tree);
  REQUIRE(p2.size() == pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    CHECK(p2[k].start.q == pairs[k].start.q);
    CHECK(p2[k].target.qd == pairs[k].target.qd);
  }
  CHECK_THROWS_AS(io::pairs_from_table(io::pairs_table(pairs), testing::load("pendulum.json")), std::runtime_error);

  const auto trajs = make_state_trajectories(tree, starts, 6, 0.05);
  const auto tt3 = parse(render(io::trajectories_table(trajs)));
  CHECK(io::is_trajectories_table(tt3));
  const auto t2 = io::trajectories_from_table(tt3, tree);
  REQUIRE(t2.size() == trajs.size());
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    REQUIRE(t2[k].size() == 7);
    for (std::size_t j = 0; j < 7; ++j) CHECK(t2[k][j].q == trajs[k][j].q);
  }
  auto broken = tt3;
  broken.rows[2][1] = 5.0;
  CHECK_THROWS_AS(io::trajectories_from_table(broken, tree), std::runtime_error);
}

TEST_CASE("design files round-trip") {
  const std::vector<double> R{0.4, 0.1, 1.5, 0.0, 0.5, -0.2};
  CHECK(io::dh_from_json(nlohmann::json::parse(io::dh_to_json(R).dump())) == R);
  CHECK_THROWS_AS(io::dh_from_json(nlohmann::json::array()), std::runtime_error);
  CHECK_THROWS(io::dh_from_json(nlohmann::json::parse(R"([{"d":1,"a":2}])")));

  const std::vector<std::vector<double>> q{{0.1, 0.2}, {0.3, -0.4}};
  CHECK(io::joint_trajectory_from_table(parse(render(io::joint_trajectory_table(q)))) == q);
  const std::vector<Vec3<double>> p{Vec3<double>(1, 2, 3), Vec3<double>(-1, 0.5, 0)};
  const auto p2 = io::path_from_table(parse(render(io::path_table(p))));
  REQUIRE(p2.size() == 2);
  CHECK(p2[1].y == 0.5);
  CHECK_THROWS_AS(io::path_from_table(parse("t,px,py\n0,1,2\n")), std::runtime_error);
}
