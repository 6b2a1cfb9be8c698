#include "dgnc/pgo_solver.hpp"
#include "dgnc/rbcd.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace dgnc;

namespace {

MultiRobotPoseGraph small_grid(std::size_t robots, std::uint64_t seed) {
  GridOptions o;
  o.rows = 4;
  o.cols = 5;
  o.robots = robots;
  o.noise_rot = 0.01;
  o.noise_tr = 0.05;
  o.seed = seed;
  return synth_grid(o);
}

PoseMap perturbed(const PoseMap& poses, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  PoseMap out;
  for (const auto& [id, p] : poses) {
    Vector6d d;
    for (int i = 0; i < 6; ++i) d(i) = g(rng);
    out.emplace(id, boxplus(p, d));
  }
  return out;
}

std::vector<RobotId> robot_ids(const MultiRobotPoseGraph& g) {
  const auto r = g.robots();
  return {r.begin(), r.end()};
}

BlockMap run_rounds_to_convergence(const MultiRobotPoseGraph& g, BlockMap blocks, std::span<const double> w,
                                   const RbcdConfig& cfg, int rounds) {
  Network net(robot_ids(g));
  for (int k = 0; k < rounds; ++k) blocks = rbcd_round(blocks, g, w, cfg, net).blocks;
  return blocks;
}

std::map<NodeId, LiftedPosed> neighbors_of(const BlockMap& blocks, RobotId self) {
  std::map<NodeId, LiftedPosed> out;
  for (const auto& [r, b] : blocks) {
    if (r == self) continue;
    for (const auto& [idx, lp] : b.lifted) out.emplace(NodeId{r, idx}, lp);
  }
  return out;
}

}  // namespace

TEST_SUITE("rbcd") {
  TEST_CASE("lift pads with zeros and rounds back") {
    const MultiRobotPoseGraph g = small_grid(2, 1);
    const PoseMap gt = g.ground_truth();
    const BlockMap b3 = lift(g, gt, 3);
    for (const auto& [r, b] : b3) {
      for (const auto& [idx, lp] : b.lifted) {
        CHECK((lp.y_rot - gt.at({r, idx}).rot().matrix()).norm() == 0.0);
        CHECK((lp.y_trans - gt.at({r, idx}).trans()).norm() == 0.0);
      }
    }
    const BlockMap b5 = lift(g, gt, 5);
    CHECK(b5.at(0).rank() == 5);
    CHECK(b5.at(0).lifted.begin()->second.y_rot.bottomRows(2).norm() == 0.0);
    const PoseMap back = round_solution(b5);
    for (const auto& [id, p] : gt) CHECK(test::pose_distance(p, back.at(id)) < 1e-9);
    CHECK_THROWS_AS((void)round_solution(BlockMap{}), RbcdError);
  }

  TEST_CASE("lifted cost equals the chordal cost at a lift") {
    const MultiRobotPoseGraph g = small_grid(3, 2);
    const PoseMap x = perturbed(g.ground_truth(), 2, 0.05);
    std::vector<double> w(g.edges.size(), 1.0);
    w[3] = 0.25;
    for (int rank : {3, 5}) {
      CHECK(lifted_cost(g, w, lift(g, x, rank)) == doctest::Approx(pgo_cost(g, w, x)).epsilon(1e-12));
    }
  }

  TEST_CASE("rounding is invariant to an orthogonal change of basis") {
    const MultiRobotPoseGraph g = small_grid(2, 3);
    const PoseMap x = perturbed(g.ground_truth(), 3, 0.05);
    BlockMap b = lift(g, x, 5);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd a(5, 5);
    for (int i = 0; i < 25; ++i) a(i / 5, i % 5) = n(rng);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
    for (auto& [r, blk] : b) {
      for (auto& [idx, lp] : blk.lifted) {
        lp.y_rot = q * lp.y_rot;
        lp.y_trans = q * lp.y_trans;
      }
    }
    const PoseMap rounded = fix_gauge(round_solution(b), 0);
    const PoseMap ref = fix_gauge(x, 0);
    for (const auto& [id, p] : ref) CHECK(test::pose_distance(p, rounded.at(id)) < 1e-9);
  }

  TEST_CASE("block at a stationary point is left unchanged") {
    MultiRobotPoseGraph g = small_grid(2, 4);
    for (Edge& e : g.edges) e.meas = Pose3d(g.ground_truth().at(e.src).inverse() * g.ground_truth().at(e.dst));
    const BlockMap b = lift(g, g.ground_truth(), 5);
    const std::vector<double> w(g.edges.size(), 1.0);
    const auto edges = local_edges(g, 0);
    const BlockUpdateResult r = block_update(g, b.at(0), neighbors_of(b, 0), edges, w, RbcdConfig{});
    CHECK_FALSE(r.moved);
    CHECK(r.grad_norm < 1e-9);
    for (const auto& [idx, lp] : b.at(0).lifted) CHECK((r.block.lifted.at(idx).y_rot - lp.y_rot).norm() == 0.0);
  }

  TEST_CASE("block updates never increase the block cost") {
    const MultiRobotPoseGraph g = small_grid(3, 5);
    const std::vector<double> w(g.edges.size(), 1.0);
    for (BlockMethod m : {BlockMethod::TrustRegion, BlockMethod::GradientArmijo}) {
      RbcdConfig cfg;
      cfg.step = m;
      const BlockMap b = lift(g, perturbed(g.ground_truth(), 5, 0.3), 5);
      for (RobotId r : robot_ids(g)) {
        const auto edges = local_edges(g, r);
        const BlockUpdateResult u = block_update(g, b.at(r), neighbors_of(b, r), edges, w, cfg);
        CHECK(u.moved);
        CHECK(u.cost_after < u.cost_before);
      }
    }
  }

  TEST_CASE("a round makes the configured number of updates and is monotone") {
    const MultiRobotPoseGraph g = small_grid(3, 6);
    const std::vector<double> w(g.edges.size(), 1.0);
    Network net(robot_ids(g));
    net.add_predicate("public-poses-only", public_poses_only(g));
    const BlockMap b = lift(g, perturbed(g.ground_truth(), 6, 0.2), 5);
    const RbcdRoundResult r = rbcd_round(b, g, w, RbcdConfig{}, net);
    REQUIRE(r.events.size() == 15);
    double prev = lifted_cost(g, w, b);
    for (std::size_t k = 0; k < r.events.size(); ++k) {
      CHECK(r.events[k].index == k);
      CHECK(r.events[k].robot == static_cast<RobotId>(k % 3));
      CHECK(r.events[k].cost_after <= r.events[k].cost_before + 1e-12);
    }
    const double after = lifted_cost(g, w, r.blocks);
    CHECK(after <= prev);
    CHECK(net.ledger().message_count(MessageKind::PublicPoses) > 0);
  }

  TEST_CASE("two robots reach the centralized optimum") {
    const MultiRobotPoseGraph g = small_grid(2, 7);
    const std::vector<double> w(g.edges.size(), 1.0);
    const PoseMap init = perturbed(g.ground_truth(), 7, 0.05);
    const double central = pgo_cost(g, w, solve_weighted_pgo(g, w, init).poses);
    RbcdConfig cfg;
    cfg.rank = 3;
    const BlockMap b = run_rounds_to_convergence(g, lift(g, init, 3), w, cfg, 60);
    CHECK(lifted_cost(g, w, b) == doctest::Approx(central).epsilon(1e-6));
    CHECK(pgo_cost(g, w, round_solution(b)) == doctest::Approx(central).epsilon(1e-6));

    cfg.rank = 5;
    const BlockMap b5 = run_rounds_to_convergence(g, lift(g, init, 5), w, cfg, 60);
    CHECK(pgo_cost(g, w, round_solution(b5)) == doctest::Approx(central).epsilon(1e-6));
  }

  TEST_CASE("zero-weight inter-robot loops decouple the blocks") {
    const MultiRobotPoseGraph g = small_grid(2, 8);
    std::vector<double> w(g.edges.size(), 1.0);
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
      if (g.edges[k].kind == EdgeKind::InterLoop) w[k] = 0.0;
    }
    const PoseMap init = perturbed(g.ground_truth(), 8, 0.05);
    const BlockMap b = lift(g, init, 3);
    BlockMap moved = b;
    for (auto& [idx, lp] : moved.at(1).lifted) lp.y_trans += Vector3d(5, -3, 2);
    RbcdConfig cfg;
    cfg.rank = 3;
    const BlockMap x = run_rounds_to_convergence(g, b, w, cfg, 2);
    const BlockMap y = run_rounds_to_convergence(g, moved, w, cfg, 2);
    for (const auto& [idx, lp] : x.at(0).lifted) {
      CHECK((lp.y_rot - y.at(0).lifted.at(idx).y_rot).norm() == 0.0);
      CHECK((lp.y_trans - y.at(0).lifted.at(idx).y_trans).norm() == 0.0);
    }
  }

  TEST_CASE("agents only ever send their own public poses") {
    const MultiRobotPoseGraph g = small_grid(3, 9);
    const BlockMap b = lift(g, g.ground_truth(), 5);
    for (RobotId r : robot_ids(g)) {
      const RbcdAgent agent(g, b.at(r), RbcdConfig{});
      for (RobotId to : agent.neighbors()) {
        const Message m = agent.public_poses_for(to);
        CHECK(public_poses_only(g)(m));
        for (const LiftedEntry& e : decode_lifted(m)) {
          const NodeId id = NodeId::from_key(e.id);
          CHECK(id.robot == r);
          CHECK(public_indices(g, r).contains(id.index));
        }
      }
    }
    CHECK(neighbor_robots(g, 1) == std::vector<RobotId>{0, 2});
  }

  TEST_CASE("config validation") {
    RbcdConfig bad;
    bad.rank = 2;
    CHECK_THROWS(bad.validate());
    bad = RbcdConfig{};
    bad.rank = 5;
    bad.encoding = PoseEncoding::Pose3;
    CHECK_THROWS(bad.validate());
    CHECK(RbcdConfig{}.wire_encoding() == PoseEncoding::Lifted);
  }
}
