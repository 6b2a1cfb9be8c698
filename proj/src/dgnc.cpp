#include "dgnc/dgnc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace dgnc {

void DgncConfig::validate() const {
  tls.validate();
  rbcd.validate();
  if (early_stop_total_iters && *early_stop_total_iters <= 0) {
    throw std::invalid_argument("early_stop_total_iters must be positive");
  }
  if (full_max_rounds <= 0) throw std::invalid_argument("full_max_rounds must be positive");
}

namespace {

bool is_inter(const Edge& e) { return e.src.robot != e.dst.robot; }

/// The robot that computes the weight of loop edge e.
RobotId weight_owner(const Edge& e) { return std::min(e.src.robot, e.dst.robot); }

std::uint64_t pair_key(RobotId a, RobotId b) { return (static_cast<std::uint64_t>(a) << 8) | b; }
RobotPair unpack_pair(std::uint64_t key) {
  return {static_cast<RobotId>(key >> 8), static_cast<RobotId>(key & 0xff)};
}

std::map<RobotId, RbcdAgent*> index_agents(std::vector<RbcdAgent>& agents) {
  std::map<RobotId, RbcdAgent*> out;
  for (RbcdAgent& a : agents) out[a.id()] = &a;
  return out;
}

// Every robot sends the same scalars to every other robot; each returns the
// per-sender values it ends up holding (its own included).
std::map<RobotId, std::map<RobotId, std::vector<ScalarEntry>>> broadcast_control(
    const std::map<RobotId, std::vector<ScalarEntry>>& local, Network& net) {
  for (const auto& [from, entries] : local) {
    for (const auto& [to, unused] : local) {
      if (to != from) net.send(encode_scalars(MessageKind::Control, from, to, entries));
    }
  }
  net.barrier();
  std::map<RobotId, std::map<RobotId, std::vector<ScalarEntry>>> held;
  for (const auto& [r, entries] : local) {
    held[r][r] = entries;
    for (const Message& m : net.take_inbox(r)) {
      if (m.kind != MessageKind::Control) throw std::logic_error("unexpected message during control round");
      held[r][m.from] = decode_scalars(m);
    }
  }
  return held;
}

// Reduces a broadcast value; checks that every robot reached the same result.
template <typename Reduce>
double agree(const std::map<RobotId, std::map<RobotId, std::vector<ScalarEntry>>>& held, std::size_t slot,
             double init, Reduce reduce) {
  std::optional<double> common;
  for (const auto& [r, per_sender] : held) {
    double acc = init;
    for (const auto& [sender, entries] : per_sender) acc = reduce(acc, entries.at(slot).value);
    if (common && *common != acc) throw std::logic_error("robots disagree after control round");
    common = acc;
  }
  return common.value_or(init);
}

void exchange_to_lower(std::vector<RbcdAgent>& agents, const MultiRobotPoseGraph& graph, Network& net) {
  std::set<RobotPair> pairs;
  for (const Edge& e : graph.edges) {
    if (is_inter(e)) pairs.insert(std::minmax(e.src.robot, e.dst.robot));
  }
  auto by_id = index_agents(agents);
  for (const auto& [lo, hi] : pairs) net.send(by_id.at(hi)->public_poses_for(lo));
  net.barrier();
  for (RbcdAgent& a : agents) {
    for (const Message& m : net.take_inbox(a.id())) {
      if (m.kind != MessageKind::PublicPoses) throw std::logic_error("unexpected message during weight round");
      a.receive_public_poses(m);
    }
  }
}

std::vector<EdgeId> owned_loops(const RbcdAgent& a, const MultiRobotPoseGraph& graph) {
  std::vector<EdgeId> out;
  for (EdgeId k : a.edges()) {
    const Edge& e = graph.edges[k];
    if (e.is_loop() && weight_owner(e) == a.id()) out.push_back(k);
  }
  return out;
}

}  // namespace

BlockMap collect_blocks(const std::vector<RbcdAgent>& agents) {
  BlockMap out;
  for (const RbcdAgent& a : agents) out[a.id()] = a.block();
  return out;
}

std::vector<double> collect_weights(const std::vector<RbcdAgent>& agents, const MultiRobotPoseGraph& graph) {
  std::map<RobotId, const RbcdAgent*> by_id;
  for (const RbcdAgent& a : agents) by_id[a.id()] = &a;
  std::vector<double> w(graph.edges.size(), 1.0);
  for (EdgeId k = 0; k < graph.edges.size(); ++k) w[k] = by_id.at(graph.edges[k].src.robot)->weight(k);
  return w;
}

InitResult distributed_initialization(const MultiRobotPoseGraph& graph,
                                      const std::map<RobotId, PoseMap>& local_odometry, InitMode mode,
                                      const DgncConfig& cfg, Network& net) {
  InitResult out;
  const RobotDependencyGraph dep = RobotDependencyGraph::from_graph(graph);
  if (dep.vertices.empty()) throw std::invalid_argument("distributed_initialization: empty graph");
  std::mt19937_64 rng(cfg.seed);

  // The lower-id robot of every dependency pair aligns it and reports the
  // pair's support: robust inlier count, or loop count for naive init.
  std::map<RobotId, std::vector<ScalarEntry>> local_support;
  std::map<RobotId, std::map<RobotId, Pose3d>> rel;  // rel[a][b]: b's frame in a's, as known by a
  for (const auto& [lo, hi] : dep.edges) {
    const PairCandidates pc = pair_candidates(graph, lo, hi, local_odometry);
    FrameAlignment fa;
    double support = 0.0;
    if (mode == InitMode::Robust) {
      fa = align_pair(graph, lo, hi, local_odometry, cfg.init);
      support = fa.low_confidence ? 0.0 : static_cast<double>(fa.inlier_edges.size());
    } else {
      if (pc.candidates.empty()) throw std::invalid_argument("naive init: robots share no loop closure");
      std::uniform_int_distribution<std::size_t> pick(0, pc.candidates.size() - 1);
      const std::size_t k = pick(rng);
      fa.from_robot = lo;
      fa.to_robot = hi;
      fa.transform = pc.candidates[k];
      fa.inlier_edges = {pc.edges[k]};
      support = static_cast<double>(pc.candidates.size());
    }
    rel[lo][hi] = fa.transform;
    local_support[lo].push_back({pair_key(lo, hi), support});
    const PoseEntry entry{pair_key(lo, hi), fa.transform};
    net.send(encode_poses(MessageKind::FrameAlignmentResult, lo, hi, std::span(&entry, 1)));
    out.alignments[{lo, hi}] = std::move(fa);
  }
  for (RobotId from : dep.vertices) {
    const auto it = local_support.find(from);
    if (it == local_support.end()) continue;
    for (RobotId to : dep.vertices) {
      if (to != from) net.send(encode_scalars(MessageKind::SpanningTreeGrow, from, to, it->second));
    }
  }
  net.barrier();
  std::map<RobotId, std::map<RobotPair, double>> support_view;
  for (RobotId r : dep.vertices) {
    if (const auto it = local_support.find(r); it != local_support.end()) {
      for (const ScalarEntry& e : it->second) support_view[r][unpack_pair(e.key)] = e.value;
    }
    for (const Message& m : net.take_inbox(r)) {
      if (m.kind == MessageKind::FrameAlignmentResult) {
        for (const PoseEntry& e : decode_poses(m)) rel[r][m.from] = e.pose.inverse();
      } else if (m.kind == MessageKind::SpanningTreeGrow) {
        for (const ScalarEntry& e : decode_scalars(m)) support_view[r][unpack_pair(e.key)] = e.value;
      } else {
        throw std::logic_error("unexpected init message");
      }
    }
  }
  const RobotId root = dep.vertices.front();
  const SpanningTree tree = build_spanning_tree(dep, root, support_view[root]);
  for (RobotId r : dep.vertices) {
    if (build_spanning_tree(dep, root, support_view[r]).parent != tree.parent) {
      throw std::logic_error("robots disagree on the spanning tree");
    }
  }

  out.frames[tree.root] = Pose3d::identity();
  std::vector<RobotId> frontier{tree.root};
  while (!frontier.empty()) {
    for (RobotId r : frontier) {
      for (const auto& [c, p] : tree.parent) {
        if (p != r) continue;
        const PoseEntry entry{r, out.frames.at(r)};
        net.send(encode_poses(MessageKind::SpanningTreeGrow, r, c, std::span(&entry, 1)));
      }
    }
    net.barrier();
    std::vector<RobotId> next;
    for (RobotId r : dep.vertices) {
      for (const Message& m : net.take_inbox(r)) {
        if (m.kind != MessageKind::SpanningTreeGrow) throw std::logic_error("unexpected init message");
        const Pose3d parent_frame = decode_poses(m).at(0).pose;
        out.frames[r] = parent_frame * rel.at(r).at(m.from).inverse();
        next.push_back(r);
      }
    }
    frontier = std::move(next);
  }
  out.poses = apply_frames(local_odometry, out.frames);
  return out;
}

std::size_t distributed_weight_update(std::vector<RbcdAgent>& agents, const MultiRobotPoseGraph& graph,
                                      double mu, double c_bar_sq, Network& net) {
  exchange_to_lower(agents, graph, net);
  std::size_t sent = 0;
  for (RbcdAgent& a : agents) {
    for (EdgeId k : owned_loops(a, graph)) {
      const Edge& e = graph.edges[k];
      const double w = tls_weight(a.residual_sq(k), mu, c_bar_sq);
      a.set_weight(k, w);
      if (is_inter(e)) {
        const RobotId other = e.src.robot == a.id() ? e.dst.robot : e.src.robot;
        const ScalarEntry entry{k, w};
        net.send(encode_scalars(MessageKind::WeightUpdate, a.id(), other, std::span(&entry, 1)));
        ++sent;
      }
    }
  }
  net.barrier();
  for (RbcdAgent& a : agents) {
    for (const Message& m : net.take_inbox(a.id())) {
      if (m.kind != MessageKind::WeightUpdate) throw std::logic_error("unexpected message during weight round");
      for (const ScalarEntry& e : decode_scalars(m)) a.set_weight(static_cast<EdgeId>(e.key), e.value);
    }
  }
  return sent;
}

namespace {

class DgncRun {
 public:
  DgncRun(const MultiRobotPoseGraph& graph, const DgncConfig& cfg, Network& net)
      : graph_(graph), cfg_(cfg), net_(net) {}

  DgncResult run(const std::map<RobotId, PoseMap>& odometry, InitMode mode) {
    cfg_.validate();
    net_.add_predicate("public-poses-only", public_poses_only(graph_));
    DgncResult res;
    res.init = distributed_initialization(graph_, odometry, mode, cfg_, net_);
    const RobotId root = res.init.frames.begin()->first;

    for (auto& [r, block] : lift(graph_, res.init.poses, cfg_.rbcd.rank)) {
      agents_.emplace_back(graph_, std::move(block), cfg_.rbcd);
      for (EdgeId k : agents_.back().edges()) agents_.back().set_weight(k, 1.0);
    }

    try {
      loop(res);
    } catch (const std::exception& e) {
      PoseMap last;
      try {
        last = fix_gauge(round_solution(collect_blocks(agents_)), root);
      } catch (const std::exception&) {
        last = res.init.poses;
      }
      throw DgncError(e.what(), std::move(last));
    }

    res.poses = fix_gauge(round_solution(collect_blocks(agents_)), root);
    res.weights = collect_weights(agents_, graph_);
    res.block_updates = counter_;
    res.ledger = net_.ledger();
    return res;
  }

 private:
  bool budget_exhausted() const {
    return cfg_.early_stop_total_iters && counter_ >= static_cast<std::size_t>(*cfg_.early_stop_total_iters);
  }

  void updates(int n) {
    if (cfg_.early_stop_total_iters) {
      const auto left = static_cast<int>(*cfg_.early_stop_total_iters - static_cast<int>(counter_));
      n = std::min(n, std::max(left, 0));
    }
    std::function<void()> before;
    if (cfg_.before_update) before = [this] { cfg_.before_update(agents_); };
    rbcd_updates(
        agents_, n, offset_, net_, counter_,
        [this](const UpdateEvent& ev) {
          round_decrease_[ev.robot] += ev.cost_before - ev.cost_after;
          round_cost_[ev.robot] = ev.cost_after;
          if (cfg_.after_update) cfg_.after_update(ev, agents_);
        },
        before);
  }

  void variable_update() {
    if (!cfg_.full_variable_updates) {
      updates(cfg_.rbcd.iters_per_round);
      return;
    }
    solve_to_stall();
  }

  // RBCD rounds until the agreed relative decrease of a round drops below tolerance.
  void solve_to_stall() {
    for (int k = 0; k < cfg_.full_max_rounds && !budget_exhausted(); ++k) {
      round_decrease_.clear();
      round_cost_.clear();
      updates(cfg_.rbcd.iters_per_round);
      std::map<RobotId, std::vector<ScalarEntry>> local;
      for (const RbcdAgent& a : agents_) {
        local[a.id()] = {{0, round_decrease_[a.id()]}, {1, round_cost_[a.id()]}};
      }
      const auto held = broadcast_control(local, net_);
      const double dec = agree(held, 0, 0.0, [](double acc, double v) { return acc + v; });
      const double cost = agree(held, 1, 0.0, [](double acc, double v) { return acc + v; });
      if (dec <= cfg_.full_rel_tol * std::max(cost, 1e-300)) break;
    }
  }

  void loop(DgncResult& res) {
    gnc_loop(res);
    if (cfg_.final_refine && !res.early_stopped && !budget_exhausted()) solve_to_stall();
  }

  void gnc_loop(DgncResult& res) {
    const double c2 = cfg_.tls.c_bar_sq;
    variable_update();
    if (budget_exhausted()) {
      res.early_stopped = true;
      return;
    }

    // µ₀ from the largest loop residual
    exchange_to_lower(agents_, graph_, net_);
    std::map<RobotId, std::vector<ScalarEntry>> local;
    for (const RbcdAgent& a : agents_) {
      double m = 0.0;
      for (EdgeId k : owned_loops(a, graph_)) m = std::max(m, a.residual_sq(k));
      local[a.id()] = {{0, m}};
    }
    const double max_r2 =
        agree(broadcast_control(local, net_), 0, 0.0, [](double acc, double v) { return std::max(acc, v); });
    if (graph_.num_loops() == 0 || max_r2 == 0.0) {
      res.converged = true;
      return;
    }
    double mu = init_mu(max_r2, c2);
    res.mu = mu;
    if (std::isinf(mu)) {
      res.weight_round_messages.push_back(distributed_weight_update(agents_, graph_, mu, c2, net_));
      const std::vector<double> w = collect_weights(agents_, graph_);
      if (std::any_of(w.begin(), w.end(), [](double v) { return v != 1.0; })) variable_update();
      res.outer_iters = 1;
      res.converged = true;
      return;
    }

    while (true) {
      std::map<RobotId, std::vector<double>> prev;
      for (const RbcdAgent& a : agents_) {
        for (EdgeId k : owned_loops(a, graph_)) prev[a.id()].push_back(a.weight(k));
      }
      res.weight_round_messages.push_back(distributed_weight_update(agents_, graph_, mu, c2, net_));
      variable_update();
      ++res.outer_iters;
      res.mu = mu;
      if (budget_exhausted()) {
        res.early_stopped = true;
        return;
      }
      if (res.outer_iters >= cfg_.tls.max_outer_iters) return;

      std::map<RobotId, std::vector<ScalarEntry>> flags;
      for (const RbcdAgent& a : agents_) {
        const std::vector<EdgeId> owned = owned_loops(a, graph_);
        GncState st;
        st.outer_iter = 0;
        for (EdgeId k : owned) st.weights.push_back(a.weight(k));
        const bool done = gnc_converged(st, prev[a.id()], cfg_.tls);
        flags[a.id()] = {{0, done ? 1.0 : 0.0}};
      }
      const double all_done =
          agree(broadcast_control(flags, net_), 0, 1.0, [](double acc, double v) { return std::min(acc, v); });
      if (all_done == 1.0) {
        res.converged = true;
        return;
      }
      mu *= cfg_.tls.mu_update_factor;
    }
  }

  const MultiRobotPoseGraph& graph_;
  DgncConfig cfg_;
  Network& net_;
  std::vector<RbcdAgent> agents_;
  std::size_t offset_ = 0;
  std::size_t counter_ = 0;
  std::map<RobotId, double> round_decrease_;
  std::map<RobotId, double> round_cost_;
};

}  // namespace

DgncResult run_dgnc(const MultiRobotPoseGraph& graph, const std::map<RobotId, PoseMap>& local_odometry,
                    const DgncConfig& cfg, Network& net) {
  return DgncRun(graph, cfg, net).run(local_odometry, InitMode::Robust);
}

DgncResult run_dgnc(const MultiRobotPoseGraph& graph, const std::map<RobotId, PoseMap>& local_odometry,
                    const DgncConfig& cfg) {
  Network net(graph.robots());
  return run_dgnc(graph, local_odometry, cfg, net);
}

DgncResult run_naive_init_dgnc(const MultiRobotPoseGraph& graph,
                               const std::map<RobotId, PoseMap>& local_odometry, const DgncConfig& cfg,
                               Network& net) {
  return DgncRun(graph, cfg, net).run(local_odometry, InitMode::Naive);
}

DgncResult run_naive_init_dgnc(const MultiRobotPoseGraph& graph,
                               const std::map<RobotId, PoseMap>& local_odometry, const DgncConfig& cfg) {
  Network net(graph.robots());
  return run_naive_init_dgnc(graph, local_odometry, cfg, net);
}

}  // namespace dgnc
