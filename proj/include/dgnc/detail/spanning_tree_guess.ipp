#ifndef DGNC_DETAIL_SPANNING_TREE_GUESS_IPP
#define DGNC_DETAIL_SPANNING_TREE_GUESS_IPP

#include <deque>

namespace dgnc {

template <typename Pred>
PoseMap spanning_tree_guess(const MultiRobotPoseGraph& graph, Pred use_edge) {
  std::map<NodeId, std::vector<std::pair<const Edge*, bool>>> adj;
  for (const Edge& e : graph.edges) {
    if (!use_edge(e)) continue;
    adj[e.src].emplace_back(&e, true);
    adj[e.dst].emplace_back(&e, false);
  }
  PoseMap out;
  for (const auto& [root, node] : graph.nodes) {
    if (out.contains(root)) continue;
    out.emplace(root, Pose3d::identity());
    std::deque<NodeId> queue{root};
    while (!queue.empty()) {
      const NodeId cur = queue.front();
      queue.pop_front();
      const Pose3d base = out.at(cur);
      for (const auto& [e, forward] : adj[cur]) {
        const NodeId next = forward ? e->dst : e->src;
        if (out.contains(next)) continue;
        out.emplace(next, forward ? base * e->meas : base * e->meas.inverse());
        queue.push_back(next);
      }
    }
  }
  return out;
}

}  // namespace dgnc

#endif  // DGNC_DETAIL_SPANNING_TREE_GUESS_IPP
