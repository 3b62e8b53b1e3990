#include "flowpipe/dag.hpp"

#include <algorithm>
#include <functional>
#include <queue>
#include <unordered_set>

#include "flowpipe/error.hpp"

namespace flowpipe {

Dag::Node& Dag::at(std::string_view name) {
  auto it = nodes_.find(std::string(name));
  if (it == nodes_.end()) throw Error(ErrorCode::UnknownNode, std::string(name));
  return it->second;
}

const Dag::Node& Dag::at(std::string_view name) const {
  auto it = nodes_.find(std::string(name));
  if (it == nodes_.end()) throw Error(ErrorCode::UnknownNode, std::string(name));
  return it->second;
}

NodeId Dag::add_node(std::string name) {
  if (name.empty()) throw Error(ErrorCode::DuplicateName, "node name must be non-empty");
  if (nodes_.count(name)) throw Error(ErrorCode::DuplicateName, name);
  NodeId id{name, next_seq_++};
  order_.push_back(name);
  nodes_.emplace(std::move(name), Node{id, {}, {}});
  return id;
}

void Dag::remove_node(std::string_view name) {
  Node& n = at(name);
  const std::string key(name);
  for (const auto& p : n.preds) {
    auto& s = nodes_.at(p).succs;
    s.erase(std::remove(s.begin(), s.end(), key), s.end());
  }
  for (const auto& c : n.succs) {
    auto& p = nodes_.at(c).preds;
    p.erase(std::remove(p.begin(), p.end(), key), p.end());
  }
  std::erase_if(edges_, [&](const Edge& e) { return e.from == key || e.to == key; });
  std::erase(order_, key);
  nodes_.erase(key);
}

std::optional<std::vector<std::string>> Dag::find_path(std::string_view from,
                                                       std::string_view to) const {
  const std::string target(to);
  std::unordered_map<std::string, std::string> parent;
  std::vector<std::string> stack{std::string(from)};
  parent.emplace(std::string(from), std::string());
  while (!stack.empty()) {
    std::string cur = std::move(stack.back());
    stack.pop_back();
    if (cur == target) {
      std::vector<std::string> path;
      for (std::string p = cur; !p.empty(); p = parent.at(p)) path.push_back(p);
      std::reverse(path.begin(), path.end());
      return path;
    }
    for (const auto& s : at(cur).succs) {
      if (parent.emplace(s, cur).second) stack.push_back(s);
    }
  }
  return std::nullopt;
}

void Dag::add_edge(std::string_view from, std::string_view to) {
  Node& u = at(from);
  Node& v = at(to);
  if (from == to) throw Error(ErrorCode::SelfLoop, std::string(from));
  if (has_edge(from, to)) {
    throw Error(ErrorCode::DuplicateEdge, std::string(from) + " -> " + std::string(to));
  }
  if (auto back = find_path(to, from)) {
    std::string cycle;
    for (const auto& n : *back) cycle += n + " -> ";
    cycle += std::string(to);
    throw Error(ErrorCode::CycleRejected, "pipe " + std::string(from) + " -> " +
                                              std::string(to) + " would close cycle " + cycle);
  }
  u.succs.emplace_back(to);
  v.preds.emplace_back(from);
  edges_.push_back(Edge{std::string(from), std::string(to), next_edge_seq_++});
}

void Dag::remove_edge(std::string_view from, std::string_view to) {
  if (!contains(from) || !contains(to) || !has_edge(from, to)) {
    throw Error(ErrorCode::UnknownEdge, std::string(from) + " -> " + std::string(to));
  }
  auto& s = at(from).succs;
  s.erase(std::find(s.begin(), s.end(), std::string(to)));
  auto& p = at(to).preds;
  p.erase(std::find(p.begin(), p.end(), std::string(from)));
  std::erase_if(edges_, [&](const Edge& e) { return e.from == from && e.to == to; });
}

bool Dag::contains(std::string_view name) const { return nodes_.count(std::string(name)) > 0; }

bool Dag::has_edge(std::string_view from, std::string_view to) const {
  auto it = nodes_.find(std::string(from));
  if (it == nodes_.end()) return false;
  const auto& s = it->second.succs;
  return std::find(s.begin(), s.end(), to) != s.end();
}

const NodeId& Dag::node(std::string_view name) const { return at(name).id; }

std::vector<NodeId> Dag::nodes() const {
  std::vector<NodeId> out;
  out.reserve(order_.size());
  for (const auto& n : order_) out.push_back(nodes_.at(n).id);
  return out;
}

std::vector<std::pair<std::string, std::string>> Dag::edges() const {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(edges_.size());
  for (const auto& e : edges_) out.emplace_back(e.from, e.to);
  return out;
}

std::vector<NodeId> Dag::topo_sort() const {
  std::unordered_map<std::string, std::size_t> indegree;
  using Entry = std::pair<std::uint64_t, std::string>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> ready;
  for (const auto& name : order_) {
    const Node& n = nodes_.at(name);
    indegree[name] = n.preds.size();
    if (n.preds.empty()) ready.emplace(n.id.seq, name);
  }
  std::vector<NodeId> out;
  out.reserve(order_.size());
  while (!ready.empty()) {
    auto [seq, name] = ready.top();
    ready.pop();
    const Node& n = nodes_.at(name);
    out.push_back(n.id);
    for (const auto& s : n.succs) {
      if (--indegree[s] == 0) ready.emplace(nodes_.at(s).id.seq, s);
    }
  }
  return out;
}

std::vector<NodeId> Dag::roots() const {
  std::vector<NodeId> out;
  for (const auto& name : order_) {
    const Node& n = nodes_.at(name);
    if (n.preds.empty()) out.push_back(n.id);
  }
  return out;
}

std::vector<NodeId> Dag::leaves() const {
  std::vector<NodeId> out;
  for (const auto& name : order_) {
    const Node& n = nodes_.at(name);
    if (n.succs.empty()) out.push_back(n.id);
  }
  return out;
}

std::vector<NodeId> Dag::predecessors(std::string_view name) const {
  std::vector<NodeId> out;
  for (const auto& p : at(name).preds) out.push_back(nodes_.at(p).id);
  return out;
}

std::vector<NodeId> Dag::successors(std::string_view name) const {
  std::vector<NodeId> out;
  for (const auto& s : at(name).succs) out.push_back(nodes_.at(s).id);
  return out;
}

}  // namespace flowpipe
