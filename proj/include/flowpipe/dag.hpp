#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace flowpipe {

struct NodeId {
  std::string name;
  std::uint64_t seq = 0;

  friend bool operator==(const NodeId&, const NodeId&) = default;
};

/// Directed acyclic graph of named nodes.
///
/// Acyclicity is enforced when edges are inserted, so a Dag is never
/// observable in a cyclic state. Node seq numbers come from a counter that is
/// never rewound, and they break ties in topo_sort(). Incoming edges of a node
/// keep their insertion order; that order is the inbox slot order downstream.
class Dag {
 public:
  NodeId add_node(std::string name);
  void remove_node(std::string_view name);
  void add_edge(std::string_view from, std::string_view to);
  void remove_edge(std::string_view from, std::string_view to);

  bool contains(std::string_view name) const;
  bool has_edge(std::string_view from, std::string_view to) const;
  const NodeId& node(std::string_view name) const;
  std::size_t size() const noexcept { return order_.size(); }
  bool empty() const noexcept { return order_.empty(); }

  /// Nodes in insertion order.
  std::vector<NodeId> nodes() const;
  /// Edges in insertion order.
  std::vector<std::pair<std::string, std::string>> edges() const;

  /// Kahn's algorithm; among ready nodes the smallest seq goes first.
  std::vector<NodeId> topo_sort() const;

  std::vector<NodeId> roots() const;
  std::vector<NodeId> leaves() const;
  std::vector<NodeId> predecessors(std::string_view name) const;
  std::vector<NodeId> successors(std::string_view name) const;

  /// A directed path from -> ... -> to, if one exists.
  std::optional<std::vector<std::string>> find_path(std::string_view from,
                                                    std::string_view to) const;

 private:
  struct Node {
    NodeId id;
    std::vector<std::string> preds;  // incoming edge insertion order
    std::vector<std::string> succs;  // outgoing edge insertion order
  };
  struct Edge {
    std::string from;
    std::string to;
    std::uint64_t seq;
  };

  Node& at(std::string_view name);
  const Node& at(std::string_view name) const;

  std::unordered_map<std::string, Node> nodes_;
  std::vector<std::string> order_;
  std::vector<Edge> edges_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t next_edge_seq_ = 0;
};

}  // namespace flowpipe
