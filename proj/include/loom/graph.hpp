#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "loom/canonical.hpp"
#include "loom/errors.hpp"
#include "loom/schema.hpp"
#include "loom/validation.hpp"

namespace loom {

enum class NodeKind {
  Agent,
  Broker,
  Tool,
  External,
  Evaluator,
  Integrator,
};

inline const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Agent: return "agent";
    case NodeKind::Broker: return "broker";
    case NodeKind::Tool: return "tool";
    case NodeKind::External: return "external";
    case NodeKind::Evaluator: return "evaluator";
    case NodeKind::Integrator: return "integrator";
  }
  return "agent";
}

inline NodeKind node_kind_from(const std::string& text) {
  if (text == "agent") return NodeKind::Agent;
  if (text == "broker") return NodeKind::Broker;
  if (text == "tool") return NodeKind::Tool;
  if (text == "external") return NodeKind::External;
  if (text == "evaluator") return NodeKind::Evaluator;
  if (text == "integrator") return NodeKind::Integrator;
  throw Error(ErrorCode::MalformedDocument, "unknown node kind '" + text + "'");
}

struct Node {
  std::string id;
  NodeKind kind = NodeKind::Agent;
  std::string instruction;
  std::string executor_binding;  // empty = registry default

  bool operator==(const Node& other) const = default;
};

struct Edge {
  std::string from;
  std::string to;
  std::string schema;

  bool operator==(const Edge& other) const = default;
};

/// Input/output schema a node declares; empty means unspecified (the node
/// accepts or emits untyped payloads and never forces a broker).
struct IoDeclaration {
  std::string input_schema;
  std::string output_schema;

  bool operator==(const IoDeclaration& other) const = default;
};

/// Field mapping a broker applies between two registered schemas.
/// field_map is keyed by target field name; element_renames applies to keys
/// inside list-of-record elements.
struct FieldMapping {
  std::string source_schema;
  std::string target_schema;
  std::map<std::string, std::string> field_map;
  std::map<std::string, std::string> element_renames;

  bool operator==(const FieldMapping& other) const = default;
};

struct InterfaceProtocol {
  std::map<std::string, IoDeclaration> node_io;       // node id -> declared io
  std::map<std::string, FieldMapping> broker_mappings;  // broker node id -> mapping

  bool operator==(const InterfaceProtocol& other) const = default;
};

struct WorkflowGraph {
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::map<std::string, std::set<std::string>> attachments;  // node id -> entry ids
  InterfaceProtocol protocol;
  std::map<std::string, std::string> roles;  // node id -> role descriptor

  const Node* find_node(const std::string& id) const {
    for (const auto& node : nodes) {
      if (node.id == id) return &node;
    }
    return nullptr;
  }

  Node* find_node(const std::string& id) {
    for (auto& node : nodes) {
      if (node.id == id) return &node;
    }
    return nullptr;
  }

  bool has_node(const std::string& id) const { return find_node(id) != nullptr; }

  std::vector<const Edge*> in_edges(const std::string& id) const {
    std::vector<const Edge*> result;
    for (const auto& edge : edges) {
      if (edge.to == id) result.push_back(&edge);
    }
    return result;
  }

  std::vector<const Edge*> out_edges(const std::string& id) const {
    std::vector<const Edge*> result;
    for (const auto& edge : edges) {
      if (edge.from == id) result.push_back(&edge);
    }
    return result;
  }

  IoDeclaration io_of(const std::string& id) const {
    auto it = protocol.node_io.find(id);
    return it == protocol.node_io.end() ? IoDeclaration{} : it->second;
  }
};

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline Json to_json(const Node& node) {
  return Json{{"id", node.id},
              {"kind", to_string(node.kind)},
              {"instruction", node.instruction},
              {"executor_binding", node.executor_binding}};
}

inline Json to_json(const Edge& edge) {
  return Json{{"from", edge.from}, {"to", edge.to}, {"schema", edge.schema}};
}

inline Json to_json(const IoDeclaration& io) {
  return Json{{"input_schema", io.input_schema}, {"output_schema", io.output_schema}};
}

inline Json to_json(const FieldMapping& mapping) {
  return Json{{"source_schema", mapping.source_schema},
              {"target_schema", mapping.target_schema},
              {"field_map", Json(mapping.field_map)},
              {"element_renames", Json(mapping.element_renames)}};
}

// Canonical form: nodes sorted by id, edges sorted by (from, to), attachment
// sets and maps key-sorted.
inline Json to_json(const WorkflowGraph& graph) {
  std::vector<Node> nodes = graph.nodes;
  std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
  std::vector<Edge> edges = graph.edges;
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return a.from != b.from ? a.from < b.from : a.to < b.to;
  });

  Json node_array = Json::array();
  for (const auto& node : nodes) node_array.push_back(to_json(node));
  Json edge_array = Json::array();
  for (const auto& edge : edges) edge_array.push_back(to_json(edge));

  Json attachments = Json::object();
  for (const auto& [id, entries] : graph.attachments) {
    Json list = Json::array();
    for (const auto& entry : entries) list.push_back(entry);
    attachments[id] = list;
  }

  Json node_io = Json::object();
  for (const auto& [id, io] : graph.protocol.node_io) node_io[id] = to_json(io);
  Json broker_mappings = Json::object();
  for (const auto& [id, mapping] : graph.protocol.broker_mappings) {
    broker_mappings[id] = to_json(mapping);
  }

  return Json{{"nodes", node_array},
              {"edges", edge_array},
              {"attachments", attachments},
              {"protocol", Json{{"node_io", node_io}, {"broker_mappings", broker_mappings}}},
              {"roles", Json(graph.roles)}};
}

inline std::string serialize_graph(const WorkflowGraph& graph) {
  return canonical_dump(to_json(graph));
}

inline Node parse_node(const Json& document) {
  expect_object(document, "node");
  expect_keys(document, {"id", "kind", "instruction", "executor_binding"}, "node");
  Node node;
  node.id = get_string(document, "id", "", "node");
  if (!is_identifier(node.id)) {
    throw Error(ErrorCode::MalformedDocument, "node id must be a non-empty identifier");
  }
  node.kind = node_kind_from(get_string(document, "kind", "", "node"));
  node.instruction = get_string(document, "instruction", "", "node");
  node.executor_binding = get_string(document, "executor_binding", "", "node");
  return node;
}

inline IoDeclaration parse_io_declaration(const Json& document) {
  expect_object(document, "io declaration");
  expect_keys(document, {"input_schema", "output_schema"}, "io declaration");
  return {get_string(document, "input_schema", "", "io declaration"),
          get_string(document, "output_schema", "", "io declaration")};
}

inline FieldMapping parse_field_mapping(const Json& document) {
  expect_object(document, "field mapping");
  expect_keys(document, {"source_schema", "target_schema", "field_map", "element_renames"},
              "field mapping");
  FieldMapping mapping;
  mapping.source_schema = get_string(document, "source_schema", "", "field mapping");
  mapping.target_schema = get_string(document, "target_schema", "", "field mapping");
  if (document.contains("field_map")) {
    mapping.field_map = document.at("field_map").get<std::map<std::string, std::string>>();
  }
  if (document.contains("element_renames")) {
    mapping.element_renames =
        document.at("element_renames").get<std::map<std::string, std::string>>();
  }
  return mapping;
}

inline WorkflowGraph deserialize_graph(const Json& document) {
  return reject_malformed("graph", [&] {
  expect_object(document, "graph");
  expect_keys(document, {"nodes", "edges", "attachments", "protocol", "roles"}, "graph");
  WorkflowGraph graph;
  if (document.contains("nodes")) {
    if (!document.at("nodes").is_array()) {
      throw Error(ErrorCode::MalformedDocument, "graph nodes must be a list");
    }
    for (const Json& node : document.at("nodes")) graph.nodes.push_back(parse_node(node));
  }
  if (document.contains("edges")) {
    if (!document.at("edges").is_array()) {
      throw Error(ErrorCode::MalformedDocument, "graph edges must be a list");
    }
    for (const Json& edge : document.at("edges")) {
      expect_object(edge, "edge");
      expect_keys(edge, {"from", "to", "schema"}, "edge");
      graph.edges.push_back({get_string(edge, "from", "", "edge"),
                             get_string(edge, "to", "", "edge"),
                             get_string(edge, "schema", "", "edge")});
    }
  }
  if (document.contains("attachments")) {
    expect_object(document.at("attachments"), "attachments");
    for (const auto& item : document.at("attachments").items()) {
      std::set<std::string> entries;
      for (const Json& entry : item.value()) {
        if (!entry.is_string()) {
          throw Error(ErrorCode::MalformedDocument, "attachment entries must be strings");
        }
        entries.insert(entry.get<std::string>());
      }
      graph.attachments[item.key()] = std::move(entries);
    }
  }
  if (document.contains("protocol")) {
    const Json& protocol = document.at("protocol");
    expect_object(protocol, "protocol");
    expect_keys(protocol, {"node_io", "broker_mappings"}, "protocol");
    if (protocol.contains("node_io")) {
      for (const auto& item : protocol.at("node_io").items()) {
        graph.protocol.node_io[item.key()] = parse_io_declaration(item.value());
      }
    }
    if (protocol.contains("broker_mappings")) {
      for (const auto& item : protocol.at("broker_mappings").items()) {
        graph.protocol.broker_mappings[item.key()] = parse_field_mapping(item.value());
      }
    }
  }
  if (document.contains("roles")) {
    expect_object(document.at("roles"), "roles");
    graph.roles = document.at("roles").get<std::map<std::string, std::string>>();
  }
  return graph;
  });
}

inline WorkflowGraph deserialize_graph_text(const std::string& text) {
  return deserialize_graph(parse_document(text));
}

/// Structural equality: equality of canonical serializations.
inline bool structurally_equal(const WorkflowGraph& a, const WorkflowGraph& b) {
  return serialize_graph(a) == serialize_graph(b);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace detail {

// Kahn's algorithm; returns ids left on a cycle (empty = acyclic).
inline std::vector<std::string> cycle_members(const WorkflowGraph& graph) {
  std::map<std::string, int> indegree;
  for (const auto& node : graph.nodes) indegree[node.id] = 0;
  for (const auto& edge : graph.edges) {
    if (indegree.count(edge.to) && indegree.count(edge.from)) ++indegree[edge.to];
  }
  std::vector<std::string> queue;
  for (const auto& [id, degree] : indegree) {
    if (degree == 0) queue.push_back(id);
  }
  std::size_t processed = 0;
  while (!queue.empty()) {
    std::string id = queue.back();
    queue.pop_back();
    ++processed;
    for (const auto& edge : graph.edges) {
      if (edge.from != id || !indegree.count(edge.to)) continue;
      if (--indegree[edge.to] == 0) queue.push_back(edge.to);
    }
  }
  std::vector<std::string> members;
  if (processed != indegree.size()) {
    for (const auto& [id, degree] : indegree) {
      if (degree > 0) members.push_back(id);
    }
  }
  return members;
}

}  // namespace detail

/// Structural validation: duplicate ids, dangling edges, cycles, broker
/// degree, interface mismatches between adjacent nodes that both declare
/// concrete schemas, and attachments on unknown nodes. Empty iff executable.
inline ValidationReport validate_graph(const WorkflowGraph& graph) {
  ValidationReport report;

  std::set<std::string> ids;
  for (const auto& node : graph.nodes) {
    if (!ids.insert(node.id).second) {
      report.add("duplicate_node", node.id, "node id appears more than once");
    }
  }

  std::set<std::pair<std::string, std::string>> edge_keys;
  for (const auto& edge : graph.edges) {
    std::string subject = edge.from + "->" + edge.to;
    if (!ids.count(edge.from)) report.add("dangling_edge", subject, "unknown source node");
    if (!ids.count(edge.to)) report.add("dangling_edge", subject, "unknown target node");
    if (edge.from == edge.to) report.add("cycle", subject, "self-loop");
    if (!edge_keys.insert({edge.from, edge.to}).second) {
      report.add("duplicate_edge", subject, "edge appears more than once");
    }
  }

  auto cycle = detail::cycle_members(graph);
  if (!cycle.empty()) {
    std::string names;
    for (const auto& id : cycle) {
      if (!names.empty()) names += ", ";
      names += id;
    }
    report.add("cycle", names, "edge relation contains a cycle");
  }

  for (const auto& node : graph.nodes) {
    if (node.kind != NodeKind::Broker) continue;
    std::size_t in = graph.in_edges(node.id).size();
    std::size_t out = graph.out_edges(node.id).size();
    if (in != 1 || out != 1) {
      report.add("broker_degree", node.id,
                 "broker must have exactly one inbound and one outbound edge, has " +
                     std::to_string(in) + "/" + std::to_string(out));
    }
  }

  for (const auto& edge : graph.edges) {
    const Node* from = graph.find_node(edge.from);
    const Node* to = graph.find_node(edge.to);
    if (!from || !to) continue;
    if (from->kind == NodeKind::Broker || to->kind == NodeKind::Broker) continue;
    std::string produced = graph.io_of(edge.from).output_schema;
    std::string consumed = graph.io_of(edge.to).input_schema;
    if (!produced.empty() && !consumed.empty() && produced != consumed) {
      report.add("interface", edge.from + "->" + edge.to,
                 "producer emits '" + produced + "' but consumer expects '" + consumed +
                     "' and no broker mediates");
    }
  }

  for (const auto& [id, entries] : graph.attachments) {
    if (!ids.count(id)) {
      report.add("unknown_node", id, "attachments reference a node that does not exist");
    }
  }

  return report;
}

/// Validation that additionally checks edge schemas against a registry.
inline ValidationReport validate_graph(const WorkflowGraph& graph, const SchemaRegistry& registry) {
  ValidationReport report = validate_graph(graph);
  for (const auto& edge : graph.edges) {
    if (!edge.schema.empty() && !registry.has(edge.schema)) {
      report.add("unknown_schema", edge.from + "->" + edge.to,
                 "edge schema '" + edge.schema + "' is not registered");
    }
  }
  return report;
}

/// Stage i holds exactly the nodes whose longest path from any source has
/// length i; within a stage, ids are sorted lexicographically.
inline std::vector<std::vector<std::string>> topological_stages(const WorkflowGraph& graph) {
  if (!detail::cycle_members(graph).empty()) {
    throw Error(ErrorCode::CyclicGraph, "graph has a cycle; stages undefined");
  }
  for (const auto& edge : graph.edges) {
    if (!graph.has_node(edge.from) || !graph.has_node(edge.to) || edge.from == edge.to) {
      throw Error(ErrorCode::CyclicGraph, "graph has dangling or self-loop edges");
    }
  }
  std::map<std::string, int> depth;
  for (const auto& node : graph.nodes) depth[node.id] = 0;
  // Relax longest-path depths; bounded by node count since the graph is acyclic.
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& edge : graph.edges) {
      if (depth[edge.to] < depth[edge.from] + 1) {
        depth[edge.to] = depth[edge.from] + 1;
        changed = true;
      }
    }
  }
  int max_depth = -1;
  for (const auto& [id, d] : depth) max_depth = std::max(max_depth, d);
  std::vector<std::vector<std::string>> stages(static_cast<std::size_t>(max_depth + 1));
  for (const auto& [id, d] : depth) stages[static_cast<std::size_t>(d)].push_back(id);
  for (auto& stage : stages) std::sort(stage.begin(), stage.end());
  return stages;
}

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

enum class ChangeOp { Add, Remove, Modify };

inline const char* to_string(ChangeOp op) {
  switch (op) {
    case ChangeOp::Add: return "add";
    case ChangeOp::Remove: return "remove";
    case ChangeOp::Modify: return "modify";
  }
  return "add";
}

inline ChangeOp change_op_from(const std::string& text) {
  if (text == "add") return ChangeOp::Add;
  if (text == "remove") return ChangeOp::Remove;
  if (text == "modify") return ChangeOp::Modify;
  throw Error(ErrorCode::MalformedDocument, "unknown change op '" + text + "'");
}

struct NodeChange {
  ChangeOp op = ChangeOp::Add;
  Node node;
  std::string role;
  IoDeclaration io;
  std::optional<FieldMapping> mapping;

  bool operator==(const NodeChange& other) const = default;
};

struct EdgeChange {
  ChangeOp op = ChangeOp::Add;  // add or remove only
  Edge edge;

  bool operator==(const EdgeChange& other) const = default;
};

struct AttachmentChange {
  ChangeOp op = ChangeOp::Add;  // add or remove only
  std::string node;
  std::string entry;

  bool operator==(const AttachmentChange& other) const = default;
};

/// A locality-constrained delta. Every change must reference a node in
/// target_nodes or an edge incident to one.
struct GraphPatch {
  std::set<std::string> target_nodes;
  std::vector<NodeChange> node_changes;
  std::vector<EdgeChange> edge_changes;
  std::vector<AttachmentChange> attachment_changes;

  bool empty() const {
    return node_changes.empty() && edge_changes.empty() && attachment_changes.empty();
  }
};

inline Json to_json(const GraphPatch& patch) {
  Json targets = Json::array();
  for (const auto& id : patch.target_nodes) targets.push_back(id);
  Json node_changes = Json::array();
  for (const auto& change : patch.node_changes) {
    Json item{{"op", to_string(change.op)},
              {"node", to_json(change.node)},
              {"role", change.role},
              {"io", to_json(change.io)}};
    if (change.mapping) item["mapping"] = to_json(*change.mapping);
    node_changes.push_back(item);
  }
  Json edge_changes = Json::array();
  for (const auto& change : patch.edge_changes) {
    edge_changes.push_back(Json{{"op", to_string(change.op)}, {"edge", to_json(change.edge)}});
  }
  Json attachment_changes = Json::array();
  for (const auto& change : patch.attachment_changes) {
    attachment_changes.push_back(
        Json{{"op", to_string(change.op)}, {"node", change.node}, {"entry", change.entry}});
  }
  return Json{{"target_nodes", targets},
              {"node_changes", node_changes},
              {"edge_changes", edge_changes},
              {"attachment_changes", attachment_changes}};
}

inline std::string serialize_patch(const GraphPatch& patch) { return canonical_dump(to_json(patch)); }

inline GraphPatch parse_patch(const Json& document) {
  return reject_malformed("patch", [&] {
  expect_object(document, "patch");
  expect_keys(document, {"target_nodes", "node_changes", "edge_changes", "attachment_changes"},
              "patch");
  GraphPatch patch;
  if (document.contains("target_nodes")) {
    for (const Json& id : document.at("target_nodes")) {
      patch.target_nodes.insert(id.get<std::string>());
    }
  }
  if (document.contains("node_changes")) {
    for (const Json& item : document.at("node_changes")) {
      expect_object(item, "node change");
      expect_keys(item, {"op", "node", "role", "io", "mapping"}, "node change");
      NodeChange change;
      change.op = change_op_from(get_string(item, "op", "", "node change"));
      change.node = parse_node(item.at("node"));
      change.role = get_string(item, "role", "", "node change");
      if (item.contains("io")) change.io = parse_io_declaration(item.at("io"));
      if (item.contains("mapping")) change.mapping = parse_field_mapping(item.at("mapping"));
      patch.node_changes.push_back(std::move(change));
    }
  }
  if (document.contains("edge_changes")) {
    for (const Json& item : document.at("edge_changes")) {
      expect_object(item, "edge change");
      expect_keys(item, {"op", "edge"}, "edge change");
      EdgeChange change;
      change.op = change_op_from(get_string(item, "op", "", "edge change"));
      const Json& edge = item.at("edge");
      change.edge = {get_string(edge, "from", "", "edge"), get_string(edge, "to", "", "edge"),
                     get_string(edge, "schema", "", "edge")};
      patch.edge_changes.push_back(std::move(change));
    }
  }
  if (document.contains("attachment_changes")) {
    for (const Json& item : document.at("attachment_changes")) {
      expect_object(item, "attachment change");
      expect_keys(item, {"op", "node", "entry"}, "attachment change");
      patch.attachment_changes.push_back({change_op_from(get_string(item, "op", "", "attachment change")),
                                          get_string(item, "node", "", "attachment change"),
                                          get_string(item, "entry", "", "attachment change")});
    }
  }
  return patch;
  });
}

/// Applies a patch to a copy of the graph; the input graph is never mutated.
/// Rejects changes outside the target closure (PatchOutOfLocality) and
/// patches whose result fails structural validation (PatchYieldsInvalidGraph).
inline WorkflowGraph apply_patch(const WorkflowGraph& graph, const GraphPatch& patch) {
  auto in_targets = [&](const std::string& id) { return patch.target_nodes.count(id) > 0; };

  for (const auto& change : patch.node_changes) {
    if (!in_targets(change.node.id)) {
      throw Error(ErrorCode::PatchOutOfLocality,
                  "node change for '" + change.node.id + "' outside target_nodes");
    }
  }
  for (const auto& change : patch.edge_changes) {
    if (!in_targets(change.edge.from) && !in_targets(change.edge.to)) {
      throw Error(ErrorCode::PatchOutOfLocality,
                  "edge change " + change.edge.from + "->" + change.edge.to +
                      " not incident to target_nodes");
    }
  }
  for (const auto& change : patch.attachment_changes) {
    if (!in_targets(change.node)) {
      throw Error(ErrorCode::PatchOutOfLocality,
                  "attachment change for '" + change.node + "' outside target_nodes");
    }
  }

  WorkflowGraph result = graph;

  for (const auto& change : patch.node_changes) {
    if (change.op != ChangeOp::Remove) continue;
    auto it = std::find_if(result.nodes.begin(), result.nodes.end(),
                           [&](const Node& n) { return n.id == change.node.id; });
    if (it == result.nodes.end()) {
      throw Error(ErrorCode::PatchYieldsInvalidGraph, "removing unknown node '" + change.node.id + "'");
    }
    result.nodes.erase(it);
    result.roles.erase(change.node.id);
    result.attachments.erase(change.node.id);
    result.protocol.node_io.erase(change.node.id);
    result.protocol.broker_mappings.erase(change.node.id);
  }
  for (const auto& change : patch.node_changes) {
    if (change.op != ChangeOp::Add) continue;
    if (result.has_node(change.node.id)) {
      throw Error(ErrorCode::PatchYieldsInvalidGraph, "adding duplicate node '" + change.node.id + "'");
    }
    result.nodes.push_back(change.node);
    if (!change.role.empty()) result.roles[change.node.id] = change.role;
    if (change.io != IoDeclaration{}) result.protocol.node_io[change.node.id] = change.io;
    if (change.mapping) result.protocol.broker_mappings[change.node.id] = *change.mapping;
  }
  for (const auto& change : patch.node_changes) {
    if (change.op != ChangeOp::Modify) continue;
    Node* node = result.find_node(change.node.id);
    if (!node) {
      throw Error(ErrorCode::PatchYieldsInvalidGraph, "modifying unknown node '" + change.node.id + "'");
    }
    *node = change.node;
    if (change.role.empty()) {
      result.roles.erase(change.node.id);
    } else {
      result.roles[change.node.id] = change.role;
    }
    if (change.io == IoDeclaration{}) {
      result.protocol.node_io.erase(change.node.id);
    } else {
      result.protocol.node_io[change.node.id] = change.io;
    }
    if (change.mapping) {
      result.protocol.broker_mappings[change.node.id] = *change.mapping;
    } else {
      result.protocol.broker_mappings.erase(change.node.id);
    }
  }

  for (const auto& change : patch.edge_changes) {
    if (change.op == ChangeOp::Remove) {
      auto it = std::find_if(result.edges.begin(), result.edges.end(), [&](const Edge& e) {
        return e.from == change.edge.from && e.to == change.edge.to;
      });
      if (it == result.edges.end()) {
        throw Error(ErrorCode::PatchYieldsInvalidGraph,
                    "removing unknown edge " + change.edge.from + "->" + change.edge.to);
      }
      result.edges.erase(it);
    } else if (change.op == ChangeOp::Add) {
      result.edges.push_back(change.edge);
    } else {
      throw Error(ErrorCode::PatchYieldsInvalidGraph, "edge changes support add/remove only");
    }
  }

  for (const auto& change : patch.attachment_changes) {
    if (change.op == ChangeOp::Add) {
      result.attachments[change.node].insert(change.entry);
    } else if (change.op == ChangeOp::Remove) {
      auto it = result.attachments.find(change.node);
      if (it == result.attachments.end() || it->second.erase(change.entry) == 0) {
        throw Error(ErrorCode::PatchYieldsInvalidGraph,
                    "removing unknown attachment " + change.node + ":" + change.entry);
      }
      if (it->second.empty()) result.attachments.erase(it);
    } else {
      throw Error(ErrorCode::PatchYieldsInvalidGraph, "attachment changes support add/remove only");
    }
  }

  ValidationReport report = validate_graph(result);
  if (!report.empty()) {
    throw Error(ErrorCode::PatchYieldsInvalidGraph, report.to_text());
  }
  return result;
}

/// Minimal patch transforming `before` into `after`; the inverse of
/// apply_patch up to structural equality.
inline GraphPatch diff_graphs(const WorkflowGraph& before, const WorkflowGraph& after) {
  GraphPatch patch;

  std::map<std::string, const Node*> before_nodes;
  std::map<std::string, const Node*> after_nodes;
  for (const auto& node : before.nodes) before_nodes[node.id] = &node;
  for (const auto& node : after.nodes) after_nodes[node.id] = &node;

  auto role_of = [](const WorkflowGraph& g, const std::string& id) {
    auto it = g.roles.find(id);
    return it == g.roles.end() ? std::string{} : it->second;
  };
  auto mapping_of = [](const WorkflowGraph& g, const std::string& id) -> std::optional<FieldMapping> {
    auto it = g.protocol.broker_mappings.find(id);
    if (it == g.protocol.broker_mappings.end()) return std::nullopt;
    return it->second;
  };

  for (const auto& [id, node] : before_nodes) {
    if (!after_nodes.count(id)) {
      patch.node_changes.push_back({ChangeOp::Remove, *node, {}, {}, std::nullopt});
      patch.target_nodes.insert(id);
    }
  }
  for (const auto& [id, node] : after_nodes) {
    if (!before_nodes.count(id)) {
      patch.node_changes.push_back(
          {ChangeOp::Add, *node, role_of(after, id), after.io_of(id), mapping_of(after, id)});
      patch.target_nodes.insert(id);
    } else {
      const Node* old_node = before_nodes.at(id);
      bool changed = !(*old_node == *node) || role_of(before, id) != role_of(after, id) ||
                     before.io_of(id) != after.io_of(id) ||
                     mapping_of(before, id) != mapping_of(after, id);
      if (changed) {
        patch.node_changes.push_back(
            {ChangeOp::Modify, *node, role_of(after, id), after.io_of(id), mapping_of(after, id)});
        patch.target_nodes.insert(id);
      }
    }
  }

  auto edge_key = [](const Edge& e) { return e.from + "\x1f" + e.to; };
  std::map<std::string, const Edge*> before_edges;
  std::map<std::string, const Edge*> after_edges;
  for (const auto& edge : before.edges) before_edges[edge_key(edge)] = &edge;
  for (const auto& edge : after.edges) after_edges[edge_key(edge)] = &edge;

  for (const auto& [key, edge] : before_edges) {
    auto it = after_edges.find(key);
    if (it == after_edges.end() || !(*it->second == *edge)) {
      patch.edge_changes.push_back({ChangeOp::Remove, *edge});
      patch.target_nodes.insert(edge->from);
      patch.target_nodes.insert(edge->to);
    }
  }
  for (const auto& [key, edge] : after_edges) {
    auto it = before_edges.find(key);
    if (it == before_edges.end() || !(*it->second == *edge)) {
      patch.edge_changes.push_back({ChangeOp::Add, *edge});
      patch.target_nodes.insert(edge->from);
      patch.target_nodes.insert(edge->to);
    }
  }

  // Attachment diffs only for nodes alive on both sides; node add/remove
  // changes already carry theirs.
  for (const auto& [id, entries] : before.attachments) {
    if (!after_nodes.count(id) || !before_nodes.count(id)) continue;
    auto it = after.attachments.find(id);
    for (const auto& entry : entries) {
      if (it == after.attachments.end() || !it->second.count(entry)) {
        patch.attachment_changes.push_back({ChangeOp::Remove, id, entry});
        patch.target_nodes.insert(id);
      }
    }
  }
  for (const auto& [id, entries] : after.attachments) {
    if (!after_nodes.count(id)) continue;
    auto before_it = before.attachments.find(id);
    bool is_new_node = !before_nodes.count(id);
    for (const auto& entry : entries) {
      bool had = before_it != before.attachments.end() && before_it->second.count(entry) > 0;
      if (!had && !is_new_node) {
        patch.attachment_changes.push_back({ChangeOp::Add, id, entry});
        patch.target_nodes.insert(id);
      } else if (!had && is_new_node) {
        patch.attachment_changes.push_back({ChangeOp::Add, id, entry});
      }
    }
  }

  return patch;
}

// ---------------------------------------------------------------------------
// Reference graph import
// ---------------------------------------------------------------------------

/// Topology-and-roles skeleton extracted from an externally produced agent
/// graph; carries no attachments and no protocol.
struct GraphSkeleton {
  struct SkeletonNode {
    std::string id;
    std::string role;
  };
  std::vector<SkeletonNode> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
};

/// Accepts a node/edge list with `role`, `label`, or `operator` node labels.
/// Searched graphs containing loops are rejected; iteration is expressed
/// through runtime repair instead.
inline GraphSkeleton import_reference_graph(const Json& document) {
  return reject_malformed("reference graph", [&] {
  expect_object(document, "reference graph");
  expect_keys(document, {"nodes", "edges"}, "reference graph");
  GraphSkeleton skeleton;
  if (document.contains("nodes")) {
    if (!document.at("nodes").is_array()) {
      throw Error(ErrorCode::MalformedDocument, "reference nodes must be a list");
    }
    for (const Json& node : document.at("nodes")) {
      expect_object(node, "reference node");
      expect_keys(node, {"id", "role", "label", "operator"}, "reference node");
      std::string id = get_string(node, "id", "", "reference node");
      if (!is_identifier(id)) {
        throw Error(ErrorCode::MalformedDocument, "reference node id must be an identifier");
      }
      std::string role = get_string(node, "role", "", "reference node");
      if (role.empty()) role = get_string(node, "label", "", "reference node");
      if (role.empty()) role = get_string(node, "operator", "", "reference node");
      skeleton.nodes.push_back({id, role});
    }
  }
  if (skeleton.nodes.empty()) {
    throw Error(ErrorCode::EmptyGraph, "reference graph has no nodes");
  }
  if (document.contains("edges")) {
    for (const Json& edge : document.at("edges")) {
      expect_object(edge, "reference edge");
      expect_keys(edge, {"from", "to"}, "reference edge");
      skeleton.edges.push_back(
          {get_string(edge, "from", "", "reference edge"), get_string(edge, "to", "", "reference edge")});
    }
  }

  WorkflowGraph shape;
  for (const auto& node : skeleton.nodes) shape.nodes.push_back({node.id, NodeKind::Agent, "", ""});
  for (const auto& [from, to] : skeleton.edges) shape.edges.push_back({from, to, ""});
  for (const auto& [from, to] : skeleton.edges) {
    if (from == to) {
      throw Error(ErrorCode::CyclicReference, "self-loop on '" + from + "'");
    }
    if (!shape.has_node(from) || !shape.has_node(to)) {
      throw Error(ErrorCode::MalformedDocument, "reference edge names unknown node");
    }
  }
  if (!detail::cycle_members(shape).empty()) {
    throw Error(ErrorCode::CyclicReference, "reference graph contains a cycle");
  }
  return skeleton;
  });
}

inline Json to_json(const GraphSkeleton& skeleton) {
  std::vector<GraphSkeleton::SkeletonNode> nodes = skeleton.nodes;
  std::sort(nodes.begin(), nodes.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  auto edges = skeleton.edges;
  std::sort(edges.begin(), edges.end());
  Json node_array = Json::array();
  for (const auto& node : nodes) node_array.push_back(Json{{"id", node.id}, {"role", node.role}});
  Json edge_array = Json::array();
  for (const auto& [from, to] : edges) edge_array.push_back(Json{{"from", from}, {"to", to}});
  return Json{{"nodes", node_array}, {"edges", edge_array}};
}

inline std::string serialize_skeleton(const GraphSkeleton& skeleton) {
  return canonical_dump(to_json(skeleton));
}

}  // namespace loom
