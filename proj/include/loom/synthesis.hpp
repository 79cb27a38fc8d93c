#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "loom/canonical.hpp"
#include "loom/errors.hpp"
#include "loom/graph.hpp"
#include "loom/library.hpp"
#include "loom/schema.hpp"
#include "loom/spec.hpp"
#include "loom/text.hpp"

namespace loom {

struct Subgoal {
  std::string id;
  std::string text;
};

struct SubgoalDecomposition {
  std::vector<Subgoal> subgoals;
  std::set<std::pair<std::string, std::string>> dependencies;  // (earlier, later)
};

enum class TopologyKind { Linear, Parallel, Mixed };

inline const char* to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::Linear: return "linear";
    case TopologyKind::Parallel: return "parallel";
    case TopologyKind::Mixed: return "mixed";
  }
  return "linear";
}

/// Rule-based decomposition: ";" and "then" split sequential groups and
/// induce dependencies between consecutive groups; a bare "and" splits
/// parallel clauses within a group.
inline SubgoalDecomposition decompose_goal(const TaskSpecification& spec) {
  SubgoalDecomposition decomposition;
  auto groups = split_goal_clauses(spec.goal);
  if (groups.empty()) {
    // A goal made only of connectives still decomposes to itself.
    groups.push_back({trim_copy(spec.goal)});
  }
  std::vector<std::vector<std::string>> group_ids;
  int counter = 0;
  for (const auto& group : groups) {
    std::vector<std::string> ids;
    for (const auto& clause : group) {
      std::string id = "s" + std::to_string(++counter);
      decomposition.subgoals.push_back({id, clause});
      ids.push_back(id);
    }
    group_ids.push_back(std::move(ids));
  }
  for (std::size_t i = 0; i + 1 < group_ids.size(); ++i) {
    for (const auto& earlier : group_ids[i]) {
      for (const auto& later : group_ids[i + 1]) {
        decomposition.dependencies.insert({earlier, later});
      }
    }
  }
  return decomposition;
}

/// linear iff the dependency closure totally orders the subgoals; parallel
/// iff there are no dependencies and more than one subgoal; mixed otherwise.
/// A single subgoal is linear.
inline TopologyKind select_topology(const SubgoalDecomposition& decomposition) {
  std::size_t n = decomposition.subgoals.size();
  if (n <= 1) return TopologyKind::Linear;
  if (decomposition.dependencies.empty()) return TopologyKind::Parallel;

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index[decomposition.subgoals[i].id] = i;
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  for (const auto& [earlier, later] : decomposition.dependencies) {
    reach[index.at(earlier)][index.at(later)] = true;
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!reach[i][k]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (reach[k][j]) reach[i][j] = true;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!reach[i][j] && !reach[j][i]) return TopologyKind::Mixed;
    }
  }
  return TopologyKind::Linear;
}

/// Attaches the top-k skills and tools matched against the role text plus
/// the schema ids adjacent to the node. Returns the attachment set.
inline std::set<std::string> ground_node(WorkflowGraph& graph, const std::string& node_id,
                                         const std::string& role_text,
                                         const LibrarySnapshot& snapshot, int k) {
  std::set<std::string> adjacent_schemas;
  auto io = graph.io_of(node_id);
  if (!io.input_schema.empty()) adjacent_schemas.insert(io.input_schema);
  if (!io.output_schema.empty()) adjacent_schemas.insert(io.output_schema);
  for (const Edge* edge : graph.in_edges(node_id)) {
    std::string schema = graph.io_of(edge->from).output_schema;
    if (!schema.empty()) adjacent_schemas.insert(schema);
  }
  for (const Edge* edge : graph.out_edges(node_id)) {
    std::string schema = graph.io_of(edge->to).input_schema;
    if (!schema.empty()) adjacent_schemas.insert(schema);
  }
  std::string query = role_text;
  for (const auto& schema : adjacent_schemas) query += " " + schema;

  std::set<std::string>& attached = graph.attachments[node_id];
  for (EntryKind kind : {EntryKind::Skill, EntryKind::Tool}) {
    std::vector<ScoredEntry> scored = retrieve_one(snapshot, {kind, query}, k);
    for (const auto& candidate : scored) {
      if (candidate.score > 0.0) attached.insert(candidate.id);
    }
  }
  if (attached.empty()) graph.attachments.erase(node_id);
  auto it = graph.attachments.find(node_id);
  return it == graph.attachments.end() ? std::set<std::string>{} : it->second;
}

namespace detail {

inline FieldMapping build_field_mapping(const std::string& source_id, const std::string& target_id,
                                        const SchemaRegistry& registry) {
  const ArtifactSchema& source = registry.get(source_id);
  const ArtifactSchema& target = registry.get(target_id);
  const RenameRule* rule = registry.rename_for(source_id, target_id);

  FieldMapping mapping;
  mapping.source_schema = source_id;
  mapping.target_schema = target_id;
  if (rule) mapping.element_renames = rule->element_renames;

  for (const SchemaField& field : target.fields) {
    bool required = std::find(target.required.begin(), target.required.end(), field.name) !=
                    target.required.end();
    if (source.has_field(field.name)) {
      mapping.field_map[field.name] = field.name;
      continue;
    }
    bool renamed = false;
    if (rule) {
      for (const auto& [from, to] : rule->field_renames) {
        if (to == field.name && source.has_field(from)) {
          mapping.field_map[field.name] = from;
          renamed = true;
          break;
        }
      }
    }
    if (!renamed && required) {
      throw Error(ErrorCode::UnmappableSchemas,
                  "no mapping covers required field '" + field.name + "' of '" + target_id +
                      "' from '" + source_id + "'");
    }
  }
  return mapping;
}

inline std::string fresh_node_id(const WorkflowGraph& graph, std::string base) {
  if (!graph.has_node(base)) return base;
  int suffix = 2;
  while (graph.has_node(base + "_" + std::to_string(suffix))) ++suffix;
  return base + "_" + std::to_string(suffix);
}

}  // namespace detail

/// Assigns every edge the producer's output schema ("note" when the producer
/// declares none) and subdivides mismatched typed edges with broker nodes
/// carrying an explicit field mapping. The result revalidates cleanly.
inline void synthesize_interfaces(WorkflowGraph& graph, const SchemaRegistry& registry) {
  std::vector<Edge> original = graph.edges;
  for (const Edge& edge : original) {
    const Node* from = graph.find_node(edge.from);
    const Node* to = graph.find_node(edge.to);
    if (!from || !to) continue;
    if (from->kind == NodeKind::Broker || to->kind == NodeKind::Broker) continue;

    std::string produced = graph.io_of(edge.from).output_schema;
    std::string consumed = graph.io_of(edge.to).input_schema;

    if (!produced.empty() && !consumed.empty() && produced != consumed) {
      FieldMapping mapping = detail::build_field_mapping(produced, consumed, registry);
      std::string broker_id = detail::fresh_node_id(graph, "broker_" + edge.from + "_" + edge.to);

      auto it = std::find_if(graph.edges.begin(), graph.edges.end(), [&](const Edge& e) {
        return e.from == edge.from && e.to == edge.to;
      });
      if (it != graph.edges.end()) graph.edges.erase(it);

      Node broker;
      broker.id = broker_id;
      broker.kind = NodeKind::Broker;
      broker.instruction = "validate " + produced + " and convert to " + consumed;
      graph.nodes.push_back(broker);
      graph.roles[broker_id] = "broker: convert " + produced + " to " + consumed;
      graph.protocol.node_io[broker_id] = {produced, consumed};
      graph.protocol.broker_mappings[broker_id] = std::move(mapping);
      graph.edges.push_back({edge.from, broker_id, produced});
      graph.edges.push_back({broker_id, edge.to, consumed});
    } else {
      std::string schema = !produced.empty() ? produced : "note";
      for (Edge& e : graph.edges) {
        if (e.from == edge.from && e.to == edge.to) e.schema = schema;
      }
    }
  }
}

struct SynthesisOptions {
  int grounding_k = kDefaultTopK;
  bool allow_default_agent = true;
  // Loads the skeleton for a reference_graph resource; defaults to reading
  // the JSON document at the resource locator.
  std::function<GraphSkeleton(const ResourceRef&)> reference_loader;
};

namespace detail {

struct BindingChoice {
  std::optional<LibraryEntry> external;
  double best_score = 0.0;
};

// External wins when no skill or tool outscores it.
inline BindingChoice pick_binding(const std::string& role_text, const LibrarySnapshot& snapshot) {
  BindingChoice choice;
  double best_other = 0.0;
  double best_external = 0.0;
  const LibraryEntry* external = nullptr;
  for (const auto& entry : snapshot) {
    double score = score_match(role_text, entry);
    if (entry.kind == EntryKind::ExternalAgent) {
      if (score > best_external || (score == best_external && external && entry.id < external->id)) {
        best_external = score;
        external = &entry;
      }
    } else if (entry.kind == EntryKind::Skill || entry.kind == EntryKind::Tool) {
      best_other = std::max(best_other, score);
    }
  }
  choice.best_score = std::max(best_other, best_external);
  if (external && best_external > 0.0 && best_external >= best_other) {
    choice.external = *external;
  }
  return choice;
}

inline GraphSkeleton load_reference_skeleton(const ResourceRef& resource,
                                             const SynthesisOptions& options) {
  if (options.reference_loader) return options.reference_loader(resource);
  return import_reference_graph(parse_document(read_file(resource.locator)));
}

}  // namespace detail

/// Synthesize(x, S): decomposes the goal (or adopts an imported reference
/// skeleton), grounds each node with retrieved artifacts, adds the
/// preparation and reporting stages for repository-backed tasks, and aligns
/// all interfaces. The returned graph always passes validate_graph.
inline WorkflowGraph synthesize(const TaskSpecification& spec, const LibrarySnapshot& library,
                                const SchemaRegistry& registry,
                                const SynthesisOptions& options = {}) {
  // Repository resources participate in grounding as external agents even
  // when the library has no curated entry for them yet.
  LibrarySnapshot snapshot = library;
  for (const auto& resource : spec.resources) {
    if (resource.kind != ResourceKind::Repository) continue;
    bool present = std::any_of(snapshot.begin(), snapshot.end(),
                               [&](const LibraryEntry& e) { return e.id == resource.id; });
    if (!present) {
      LibraryEntry derived;
      derived.id = resource.id;
      derived.kind = EntryKind::ExternalAgent;
      derived.description = resource.description.empty() ? resource.id : resource.description;
      derived.input_schema = "note";
      derived.output_schema = "note";
      derived.provenance = resource.locator;
      snapshot.push_back(std::move(derived));
    }
  }
  std::sort(snapshot.begin(), snapshot.end(),
            [](const LibraryEntry& a, const LibraryEntry& b) { return a.id < b.id; });

  const ResourceRef* reference = nullptr;
  bool has_repository = false;
  for (const auto& resource : spec.resources) {
    if (resource.kind == ResourceKind::ReferenceGraph && !reference) reference = &resource;
    if (resource.kind == ResourceKind::Repository) has_repository = true;
  }

  WorkflowGraph graph;
  std::vector<std::string> execution_nodes;

  std::size_t subgoal_count = 0;
  if (reference) {
    GraphSkeleton skeleton = detail::load_reference_skeleton(*reference, options);
    for (const auto& node : skeleton.nodes) {
      graph.nodes.push_back({node.id, NodeKind::Agent, node.role, ""});
      graph.roles[node.id] = node.role;
      execution_nodes.push_back(node.id);
    }
    for (const auto& [from, to] : skeleton.edges) graph.edges.push_back({from, to, ""});
    subgoal_count = skeleton.nodes.size();
  } else {
    SubgoalDecomposition decomposition = decompose_goal(spec);
    subgoal_count = decomposition.subgoals.size();
    TopologyKind topology = select_topology(decomposition);
    bool two_step_chain = topology == TopologyKind::Linear && decomposition.subgoals.size() == 2;
    for (std::size_t i = 0; i < decomposition.subgoals.size(); ++i) {
      const Subgoal& subgoal = decomposition.subgoals[i];
      std::string label = "execute";
      if (two_step_chain) label = i == 0 ? "upstream" : "downstream";
      graph.nodes.push_back({subgoal.id, NodeKind::Agent, subgoal.text, ""});
      graph.roles[subgoal.id] = label + ": " + subgoal.text;
      execution_nodes.push_back(subgoal.id);
    }
    for (const auto& [earlier, later] : decomposition.dependencies) {
      graph.edges.push_back({earlier, later, ""});
    }
  }

  // Bind and ground the execution nodes.
  for (const auto& node_id : execution_nodes) {
    std::string role = graph.roles.count(node_id) ? graph.roles.at(node_id) : node_id;
    detail::BindingChoice choice = detail::pick_binding(role, snapshot);
    if (choice.external) {
      Node* node = graph.find_node(node_id);
      node->kind = NodeKind::External;
      graph.attachments[node_id].insert(choice.external->id);
      graph.protocol.node_io[node_id] = {choice.external->input_schema,
                                         choice.external->output_schema};
    } else if (choice.best_score == 0.0 && !options.allow_default_agent) {
      throw Error(ErrorCode::NoExecutableTopology,
                  "no library entry matches subgoal '" + node_id + "'");
    }
    ground_node(graph, node_id, role, snapshot, options.grounding_k);
  }

  if (!reference) {
    std::vector<std::string> terminals;
    for (const auto& node_id : execution_nodes) {
      if (graph.out_edges(node_id).empty()) terminals.push_back(node_id);
    }

    if (has_repository) {
      std::string repo_ids;
      for (const auto& resource : spec.resources) {
        if (resource.kind != ResourceKind::Repository) continue;
        if (!repo_ids.empty()) repo_ids += ", ";
        repo_ids += resource.id;
      }
      std::vector<std::string> sources;
      for (const auto& node_id : execution_nodes) {
        if (graph.in_edges(node_id).empty()) sources.push_back(node_id);
      }
      graph.nodes.push_back({"profiling", NodeKind::Agent,
                             "inspect repository metadata for " + repo_ids, ""});
      graph.roles["profiling"] = "profiling: inspect repository metadata for " + repo_ids;
      graph.nodes.push_back(
          {"sandbox", NodeKind::Agent, "construct isolated build environments", ""});
      graph.roles["sandbox"] = "sandbox: construct isolated build environments";
      graph.nodes.push_back(
          {"registration", NodeKind::Agent, "register wrapped executors", ""});
      graph.roles["registration"] = "registration: register wrapped executors";
      graph.edges.push_back({"profiling", "sandbox", ""});
      graph.edges.push_back({"sandbox", "registration", ""});
      for (const auto& source : sources) graph.edges.push_back({"registration", source, ""});
    }

    // An "evaluator" environment requirement (optionally "evaluator:<schema>")
    // joins the terminal branches at an evaluator node.
    std::string evaluator_schema;
    bool wants_evaluator = false;
    for (const auto& tag : spec.constraints.environment_requirements) {
      if (tag == "evaluator") {
        wants_evaluator = true;
      } else if (tag.rfind("evaluator:", 0) == 0) {
        wants_evaluator = true;
        evaluator_schema = tag.substr(10);
      }
    }
    if (wants_evaluator) {
      graph.nodes.push_back(
          {"evaluate", NodeKind::Evaluator, "score outputs against the reference sets", ""});
      graph.roles["evaluate"] = "evaluation: score outputs against the reference sets";
      if (!evaluator_schema.empty()) {
        graph.protocol.node_io["evaluate"] = {evaluator_schema, ""};
      }
      for (const auto& terminal : terminals) graph.edges.push_back({terminal, "evaluate", ""});
      terminals = {"evaluate"};
    }

    if (subgoal_count > 1) {
      graph.nodes.push_back(
          {"integrate", NodeKind::Integrator, "combine the collected evidence", ""});
      graph.roles["integrate"] = "integration: combine the collected evidence";
      for (const auto& terminal : terminals) graph.edges.push_back({terminal, "integrate", ""});
      terminals = {"integrate"};
    }

    if (has_repository) {
      graph.nodes.push_back({"report", NodeKind::Agent, "compile the final report", ""});
      graph.roles["report"] = "reporting: compile the final report";
      for (const auto& terminal : terminals) graph.edges.push_back({terminal, "report", ""});
    }
  }

  synthesize_interfaces(graph, registry);

  ValidationReport report = validate_graph(graph, registry);
  if (!report.empty()) {
    throw Error(ErrorCode::ProtocolViolation, "synthesized graph failed validation:\n" + report.to_text());
  }
  return graph;
}

inline WorkflowGraph synthesize(const TaskSpecification& spec, const Library& library,
                                const SchemaRegistry& registry,
                                const SynthesisOptions& options = {}) {
  return synthesize(spec, library.snapshot(), registry, options);
}

}  // namespace loom
