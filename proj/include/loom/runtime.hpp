#pragma once

#include <algorithm>
#include <filesystem>
#include <future>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "loom/canonical.hpp"
#include "loom/errors.hpp"
#include "loom/executors.hpp"
#include "loom/graph.hpp"
#include "loom/schema.hpp"
#include "loom/signals.hpp"
#include "loom/spec.hpp"

namespace loom {

/// ok (nullopt) iff all required fields are present with their declared
/// kinds; otherwise a fail-severity interface signal naming the first
/// violating field. Node attribution is left to the caller.
inline std::optional<EvidenceSignal> validate_artifact(const Json& artifact,
                                                       const ArtifactSchema& schema) {
  auto violation = first_schema_violation(artifact, schema);
  if (!violation) return std::nullopt;
  return EvidenceSignal{SignalKind::Interface, "", Severity::Fail,
                        Json{{"field", *violation}, {"schema", schema.id}}};
}

struct BrokerOutput {
  Json artifact = Json::object();
  std::vector<EvidenceSignal> signals;  // unattributed
};

/// Applies a field mapping between two schemas. List-valued payloads keep
/// their cardinality exactly; keys inside list-of-record elements are
/// renamed per the mapping; unmapped optional fields are omitted. An empty
/// mapped list raises a warn-severity output signal.
inline BrokerOutput broker_transform(const Json& artifact, const FieldMapping& mapping,
                                     const ArtifactSchema& target_schema) {
  for (const auto& name : target_schema.required) {
    if (!mapping.field_map.count(name)) {
      throw Error(ErrorCode::UnmappableSchemas,
                  "mapping does not cover required field '" + name + "' of '" + target_schema.id +
                      "'");
    }
  }

  BrokerOutput output;
  for (const auto& [target_field, source_field] : mapping.field_map) {
    if (!artifact.is_object() || !artifact.contains(source_field)) continue;
    Json value = artifact.at(source_field);
    if (value.is_array() && !mapping.element_renames.empty()) {
      for (Json& element : value) {
        if (!element.is_object()) continue;
        for (const auto& [from, to] : mapping.element_renames) {
          if (!element.contains(from)) continue;
          Json moved = element.at(from);
          element.erase(from);
          element[to] = std::move(moved);
        }
      }
    }
    if (value.is_array() && value.empty()) {
      output.signals.push_back({SignalKind::Output, "", Severity::Warn,
                                Json{{"note", "empty list field '" + target_field + "'"}}});
    }
    output.artifact[target_field] = std::move(value);
  }

  if (auto violation = validate_artifact(output.artifact, target_schema)) {
    violation->payload["edge"] = mapping.source_schema + "->" + mapping.target_schema;
    output.signals.push_back(*violation);
  }
  return output;
}

struct ExecutionOptions {
  const SchemaRegistry* registry = nullptr;  // nullptr = engine defaults
  double budget_warn_ratio = 0.9;
  bool parallel_within_stage = false;
  std::string run_dir;  // when set, handoff artifacts are persisted there

  // Suffix re-execution: nodes in reuse keep their previous results and are
  // not re-run; their prior messages and signals carry over.
  const ExecutionTrace* previous = nullptr;
  std::set<std::string> reuse;
};

namespace detail {

inline std::string edge_label(const std::string& from, const std::string& to) {
  return from + "->" + to;
}

struct TraceBuilder {
  ExecutionTrace trace;
  const WorkflowGraph* graph = nullptr;

  void append_message(Message message) {
    bool edge_exists = false;
    for (const auto& edge : graph->edges) {
      if (edge.from == message.sender && edge.to == message.receiver) {
        edge_exists = true;
        break;
      }
    }
    if (!edge_exists) {
      throw Error(ErrorCode::ProtocolViolation,
                  "message without a corresponding edge: " +
                      edge_label(message.sender, message.receiver));
    }
    trace.messages.push_back(std::move(message));
  }
};

}  // namespace detail

/// Runs a validated graph stage by stage. Each node receives the artifacts
/// of its in-edges; every handoff appends one message and is validated
/// against the edge schema (violations are attributed to the producer).
/// Execution halts with budget_exhausted the first time the ledger total
/// exceeds the budget, after recording the triggering budget signal.
inline ExecutionTrace execute(const WorkflowGraph& graph, const TaskSpecification& spec,
                              const ExecutorRegistry& executors,
                              const ExecutionOptions& options = {}) {
  ValidationReport report = validate_graph(graph);
  if (!report.empty()) {
    throw Error(ErrorCode::ProtocolViolation,
                "refusing to execute an invalid graph:\n" + report.to_text());
  }
  for (const auto& node : graph.nodes) {
    if (node.kind == NodeKind::Broker) continue;
    if (options.reuse.count(node.id)) continue;
    if (!executors.can_resolve(node.executor_binding)) {
      throw Error(ErrorCode::UnresolvedExecutor,
                  "node '" + node.id + "' binding '" + node.executor_binding + "' is unresolvable");
    }
  }

  SchemaRegistry default_registry = SchemaRegistry::with_defaults();
  const SchemaRegistry& registry = options.registry ? *options.registry : default_registry;

  detail::TraceBuilder builder;
  builder.graph = &graph;
  ExecutionTrace& trace = builder.trace;

  // Carried state from the previous round, bucketed for in-order appends.
  std::map<std::string, std::vector<Message>> carried_messages;   // by receiver
  std::map<std::string, std::vector<EvidenceSignal>> carried_signals;  // by replay anchor
  if (options.previous) {
    trace.ledger = options.previous->ledger;
    for (const auto& message : options.previous->messages) {
      if (options.reuse.count(message.receiver) && options.reuse.count(message.sender)) {
        carried_messages[message.receiver].push_back(message);
      }
    }
    for (const auto& signal : options.previous->signals) {
      if (signal.kind == SignalKind::Budget) continue;  // re-derived from the ledger
      if (signal.kind == SignalKind::Interface) {
        std::string edge = signal.payload.value("edge", "");
        std::size_t arrow = edge.find("->");
        std::string consumer = arrow == std::string::npos ? "" : edge.substr(arrow + 2);
        if (options.reuse.count(signal.node) && options.reuse.count(consumer)) {
          carried_signals[consumer].push_back(signal);
        }
      } else if (options.reuse.count(signal.node)) {
        carried_signals[signal.node].push_back(signal);
      }
    }
  }

  bool budget_warned = false;
  bool any_failure = false;
  std::int64_t budget = spec.constraints.budget;

  std::vector<std::vector<std::string>> stages = topological_stages(graph);

  auto persist_artifact = [&](const std::string& from, const std::string& to,
                              const Json& artifact) -> std::string {
    if (options.run_dir.empty()) return "";
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(options.run_dir) / "artifacts");
    std::string name = "artifacts/" + from + "__" + to + ".json";
    write_file((fs::path(options.run_dir) / name).string(), canonical_dump(artifact));
    return name;
  };

  auto deliver_inputs = [&](const std::string& node_id) -> std::pair<std::map<std::string, Json>, bool> {
    std::map<std::string, Json> inputs;
    bool upstream_ok = true;
    std::vector<const Edge*> incoming = graph.in_edges(node_id);
    std::sort(incoming.begin(), incoming.end(),
              [](const Edge* a, const Edge* b) { return a->from < b->from; });
    for (const Edge* edge : incoming) {
      auto it = trace.node_results.find(edge->from);
      if (it == trace.node_results.end() || is_failure_result(it->second)) {
        upstream_ok = false;
        continue;
      }
      const Json& artifact = it->second.at("artifact");
      inputs[edge->from] = artifact;

      Message message;
      message.sender = edge->from;
      message.receiver = node_id;
      message.summary = "handoff of " + (edge->schema.empty() ? std::string("untyped") : edge->schema) +
                        " artifact";
      message.body = "delivers the output of '" + edge->from + "' to '" + node_id + "'";
      message.artifact_ref = persist_artifact(edge->from, node_id, artifact);
      builder.append_message(std::move(message));

      if (!edge->schema.empty() && registry.has(edge->schema)) {
        if (auto violation = validate_artifact(artifact, registry.get(edge->schema))) {
          violation->node = edge->from;
          violation->payload["edge"] = detail::edge_label(edge->from, node_id);
          trace.signals.push_back(*violation);
        }
      }
    }
    return {inputs, upstream_ok};
  };

  auto run_node = [&](const Node& node, std::map<std::string, Json> inputs,
                      bool upstream_ok) -> ExecutorResult {
    if (!upstream_ok) {
      ExecutorResult result;
      result.failed = true;
      result.failure = "upstream failure";
      return result;
    }
    if (node.kind == NodeKind::Broker) {
      auto mapping_it = graph.protocol.broker_mappings.find(node.id);
      if (mapping_it == graph.protocol.broker_mappings.end()) {
        throw Error(ErrorCode::ProtocolViolation, "broker '" + node.id + "' has no field mapping");
      }
      std::vector<const Edge*> incoming = graph.in_edges(node.id);
      std::string producer = incoming.empty() ? "" : incoming.front()->from;
      ExecutorResult result;
      if (inputs.empty()) {
        result.failed = true;
        result.failure = "broker received no input";
        return result;
      }
      BrokerOutput output = broker_transform(inputs.begin()->second, mapping_it->second,
                                             registry.get(mapping_it->second.target_schema));
      result.artifact = std::move(output.artifact);
      for (EvidenceSignal& signal : output.signals) {
        // Schema violations implicate the producer; everything else stays
        // with the broker.
        signal.node = signal.kind == SignalKind::Interface ? producer : node.id;
        result.signals.push_back(std::move(signal));
      }
      return result;
    }
    NodeContext context;
    context.node_id = node.id;
    context.kind = node.kind;
    context.instruction = node.instruction;
    auto attach_it = graph.attachments.find(node.id);
    if (attach_it != graph.attachments.end()) {
      context.attachments.assign(attach_it->second.begin(), attach_it->second.end());
    }
    context.inputs = std::move(inputs);
    return executors.resolve(node.executor_binding).run(context);
  };

  for (const auto& stage : stages) {
    // Replay carried state and split the stage into work to run.
    std::vector<const Node*> pending;
    for (const auto& node_id : stage) {
      if (options.reuse.count(node_id)) {
        if (!options.previous) continue;
        auto it = options.previous->node_results.find(node_id);
        if (it == options.previous->node_results.end()) continue;
        trace.node_results[node_id] = it->second;
        if (is_failure_result(it->second)) any_failure = true;
        for (auto& message : carried_messages[node_id]) trace.messages.push_back(message);
        for (auto& signal : carried_signals[node_id]) trace.signals.push_back(signal);
        continue;
      }
      pending.push_back(graph.find_node(node_id));
    }

    // Inputs are gathered (and handoffs recorded) in node order before any
    // executor runs, so parallel and sequential execution agree.
    std::vector<std::pair<std::map<std::string, Json>, bool>> gathered;
    gathered.reserve(pending.size());
    for (const Node* node : pending) gathered.push_back(deliver_inputs(node->id));

    std::vector<ExecutorResult> results(pending.size());
    if (options.parallel_within_stage && pending.size() > 1) {
      std::vector<std::future<ExecutorResult>> futures;
      futures.reserve(pending.size());
      for (std::size_t i = 0; i < pending.size(); ++i) {
        futures.push_back(std::async(std::launch::async, [&, i] {
          return run_node(*pending[i], std::move(gathered[i].first), gathered[i].second);
        }));
      }
      for (std::size_t i = 0; i < pending.size(); ++i) results[i] = futures[i].get();
    } else {
      for (std::size_t i = 0; i < pending.size(); ++i) {
        results[i] = run_node(*pending[i], std::move(gathered[i].first), gathered[i].second);
      }
    }

    // Results are committed in node id order through a single writer.
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const Node& node = *pending[i];
      ExecutorResult& result = results[i];

      for (EvidenceSignal& signal : result.signals) {
        if (signal.node.empty()) signal.node = node.id;
        trace.signals.push_back(std::move(signal));
      }

      record_cost(trace.ledger, node.id, result.cost);
      if (result.failed) {
        any_failure = true;
        trace.node_results[node.id] = failure_result(result.failure);
      } else {
        trace.node_results[node.id] = artifact_result(std::move(result.artifact));
      }

      if (budget > 0) {
        if (trace.ledger.total > budget) {
          trace.signals.push_back({SignalKind::Budget, node.id, Severity::Fail,
                                   Json{{"accumulated", trace.ledger.total}, {"budget", budget}}});
          trace.outcome = RunOutcome::BudgetExhausted;
          return trace;
        }
        if (!budget_warned &&
            static_cast<double>(trace.ledger.total) >
                options.budget_warn_ratio * static_cast<double>(budget)) {
          budget_warned = true;
          trace.signals.push_back({SignalKind::Budget, node.id, Severity::Warn,
                                   Json{{"accumulated", trace.ledger.total}, {"budget", budget}}});
        }
      }
    }
  }

  trace.outcome = any_failure ? RunOutcome::Failure : RunOutcome::Success;
  return trace;
}

// ---------------------------------------------------------------------------
// Set metrics
// ---------------------------------------------------------------------------

struct SetMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double jaccard = 0.0;
};

/// precision = |M∩D|/|M| (0 for empty M), recall = |M∩D|/|D|,
/// jaccard = |M∩D|/|M∪D|. The reference set must be non-empty.
inline SetMetrics compute_set_metrics(const std::set<std::string>& predicted,
                                      const std::set<std::string>& reference) {
  if (reference.empty()) {
    throw Error(ErrorCode::EmptyReference, "recall is undefined for an empty reference set");
  }
  std::size_t intersection = 0;
  for (const auto& item : predicted) {
    if (reference.count(item)) ++intersection;
  }
  std::size_t union_size = predicted.size() + reference.size() - intersection;
  SetMetrics metrics;
  metrics.precision = predicted.empty()
                          ? 0.0
                          : static_cast<double>(intersection) / static_cast<double>(predicted.size());
  metrics.recall = static_cast<double>(intersection) / static_cast<double>(reference.size());
  metrics.jaccard = static_cast<double>(intersection) / static_cast<double>(union_size);
  return metrics;
}

struct ModalityComparison {
  double precision_first = 0.0;
  double precision_second = 0.0;
  double precision_combined = 0.0;  // intersection of the two predicted sets
  double recall_first = 0.0;
  double recall_second = 0.0;
  double recall_combined = 0.0;  // union of the two predicted sets
  bool combined_precision_dominates = false;
  bool combined_recall_dominates = false;
};

/// Cross-modality comparison: the intersection captures jointly supported
/// items and is scored for precision; the union captures all recovered items
/// and is scored for recall.
inline ModalityComparison compare_modalities(const std::set<std::string>& first,
                                             const std::set<std::string>& second,
                                             const std::set<std::string>& reference) {
  std::set<std::string> intersection;
  for (const auto& item : first) {
    if (second.count(item)) intersection.insert(item);
  }
  std::set<std::string> joined = first;
  joined.insert(second.begin(), second.end());

  ModalityComparison comparison;
  comparison.precision_first = compute_set_metrics(first, reference).precision;
  comparison.precision_second = compute_set_metrics(second, reference).precision;
  comparison.precision_combined = compute_set_metrics(intersection, reference).precision;
  comparison.recall_first = compute_set_metrics(first, reference).recall;
  comparison.recall_second = compute_set_metrics(second, reference).recall;
  comparison.recall_combined = compute_set_metrics(joined, reference).recall;
  comparison.combined_precision_dominates =
      comparison.precision_combined >= comparison.precision_first &&
      comparison.precision_combined >= comparison.precision_second;
  comparison.combined_recall_dominates = comparison.recall_combined >= comparison.recall_first &&
                                         comparison.recall_combined >= comparison.recall_second;
  return comparison;
}

}  // namespace loom
