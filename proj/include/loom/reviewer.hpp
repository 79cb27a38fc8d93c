#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "loom/canonical.hpp"
#include "loom/errors.hpp"
#include "loom/graph.hpp"
#include "loom/library.hpp"
#include "loom/runtime.hpp"
#include "loom/signals.hpp"
#include "loom/spec.hpp"

namespace loom {

struct Thresholds {
  double min_output_confidence = 0.5;
  double max_test_fail_ratio = 0.4;
  std::int64_t max_tool_errors = 2;
  double budget_warn_ratio = 0.9;
};

inline void check_thresholds(const Thresholds& thresholds) {
  if (thresholds.min_output_confidence < 0.0 || thresholds.min_output_confidence > 1.0 ||
      thresholds.max_test_fail_ratio < 0.0 || thresholds.max_test_fail_ratio > 1.0 ||
      thresholds.max_tool_errors < 0 || thresholds.budget_warn_ratio <= 0.0 ||
      thresholds.budget_warn_ratio > 1.0) {
    throw Error(ErrorCode::MalformedDocument, "thresholds out of range");
  }
}

enum class RepairAction {
  RetryWithUpdatedInstruction,
  AddParallelSolver,
  SwapToolBackend,
  ReformatUpstreamOutput,
  EscalateNoAction,
};

inline const char* to_string(RepairAction action) {
  switch (action) {
    case RepairAction::RetryWithUpdatedInstruction: return "retry_with_updated_instruction";
    case RepairAction::AddParallelSolver: return "add_parallel_solver";
    case RepairAction::SwapToolBackend: return "swap_tool_backend";
    case RepairAction::ReformatUpstreamOutput: return "reformat_upstream_output";
    case RepairAction::EscalateNoAction: return "escalate_no_action";
  }
  return "escalate_no_action";
}

inline RepairAction repair_action_from(const std::string& text) {
  if (text == "retry_with_updated_instruction") return RepairAction::RetryWithUpdatedInstruction;
  if (text == "add_parallel_solver") return RepairAction::AddParallelSolver;
  if (text == "swap_tool_backend") return RepairAction::SwapToolBackend;
  if (text == "reformat_upstream_output") return RepairAction::ReformatUpstreamOutput;
  if (text == "escalate_no_action") return RepairAction::EscalateNoAction;
  throw Error(ErrorCode::MalformedDocument, "unknown repair action '" + text + "'");
}

/// One declarative comparison on an EvidenceSummary field. Fields:
/// confidence, test_fail_ratio, test_pass, test_fail, tool_errors,
/// budget_ratio, interface_violations, consecutive_test_fail_rounds.
struct PatternClause {
  std::string field;
  std::string comparator;  // < <= > >= == !=
  double value = 0.0;
};

struct RepairPolicy {
  std::string id;
  std::int64_t priority = 0;  // lower = earlier
  std::vector<PatternClause> pattern;  // conjunction
  RepairAction action = RepairAction::EscalateNoAction;
};

namespace detail {

inline std::optional<double> summary_field(const EvidenceSummary& summary,
                                           const std::string& field) {
  if (field == "confidence") {
    if (!summary.confidence) return std::nullopt;
    return *summary.confidence;
  }
  if (field == "test_fail_ratio") return summary.test_fail_ratio();
  if (field == "test_pass") return static_cast<double>(summary.test_pass);
  if (field == "test_fail") return static_cast<double>(summary.test_fail);
  if (field == "tool_errors") return static_cast<double>(summary.tool_errors);
  if (field == "budget_ratio") return summary.budget_ratio;
  if (field == "interface_violations") return static_cast<double>(summary.interface_violations);
  if (field == "consecutive_test_fail_rounds") {
    return static_cast<double>(summary.consecutive_test_fail_rounds);
  }
  throw Error(ErrorCode::MalformedDocument, "unknown summary field '" + field + "'");
}

inline bool clause_matches(const PatternClause& clause, const EvidenceSummary& summary) {
  std::optional<double> value = summary_field(summary, clause.field);
  if (!value) return false;  // absent observations never match
  if (clause.comparator == "<") return *value < clause.value;
  if (clause.comparator == "<=") return *value <= clause.value;
  if (clause.comparator == ">") return *value > clause.value;
  if (clause.comparator == ">=") return *value >= clause.value;
  if (clause.comparator == "==") return *value == clause.value;
  if (clause.comparator == "!=") return *value != clause.value;
  throw Error(ErrorCode::MalformedDocument, "unknown comparator '" + clause.comparator + "'");
}

}  // namespace detail

inline bool pattern_matches(const RepairPolicy& policy, const EvidenceSummary& summary) {
  return std::all_of(policy.pattern.begin(), policy.pattern.end(),
                     [&](const PatternClause& c) { return detail::clause_matches(c, summary); });
}

/// Flags a node when any signal class crosses its threshold: low output
/// confidence, test fail ratio, tool errors, a fail-severity interface
/// signal, or a blown budget.
inline std::map<std::string, std::set<SignalKind>> detect(
    const std::map<std::string, EvidenceSummary>& summaries, const Thresholds& thresholds) {
  std::map<std::string, std::set<SignalKind>> flagged;
  for (const auto& [node, summary] : summaries) {
    std::set<SignalKind> reasons;
    if (summary.confidence && *summary.confidence < thresholds.min_output_confidence) {
      reasons.insert(SignalKind::Output);
    }
    if (summary.test_pass + summary.test_fail > 0 &&
        summary.test_fail_ratio() > thresholds.max_test_fail_ratio) {
      reasons.insert(SignalKind::Test);
    }
    if (summary.tool_errors > thresholds.max_tool_errors) {
      reasons.insert(SignalKind::Tool);
    }
    if (summary.interface_violations > 0) {
      reasons.insert(SignalKind::Interface);
    }
    if (summary.budget_ratio > 1.0) {
      reasons.insert(SignalKind::Budget);
    }
    if (!reasons.empty()) flagged[node] = std::move(reasons);
  }
  return flagged;
}

/// First policy by (priority, id) whose pattern matches the node's summary;
/// escalate_no_action when nothing matches.
inline RepairAction decide(const std::string& node,
                           const std::map<std::string, EvidenceSummary>& summaries,
                           const std::vector<RepairPolicy>& policies) {
  auto it = summaries.find(node);
  if (it == summaries.end()) return RepairAction::EscalateNoAction;
  std::vector<const RepairPolicy*> ordered;
  ordered.reserve(policies.size());
  for (const auto& policy : policies) ordered.push_back(&policy);
  std::sort(ordered.begin(), ordered.end(), [](const RepairPolicy* a, const RepairPolicy* b) {
    return a->priority != b->priority ? a->priority < b->priority : a->id < b->id;
  });
  for (const RepairPolicy* policy : ordered) {
    if (pattern_matches(*policy, it->second)) return policy->action;
  }
  return RepairAction::EscalateNoAction;
}

/// Policy set mirroring the built-in repair playbook: reformat on interface
/// violations, add a parallel solver on persistent test failures, swap the
/// tool backend on recurring tool errors, retry on test failures or low
/// confidence.
inline std::vector<RepairPolicy> default_policies(const Thresholds& thresholds = {}) {
  std::vector<RepairPolicy> policies;
  policies.push_back({"reformat-on-interface", 10,
                      {{"interface_violations", ">", 0.0}},
                      RepairAction::ReformatUpstreamOutput});
  policies.push_back({"parallel-solver-on-persistent-tests", 20,
                      {{"consecutive_test_fail_rounds", ">=", 2.0}},
                      RepairAction::AddParallelSolver});
  policies.push_back({"swap-backend-on-tool-errors", 30,
                      {{"tool_errors", ">", static_cast<double>(thresholds.max_tool_errors)}},
                      RepairAction::SwapToolBackend});
  policies.push_back({"retry-on-test-failures", 40,
                      {{"test_fail_ratio", ">", thresholds.max_test_fail_ratio}},
                      RepairAction::RetryWithUpdatedInstruction});
  policies.push_back({"retry-on-low-confidence", 50,
                      {{"confidence", "<", thresholds.min_output_confidence}},
                      RepairAction::RetryWithUpdatedInstruction});
  return policies;
}

struct RepairContext {
  const LibrarySnapshot* library = nullptr;  // used to tell tools from skills
  std::string digest;                        // structured failure digest
};

/// Emits a locality-constrained patch for the chosen action. Targets stay
/// within the implicated node and the neighbors the action requires.
inline GraphPatch repair(const WorkflowGraph& graph, const std::string& node_id,
                         RepairAction action, const RepairContext& context = {}) {
  const Node* node = graph.find_node(node_id);
  if (!node) {
    throw Error(ErrorCode::PatchYieldsInvalidGraph, "no node '" + node_id + "' to repair");
  }
  auto role_of = [&](const std::string& id) {
    auto it = graph.roles.find(id);
    return it == graph.roles.end() ? std::string{} : it->second;
  };
  auto mapping_of = [&](const std::string& id) -> std::optional<FieldMapping> {
    auto it = graph.protocol.broker_mappings.find(id);
    if (it == graph.protocol.broker_mappings.end()) return std::nullopt;
    return it->second;
  };

  GraphPatch patch;
  patch.target_nodes.insert(node_id);

  switch (action) {
    case RepairAction::RetryWithUpdatedInstruction: {
      Node updated = *node;
      updated.instruction += "\n[retry] " + context.digest;
      patch.node_changes.push_back(
          {ChangeOp::Modify, updated, role_of(node_id), graph.io_of(node_id), mapping_of(node_id)});
      break;
    }
    case RepairAction::ReformatUpstreamOutput: {
      std::string schema = graph.io_of(node_id).output_schema;
      if (schema.empty()) {
        auto outgoing = graph.out_edges(node_id);
        if (!outgoing.empty()) schema = outgoing.front()->schema;
      }
      Node updated = *node;
      updated.instruction +=
          "\n[reformat] emit an artifact matching schema '" + schema + "'; " + context.digest;
      patch.node_changes.push_back(
          {ChangeOp::Modify, updated, role_of(node_id), graph.io_of(node_id), mapping_of(node_id)});
      break;
    }
    case RepairAction::AddParallelSolver: {
      std::string sibling_id = node_id + "_alt";
      int suffix = 2;
      while (graph.has_node(sibling_id)) sibling_id = node_id + "_alt" + std::to_string(suffix++);
      Node sibling = *node;
      sibling.id = sibling_id;
      sibling.instruction += "\n[parallel solver] independently retry; " + context.digest;
      std::string role = role_of(node_id);
      patch.node_changes.push_back({ChangeOp::Add, sibling,
                                    role.empty() ? role : role + " (parallel solver)",
                                    graph.io_of(node_id), std::nullopt});
      patch.target_nodes.insert(sibling_id);

      auto incoming = graph.in_edges(node_id);
      std::sort(incoming.begin(), incoming.end(),
                [](const Edge* a, const Edge* b) { return a->from < b->from; });
      if (!incoming.empty()) {
        patch.edge_changes.push_back(
            {ChangeOp::Add, {incoming.front()->from, sibling_id, incoming.front()->schema}});
      }
      auto outgoing = graph.out_edges(node_id);
      std::sort(outgoing.begin(), outgoing.end(),
                [](const Edge* a, const Edge* b) { return a->to < b->to; });
      if (!outgoing.empty()) {
        patch.edge_changes.push_back(
            {ChangeOp::Add, {sibling_id, outgoing.front()->to, outgoing.front()->schema}});
      }
      break;
    }
    case RepairAction::SwapToolBackend: {
      auto attach_it = graph.attachments.find(node_id);
      std::vector<std::string> tools;
      if (attach_it != graph.attachments.end()) {
        for (const auto& entry_id : attach_it->second) {
          if (context.library) {
            auto entry = std::find_if(context.library->begin(), context.library->end(),
                                      [&](const LibraryEntry& e) { return e.id == entry_id; });
            if (entry == context.library->end() || entry->kind != EntryKind::Tool) continue;
          }
          tools.push_back(entry_id);
        }
      }
      if (tools.size() < 2) {
        throw Error(ErrorCode::PatchYieldsInvalidGraph,
                    "swap_tool_backend needs at least two candidate tools on '" + node_id + "'");
      }
      // The active backend is the first tool in sorted order; dropping it
      // promotes the next candidate on this instance.
      patch.attachment_changes.push_back({ChangeOp::Remove, node_id, tools.front()});
      break;
    }
    case RepairAction::EscalateNoAction:
      throw Error(ErrorCode::PatchYieldsInvalidGraph, "escalate_no_action emits no patch");
  }
  return patch;
}

enum class StopReason {
  ValidationSucceeded,
  BudgetExhausted,
  MaxRoundsReached,
  NoMatchingPolicy,
};

inline const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::ValidationSucceeded: return "validation_succeeded";
    case StopReason::BudgetExhausted: return "budget_exhausted";
    case StopReason::MaxRoundsReached: return "max_rounds_reached";
    case StopReason::NoMatchingPolicy: return "no_matching_policy";
  }
  return "validation_succeeded";
}

struct RepairOutcome {
  std::int64_t rounds_used = 0;
  std::vector<GraphPatch> patches;
  ExecutionTrace final_trace;
  StopReason stop_reason = StopReason::ValidationSucceeded;
  WorkflowGraph instance_graph;  // the per-instance copy; discarded by callers
};

struct ReviewOptions {
  const SchemaRegistry* registry = nullptr;
  const LibrarySnapshot* library = nullptr;
  std::string run_dir;
  bool parallel_within_stage = false;
};

namespace detail {

inline std::set<std::string> downstream_closure(const WorkflowGraph& graph,
                                                const std::set<std::string>& roots) {
  std::set<std::string> closure = roots;
  std::vector<std::string> frontier(roots.begin(), roots.end());
  while (!frontier.empty()) {
    std::string current = frontier.back();
    frontier.pop_back();
    for (const auto& edge : graph.edges) {
      if (edge.from == current && closure.insert(edge.to).second) frontier.push_back(edge.to);
    }
  }
  return closure;
}

inline std::string failure_digest(const EvidenceSummary& summary,
                                  const std::set<SignalKind>& reasons) {
  std::string digest;
  for (SignalKind reason : reasons) {
    if (!digest.empty()) digest += "; ";
    switch (reason) {
      case SignalKind::Output:
        digest += "confidence " + std::to_string(summary.confidence.value_or(0.0));
        break;
      case SignalKind::Test:
        digest += "tests " + std::to_string(summary.test_pass) + " pass / " +
                  std::to_string(summary.test_fail) + " fail";
        break;
      case SignalKind::Tool:
        digest += std::to_string(summary.tool_errors) + " tool errors";
        break;
      case SignalKind::Budget:
        digest += "budget ratio " + std::to_string(summary.budget_ratio);
        break;
      case SignalKind::Interface:
        digest += std::to_string(summary.interface_violations) + " interface violations";
        break;
    }
  }
  return digest;
}

}  // namespace detail

/// execute -> detect -> decide -> repair -> re-execute the affected suffix,
/// bounded by the spec's max_repair_rounds. Patches apply to a per-instance
/// copy; the persistent graph passed in is never modified, and every patch
/// is discarded with the instance.
inline RepairOutcome review_loop(const WorkflowGraph& graph, const TaskSpecification& spec,
                                 const ExecutorRegistry& executors,
                                 const std::vector<RepairPolicy>& policies,
                                 const Thresholds& thresholds, const ReviewOptions& options = {}) {
  check_thresholds(thresholds);

  RepairOutcome outcome;
  WorkflowGraph instance = graph;  // per-instance copy

  ExecutionOptions exec_options;
  exec_options.registry = options.registry;
  exec_options.budget_warn_ratio = thresholds.budget_warn_ratio;
  exec_options.parallel_within_stage = options.parallel_within_stage;
  exec_options.run_dir = options.run_dir;

  ExecutionTrace trace = execute(instance, spec, executors, exec_options);
  std::map<std::string, std::int64_t> consecutive_fails;

  while (true) {
    if (trace.outcome == RunOutcome::BudgetExhausted) {
      outcome.stop_reason = StopReason::BudgetExhausted;
      break;
    }

    std::map<std::string, EvidenceSummary> summaries = aggregate_signals(trace);
    for (auto& [node, summary] : summaries) {
      std::int64_t& streak = consecutive_fails[node];
      if (summary.test_pass + summary.test_fail > 0 &&
          summary.test_fail_ratio() > thresholds.max_test_fail_ratio) {
        ++streak;
      } else {
        streak = 0;
      }
      summary.consecutive_test_fail_rounds = streak;
    }

    auto flagged = detect(summaries, thresholds);
    if (flagged.empty()) {
      outcome.stop_reason = StopReason::ValidationSucceeded;
      break;
    }
    if (outcome.rounds_used >= spec.constraints.max_repair_rounds) {
      outcome.stop_reason = StopReason::MaxRoundsReached;
      break;
    }

    const auto& [node_id, reasons] = *flagged.begin();  // deterministic: lowest id
    RepairAction action = decide(node_id, summaries, policies);
    if (action == RepairAction::EscalateNoAction) {
      outcome.stop_reason = StopReason::NoMatchingPolicy;
      break;
    }

    RepairContext context;
    context.library = options.library;
    context.digest = detail::failure_digest(summaries.at(node_id), reasons);

    WorkflowGraph patched;
    GraphPatch patch;
    try {
      patch = repair(instance, node_id, action, context);
      patched = apply_patch(instance, patch);
    } catch (const Error&) {
      // The chosen action produced no applicable patch on this instance.
      outcome.stop_reason = StopReason::NoMatchingPolicy;
      break;
    }

    outcome.patches.push_back(patch);
    ++outcome.rounds_used;

    std::set<std::string> affected = detail::downstream_closure(patched, patch.target_nodes);
    std::set<std::string> reuse;
    for (const auto& node : patched.nodes) {
      if (!affected.count(node.id) && trace.node_results.count(node.id)) reuse.insert(node.id);
    }

    ExecutionOptions round_options = exec_options;
    round_options.previous = &trace;
    round_options.reuse = std::move(reuse);
    ExecutionTrace next = execute(patched, spec, executors, round_options);

    instance = std::move(patched);
    trace = std::move(next);
  }

  outcome.final_trace = std::move(trace);
  outcome.instance_graph = std::move(instance);
  return outcome;
}

// ---------------------------------------------------------------------------
// Policy and threshold files
// ---------------------------------------------------------------------------

inline Json to_json(const RepairPolicy& policy) {
  Json pattern = Json::array();
  for (const auto& clause : policy.pattern) {
    pattern.push_back(Json{{"field", clause.field},
                           {"comparator", clause.comparator},
                           {"value", clause.value}});
  }
  return Json{{"id", policy.id},
              {"priority", policy.priority},
              {"pattern", pattern},
              {"action", to_string(policy.action)}};
}

// Canonical policy files list policies in (priority, id) order.
inline Json to_json(const std::vector<RepairPolicy>& policies) {
  std::vector<RepairPolicy> ordered = policies;
  std::sort(ordered.begin(), ordered.end(), [](const RepairPolicy& a, const RepairPolicy& b) {
    return a.priority != b.priority ? a.priority < b.priority : a.id < b.id;
  });
  Json out = Json::array();
  for (const auto& policy : ordered) out.push_back(to_json(policy));
  return out;
}

inline std::string serialize_policies(const std::vector<RepairPolicy>& policies) {
  return canonical_dump(to_json(policies));
}

inline std::vector<RepairPolicy> parse_policies(const Json& document) {
  return reject_malformed("policy file", [&] {
  if (!document.is_array()) {
    throw Error(ErrorCode::MalformedDocument, "policy file must be a JSON list");
  }
  std::vector<RepairPolicy> policies;
  std::set<std::string> ids;
  for (const Json& item : document) {
    expect_object(item, "policy");
    expect_keys(item, {"id", "priority", "pattern", "action"}, "policy");
    RepairPolicy policy;
    policy.id = get_string(item, "id", "", "policy");
    if (policy.id.empty()) {
      throw Error(ErrorCode::MalformedDocument, "policy id must be non-empty");
    }
    if (!ids.insert(policy.id).second) {
      throw Error(ErrorCode::DuplicateId, "duplicate policy id '" + policy.id + "'");
    }
    policy.priority = get_integer(item, "priority", 0, "policy");
    if (item.contains("pattern")) {
      for (const Json& clause : item.at("pattern")) {
        expect_object(clause, "pattern clause");
        expect_keys(clause, {"field", "comparator", "value"}, "pattern clause");
        PatternClause parsed;
        parsed.field = get_string(clause, "field", "", "pattern clause");
        parsed.comparator = get_string(clause, "comparator", "", "pattern clause");
        if (!clause.contains("value") || !clause.at("value").is_number()) {
          throw Error(ErrorCode::MalformedDocument, "pattern clause value must be a number");
        }
        parsed.value = clause.at("value").get<double>();
        policy.pattern.push_back(std::move(parsed));
      }
    }
    policy.action = repair_action_from(get_string(item, "action", "", "policy"));
    policies.push_back(std::move(policy));
  }
  return policies;
  });
}

inline Json to_json(const Thresholds& thresholds) {
  return Json{{"min_output_confidence", thresholds.min_output_confidence},
              {"max_test_fail_ratio", thresholds.max_test_fail_ratio},
              {"max_tool_errors", thresholds.max_tool_errors},
              {"budget_warn_ratio", thresholds.budget_warn_ratio}};
}

inline Thresholds parse_thresholds(const Json& document) {
  return reject_malformed("thresholds", [&] {
  expect_object(document, "thresholds");
  expect_keys(document,
              {"min_output_confidence", "max_test_fail_ratio", "max_tool_errors",
               "budget_warn_ratio"},
              "thresholds");
  Thresholds thresholds;
  if (document.contains("min_output_confidence")) {
    thresholds.min_output_confidence = document.at("min_output_confidence").get<double>();
  }
  if (document.contains("max_test_fail_ratio")) {
    thresholds.max_test_fail_ratio = document.at("max_test_fail_ratio").get<double>();
  }
  thresholds.max_tool_errors = get_integer(document, "max_tool_errors", 2, "thresholds");
  if (document.contains("budget_warn_ratio")) {
    thresholds.budget_warn_ratio = document.at("budget_warn_ratio").get<double>();
  }
  check_thresholds(thresholds);
  return thresholds;
  });
}

}  // namespace loom
