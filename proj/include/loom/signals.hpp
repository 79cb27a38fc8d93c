#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loom/canonical.hpp"
#include "loom/errors.hpp"

namespace loom {

enum class SignalKind { Output, Test, Tool, Budget, Interface };

inline const char* to_string(SignalKind kind) {
  switch (kind) {
    case SignalKind::Output: return "output";
    case SignalKind::Test: return "test";
    case SignalKind::Tool: return "tool";
    case SignalKind::Budget: return "budget";
    case SignalKind::Interface: return "interface";
  }
  return "output";
}

inline SignalKind signal_kind_from(const std::string& text) {
  if (text == "output") return SignalKind::Output;
  if (text == "test") return SignalKind::Test;
  if (text == "tool") return SignalKind::Tool;
  if (text == "budget") return SignalKind::Budget;
  if (text == "interface") return SignalKind::Interface;
  throw Error(ErrorCode::MalformedDocument, "unknown signal kind '" + text + "'");
}

enum class Severity { Info, Warn, Fail };

inline const char* to_string(Severity severity) {
  switch (severity) {
    case Severity::Info: return "info";
    case Severity::Warn: return "warn";
    case Severity::Fail: return "fail";
  }
  return "info";
}

inline Severity severity_from(const std::string& text) {
  if (text == "info") return Severity::Info;
  if (text == "warn") return Severity::Warn;
  if (text == "fail") return Severity::Fail;
  throw Error(ErrorCode::MalformedDocument, "unknown severity '" + text + "'");
}

/// One runtime observation attributed to a node. The payload shape depends
/// on the kind: {confidence} for output, {pass,fail} for test, {errors} for
/// tool, {accumulated,budget} for budget, {field,schema,edge} for interface.
struct EvidenceSignal {
  SignalKind kind = SignalKind::Output;
  std::string node;
  Severity severity = Severity::Info;
  Json payload = Json::object();
};

struct Message {
  std::string sender;
  std::string receiver;
  std::string summary;
  std::string body;
  std::string artifact_ref;  // empty when artifacts are not persisted
};

struct CostLedger {
  std::map<std::string, std::int64_t> per_node;
  std::int64_t total = 0;
};

/// Exact integer accounting; the total always equals the sum of per-node
/// costs.
inline void record_cost(CostLedger& ledger, const std::string& node, std::int64_t amount) {
  if (amount < 0) {
    throw Error(ErrorCode::NegativeCost,
                "cost for '" + node + "' must be non-negative, got " + std::to_string(amount));
  }
  ledger.per_node[node] += amount;
  ledger.total += amount;
}

enum class RunOutcome { Success, Failure, BudgetExhausted };

inline const char* to_string(RunOutcome outcome) {
  switch (outcome) {
    case RunOutcome::Success: return "success";
    case RunOutcome::Failure: return "failure";
    case RunOutcome::BudgetExhausted: return "budget_exhausted";
  }
  return "success";
}

inline RunOutcome run_outcome_from(const std::string& text) {
  if (text == "success") return RunOutcome::Success;
  if (text == "failure") return RunOutcome::Failure;
  if (text == "budget_exhausted") return RunOutcome::BudgetExhausted;
  throw Error(ErrorCode::MalformedDocument, "unknown outcome '" + text + "'");
}

// node_results values hold either {"artifact": ...} or {"failure": "..."}.
inline Json artifact_result(Json artifact) { return Json{{"artifact", std::move(artifact)}}; }
inline Json failure_result(const std::string& reason) { return Json{{"failure", reason}}; }
inline bool is_failure_result(const Json& result) { return result.contains("failure"); }

struct ExecutionTrace {
  std::vector<Message> messages;
  std::vector<EvidenceSignal> signals;
  CostLedger ledger;
  std::map<std::string, Json> node_results;
  RunOutcome outcome = RunOutcome::Success;
};

struct EvidenceSummary {
  std::optional<double> confidence;  // latest output signal
  std::int64_t test_pass = 0;
  std::int64_t test_fail = 0;
  std::int64_t tool_errors = 0;
  double budget_ratio = 0.0;  // latest budget signal
  std::int64_t interface_violations = 0;
  // Rounds in a row the fail ratio stayed over threshold; maintained by the
  // review loop, zero for single traces.
  std::int64_t consecutive_test_fail_rounds = 0;

  double test_fail_ratio() const {
    std::int64_t total = test_pass + test_fail;
    return total == 0 ? 0.0 : static_cast<double>(test_fail) / static_cast<double>(total);
  }
};

/// Per-node linear scan over the trace's signals.
inline std::map<std::string, EvidenceSummary> aggregate_signals(const ExecutionTrace& trace) {
  std::map<std::string, EvidenceSummary> summaries;
  for (const auto& signal : trace.signals) {
    EvidenceSummary& summary = summaries[signal.node];
    switch (signal.kind) {
      case SignalKind::Output:
        if (signal.payload.contains("confidence") && signal.payload.at("confidence").is_number()) {
          summary.confidence = signal.payload.at("confidence").get<double>();
        }
        break;
      case SignalKind::Test:
        summary.test_pass += signal.payload.value("pass", 0);
        summary.test_fail += signal.payload.value("fail", 0);
        break;
      case SignalKind::Tool:
        summary.tool_errors += signal.payload.value("errors", 0);
        break;
      case SignalKind::Budget: {
        double budget = signal.payload.value("budget", 0.0);
        double accumulated = signal.payload.value("accumulated", 0.0);
        if (budget > 0) summary.budget_ratio = accumulated / budget;
        break;
      }
      case SignalKind::Interface:
        if (signal.severity == Severity::Fail) ++summary.interface_violations;
        break;
    }
  }
  return summaries;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline Json to_json(const EvidenceSignal& signal) {
  return Json{{"kind", to_string(signal.kind)},
              {"node", signal.node},
              {"severity", to_string(signal.severity)},
              {"payload", signal.payload}};
}

inline Json to_json(const Message& message) {
  return Json{{"sender", message.sender},
              {"receiver", message.receiver},
              {"summary", message.summary},
              {"body", message.body},
              {"artifact_ref", message.artifact_ref}};
}

inline Json to_json(const CostLedger& ledger) {
  return Json{{"per_node", Json(ledger.per_node)}, {"total", ledger.total}};
}

inline Json to_json(const ExecutionTrace& trace) {
  Json messages = Json::array();
  for (const auto& message : trace.messages) messages.push_back(to_json(message));
  Json signals = Json::array();
  for (const auto& signal : trace.signals) signals.push_back(to_json(signal));
  Json results = Json::object();
  for (const auto& [id, result] : trace.node_results) results[id] = result;
  return Json{{"messages", messages},
              {"signals", signals},
              {"ledger", to_json(trace.ledger)},
              {"node_results", results},
              {"outcome", to_string(trace.outcome)}};
}

inline std::string serialize_trace(const ExecutionTrace& trace) {
  return canonical_dump(to_json(trace));
}

inline EvidenceSignal parse_signal(const Json& document) {
  expect_object(document, "signal");
  expect_keys(document, {"kind", "node", "severity", "payload"}, "signal");
  EvidenceSignal signal;
  signal.kind = signal_kind_from(get_string(document, "kind", "", "signal"));
  signal.node = get_string(document, "node", "", "signal");
  signal.severity = severity_from(get_string(document, "severity", "info", "signal"));
  if (document.contains("payload")) signal.payload = document.at("payload");
  return signal;
}

inline ExecutionTrace parse_trace(const Json& document) {
  return reject_malformed("trace", [&] {
  expect_object(document, "trace");
  expect_keys(document, {"messages", "signals", "ledger", "node_results", "outcome"}, "trace");
  ExecutionTrace trace;
  if (document.contains("messages")) {
    for (const Json& item : document.at("messages")) {
      expect_object(item, "message");
      expect_keys(item, {"sender", "receiver", "summary", "body", "artifact_ref"}, "message");
      trace.messages.push_back({get_string(item, "sender", "", "message"),
                                get_string(item, "receiver", "", "message"),
                                get_string(item, "summary", "", "message"),
                                get_string(item, "body", "", "message"),
                                get_string(item, "artifact_ref", "", "message")});
    }
  }
  if (document.contains("signals")) {
    for (const Json& item : document.at("signals")) trace.signals.push_back(parse_signal(item));
  }
  if (document.contains("ledger")) {
    const Json& ledger = document.at("ledger");
    expect_object(ledger, "ledger");
    expect_keys(ledger, {"per_node", "total"}, "ledger");
    if (ledger.contains("per_node")) {
      trace.ledger.per_node = ledger.at("per_node").get<std::map<std::string, std::int64_t>>();
    }
    trace.ledger.total = get_integer(ledger, "total", 0, "ledger");
    std::int64_t sum = 0;
    for (const auto& [id, cost] : trace.ledger.per_node) sum += cost;
    if (sum != trace.ledger.total) {
      throw Error(ErrorCode::MalformedDocument, "ledger total does not match per-node sum");
    }
  }
  if (document.contains("node_results")) {
    expect_object(document.at("node_results"), "node_results");
    for (const auto& item : document.at("node_results").items()) {
      trace.node_results[item.key()] = item.value();
    }
  }
  trace.outcome = run_outcome_from(get_string(document, "outcome", "success", "trace"));
  return trace;
  });
}

inline ExecutionTrace parse_trace_text(const std::string& text) {
  return parse_trace(parse_document(text));
}

}  // namespace loom
