#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "loom/canonical.hpp"
#include "loom/errors.hpp"
#include "loom/graph.hpp"
#include "loom/signals.hpp"

namespace loom {

struct NodeContext {
  std::string node_id;
  NodeKind kind = NodeKind::Agent;
  std::string instruction;
  std::vector<std::string> attachments;       // attached entry ids, sorted
  std::map<std::string, Json> inputs;         // producer node id -> artifact
};

struct ExecutorResult {
  Json artifact = Json::object();
  std::vector<EvidenceSignal> signals;  // node attribution stamped by the runtime
  std::int64_t cost = 0;
  bool failed = false;
  std::string failure;
};

/// Contract every node executor implements:
/// run(instruction, attachments, inputs) -> (artifact, signals, cost).
class Executor {
 public:
  virtual ~Executor() = default;
  virtual ExecutorResult run(const NodeContext& context) = 0;
};

class ExecutorRegistry {
 public:
  void set_default(std::shared_ptr<Executor> executor) { default_ = std::move(executor); }

  void bind(const std::string& binding_id, std::shared_ptr<Executor> executor) {
    bindings_[binding_id] = std::move(executor);
  }

  bool can_resolve(const std::string& binding_id) const {
    if (binding_id.empty()) return default_ != nullptr;
    return bindings_.count(binding_id) > 0 || default_ != nullptr;
  }

  Executor& resolve(const std::string& binding_id) const {
    if (!binding_id.empty()) {
      auto it = bindings_.find(binding_id);
      if (it != bindings_.end()) return *it->second;
    }
    if (default_) return *default_;
    throw Error(ErrorCode::UnresolvedExecutor, "no executor for binding '" + binding_id + "'");
  }

 private:
  std::map<std::string, std::shared_ptr<Executor>> bindings_;
  std::shared_ptr<Executor> default_;
};

/// One scripted behavior for one invocation of a node.
struct ScriptedBehavior {
  Json artifact = Json::object();
  std::int64_t cost = 0;
  std::optional<double> confidence;
  std::optional<std::pair<std::int64_t, std::int64_t>> tests;  // (pass, fail)
  std::int64_t tool_errors = 0;
  bool fail = false;
  std::string failure = "scripted failure";
};

/// Executor that replays behaviors from a fixture script keyed by node id.
/// Successive invocations of a node consume successive behaviors; the last
/// behavior repeats. Nodes absent from the script complete with a note
/// artifact at the script's default cost.
class ScriptedExecutor : public Executor {
 public:
  ScriptedExecutor() = default;

  static std::shared_ptr<ScriptedExecutor> from_json(const Json& document) {
    return reject_malformed("executor script", [&] {
    expect_object(document, "executor script");
    expect_keys(document, {"nodes", "default_cost"}, "executor script");
    auto executor = std::make_shared<ScriptedExecutor>();
    executor->default_cost_ = get_integer(document, "default_cost", 0, "executor script");
    if (document.contains("nodes")) {
      expect_object(document.at("nodes"), "executor script nodes");
      for (const auto& item : document.at("nodes").items()) {
        if (!item.value().is_array()) {
          throw Error(ErrorCode::MalformedDocument,
                      "script for node '" + item.key() + "' must be a list of behaviors");
        }
        for (const Json& step : item.value()) {
          executor->add_behavior(item.key(), parse_behavior(step));
        }
      }
    }
    return executor;
    });
  }

  void add_behavior(const std::string& node_id, ScriptedBehavior behavior) {
    behaviors_[node_id].push_back(std::move(behavior));
  }

  void set_default_cost(std::int64_t cost) { default_cost_ = cost; }

  ExecutorResult run(const NodeContext& context) override {
    ScriptedBehavior behavior;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      std::size_t attempt = invocations_[context.node_id]++;
      auto it = behaviors_.find(context.node_id);
      if (it != behaviors_.end() && !it->second.empty()) {
        std::size_t index = attempt < it->second.size() ? attempt : it->second.size() - 1;
        behavior = it->second[index];
      } else {
        behavior.artifact = Json{{"text", context.node_id + " completed"}};
        behavior.cost = default_cost_;
        behavior.confidence = 1.0;
      }
    }

    ExecutorResult result;
    result.cost = behavior.cost;
    if (behavior.fail) {
      result.failed = true;
      result.failure = behavior.failure;
      return result;
    }
    result.artifact = behavior.artifact;
    if (behavior.confidence) {
      result.signals.push_back({SignalKind::Output, "", Severity::Info,
                                Json{{"confidence", *behavior.confidence}}});
    }
    if (behavior.tests) {
      auto [pass, fail] = *behavior.tests;
      result.signals.push_back({SignalKind::Test, "",
                                fail > 0 ? Severity::Warn : Severity::Info,
                                Json{{"pass", pass}, {"fail", fail}}});
    }
    if (behavior.tool_errors > 0) {
      result.signals.push_back(
          {SignalKind::Tool, "", Severity::Warn, Json{{"errors", behavior.tool_errors}}});
    }
    return result;
  }

  std::size_t invocations(const std::string& node_id) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = invocations_.find(node_id);
    return it == invocations_.end() ? 0 : it->second;
  }

 private:
  static ScriptedBehavior parse_behavior(const Json& document) {
    expect_object(document, "behavior");
    expect_keys(document, {"artifact", "cost", "confidence", "tests", "tool_errors", "fail", "failure"},
                "behavior");
    ScriptedBehavior behavior;
    if (document.contains("artifact")) behavior.artifact = document.at("artifact");
    behavior.cost = get_integer(document, "cost", 0, "behavior");
    if (document.contains("confidence")) {
      behavior.confidence = document.at("confidence").get<double>();
    }
    if (document.contains("tests")) {
      const Json& tests = document.at("tests");
      expect_object(tests, "behavior tests");
      expect_keys(tests, {"pass", "fail"}, "behavior tests");
      behavior.tests = {get_integer(tests, "pass", 0, "behavior tests"),
                        get_integer(tests, "fail", 0, "behavior tests")};
    }
    behavior.tool_errors = get_integer(document, "tool_errors", 0, "behavior");
    if (document.contains("fail")) behavior.fail = document.at("fail").get<bool>();
    behavior.failure = get_string(document, "failure", "scripted failure", "behavior");
    return behavior;
  }

  mutable std::mutex mutex_;
  std::map<std::string, std::vector<ScriptedBehavior>> behaviors_;
  std::map<std::string, std::size_t> invocations_;
  std::int64_t default_cost_ = 0;
};

}  // namespace loom
