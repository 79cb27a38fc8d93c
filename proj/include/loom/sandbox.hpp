#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "loom/canonical.hpp"
#include "loom/errors.hpp"
#include "loom/graph.hpp"

namespace loom {

struct RepositoryProfile {
  std::string locator;
  std::vector<std::string> declared_dependencies;
  std::vector<std::string> entry_points;
  std::vector<std::string> test_commands;
  std::vector<std::string> docs_excerpts;
};

/// Container build specification drafted and revised by the synthesis loop.
/// revision increments by exactly one per revise step.
struct SandboxSpec {
  std::string base_environment = "minimal";
  std::vector<std::string> dependency_list;
  std::vector<std::string> build_commands;
  std::int64_t revision = 0;
};

struct BuildRound {
  std::int64_t revision = 0;
  bool success = false;
  std::string log;
};

struct SmokeResult {
  std::int64_t passed = 0;
  std::int64_t failed = 0;
  std::string note;
};

struct BuildReport {
  std::vector<BuildRound> rounds;
  bool final_success = false;
  std::optional<SmokeResult> smoke;
};

struct BuildOutcome {
  bool success = false;
  std::string log;
};

/// Abstract build backend. Real container runtimes plug in behind this
/// contract; the shipped backends are scripted.
class BuildBackend {
 public:
  virtual ~BuildBackend() = default;
  virtual BuildOutcome build(const SandboxSpec& spec) = 0;
  virtual BuildOutcome run(const std::string& command) = 0;
};

/// Backend that replays a scripted list of build outcomes and per-command
/// run results; counts invocations for test oracles.
class ScriptedBuildBackend : public BuildBackend {
 public:
  ScriptedBuildBackend() = default;

  explicit ScriptedBuildBackend(std::vector<BuildOutcome> build_script,
                                std::map<std::string, BuildOutcome> run_script = {})
      : build_script_(std::move(build_script)), run_script_(std::move(run_script)) {}

  static ScriptedBuildBackend from_json(const Json& document) {
    return reject_malformed("backend script", [&] {
    expect_object(document, "backend script");
    expect_keys(document, {"builds", "runs"}, "backend script");
    ScriptedBuildBackend backend;
    if (document.contains("builds")) {
      for (const Json& item : document.at("builds")) {
        expect_object(item, "build outcome");
        expect_keys(item, {"outcome", "log"}, "build outcome");
        backend.build_script_.push_back(
            {get_string(item, "outcome", "failure", "build outcome") == "success",
             get_string(item, "log", "", "build outcome")});
      }
    }
    if (document.contains("runs")) {
      for (const auto& item : document.at("runs").items()) {
        const Json& value = item.value();
        expect_object(value, "run outcome");
        expect_keys(value, {"outcome", "log"}, "run outcome");
        backend.run_script_[item.key()] = {
            get_string(value, "outcome", "success", "run outcome") == "success",
            get_string(value, "log", "", "run outcome")};
      }
    }
    return backend;
    });
  }

  BuildOutcome build(const SandboxSpec&) override {
    std::size_t index = build_calls_++;
    if (index < build_script_.size()) return build_script_[index];
    if (!build_script_.empty()) return build_script_.back();
    return {true, "ok"};
  }

  BuildOutcome run(const std::string& command) override {
    ++run_calls_;
    auto it = run_script_.find(command);
    if (it != run_script_.end()) return it->second;
    return {true, "ok"};
  }

  std::size_t build_calls() const { return build_calls_; }
  std::size_t run_calls() const { return run_calls_; }

 private:
  std::vector<BuildOutcome> build_script_;
  std::map<std::string, BuildOutcome> run_script_;
  std::size_t build_calls_ = 0;
  std::size_t run_calls_ = 0;
};

inline RepositoryProfile profile_repository(const Json& metadata) {
  return reject_malformed("repository metadata", [&] {
  expect_object(metadata, "repository metadata");
  expect_keys(metadata, {"locator", "dependencies", "entry_points", "tests", "docs"},
              "repository metadata");
  RepositoryProfile profile;
  profile.locator = get_string(metadata, "locator", "", "repository metadata");
  if (trim_copy(profile.locator).empty()) {
    throw Error(ErrorCode::MalformedDocument, "repository metadata requires a locator");
  }
  auto read_list = [&](const char* key, std::vector<std::string>& out) {
    if (!metadata.contains(key)) return;
    if (!metadata.at(key).is_array()) {
      throw Error(ErrorCode::MalformedDocument,
                  std::string("repository metadata '") + key + "' must be a list");
    }
    for (const Json& item : metadata.at(key)) {
      if (!item.is_string()) {
        throw Error(ErrorCode::MalformedDocument,
                    std::string("repository metadata '") + key + "' entries must be strings");
      }
      out.push_back(item.get<std::string>());
    }
  };
  read_list("dependencies", profile.declared_dependencies);
  read_list("entry_points", profile.entry_points);
  read_list("tests", profile.test_commands);
  read_list("docs", profile.docs_excerpts);
  return profile;
  });
}

inline SandboxSpec draft_sandbox_spec(const RepositoryProfile& profile) {
  SandboxSpec spec;
  spec.base_environment = "minimal";
  spec.dependency_list = profile.declared_dependencies;
  spec.build_commands = {"install-dependencies", "run-build"};
  spec.revision = 0;
  return spec;
}

// Extracts the dependency name after the first "missing dependency:" marker.
inline std::optional<std::string> missing_dependency_from_log(const std::string& log) {
  static const std::string marker = "missing dependency:";
  std::size_t at = log.find(marker);
  if (at == std::string::npos) return std::nullopt;
  std::size_t begin = at + marker.size();
  while (begin < log.size() && (log[begin] == ' ' || log[begin] == '\t')) ++begin;
  std::size_t end = begin;
  while (end < log.size() && log[end] != ' ' && log[end] != '\t' && log[end] != '\n' &&
         log[end] != '\r') {
    ++end;
  }
  if (end == begin) return std::nullopt;
  return log.substr(begin, end - begin);
}

/// Runs the profile's test commands in the built sandbox as a smoke check.
inline SmokeResult smoke_test(const SandboxSpec&, const RepositoryProfile& profile,
                              BuildBackend& backend) {
  SmokeResult result;
  if (profile.test_commands.empty()) {
    result.note = "no tests";
    return result;
  }
  for (const auto& command : profile.test_commands) {
    BuildOutcome outcome = backend.run(command);
    if (outcome.success) {
      ++result.passed;
    } else {
      ++result.failed;
    }
  }
  return result;
}

struct SandboxSynthesisResult {
  SandboxSpec spec;
  BuildReport report;
  bool exhausted = false;  // report is still populated when exhausted

  bool ok() const { return !exhausted; }
};

/// Draft, build, and on failure revise from the build log, at most
/// max_rounds builds. On final success the profile's tests run as a smoke
/// check. Unrecognized failure logs still consume a revise step; only the
/// missing-dependency log class changes the spec.
inline SandboxSynthesisResult synthesize_sandbox(const RepositoryProfile& profile,
                                                 BuildBackend& backend, int max_rounds = 3) {
  if (max_rounds <= 0) {
    throw Error(ErrorCode::MalformedDocument, "max_rounds must be positive");
  }
  SandboxSynthesisResult result;
  result.spec = draft_sandbox_spec(profile);
  for (int round = 0; round < max_rounds; ++round) {
    BuildOutcome outcome = backend.build(result.spec);
    result.report.rounds.push_back({result.spec.revision, outcome.success, outcome.log});
    if (outcome.success) {
      result.report.final_success = true;
      result.report.smoke = smoke_test(result.spec, profile, backend);
      return result;
    }
    if (round + 1 == max_rounds) break;
    auto missing = missing_dependency_from_log(outcome.log);
    if (missing) {
      bool known = std::find(result.spec.dependency_list.begin(), result.spec.dependency_list.end(),
                             *missing) != result.spec.dependency_list.end();
      if (!known) result.spec.dependency_list.push_back(*missing);
    }
    result.spec.revision += 1;
  }
  result.exhausted = true;
  return result;
}

/// Maps executor binding ids to the sandbox specs backing them. Several
/// nodes may bind to one spec; each binding id is distinct.
class ExecutorBindingTable {
 public:
  std::string bind(Node& node, const std::shared_ptr<const SandboxSpec>& spec,
                   const BuildReport& report) {
    if (!report.final_success) {
      throw Error(ErrorCode::UnbuiltSandbox,
                  "node '" + node.id + "' cannot bind to a sandbox that never built");
    }
    std::string binding_id = "sandbox-" + std::to_string(++counter_);
    bindings_[binding_id] = spec;
    node.executor_binding = binding_id;
    return binding_id;
  }

  bool resolvable(const std::string& binding_id) const { return bindings_.count(binding_id) > 0; }

  std::shared_ptr<const SandboxSpec> spec_of(const std::string& binding_id) const {
    auto it = bindings_.find(binding_id);
    if (it == bindings_.end()) {
      throw Error(ErrorCode::UnresolvedExecutor, "no binding '" + binding_id + "'");
    }
    return it->second;
  }

  std::size_t size() const { return bindings_.size(); }

 private:
  std::map<std::string, std::shared_ptr<const SandboxSpec>> bindings_;
  std::size_t counter_ = 0;
};

inline std::string register_executor(Node& node, const std::shared_ptr<const SandboxSpec>& spec,
                                     const BuildReport& report, ExecutorBindingTable& table) {
  return table.bind(node, spec, report);
}

inline Json to_json(const SandboxSpec& spec) {
  Json dependencies = Json::array();
  for (const auto& name : spec.dependency_list) dependencies.push_back(name);
  Json commands = Json::array();
  for (const auto& command : spec.build_commands) commands.push_back(command);
  return Json{{"base_environment", spec.base_environment},
              {"dependency_list", dependencies},
              {"build_commands", commands},
              {"revision", spec.revision}};
}

inline Json to_json(const BuildReport& report) {
  Json rounds = Json::array();
  for (const auto& round : report.rounds) {
    rounds.push_back(Json{{"revision", round.revision},
                          {"outcome", round.success ? "success" : "failure"},
                          {"log", round.log}});
  }
  Json out{{"rounds", rounds}, {"final_outcome", report.final_success ? "success" : "failure"}};
  if (report.smoke) {
    out["smoke"] = Json{{"pass", report.smoke->passed},
                       {"fail", report.smoke->failed},
                       {"note", report.smoke->note}};
  }
  return out;
}

}  // namespace loom
