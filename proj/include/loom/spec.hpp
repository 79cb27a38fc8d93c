#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "loom/canonical.hpp"
#include "loom/errors.hpp"
#include "loom/validation.hpp"

namespace loom {

constexpr std::int64_t kMaxRepairRoundsCap = 16;
constexpr std::int64_t kDefaultBudget = 100000;
constexpr std::int64_t kDefaultMaxRepairRounds = 3;

enum class ResourceKind {
  Document,
  Dataset,
  Repository,
  Tool,
  ExternalAgent,
  ReferenceGraph,
};

inline const char* to_string(ResourceKind kind) {
  switch (kind) {
    case ResourceKind::Document: return "document";
    case ResourceKind::Dataset: return "dataset";
    case ResourceKind::Repository: return "repository";
    case ResourceKind::Tool: return "tool";
    case ResourceKind::ExternalAgent: return "external_agent";
    case ResourceKind::ReferenceGraph: return "reference_graph";
  }
  return "document";
}

inline ResourceKind resource_kind_from(const std::string& text) {
  if (text == "document") return ResourceKind::Document;
  if (text == "dataset") return ResourceKind::Dataset;
  if (text == "repository") return ResourceKind::Repository;
  if (text == "tool") return ResourceKind::Tool;
  if (text == "external_agent") return ResourceKind::ExternalAgent;
  if (text == "reference_graph") return ResourceKind::ReferenceGraph;
  throw Error(ErrorCode::MalformedDocument, "unknown resource kind '" + text + "'");
}

/// Operational constraints. Budgets are denominated in abstract cost units
/// (one unit = one token); max_runtime of 0 means unbounded.
struct Constraints {
  std::int64_t budget = kDefaultBudget;
  std::int64_t max_runtime = 0;
  std::vector<std::string> environment_requirements;
  std::string output_format = "free_text";
  std::int64_t max_repair_rounds = kDefaultMaxRepairRounds;
};

struct ResourceRef {
  std::string id;
  ResourceKind kind = ResourceKind::Document;
  std::string locator;
  std::string description;
};

struct TaskSpecification {
  std::string goal;
  std::string context;
  Constraints constraints;
  std::vector<ResourceRef> resources;
};

// Syntactic check only: a locator resolves when it is non-empty and carries
// no whitespace.
inline bool locator_is_resolvable(const std::string& locator) {
  if (trim_copy(locator).empty()) return false;
  for (unsigned char c : locator) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return false;
  }
  return true;
}

inline ValidationReport validate_constraints(const Constraints& constraints) {
  ValidationReport report;
  if (constraints.budget <= 0) {
    report.add("budget", "budget", "budget must be a positive number of cost units");
  }
  if (constraints.max_runtime < 0) {
    report.add("max_runtime", "max_runtime", "max_runtime must be positive or 0 (unbounded)");
  }
  if (constraints.max_repair_rounds < 0) {
    report.add("max_repair_rounds", "max_repair_rounds", "max_repair_rounds must be non-negative");
  } else if (constraints.max_repair_rounds > kMaxRepairRoundsCap) {
    report.add("max_repair_rounds", "max_repair_rounds", "max_repair_rounds exceeds cap 16");
  }
  return report;
}

namespace detail {

inline Constraints parse_constraints(const Json& object) {
  expect_object(object, "constraints");
  expect_keys(object,
              {"budget", "max_runtime", "environment_requirements", "output_format",
               "max_repair_rounds"},
              "constraints");
  Constraints constraints;
  constraints.budget = get_integer(object, "budget", kDefaultBudget, "constraints");
  if (constraints.budget <= 0) {
    throw Error(ErrorCode::InvalidBudget, "budget must be positive, got " +
                                              std::to_string(constraints.budget));
  }
  constraints.max_runtime = get_integer(object, "max_runtime", 0, "constraints");
  if (constraints.max_runtime < 0) {
    throw Error(ErrorCode::InvalidConstraint, "max_runtime must be positive or 0 (unbounded)");
  }
  if (object.contains("environment_requirements")) {
    const Json& tags = object.at("environment_requirements");
    if (!tags.is_array()) {
      throw Error(ErrorCode::MalformedDocument, "environment_requirements must be a list");
    }
    for (const Json& tag : tags) {
      if (!tag.is_string()) {
        throw Error(ErrorCode::MalformedDocument, "environment_requirements entries must be strings");
      }
      constraints.environment_requirements.push_back(tag.get<std::string>());
    }
  }
  constraints.output_format = get_string(object, "output_format", "free_text", "constraints");
  constraints.max_repair_rounds =
      get_integer(object, "max_repair_rounds", kDefaultMaxRepairRounds, "constraints");
  if (constraints.max_repair_rounds < 0 || constraints.max_repair_rounds > kMaxRepairRoundsCap) {
    throw Error(ErrorCode::InvalidConstraint,
                "max_repair_rounds out of range [0,16]: " +
                    std::to_string(constraints.max_repair_rounds));
  }
  return constraints;
}

inline ResourceRef parse_resource(const Json& object) {
  expect_object(object, "resource");
  expect_keys(object, {"id", "kind", "locator", "description"}, "resource");
  ResourceRef resource;
  resource.id = get_string(object, "id", "", "resource");
  if (!is_identifier(resource.id)) {
    throw Error(ErrorCode::InvalidResource, "resource id must be a non-empty identifier");
  }
  resource.kind = resource_kind_from(get_string(object, "kind", "", "resource"));
  resource.locator = get_string(object, "locator", "", "resource");
  resource.description = get_string(object, "description", "", "resource");
  if ((resource.kind == ResourceKind::Repository || resource.kind == ResourceKind::ReferenceGraph) &&
      !locator_is_resolvable(resource.locator)) {
    throw Error(ErrorCode::InvalidResource,
                "resource '" + resource.id + "' requires a resolvable locator");
  }
  return resource;
}

}  // namespace detail

/// Parses a task specification document. Violations are checked in field
/// order (goal, constraints, resources), so a rejected document yields
/// exactly one primary error code.
inline TaskSpecification parse_task_spec(const Json& document) {
  return reject_malformed("task spec", [&] {
  expect_object(document, "task spec");
  expect_keys(document, {"goal", "context", "constraints", "resources"}, "task spec");

  TaskSpecification spec;
  if (document.contains("goal") && !document.at("goal").is_string()) {
    throw Error(ErrorCode::MalformedDocument, "goal must be a string");
  }
  spec.goal = trim_copy(get_string(document, "goal", "", "task spec"));
  if (spec.goal.empty()) {
    throw Error(ErrorCode::MissingGoal, "goal is required and must be non-empty");
  }
  spec.context = get_string(document, "context", "", "task spec");
  if (document.contains("constraints")) {
    spec.constraints = detail::parse_constraints(document.at("constraints"));
  }
  if (document.contains("resources")) {
    const Json& resources = document.at("resources");
    if (!resources.is_array()) {
      throw Error(ErrorCode::MalformedDocument, "resources must be a list");
    }
    std::set<std::string> seen;
    for (const Json& entry : resources) {
      ResourceRef resource = detail::parse_resource(entry);
      if (!seen.insert(resource.id).second) {
        throw Error(ErrorCode::DuplicateResourceId, "duplicate resource id '" + resource.id + "'");
      }
      spec.resources.push_back(std::move(resource));
    }
  }
  return spec;
  });
}

inline TaskSpecification parse_task_spec_text(const std::string& text) {
  return parse_task_spec(parse_document(text));
}

inline Json to_json(const Constraints& constraints) {
  Json tags = Json::array();
  for (const auto& tag : constraints.environment_requirements) tags.push_back(tag);
  return Json{{"budget", constraints.budget},
              {"max_runtime", constraints.max_runtime},
              {"environment_requirements", tags},
              {"output_format", constraints.output_format},
              {"max_repair_rounds", constraints.max_repair_rounds}};
}

inline Json to_json(const ResourceRef& resource) {
  return Json{{"id", resource.id},
              {"kind", to_string(resource.kind)},
              {"locator", resource.locator},
              {"description", resource.description}};
}

// Canonical form materializes every field, including defaults.
inline Json to_json(const TaskSpecification& spec) {
  Json resources = Json::array();
  for (const auto& resource : spec.resources) resources.push_back(to_json(resource));
  return Json{{"goal", spec.goal},
              {"context", spec.context},
              {"constraints", to_json(spec.constraints)},
              {"resources", resources}};
}

inline std::string serialize_task_spec(const TaskSpecification& spec) {
  return canonical_dump(to_json(spec));
}

}  // namespace loom
