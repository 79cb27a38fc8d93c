#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loom/canonical.hpp"
#include "loom/errors.hpp"

namespace loom {

// Field kinds: text, integer, number, boolean, path, record, and
// "list-of-<kind>" for homogeneous lists (e.g. "list-of-record").
struct SchemaField {
  std::string name;
  std::string kind;
};

struct ArtifactSchema {
  std::string id;
  std::vector<SchemaField> fields;
  std::vector<std::string> required;
  std::int64_t version = 1;

  bool has_field(const std::string& name) const {
    return std::any_of(fields.begin(), fields.end(),
                       [&](const SchemaField& f) { return f.name == name; });
  }
};

// Explicit cross-schema rename table; consulted when field names do not
// match exactly between a producer and a consumer schema.
struct RenameRule {
  std::string from_schema;
  std::string to_schema;
  std::map<std::string, std::string> field_renames;    // source field -> target field
  std::map<std::string, std::string> element_renames;  // keys inside list-of-record elements
};

inline bool schema_kind_is_valid(const std::string& kind) {
  static const char* base[] = {"text", "integer", "number", "boolean", "path", "record"};
  for (const char* b : base) {
    if (kind == b) return true;
  }
  if (kind.rfind("list-of-", 0) == 0) return schema_kind_is_valid(kind.substr(8));
  return false;
}

inline bool value_matches_kind(const Json& value, const std::string& kind) {
  if (kind == "text" || kind == "path") return value.is_string();
  if (kind == "integer") return value.is_number_integer();
  if (kind == "number") return value.is_number();
  if (kind == "boolean") return value.is_boolean();
  if (kind == "record") return value.is_object();
  if (kind.rfind("list-of-", 0) == 0) {
    if (!value.is_array()) return false;
    std::string element_kind = kind.substr(8);
    return std::all_of(value.begin(), value.end(),
                       [&](const Json& e) { return value_matches_kind(e, element_kind); });
  }
  return false;
}

// First violating field in schema declaration order, or nullopt when the
// artifact satisfies the schema. Fields the schema does not declare pass
// through unchecked.
inline std::optional<std::string> first_schema_violation(const Json& artifact,
                                                         const ArtifactSchema& schema) {
  if (!artifact.is_object()) {
    return std::optional<std::string>{"<root>"};
  }
  for (const SchemaField& field : schema.fields) {
    bool required = std::find(schema.required.begin(), schema.required.end(), field.name) !=
                    schema.required.end();
    if (!artifact.contains(field.name)) {
      if (required) return field.name;
      continue;
    }
    if (!value_matches_kind(artifact.at(field.name), field.kind)) return field.name;
  }
  return std::nullopt;
}

class SchemaRegistry {
 public:
  void register_schema(ArtifactSchema schema) {
    if (!is_identifier(schema.id)) {
      throw Error(ErrorCode::MalformedDocument, "schema id must be an identifier");
    }
    for (const auto& field : schema.fields) {
      if (!schema_kind_is_valid(field.kind)) {
        throw Error(ErrorCode::MalformedDocument,
                    "schema '" + schema.id + "': unknown field kind '" + field.kind + "'");
      }
    }
    for (const auto& name : schema.required) {
      if (!schema.has_field(name)) {
        throw Error(ErrorCode::MalformedDocument,
                    "schema '" + schema.id + "': required field '" + name + "' is not declared");
      }
    }
    schemas_[schema.id] = std::move(schema);
  }

  void add_rename(RenameRule rule) { renames_.push_back(std::move(rule)); }

  bool has(const std::string& id) const { return schemas_.count(id) > 0; }

  const ArtifactSchema& get(const std::string& id) const {
    auto it = schemas_.find(id);
    if (it == schemas_.end()) {
      throw Error(ErrorCode::MalformedDocument, "unregistered schema '" + id + "'");
    }
    return it->second;
  }

  const RenameRule* rename_for(const std::string& from_schema, const std::string& to_schema) const {
    for (const auto& rule : renames_) {
      if (rule.from_schema == from_schema && rule.to_schema == to_schema) return &rule;
    }
    return nullptr;
  }

  const std::map<std::string, ArtifactSchema>& schemas() const { return schemas_; }
  const std::vector<RenameRule>& renames() const { return renames_; }

  /// Registry pre-populated with the engine's generic schemas. "note" is the
  /// payload carried on edges whose producer declares no output schema.
  static SchemaRegistry with_defaults() {
    SchemaRegistry registry;
    registry.register_schema({"note", {{"text", "text"}}, {"text"}, 1});
    registry.register_schema(
        {"final_report", {{"summary", "text"}, {"details", "record"}}, {"summary"}, 1});
    return registry;
  }

 private:
  std::map<std::string, ArtifactSchema> schemas_;
  std::vector<RenameRule> renames_;
};

inline Json to_json(const ArtifactSchema& schema) {
  Json fields = Json::array();
  for (const auto& field : schema.fields) {
    fields.push_back(Json{{"name", field.name}, {"kind", field.kind}});
  }
  Json required = Json::array();
  for (const auto& name : schema.required) required.push_back(name);
  return Json{{"id", schema.id}, {"fields", fields}, {"required", required},
              {"version", schema.version}};
}

inline ArtifactSchema parse_artifact_schema(const Json& document) {
  expect_object(document, "schema");
  expect_keys(document, {"id", "fields", "required", "version"}, "schema");
  ArtifactSchema schema;
  schema.id = get_string(document, "id", "", "schema");
  if (document.contains("fields")) {
    for (const Json& field : document.at("fields")) {
      expect_object(field, "schema field");
      expect_keys(field, {"name", "kind"}, "schema field");
      schema.fields.push_back(
          {get_string(field, "name", "", "schema field"), get_string(field, "kind", "", "schema field")});
    }
  }
  if (document.contains("required")) {
    for (const Json& name : document.at("required")) {
      if (!name.is_string()) {
        throw Error(ErrorCode::MalformedDocument, "schema required entries must be strings");
      }
      schema.required.push_back(name.get<std::string>());
    }
  }
  schema.version = get_integer(document, "version", 1, "schema");
  if (schema.version <= 0) {
    throw Error(ErrorCode::MalformedDocument, "schema version must be positive");
  }
  return schema;
}

inline Json to_json(const SchemaRegistry& registry) {
  Json schemas = Json::array();
  for (const auto& [id, schema] : registry.schemas()) schemas.push_back(to_json(schema));
  Json renames = Json::array();
  for (const auto& rule : registry.renames()) {
    renames.push_back(Json{{"from_schema", rule.from_schema},
                           {"to_schema", rule.to_schema},
                           {"field_renames", Json(rule.field_renames)},
                           {"element_renames", Json(rule.element_renames)}});
  }
  return Json{{"schemas", schemas}, {"renames", renames}};
}

inline SchemaRegistry parse_schema_registry(const Json& document) {
  return reject_malformed("schema registry", [&] {
  expect_object(document, "schema registry");
  expect_keys(document, {"schemas", "renames"}, "schema registry");
  SchemaRegistry registry = SchemaRegistry::with_defaults();
  if (document.contains("schemas")) {
    for (const Json& entry : document.at("schemas")) {
      registry.register_schema(parse_artifact_schema(entry));
    }
  }
  if (document.contains("renames")) {
    for (const Json& entry : document.at("renames")) {
      expect_object(entry, "rename rule");
      expect_keys(entry, {"from_schema", "to_schema", "field_renames", "element_renames"},
                  "rename rule");
      RenameRule rule;
      rule.from_schema = get_string(entry, "from_schema", "", "rename rule");
      rule.to_schema = get_string(entry, "to_schema", "", "rename rule");
      if (entry.contains("field_renames")) {
        rule.field_renames = entry.at("field_renames").get<std::map<std::string, std::string>>();
      }
      if (entry.contains("element_renames")) {
        rule.element_renames = entry.at("element_renames").get<std::map<std::string, std::string>>();
      }
      registry.add_rename(std::move(rule));
    }
  }
  return registry;
  });
}

}  // namespace loom
