#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "loom/canonical.hpp"
#include "loom/errors.hpp"
#include "loom/spec.hpp"
#include "loom/text.hpp"

namespace loom {

enum class EntryKind {
  Resource,
  Skill,
  Tool,
  ExternalAgent,
  ReferenceGraph,
};

inline const char* to_string(EntryKind kind) {
  switch (kind) {
    case EntryKind::Resource: return "resource";
    case EntryKind::Skill: return "skill";
    case EntryKind::Tool: return "tool";
    case EntryKind::ExternalAgent: return "external_agent";
    case EntryKind::ReferenceGraph: return "reference_graph";
  }
  return "resource";
}

inline EntryKind entry_kind_from(const std::string& text) {
  if (text == "resource") return EntryKind::Resource;
  if (text == "skill") return EntryKind::Skill;
  if (text == "tool") return EntryKind::Tool;
  if (text == "external_agent") return EntryKind::ExternalAgent;
  if (text == "reference_graph") return EntryKind::ReferenceGraph;
  throw Error(ErrorCode::MalformedDocument, "unknown entry kind '" + text + "'");
}

struct LibraryEntry {
  std::string id;
  EntryKind kind = EntryKind::Resource;
  std::string description;
  std::string input_schema;   // empty = not declared
  std::string output_schema;  // empty = not declared
  std::string provenance = "builtin";

  /// The text retrieval matches against: description plus schema ids.
  std::string match_text() const {
    std::string text = description;
    if (!input_schema.empty()) text += " " + input_schema;
    if (!output_schema.empty()) text += " " + output_schema;
    return text;
  }
};

inline void check_entry(const LibraryEntry& entry) {
  if (!is_identifier(entry.id)) {
    throw Error(ErrorCode::MalformedDocument, "entry id must be a non-empty identifier");
  }
  if ((entry.kind == EntryKind::Tool || entry.kind == EntryKind::ExternalAgent) &&
      (entry.input_schema.empty() || entry.output_schema.empty())) {
    throw Error(ErrorCode::MissingSchema,
                "entry '" + entry.id + "' of kind " + to_string(entry.kind) +
                    " requires both input_schema and output_schema");
  }
}

/// Cosine similarity of term-frequency vectors over lowercased alphanumeric
/// tokens. Symmetric in the token multisets, bounded in [0,1], and 0 when
/// either side has no tokens.
inline double score_match(const std::string& query, const LibraryEntry& entry) {
  std::map<std::string, int> a = term_frequencies(query);
  std::map<std::string, int> b = term_frequencies(entry.match_text());
  if (a.empty() || b.empty()) return 0.0;
  std::int64_t dot = 0;
  std::int64_t norm_a = 0;
  std::int64_t norm_b = 0;
  for (const auto& [token, count] : a) {
    norm_a += static_cast<std::int64_t>(count) * count;
    auto it = b.find(token);
    if (it != b.end()) dot += static_cast<std::int64_t>(count) * it->second;
  }
  for (const auto& [token, count] : b) {
    norm_b += static_cast<std::int64_t>(count) * count;
  }
  if (dot == 0) return 0.0;
  return static_cast<double>(dot) /
         (std::sqrt(static_cast<double>(norm_a)) * std::sqrt(static_cast<double>(norm_b)));
}

struct RetrievalQuery {
  EntryKind target_kind = EntryKind::Skill;
  std::string text;
};

struct RetrievalPlan {
  std::vector<RetrievalQuery> queries;
  std::map<EntryKind, int> per_kind_k;
};

constexpr int kDefaultTopK = 3;

struct ScoredEntry {
  std::string id;
  double score = 0.0;
};

struct RankedList {
  RetrievalQuery query;
  std::vector<ScoredEntry> entries;
};

// Immutable view used by retrieval and synthesis; sorted by id.
using LibrarySnapshot = std::vector<LibraryEntry>;

/// The global artifact library. Writers take the exclusive lock; retrieval
/// works on an immutable snapshot.
class Library {
 public:
  Library() = default;
  Library(const Library& other) : entries_(other.snapshot_entries()) {}
  Library& operator=(const Library& other) {
    if (this != &other) {
      auto copy = other.snapshot_entries();
      std::unique_lock lock(mutex_);
      entries_ = std::move(copy);
    }
    return *this;
  }

  std::string register_entry(LibraryEntry entry) {
    check_entry(entry);
    std::unique_lock lock(mutex_);
    auto [it, inserted] = entries_.emplace(entry.id, entry);
    if (!inserted) {
      throw Error(ErrorCode::DuplicateId, "entry '" + entry.id + "' already registered");
    }
    return it->first;
  }

  bool contains(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return entries_.count(id) > 0;
  }

  LibraryEntry get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(id);
    if (it == entries_.end()) {
      throw Error(ErrorCode::MalformedDocument, "no entry '" + id + "'");
    }
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  LibrarySnapshot snapshot() const {
    std::shared_lock lock(mutex_);
    LibrarySnapshot snap;
    snap.reserve(entries_.size());
    for (const auto& [id, entry] : entries_) snap.push_back(entry);
    return snap;
  }

 private:
  std::map<std::string, LibraryEntry> snapshot_entries() const {
    std::shared_lock lock(mutex_);
    return entries_;
  }

  mutable std::shared_mutex mutex_;
  std::map<std::string, LibraryEntry> entries_;  // keyed (and ordered) by id
};

/// One query per goal clause, plus one per repository / reference-graph
/// resource; k defaults applied for every kind.
inline RetrievalPlan formulate_retrieval_plan(const TaskSpecification& spec) {
  RetrievalPlan plan;
  for (const auto& group : split_goal_clauses(spec.goal)) {
    for (const auto& clause : group) {
      plan.queries.push_back({EntryKind::Skill, clause});
    }
  }
  if (plan.queries.empty()) {
    plan.queries.push_back({EntryKind::Skill, trim_copy(spec.goal)});
  }
  for (const auto& resource : spec.resources) {
    if (resource.kind == ResourceKind::Repository) {
      std::string text = resource.description.empty() ? resource.id : resource.description;
      plan.queries.push_back({EntryKind::ExternalAgent, text});
    } else if (resource.kind == ResourceKind::ReferenceGraph) {
      std::string text = resource.description.empty() ? resource.id : resource.description;
      plan.queries.push_back({EntryKind::ReferenceGraph, text});
    }
  }
  for (EntryKind kind : {EntryKind::Resource, EntryKind::Skill, EntryKind::Tool,
                         EntryKind::ExternalAgent, EntryKind::ReferenceGraph}) {
    plan.per_kind_k[kind] = kDefaultTopK;
  }
  return plan;
}

/// Top-k entries of the targeted kind per query, ranked by score descending
/// with ties broken by lexicographic id.
inline std::vector<ScoredEntry> retrieve_one(const LibrarySnapshot& snapshot,
                                             const RetrievalQuery& query, int k) {
  std::vector<ScoredEntry> scored;
  for (const auto& entry : snapshot) {
    if (entry.kind != query.target_kind) continue;
    scored.push_back({entry.id, score_match(query.text, entry)});
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredEntry& a, const ScoredEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (k < 0) k = 0;
  if (scored.size() > static_cast<std::size_t>(k)) scored.resize(static_cast<std::size_t>(k));
  return scored;
}

inline std::vector<RankedList> retrieve(const LibrarySnapshot& snapshot, const RetrievalPlan& plan) {
  std::vector<RankedList> results;
  for (const auto& query : plan.queries) {
    auto it = plan.per_kind_k.find(query.target_kind);
    int k = it == plan.per_kind_k.end() ? kDefaultTopK : it->second;
    results.push_back({query, retrieve_one(snapshot, query, k)});
  }
  return results;
}

inline std::vector<RankedList> retrieve(const Library& library, const RetrievalPlan& plan) {
  return retrieve(library.snapshot(), plan);
}

inline Json to_json(const LibraryEntry& entry) {
  return Json{{"id", entry.id},
              {"kind", to_string(entry.kind)},
              {"description", entry.description},
              {"input_schema", entry.input_schema},
              {"output_schema", entry.output_schema},
              {"provenance", entry.provenance}};
}

inline LibraryEntry parse_library_entry(const Json& document) {
  return reject_malformed("library entry", [&] {
  expect_object(document, "library entry");
  expect_keys(document, {"id", "kind", "description", "input_schema", "output_schema", "provenance"},
              "library entry");
  LibraryEntry entry;
  entry.id = get_string(document, "id", "", "library entry");
  entry.kind = entry_kind_from(get_string(document, "kind", "", "library entry"));
  entry.description = get_string(document, "description", "", "library entry");
  entry.input_schema = get_string(document, "input_schema", "", "library entry");
  entry.output_schema = get_string(document, "output_schema", "", "library entry");
  entry.provenance = get_string(document, "provenance", "builtin", "library entry");
  check_entry(entry);
  return entry;
  });
}

// On-disk layout: <dir>/index.json plus <dir>/entries/<id>.json.
inline void save_library(const Library& library, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "entries");
  Json index_entries = Json::array();
  for (const auto& entry : library.snapshot()) {
    index_entries.push_back(Json{{"id", entry.id}, {"kind", to_string(entry.kind)}});
    write_file((fs::path(dir) / "entries" / (entry.id + ".json")).string(),
               canonical_dump(to_json(entry)));
  }
  write_file((fs::path(dir) / "index.json").string(),
             canonical_dump(Json{{"entries", index_entries}}));
}

inline Library load_library(const std::string& dir) {
  namespace fs = std::filesystem;
  Library library;
  Json index = parse_document(read_file((fs::path(dir) / "index.json").string()));
  expect_object(index, "library index");
  expect_keys(index, {"entries"}, "library index");
  if (!index.contains("entries") || !index.at("entries").is_array()) {
    throw Error(ErrorCode::MalformedDocument, "library index must list entries");
  }
  for (const Json& item : index.at("entries")) {
    expect_object(item, "index entry");
    std::string id = get_string(item, "id", "", "index entry");
    Json doc = parse_document(read_file((fs::path(dir) / "entries" / (id + ".json")).string()));
    library.register_entry(parse_library_entry(doc));
  }
  return library;
}

}  // namespace loom
