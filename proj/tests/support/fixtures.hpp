#pragma once

// Shared scenario fixtures: a serial two-repository handoff (marker
// discovery feeding gene-set interpretation through a broker), a
// parallel-then-join two-modality comparison, and randomized generators for
// property tests.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "loom/loom.hpp"

namespace fixtures {

inline loom::SchemaRegistry genomics_registry() {
  loom::SchemaRegistry registry = loom::SchemaRegistry::with_defaults();
  registry.register_schema({"analysis_request", {{"request", "text"}}, {"request"}, 1});
  registry.register_schema(
      {"marker_table", {{"markers", "list-of-record"}, {"method", "text"}}, {"markers"}, 1});
  registry.register_schema(
      {"gene_set_input", {{"genes", "list-of-record"}, {"source", "text"}}, {"genes"}, 1});
  registry.register_schema(
      {"interpretation_report", {{"label", "text"}, {"subprocesses", "list-of-record"}}, {"label"}, 1});
  registry.register_schema({"rna_markers", {{"markers", "list-of-record"}}, {"markers"}, 1});
  registry.register_schema(
      {"atac_markers", {{"activity_markers", "list-of-record"}}, {"activity_markers"}, 1});
  registry.register_schema({"marker_set", {{"markers", "list-of-record"}}, {"markers"}, 1});
  registry.add_rename({"marker_table", "gene_set_input", {{"markers", "genes"}}, {}});
  registry.add_rename({"atac_markers", "marker_set", {{"activity_markers", "markers"}}, {}});
  return registry;
}

inline loom::Library serial_library() {
  loom::Library library;
  library.register_entry({"spatial_profiler", loom::EntryKind::ExternalAgent,
                          "spatial transcriptomics analysis to identify expression markers",
                          "analysis_request", "marker_table",
                          "https://example.org/spatial_profiler.git"});
  library.register_entry({"geneset_annotator", loom::EntryKind::ExternalAgent,
                          "gene set interpretation and annotation of transcriptional programs",
                          "gene_set_input", "interpretation_report",
                          "https://example.org/geneset_annotator.git"});
  library.register_entry({"statistical_testing", loom::EntryKind::Skill,
                          "statistical hypothesis testing with multiple testing correction", "", "",
                          "builtin"});
  library.register_entry({"pathway_lookup", loom::EntryKind::Tool,
                          "query pathway databases for functional annotations", "gene_set_input",
                          "interpretation_report", "builtin"});
  return library;
}

inline loom::TaskSpecification serial_spec() {
  loom::TaskSpecification spec;
  spec.goal = "identify expression markers then interpret the gene set";
  spec.context = "serial handoff between two wrapped repositories";
  spec.constraints.budget = 100000;
  spec.constraints.max_repair_rounds = 3;
  spec.resources.push_back({"spatial_profiler", loom::ResourceKind::Repository,
                            "https://example.org/spatial_profiler.git",
                            "spatial transcriptomics analysis"});
  spec.resources.push_back({"geneset_annotator", loom::ResourceKind::Repository,
                            "https://example.org/geneset_annotator.git", "gene set interpretation"});
  return spec;
}

inline loom::Json marker_table_artifact(int rows) {
  loom::Json markers = loom::Json::array();
  for (int i = 0; i < rows; ++i) {
    markers.push_back(loom::Json{{"gene", "G" + std::to_string(i)}, {"log2fc", 1.0 + i * 0.01}});
  }
  return loom::Json{{"markers", markers}, {"method", "welch"}};
}

inline std::shared_ptr<loom::ScriptedExecutor> serial_script(int marker_rows = 53) {
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior upstream;
  upstream.artifact = marker_table_artifact(marker_rows);
  upstream.cost = 120;
  upstream.confidence = 0.92;
  script->add_behavior("s1", upstream);

  loom::ScriptedBehavior downstream;
  downstream.artifact = loom::Json{{"label", "specialized stromal program"}};
  downstream.cost = 80;
  downstream.confidence = 0.88;
  script->add_behavior("s2", downstream);
  return script;
}

inline loom::Library parallel_library() {
  loom::Library library;
  library.register_entry({"rna_pipeline", loom::EntryKind::ExternalAgent,
                          "rna expression marker discovery workflow for single cell data",
                          "analysis_request", "rna_markers", "https://example.org/rna_pipeline.git"});
  library.register_entry({"atac_pipeline", loom::EntryKind::ExternalAgent,
                          "atac chromatin accessibility marker discovery workflow",
                          "analysis_request", "atac_markers", "https://example.org/atac_pipeline.git"});
  return library;
}

inline loom::TaskSpecification parallel_spec() {
  loom::TaskSpecification spec;
  spec.goal = "run rna marker analysis and run atac marker analysis";
  spec.context = "cross-modality marker comparison on multiome data";
  spec.constraints.budget = 100000;
  spec.constraints.max_repair_rounds = 3;
  spec.constraints.environment_requirements = {"evaluator:marker_set"};
  spec.resources.push_back({"rna_pipeline", loom::ResourceKind::Repository,
                            "https://example.org/rna_pipeline.git", "rna expression analysis"});
  spec.resources.push_back({"atac_pipeline", loom::ResourceKind::Repository,
                            "https://example.org/atac_pipeline.git", "atac accessibility analysis"});
  return spec;
}

inline std::shared_ptr<loom::ScriptedExecutor> parallel_script() {
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior rna;
  loom::Json rna_markers = loom::Json::array();
  for (int i = 0; i < 5; ++i) rna_markers.push_back(loom::Json{{"gene", "R" + std::to_string(i)}});
  rna.artifact = loom::Json{{"markers", rna_markers}};
  rna.cost = 60;
  rna.confidence = 0.9;
  script->add_behavior("s1", rna);

  loom::ScriptedBehavior atac;
  loom::Json atac_markers = loom::Json::array();
  for (int i = 0; i < 4; ++i) {
    atac_markers.push_back(loom::Json{{"gene", "A" + std::to_string(i)}});
  }
  atac.artifact = loom::Json{{"activity_markers", atac_markers}};
  atac.cost = 70;
  atac.confidence = 0.9;
  script->add_behavior("s2", atac);
  return script;
}

// ---------------------------------------------------------------------------
// Randomized generators
// ---------------------------------------------------------------------------

inline loom::WorkflowGraph random_dag(std::mt19937& rng, int max_nodes = 20) {
  std::uniform_int_distribution<int> node_count(3, max_nodes);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  int n = node_count(rng);

  loom::WorkflowGraph graph;
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "n%02d", i);
    loom::Node node;
    node.id = id;
    node.kind = loom::NodeKind::Agent;
    node.instruction = "step " + std::to_string(i);
    graph.nodes.push_back(node);
    graph.roles[node.id] = "execute: step " + std::to_string(i);
    // Two to four distinct attachments so every repair action stays applicable.
    std::uniform_int_distribution<int> attach_count(2, 4);
    std::uniform_int_distribution<int> pool(0, 9);
    int attachments = attach_count(rng);
    int offset = pool(rng);
    for (int a = 0; a < attachments; ++a) {
      graph.attachments[node.id].insert("tool_e" + std::to_string((offset + a) % 10));
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (coin(rng) < 0.25) {
        graph.edges.push_back({graph.nodes[static_cast<std::size_t>(i)].id,
                               graph.nodes[static_cast<std::size_t>(j)].id, "note"});
      }
    }
  }
  return graph;
}

inline std::set<std::string> random_string_set(std::mt19937& rng, int max_size, int universe) {
  std::uniform_int_distribution<int> size_dist(0, max_size);
  std::uniform_int_distribution<int> pick(0, universe - 1);
  std::set<std::string> out;
  int size = size_dist(rng);
  for (int i = 0; i < size; ++i) out.insert("e" + std::to_string(pick(rng)));
  return out;
}

}  // namespace fixtures
