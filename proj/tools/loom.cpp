// loom command-line interface: synthesize, run, validate, import, wrap, and
// library maintenance.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "loom/loom.hpp"
#include "loom/remote_executor.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInputError = 1;
constexpr int kExitExecutionFailure = 2;
constexpr int kExitBudgetExhausted = 3;

constexpr const char* kRemoteEndpointVar = "LOOM_REMOTE_ENDPOINT";

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

loom::SchemaRegistry load_registry(const std::string& path) {
  if (path.empty()) return loom::SchemaRegistry::with_defaults();
  return loom::parse_schema_registry(loom::parse_document(loom::read_file(path)));
}

std::string task_id_from(const std::string& spec_path) {
  std::string stem = fs::path(spec_path).stem().string();
  return stem.empty() ? "task" : stem;
}

struct RunReport {
  std::string task_id;
  std::string outcome;
  std::string stop_reason;
  std::int64_t rounds_used = 0;
  std::int64_t total_cost = 0;
  double load_seconds = 0.0;
  double execute_seconds = 0.0;
  double write_seconds = 0.0;
  std::string graph_file;
  std::string trace_file;
  std::vector<std::string> patch_files;

  std::string to_text() const {
    std::string out;
    out += "task: " + task_id + "\n";
    out += "outcome: " + outcome + "\n";
    out += "stop_reason: " + stop_reason + "\n";
    out += "rounds_used: " + std::to_string(rounds_used) + "\n";
    out += "total_cost: " + std::to_string(total_cost) + "\n";
    out += "timing_load_seconds: " + std::to_string(load_seconds) + "\n";
    out += "timing_execute_seconds: " + std::to_string(execute_seconds) + "\n";
    out += "timing_write_seconds: " + std::to_string(write_seconds) + "\n";
    out += "graph_file: " + graph_file + "\n";
    out += "trace_file: " + trace_file + "\n";
    out += "patch_files:";
    for (const auto& path : patch_files) out += " " + path;
    out += "\n";
    return out;
  }
};

int cmd_synthesize(const std::string& spec_path, const std::string& library_dir,
                   const std::string& out_path, const std::string& schemas_path) {
  loom::TaskSpecification spec = loom::parse_task_spec_text(loom::read_file(spec_path));
  loom::Library library;
  if (!library_dir.empty()) library = loom::load_library(library_dir);
  loom::SchemaRegistry registry = load_registry(schemas_path);
  loom::WorkflowGraph graph = loom::synthesize(spec, library, registry);
  loom::write_file(out_path, loom::serialize_graph(graph));
  std::cout << "wrote " << out_path << " (" << graph.nodes.size() << " nodes, "
            << graph.edges.size() << " edges)\n";
  return kExitOk;
}

int cmd_validate(const std::string& graph_path, const std::string& schemas_path) {
  loom::WorkflowGraph graph = loom::deserialize_graph_text(loom::read_file(graph_path));
  loom::ValidationReport report;
  if (schemas_path.empty()) {
    report = loom::validate_graph(graph);
  } else {
    report = loom::validate_graph(graph, load_registry(schemas_path));
  }
  if (report.empty()) {
    std::cout << "valid\n";
    return kExitOk;
  }
  std::cout << report.to_text();
  return kExitInputError;
}

int cmd_import(const std::string& reference_path, const std::string& out_path) {
  loom::GraphSkeleton skeleton =
      loom::import_reference_graph(loom::parse_document(loom::read_file(reference_path)));
  loom::write_file(out_path, loom::serialize_skeleton(skeleton));
  std::cout << "wrote " << out_path << " (" << skeleton.nodes.size() << " nodes)\n";
  return kExitOk;
}

int cmd_wrap(const std::string& metadata_path, const std::string& backend_script_path,
             int max_rounds, const std::string& out_dir) {
  loom::RepositoryProfile profile =
      loom::profile_repository(loom::parse_document(loom::read_file(metadata_path)));
  loom::ScriptedBuildBackend backend;
  if (!backend_script_path.empty()) {
    backend = loom::ScriptedBuildBackend::from_json(
        loom::parse_document(loom::read_file(backend_script_path)));
  }
  loom::SandboxSynthesisResult result = loom::synthesize_sandbox(profile, backend, max_rounds);
  fs::create_directories(out_dir);
  loom::write_file((fs::path(out_dir) / "sandbox_spec.json").string(),
                   loom::canonical_dump(loom::to_json(result.spec)));
  loom::write_file((fs::path(out_dir) / "build_report.json").string(),
                   loom::canonical_dump(loom::to_json(result.report)));
  if (result.exhausted) {
    std::cerr << loom::to_string(loom::ErrorCode::BuildExhausted) << ": all "
              << result.report.rounds.size() << " build rounds failed\n";
    return kExitExecutionFailure;
  }
  std::cout << "built in " << result.report.rounds.size() << " round(s)\n";
  return kExitOk;
}

struct RunArgs {
  std::string graph_path;
  std::string spec_path;
  std::string scripts_path;
  std::string policies_path;
  std::string thresholds_path;
  std::string schemas_path;
  std::string library_dir;
  std::string executor = "scripted";
  std::string out_dir = "run-out";
  std::int64_t budget_override = 0;
  std::int64_t max_repair_rounds_override = -1;
  bool parallel = false;
};

int cmd_run(const RunArgs& args) {
  auto load_start = std::chrono::steady_clock::now();
  RunReport report;
  report.task_id = task_id_from(args.spec_path);
  report.graph_file = args.graph_path;

  loom::WorkflowGraph graph = loom::deserialize_graph_text(loom::read_file(args.graph_path));
  loom::TaskSpecification spec = loom::parse_task_spec_text(loom::read_file(args.spec_path));
  if (args.budget_override > 0) spec.constraints.budget = args.budget_override;
  if (args.max_repair_rounds_override >= 0) {
    spec.constraints.max_repair_rounds = args.max_repair_rounds_override;
  }
  loom::ValidationReport constraint_report = loom::validate_constraints(spec.constraints);
  if (!constraint_report.empty()) {
    std::cerr << constraint_report.to_text();
    return kExitInputError;
  }

  loom::SchemaRegistry registry = load_registry(args.schemas_path);
  loom::ValidationReport validation = loom::validate_graph(graph, registry);
  if (!validation.empty()) {
    std::cerr << validation.to_text();
    return kExitInputError;
  }

  loom::ExecutorRegistry executors;
  if (args.executor == "scripted") {
    auto scripted = args.scripts_path.empty()
                        ? std::make_shared<loom::ScriptedExecutor>()
                        : loom::ScriptedExecutor::from_json(
                              loom::parse_document(loom::read_file(args.scripts_path)));
    executors.set_default(scripted);
  } else if (args.executor == "remote") {
    const char* endpoint = std::getenv(kRemoteEndpointVar);
    if (!endpoint || std::string(endpoint).empty()) {
      std::cerr << "remote executor requires " << kRemoteEndpointVar << "\n";
      return kExitInputError;
    }
    executors.set_default(std::make_shared<loom::RemoteExecutor>(endpoint));
  } else {
    std::cerr << "unknown executor '" << args.executor << "'\n";
    return kExitInputError;
  }

  loom::Thresholds thresholds;
  if (!args.thresholds_path.empty()) {
    thresholds = loom::parse_thresholds(loom::parse_document(loom::read_file(args.thresholds_path)));
  }
  std::vector<loom::RepairPolicy> policies = loom::default_policies(thresholds);
  if (!args.policies_path.empty()) {
    policies = loom::parse_policies(loom::parse_document(loom::read_file(args.policies_path)));
  }
  loom::LibrarySnapshot snapshot;
  if (!args.library_dir.empty()) snapshot = loom::load_library(args.library_dir).snapshot();

  fs::create_directories(args.out_dir);
  loom::ReviewOptions options;
  options.registry = &registry;
  if (!snapshot.empty()) options.library = &snapshot;
  options.run_dir = args.out_dir;
  options.parallel_within_stage = args.parallel;

  report.load_seconds = seconds_since(load_start);
  auto execute_start = std::chrono::steady_clock::now();
  loom::RepairOutcome outcome = loom::review_loop(graph, spec, executors, policies, thresholds, options);
  report.execute_seconds = seconds_since(execute_start);

  auto write_start = std::chrono::steady_clock::now();
  std::string trace_path = (fs::path(args.out_dir) / "trace.json").string();
  loom::write_file(trace_path, loom::serialize_trace(outcome.final_trace));
  report.trace_file = trace_path;
  for (std::size_t i = 0; i < outcome.patches.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "patch_%03zu.json", i + 1);
    std::string patch_path = (fs::path(args.out_dir) / name).string();
    loom::write_file(patch_path, loom::serialize_patch(outcome.patches[i]));
    report.patch_files.push_back(patch_path);
  }
  report.outcome = loom::to_string(outcome.final_trace.outcome);
  report.stop_reason = loom::to_string(outcome.stop_reason);
  report.rounds_used = outcome.rounds_used;
  report.total_cost = outcome.final_trace.ledger.total;
  report.write_seconds = seconds_since(write_start);
  loom::write_file((fs::path(args.out_dir) / "report.txt").string(), report.to_text());
  std::cout << report.to_text();

  if (outcome.stop_reason == loom::StopReason::BudgetExhausted) return kExitBudgetExhausted;
  if (outcome.stop_reason == loom::StopReason::ValidationSucceeded &&
      outcome.final_trace.outcome == loom::RunOutcome::Success) {
    return kExitOk;
  }
  return kExitExecutionFailure;
}

int cmd_library_add(const std::string& library_dir, const std::string& entry_path) {
  loom::Library library;
  if (fs::exists(fs::path(library_dir) / "index.json")) {
    library = loom::load_library(library_dir);
  }
  loom::LibraryEntry entry =
      loom::parse_library_entry(loom::parse_document(loom::read_file(entry_path)));
  library.register_entry(entry);
  loom::save_library(library, library_dir);
  std::cout << "registered " << entry.id << "\n";
  return kExitOk;
}

int cmd_library_list(const std::string& library_dir) {
  loom::Library library = loom::load_library(library_dir);
  for (const auto& entry : library.snapshot()) {
    std::cout << entry.id << "\t" << loom::to_string(entry.kind) << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"loom: synthesize and execute multi-agent workflow graphs"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string library_dir;
  std::string out_path = "graph.json";
  std::string schemas_path;

  auto* synth = app.add_subcommand("synthesize", "synthesize a workflow graph from a task spec");
  synth->add_option("spec", spec_path, "task spec JSON file")->required();
  synth->add_option("--library", library_dir, "library directory");
  synth->add_option("--schemas", schemas_path, "schema registry JSON file");
  synth->add_option("--out", out_path, "output graph file");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "execute a graph under the review loop");
  run->add_option("graph", run_args.graph_path, "graph JSON file")->required();
  run->add_option("--spec", run_args.spec_path, "task spec JSON file")->required();
  run->add_option("--scripts", run_args.scripts_path, "scripted executor fixture");
  run->add_option("--policies", run_args.policies_path, "repair policy JSON file");
  run->add_option("--thresholds", run_args.thresholds_path, "thresholds JSON file");
  run->add_option("--schemas", run_args.schemas_path, "schema registry JSON file");
  run->add_option("--library", run_args.library_dir, "library directory");
  run->add_option("--executor", run_args.executor, "executor backend: scripted|remote");
  run->add_option("--out-dir", run_args.out_dir, "output directory");
  run->add_option("--budget", run_args.budget_override, "override spec budget (cost units)");
  run->add_option("--max-repair-rounds", run_args.max_repair_rounds_override,
                  "override spec max repair rounds");
  run->add_flag("--parallel", run_args.parallel, "run same-stage nodes concurrently");

  std::string validate_graph_path;
  std::string validate_schemas;
  auto* validate = app.add_subcommand("validate", "validate a graph file");
  validate->add_option("graph", validate_graph_path, "graph JSON file")->required();
  validate->add_option("--schemas", validate_schemas, "schema registry JSON file");

  std::string reference_path;
  std::string import_out = "skeleton.json";
  auto* import_cmd = app.add_subcommand("import", "import a reference graph as a skeleton");
  import_cmd->add_option("reference", reference_path, "reference graph JSON file")->required();
  import_cmd->add_option("--out", import_out, "output skeleton file");

  std::string metadata_path;
  std::string backend_script;
  std::string wrap_out = "wrap-out";
  int max_rounds = 3;
  auto* wrap = app.add_subcommand("wrap", "wrap a repository via the sandbox build loop");
  wrap->add_option("metadata", metadata_path, "repository metadata JSON file")->required();
  wrap->add_option("--backend-script", backend_script, "scripted build backend fixture");
  wrap->add_option("--max-rounds", max_rounds, "maximum build rounds");
  wrap->add_option("--out-dir", wrap_out, "output directory");

  auto* library_cmd = app.add_subcommand("library", "library maintenance");
  std::string lib_dir;
  std::string entry_path;
  auto* lib_add = library_cmd->add_subcommand("add", "register an entry");
  lib_add->add_option("dir", lib_dir, "library directory")->required();
  lib_add->add_option("entry", entry_path, "entry JSON file")->required();
  auto* lib_list = library_cmd->add_subcommand("list", "list entries");
  lib_list->add_option("dir", lib_dir, "library directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synthesize(spec_path, library_dir, out_path, schemas_path);
    if (run->parsed()) return cmd_run(run_args);
    if (validate->parsed()) return cmd_validate(validate_graph_path, validate_schemas);
    if (import_cmd->parsed()) return cmd_import(reference_path, import_out);
    if (wrap->parsed()) {
      int code = cmd_wrap(metadata_path, backend_script, max_rounds, wrap_out);
      return code;
    }
    if (library_cmd->parsed()) {
      if (lib_add->parsed()) return cmd_library_add(lib_dir, entry_path);
      if (lib_list->parsed()) return cmd_library_list(lib_dir);
    }
  } catch (const loom::Error& error) {
    std::cerr << error.what() << "\n";
    return kExitInputError;
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return kExitInputError;
  }
  return kExitInputError;
}
