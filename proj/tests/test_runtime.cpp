#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "loom/runtime.hpp"
#include "loom/synthesis.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using loom::ArtifactSchema;
using loom::Error;
using loom::ErrorCode;
using loom::Json;
using loom::NodeKind;
using loom::RunOutcome;
using loom::Severity;
using loom::SignalKind;

namespace {

loom::WorkflowGraph two_node_graph() {
  loom::WorkflowGraph graph;
  graph.nodes.push_back({"a", NodeKind::Agent, "produce", ""});
  graph.nodes.push_back({"b", NodeKind::Agent, "consume", ""});
  graph.edges.push_back({"a", "b", "note"});
  return graph;
}

loom::TaskSpecification budgeted_spec(std::int64_t budget) {
  loom::TaskSpecification spec;
  spec.goal = "run the fixture";
  spec.constraints.budget = budget;
  return spec;
}

}  // namespace

TEST_CASE("validate_artifact checks required fields and kinds") {
  ArtifactSchema schema{"marker_table",
                        {{"markers", "list-of-record"}, {"method", "text"}, {"count", "integer"}},
                        {"markers"},
                        1};

  CHECK_FALSE(loom::validate_artifact(
      Json{{"markers", Json::array({Json{{"gene", "A"}}})}, {"method", "welch"}}, schema));

  SECTION("missing required field is named") {
    auto signal = loom::validate_artifact(Json{{"method", "welch"}}, schema);
    REQUIRE(signal.has_value());
    CHECK(signal->kind == SignalKind::Interface);
    CHECK(signal->severity == Severity::Fail);
    CHECK(signal->payload.at("field") == "markers");
  }

  SECTION("declared integer carrying text is flagged") {
    auto signal = loom::validate_artifact(
        Json{{"markers", Json::array()}, {"count", "fifty-three"}}, schema);
    REQUIRE(signal.has_value());
    CHECK(signal->payload.at("field") == "count");
  }

  SECTION("kind mismatches enumerate in field order") {
    ArtifactSchema strict{"strict",
                          {{"flag", "boolean"}, {"num", "number"}, {"where", "path"},
                           {"rec", "record"}, {"names", "list-of-text"}},
                          {"flag", "num", "where", "rec", "names"},
                          1};
    Json good{{"flag", true},
              {"num", 1.5},
              {"where", "/tmp/x"},
              {"rec", Json::object()},
              {"names", Json::array({"a", "b"})}};
    CHECK_FALSE(loom::validate_artifact(good, strict));

    Json bad = good;
    bad["num"] = "NaN";
    auto signal = loom::validate_artifact(bad, strict);
    REQUIRE(signal.has_value());
    CHECK(signal->payload.at("field") == "num");

    Json bad_list = good;
    bad_list["names"] = Json::array({"a", 7});
    auto list_signal = loom::validate_artifact(bad_list, strict);
    REQUIRE(list_signal.has_value());
    CHECK(list_signal->payload.at("field") == "names");
  }
}

TEST_CASE("broker_transform preserves list cardinality exactly") {
  auto registry = fixtures::genomics_registry();
  loom::FieldMapping mapping;
  mapping.source_schema = "marker_table";
  mapping.target_schema = "gene_set_input";
  mapping.field_map = {{"genes", "markers"}};

  SECTION("53 markers in, 53 genes out") {
    Json table = fixtures::marker_table_artifact(53);
    auto result = loom::broker_transform(table, mapping, registry.get("gene_set_input"));
    REQUIRE(result.artifact.at("genes").is_array());
    CHECK(result.artifact.at("genes").size() == 53);
    CHECK(result.signals.empty());
  }

  SECTION("empty table emits a warn-severity output signal") {
    Json table = fixtures::marker_table_artifact(0);
    auto result = loom::broker_transform(table, mapping, registry.get("gene_set_input"));
    CHECK(result.artifact.at("genes").empty());
    REQUIRE(result.signals.size() == 1);
    CHECK(result.signals[0].kind == SignalKind::Output);
    CHECK(result.signals[0].severity == Severity::Warn);
  }

  SECTION("element renames key records by the new name") {
    loom::SchemaRegistry registry2 = loom::SchemaRegistry::with_defaults();
    registry2.register_schema({"rows_in", {{"rows", "list-of-record"}}, {"rows"}, 1});
    registry2.register_schema({"rows_out", {{"records", "list-of-record"}}, {"records"}, 1});
    loom::FieldMapping rename;
    rename.source_schema = "rows_in";
    rename.target_schema = "rows_out";
    rename.field_map = {{"records", "rows"}};
    rename.element_renames = {{"gene", "symbol"}};
    Json rows = Json::array();
    for (int i = 0; i < 5; ++i) {
      rows.push_back(Json{{"gene", "G" + std::to_string(i)}, {"score", i}});
    }
    auto result =
        loom::broker_transform(Json{{"rows", rows}}, rename, registry2.get("rows_out"));
    REQUIRE(result.artifact.at("records").size() == 5);
    for (const auto& record : result.artifact.at("records")) {
      CHECK(record.contains("symbol"));
      CHECK_FALSE(record.contains("gene"));
      CHECK(record.contains("score"));
    }
  }

  SECTION("mapping that misses a required target field throws") {
    loom::FieldMapping bad;
    bad.source_schema = "marker_table";
    bad.target_schema = "gene_set_input";
    try {
      loom::broker_transform(fixtures::marker_table_artifact(3), bad,
                             registry.get("gene_set_input"));
      FAIL("expected UnmappableSchemas");
    } catch (const Error& error) {
      CHECK(error.code() == ErrorCode::UnmappableSchemas);
    }
  }

  SECTION("random lists always keep their size") {
    std::mt19937 rng(31415);
    std::uniform_int_distribution<int> size_dist(0, 200);
    for (int trial = 0; trial < 50; ++trial) {
      int rows = size_dist(rng);
      Json table = fixtures::marker_table_artifact(rows);
      auto result = loom::broker_transform(table, mapping, registry.get("gene_set_input"));
      REQUIRE(result.artifact.at("genes").size() == static_cast<std::size_t>(rows));
    }
  }
}

TEST_CASE("record_cost keeps the ledger exact") {
  loom::CostLedger ledger;
  loom::record_cost(ledger, "n", 100);
  loom::record_cost(ledger, "n", 50);
  CHECK(ledger.per_node.at("n") == 150);
  CHECK(ledger.total == 150);

  loom::record_cost(ledger, "m", 30);
  loom::record_cost(ledger, "k", 70);
  CHECK(ledger.total == 250);

  try {
    loom::record_cost(ledger, "n", -1);
    FAIL("expected NegativeCost");
  } catch (const Error& error) {
    CHECK(error.code() == ErrorCode::NegativeCost);
  }

  SECTION("1000 random recordings equal the summation oracle exactly") {
    std::mt19937 rng(271828);
    std::uniform_int_distribution<std::int64_t> amount(0, 10000);
    std::uniform_int_distribution<int> node_pick(0, 9);
    loom::CostLedger random_ledger;
    std::map<std::string, std::int64_t> oracle_per_node;
    std::int64_t oracle_total = 0;
    for (int i = 0; i < 1000; ++i) {
      std::string node = "node" + std::to_string(node_pick(rng));
      std::int64_t value = amount(rng);
      loom::record_cost(random_ledger, node, value);
      oracle_per_node[node] += value;
      oracle_total += value;
    }
    CHECK(random_ledger.total == oracle_total);
    CHECK(random_ledger.per_node == oracle_per_node);
  }
}

TEST_CASE("a two-node linear run produces one handoff message in edge order") {
  auto graph = two_node_graph();
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior produce;
  produce.artifact = Json{{"text", "payload"}};
  produce.cost = 10;
  produce.confidence = 0.9;
  script->add_behavior("a", produce);
  loom::ScriptedBehavior consume;
  consume.artifact = Json{{"text", "done"}};
  consume.cost = 5;
  consume.confidence = 0.8;
  script->add_behavior("b", consume);

  loom::ExecutorRegistry executors;
  executors.set_default(script);
  auto trace = loom::execute(graph, budgeted_spec(1000), executors);

  CHECK(trace.outcome == RunOutcome::Success);
  CHECK(trace.node_results.size() == 2);
  REQUIRE(trace.messages.size() == 1);
  CHECK(trace.messages[0].sender == "a");
  CHECK(trace.messages[0].receiver == "b");
  CHECK(trace.ledger.total == 15);
}

TEST_CASE("execution halts on the first budget overflow") {
  auto graph = two_node_graph();
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior expensive;
  expensive.artifact = Json{{"text", "x"}};
  expensive.cost = 100;
  script->add_behavior("a", expensive);
  script->add_behavior("b", expensive);

  loom::ExecutorRegistry executors;
  executors.set_default(script);
  auto trace = loom::execute(graph, budgeted_spec(10), executors);

  CHECK(trace.outcome == RunOutcome::BudgetExhausted);
  CHECK(trace.node_results.count("a") == 1);
  CHECK(trace.node_results.count("b") == 0);  // downstream never ran
  REQUIRE(!trace.signals.empty());
  const auto& last = trace.signals.back();
  CHECK(last.kind == SignalKind::Budget);
  CHECK(last.severity == Severity::Fail);
  CHECK(last.payload.at("accumulated").get<std::int64_t>() == 100);
  CHECK(script->invocations("b") == 0);
}

TEST_CASE("budget warnings fire once past the warn ratio") {
  auto graph = two_node_graph();
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior step;
  step.artifact = Json{{"text", "x"}};
  step.cost = 95;
  script->add_behavior("a", step);
  loom::ScriptedBehavior cheap;
  cheap.artifact = Json{{"text", "y"}};
  cheap.cost = 4;
  script->add_behavior("b", cheap);

  loom::ExecutorRegistry executors;
  executors.set_default(script);
  auto trace = loom::execute(graph, budgeted_spec(100), executors);
  CHECK(trace.outcome == RunOutcome::Success);
  int warns = 0;
  for (const auto& signal : trace.signals) {
    if (signal.kind == SignalKind::Budget && signal.severity == Severity::Warn) ++warns;
  }
  CHECK(warns == 1);
}

TEST_CASE("parallel-then-join delivers both branch artifacts to the join") {
  auto registry = fixtures::genomics_registry();
  auto graph = loom::synthesize(fixtures::parallel_spec(), fixtures::parallel_library(), registry);
  loom::ExecutorRegistry executors;
  executors.set_default(fixtures::parallel_script());

  loom::ExecutionOptions options;
  options.registry = &registry;
  auto trace = loom::execute(graph, fixtures::parallel_spec(), executors, options);

  CHECK(trace.outcome == RunOutcome::Success);

  // The evaluator received one artifact per branch, both broker-validated.
  int broker_handoffs = 0;
  for (const auto& message : trace.messages) {
    if (graph.find_node(message.sender)->kind == NodeKind::Broker) ++broker_handoffs;
  }
  CHECK(broker_handoffs == 2);
  int interface_failures = 0;
  for (const auto& signal : trace.signals) {
    if (signal.kind == SignalKind::Interface && signal.severity == Severity::Fail) {
      ++interface_failures;
    }
  }
  CHECK(interface_failures == 0);

  // Broker outputs validate against their edge's target schema.
  for (const auto& node : graph.nodes) {
    if (node.kind != NodeKind::Broker) continue;
    const auto& result = trace.node_results.at(node.id);
    REQUIRE_FALSE(loom::is_failure_result(result));
    auto outgoing = graph.out_edges(node.id);
    REQUIRE(outgoing.size() == 1);
    CHECK_FALSE(loom::validate_artifact(result.at("artifact"),
                                        registry.get(outgoing.front()->schema)));
  }
}

TEST_CASE("stage ordering holds for every message") {
  auto registry = fixtures::genomics_registry();
  auto graph = loom::synthesize(fixtures::serial_spec(), fixtures::serial_library(), registry);
  loom::ExecutorRegistry executors;
  executors.set_default(fixtures::serial_script());
  loom::ExecutionOptions options;
  options.registry = &registry;
  auto trace = loom::execute(graph, fixtures::serial_spec(), executors, options);

  auto stages = loom::topological_stages(graph);
  std::map<std::string, std::size_t> stage_of;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    for (const auto& id : stages[i]) stage_of[id] = i;
  }
  for (const auto& message : trace.messages) {
    REQUIRE(stage_of.at(message.sender) < stage_of.at(message.receiver));
  }

  // The clean serial run has no schema violations anywhere.
  for (const auto& signal : trace.signals) {
    REQUIRE(!(signal.kind == SignalKind::Interface && signal.severity == Severity::Fail));
  }
}

TEST_CASE("interface violations are attributed to the producer") {
  auto graph = two_node_graph();
  graph.edges[0].schema = "note";
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior bad;
  bad.artifact = Json{{"wrong_field", 1}};
  script->add_behavior("a", bad);

  loom::ExecutorRegistry executors;
  executors.set_default(script);
  auto trace = loom::execute(graph, budgeted_spec(1000), executors);
  bool found = false;
  for (const auto& signal : trace.signals) {
    if (signal.kind == SignalKind::Interface && signal.severity == Severity::Fail) {
      found = true;
      CHECK(signal.node == "a");
      CHECK(signal.payload.at("field") == "text");
    }
  }
  CHECK(found);
}

TEST_CASE("hard node failures cascade to dependents") {
  auto graph = two_node_graph();
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior broken;
  broken.fail = true;
  broken.failure = "exploded";
  script->add_behavior("a", broken);

  loom::ExecutorRegistry executors;
  executors.set_default(script);
  auto trace = loom::execute(graph, budgeted_spec(1000), executors);
  CHECK(trace.outcome == RunOutcome::Failure);
  CHECK(loom::is_failure_result(trace.node_results.at("a")));
  CHECK(loom::is_failure_result(trace.node_results.at("b")));
  CHECK(script->invocations("b") == 0);
}

TEST_CASE("execute refuses a graph that fails validation") {
  loom::WorkflowGraph graph = two_node_graph();
  graph.edges.push_back({"b", "a", "note"});  // cycle
  loom::ExecutorRegistry executors;
  executors.set_default(std::make_shared<loom::ScriptedExecutor>());
  try {
    loom::execute(graph, budgeted_spec(1000), executors);
    FAIL("expected ProtocolViolation");
  } catch (const Error& error) {
    CHECK(error.code() == ErrorCode::ProtocolViolation);
  }
}

TEST_CASE("unresolvable executors are rejected up front") {
  auto graph = two_node_graph();
  graph.nodes[0].executor_binding = "sandbox-42";
  loom::ExecutorRegistry executors;  // no default
  try {
    loom::execute(graph, budgeted_spec(1000), executors);
    FAIL("expected UnresolvedExecutor");
  } catch (const Error& error) {
    CHECK(error.code() == ErrorCode::UnresolvedExecutor);
  }
}

TEST_CASE("aggregate_signals summarizes per node") {
  loom::ExecutionTrace trace;
  trace.signals.push_back({SignalKind::Tool, "n", Severity::Warn, Json{{"errors", 1}}});
  trace.signals.push_back({SignalKind::Tool, "n", Severity::Warn, Json{{"errors", 1}}});
  trace.signals.push_back({SignalKind::Output, "n", Severity::Info, Json{{"confidence", 0.4}}});
  trace.signals.push_back({SignalKind::Output, "n", Severity::Info, Json{{"confidence", 0.7}}});
  trace.signals.push_back({SignalKind::Test, "m", Severity::Warn, Json{{"pass", 2}, {"fail", 3}}});
  trace.signals.push_back({SignalKind::Interface, "m", Severity::Fail,
                           Json{{"field", "x"}, {"schema", "s"}, {"edge", "m->n"}}});

  auto summaries = loom::aggregate_signals(trace);
  CHECK(summaries.at("n").tool_errors == 2);
  CHECK(summaries.at("n").confidence == Catch::Approx(0.7));  // latest wins
  CHECK(summaries.at("m").test_pass == 2);
  CHECK(summaries.at("m").test_fail == 3);
  CHECK(summaries.at("m").interface_violations == 1);
  CHECK(loom::aggregate_signals(loom::ExecutionTrace{}).empty());

  SECTION("mixed fixture equals a linear scan oracle") {
    std::mt19937 rng(90210);
    std::uniform_int_distribution<int> kind_pick(0, 4);
    std::uniform_int_distribution<int> node_pick(0, 4);
    std::uniform_int_distribution<int> count(0, 5);
    std::uniform_real_distribution<double> conf(0.0, 1.0);
    loom::ExecutionTrace random_trace;
    std::map<std::string, std::int64_t> expected_tool;
    std::map<std::string, std::int64_t> expected_fail;
    for (int i = 0; i < 300; ++i) {
      std::string node = "node" + std::to_string(node_pick(rng));
      switch (kind_pick(rng)) {
        case 0:
          random_trace.signals.push_back(
              {SignalKind::Output, node, Severity::Info, Json{{"confidence", conf(rng)}}});
          break;
        case 1: {
          int pass = count(rng);
          int fail = count(rng);
          random_trace.signals.push_back(
              {SignalKind::Test, node, Severity::Info, Json{{"pass", pass}, {"fail", fail}}});
          expected_fail[node] += fail;
          break;
        }
        case 2: {
          int errors = count(rng);
          random_trace.signals.push_back(
              {SignalKind::Tool, node, Severity::Warn, Json{{"errors", errors}}});
          expected_tool[node] += errors;
          break;
        }
        case 3:
          random_trace.signals.push_back({SignalKind::Budget, node, Severity::Info,
                                          Json{{"accumulated", 50}, {"budget", 100}}});
          break;
        default:
          random_trace.signals.push_back(
              {SignalKind::Interface, node, Severity::Fail,
               Json{{"field", "f"}, {"schema", "s"}, {"edge", node + "->x"}}});
          break;
      }
    }
    auto random_summaries = loom::aggregate_signals(random_trace);
    for (const auto& [node, tools] : expected_tool) {
      REQUIRE(random_summaries.at(node).tool_errors == tools);
    }
    for (const auto& [node, fails] : expected_fail) {
      REQUIRE(random_summaries.at(node).test_fail == fails);
    }
  }
}

TEST_CASE("compute_set_metrics matches hand-counted values") {
  std::set<std::string> m{"a", "b", "c", "d"};
  std::set<std::string> d{"b", "c", "e"};
  auto metrics = loom::compute_set_metrics(m, d);
  CHECK(metrics.precision == Catch::Approx(0.5));
  CHECK(metrics.recall == Catch::Approx(2.0 / 3.0));
  CHECK(metrics.jaccard == Catch::Approx(0.4));

  auto identical = loom::compute_set_metrics(d, d);
  CHECK(identical.precision == 1.0);
  CHECK(identical.recall == 1.0);
  CHECK(identical.jaccard == 1.0);

  auto disjoint = loom::compute_set_metrics({"x"}, {"y"});
  CHECK(disjoint.precision == 0.0);
  CHECK(disjoint.recall == 0.0);
  CHECK(disjoint.jaccard == 0.0);

  CHECK(loom::compute_set_metrics({}, {"y"}).precision == 0.0);

  try {
    loom::compute_set_metrics(m, {});
    FAIL("expected EmptyReference");
  } catch (const Error& error) {
    CHECK(error.code() == ErrorCode::EmptyReference);
  }
}

TEST_CASE("trace serialization round-trips to structural equality") {
  auto registry = fixtures::genomics_registry();
  auto graph = loom::synthesize(fixtures::serial_spec(), fixtures::serial_library(), registry);
  loom::ExecutorRegistry executors;
  executors.set_default(fixtures::serial_script());
  loom::ExecutionOptions options;
  options.registry = &registry;
  auto trace = loom::execute(graph, fixtures::serial_spec(), executors, options);

  std::string first = loom::serialize_trace(trace);
  auto parsed = loom::parse_trace_text(first);
  std::string second = loom::serialize_trace(parsed);
  CHECK(first == second);
  CHECK(parsed.ledger.total == trace.ledger.total);
  CHECK(parsed.messages.size() == trace.messages.size());
}

TEST_CASE("failure traces round-trip too") {
  auto graph = two_node_graph();
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior broken;
  broken.fail = true;
  broken.failure = "scripted breakage";
  script->add_behavior("a", broken);
  loom::ExecutorRegistry executors;
  executors.set_default(script);
  auto trace = loom::execute(graph, budgeted_spec(1000), executors);
  REQUIRE(trace.outcome == RunOutcome::Failure);
  std::string first = loom::serialize_trace(trace);
  CHECK(loom::serialize_trace(loom::parse_trace_text(first)) == first);
}

TEST_CASE("schema registry files round-trip canonically") {
  auto registry = fixtures::genomics_registry();
  std::string first = loom::canonical_dump(loom::to_json(registry));
  auto parsed = loom::parse_schema_registry(loom::parse_document(first));
  CHECK(loom::canonical_dump(loom::to_json(parsed)) == first);
  CHECK(parsed.has("marker_table"));
  CHECK(parsed.rename_for("marker_table", "gene_set_input") != nullptr);

  SECTION("bad field kinds are rejected") {
    try {
      loom::parse_schema_registry(loom::parse_document(
          R"({"schemas":[{"id":"x","fields":[{"name":"f","kind":"blob"}],"required":[],"version":1}],"renames":[]})"));
      FAIL("expected MalformedDocument");
    } catch (const Error& error) {
      CHECK(error.code() == ErrorCode::MalformedDocument);
    }
  }
}

TEST_CASE("registry-aware validation flags unregistered edge schemas") {
  auto graph = two_node_graph();
  graph.edges[0].schema = "unregistered_schema";
  auto registry = loom::SchemaRegistry::with_defaults();
  auto report = loom::validate_graph(graph, registry);
  REQUIRE(report.violations.size() == 1);
  CHECK(report.violations[0].code == "unknown_schema");
}

TEST_CASE("concurrent and sequential execution produce identical traces") {
  auto registry = fixtures::genomics_registry();
  auto graph = loom::synthesize(fixtures::parallel_spec(), fixtures::parallel_library(), registry);

  auto run = [&](bool parallel) {
    loom::ExecutorRegistry executors;
    executors.set_default(fixtures::parallel_script());
    loom::ExecutionOptions options;
    options.registry = &registry;
    options.parallel_within_stage = parallel;
    return loom::execute(graph, fixtures::parallel_spec(), executors, options);
  };

  CHECK(loom::serialize_trace(run(false)) == loom::serialize_trace(run(true)));
}
