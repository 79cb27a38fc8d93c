#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "loom/reviewer.hpp"
#include "loom/synthesis.hpp"
#include "support/fixtures.hpp"

using loom::EvidenceSummary;
using loom::Json;
using loom::NodeKind;
using loom::RepairAction;
using loom::SignalKind;
using loom::StopReason;
using loom::Thresholds;

namespace {

loom::WorkflowGraph chain(int n) {
  loom::WorkflowGraph graph;
  for (int i = 0; i < n; ++i) {
    std::string id = "c" + std::to_string(i);
    graph.nodes.push_back({id, NodeKind::Agent, "step " + std::to_string(i), ""});
    graph.roles[id] = "execute: step " + std::to_string(i);
  }
  for (int i = 0; i + 1 < n; ++i) {
    graph.edges.push_back({"c" + std::to_string(i), "c" + std::to_string(i + 1), "note"});
  }
  return graph;
}

loom::TaskSpecification loop_spec(std::int64_t rounds, std::int64_t budget = 1000000) {
  loom::TaskSpecification spec;
  spec.goal = "drive the scripted chain";
  spec.constraints.budget = budget;
  spec.constraints.max_repair_rounds = rounds;
  return spec;
}

// Node `id` reports low confidence for `failures` attempts, then succeeds.
std::shared_ptr<loom::ScriptedExecutor> flaky_script(const std::string& id, int failures) {
  auto script = std::make_shared<loom::ScriptedExecutor>();
  for (int i = 0; i < failures; ++i) {
    loom::ScriptedBehavior bad;
    bad.artifact = Json{{"text", "attempt " + std::to_string(i)}};
    bad.cost = 5;
    bad.confidence = 0.2;
    script->add_behavior(id, bad);
  }
  loom::ScriptedBehavior good;
  good.artifact = Json{{"text", "fixed"}};
  good.cost = 5;
  good.confidence = 0.95;
  script->add_behavior(id, good);
  return script;
}

}  // namespace

TEST_CASE("detect applies the documented thresholds") {
  Thresholds thresholds;

  SECTION("confidence 0.3 flags output") {
    std::map<std::string, EvidenceSummary> summaries;
    summaries["n"].confidence = 0.3;
    auto flagged = loom::detect(summaries, thresholds);
    REQUIRE(flagged.count("n") == 1);
    CHECK(flagged.at("n").count(SignalKind::Output) == 1);
  }

  SECTION("clean summaries flag nothing") {
    std::map<std::string, EvidenceSummary> summaries;
    summaries["n"].confidence = 0.8;
    summaries["n"].test_pass = 5;
    CHECK(loom::detect(summaries, thresholds).empty());
  }

  SECTION("0 pass / 5 fail flags test (ratio 1.0 > 0.4)") {
    std::map<std::string, EvidenceSummary> summaries;
    summaries["n"].test_fail = 5;
    auto flagged = loom::detect(summaries, thresholds);
    REQUIRE(flagged.count("n") == 1);
    CHECK(flagged.at("n").count(SignalKind::Test) == 1);
  }

  SECTION("tool errors above the cap flag tool") {
    std::map<std::string, EvidenceSummary> summaries;
    summaries["n"].tool_errors = 3;
    CHECK(loom::detect(summaries, thresholds).at("n").count(SignalKind::Tool) == 1);
    summaries["n"].tool_errors = 2;
    CHECK(loom::detect(summaries, thresholds).empty());
  }

  SECTION("any fail interface signal flags; blown budget flags") {
    std::map<std::string, EvidenceSummary> summaries;
    summaries["n"].interface_violations = 1;
    summaries["m"].budget_ratio = 1.2;
    auto flagged = loom::detect(summaries, thresholds);
    CHECK(flagged.at("n").count(SignalKind::Interface) == 1);
    CHECK(flagged.at("m").count(SignalKind::Budget) == 1);
  }
}

TEST_CASE("decide picks the first matching policy by (priority, id)") {
  auto policies = loom::default_policies();

  std::map<std::string, EvidenceSummary> summaries;
  summaries["n"].confidence = 0.2;
  CHECK(loom::decide("n", summaries, policies) == RepairAction::RetryWithUpdatedInstruction);

  summaries["code"].test_fail = 4;
  summaries["code"].consecutive_test_fail_rounds = 2;
  CHECK(loom::decide("code", summaries, policies) == RepairAction::AddParallelSolver);

  summaries["u"].interface_violations = 2;
  summaries["u"].confidence = 0.1;  // interface policy has higher priority
  CHECK(loom::decide("u", summaries, policies) == RepairAction::ReformatUpstreamOutput);

  summaries["t"].tool_errors = 5;
  CHECK(loom::decide("t", summaries, policies) == RepairAction::SwapToolBackend);

  std::map<std::string, EvidenceSummary> clean;
  clean["n"].confidence = 0.9;
  CHECK(loom::decide("n", clean, policies) == RepairAction::EscalateNoAction);
}

TEST_CASE("decide is invariant under policy-list permutation") {
  auto policies = loom::default_policies();
  std::map<std::string, EvidenceSummary> summaries;
  summaries["n"].confidence = 0.2;
  summaries["n"].test_fail = 3;
  summaries["n"].tool_errors = 9;

  std::mt19937 rng(6174);
  RepairAction expected = loom::decide("n", summaries, policies);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(policies.begin(), policies.end(), rng);
    REQUIRE(loom::decide("n", summaries, policies) == expected);
  }
}

TEST_CASE("repair emits locality-constrained patches") {
  loom::WorkflowGraph graph = chain(3);

  SECTION("retry modifies only the node's instruction") {
    loom::RepairContext context;
    context.digest = "confidence 0.2";
    auto patch = loom::repair(graph, "c1", RepairAction::RetryWithUpdatedInstruction, context);
    CHECK(patch.target_nodes == std::set<std::string>{"c1"});
    auto patched = loom::apply_patch(graph, patch);
    CHECK(patched.find_node("c1")->instruction.find("[retry] confidence 0.2") !=
          std::string::npos);
    CHECK(patched.find_node("c0")->instruction == graph.find_node("c0")->instruction);
  }

  SECTION("add_parallel_solver adds one sibling plus two incident edges") {
    auto patch = loom::repair(graph, "c1", RepairAction::AddParallelSolver, {});
    CHECK(patch.target_nodes == std::set<std::string>{"c1", "c1_alt"});
    REQUIRE(patch.node_changes.size() == 1);
    REQUIRE(patch.edge_changes.size() == 2);
    auto patched = loom::apply_patch(graph, patch);
    CHECK(patched.has_node("c1_alt"));
    CHECK(patched.in_edges("c2").size() == 2);

    auto diff = loom::diff_graphs(graph, patched);
    for (const auto& change : diff.node_changes) {
      CHECK(patch.target_nodes.count(change.node.id) == 1);
    }
    for (const auto& change : diff.edge_changes) {
      CHECK((patch.target_nodes.count(change.edge.from) ||
             patch.target_nodes.count(change.edge.to)));
    }
  }

  SECTION("swap_tool_backend swaps the active tool attachment") {
    graph.attachments["c1"] = {"tool_a", "tool_b"};
    loom::LibrarySnapshot snapshot;
    snapshot.push_back({"tool_a", loom::EntryKind::Tool, "first tool", "i", "o", "builtin"});
    snapshot.push_back({"tool_b", loom::EntryKind::Tool, "second tool", "i", "o", "builtin"});
    loom::RepairContext context;
    context.library = &snapshot;
    auto patch = loom::repair(graph, "c1", RepairAction::SwapToolBackend, context);
    REQUIRE(patch.attachment_changes.size() == 1);
    CHECK(patch.attachment_changes[0].entry == "tool_a");
    auto patched = loom::apply_patch(graph, patch);
    CHECK(patched.attachments.at("c1") == std::set<std::string>{"tool_b"});
  }

  SECTION("reformat_upstream_output rewrites the producer instruction") {
    auto patch = loom::repair(graph, "c0", RepairAction::ReformatUpstreamOutput, {});
    CHECK(patch.target_nodes == std::set<std::string>{"c0"});
    auto patched = loom::apply_patch(graph, patch);
    CHECK(patched.find_node("c0")->instruction.find("[reformat]") != std::string::npos);
    CHECK(patched.find_node("c0")->instruction.find("note") != std::string::npos);
  }
}

TEST_CASE("review_loop fixes a node that fails once") {
  auto graph = chain(3);
  loom::ExecutorRegistry executors;
  auto script = flaky_script("c1", 1);
  executors.set_default(script);

  auto outcome = loom::review_loop(graph, loop_spec(3), executors, loom::default_policies(), {});
  CHECK(outcome.stop_reason == StopReason::ValidationSucceeded);
  CHECK(outcome.rounds_used == 1);
  CHECK(outcome.patches.size() == 1);
  CHECK(outcome.final_trace.outcome == loom::RunOutcome::Success);

  // Strictly upstream nodes were not re-executed; their results were reused.
  CHECK(script->invocations("c0") == 1);
  CHECK(script->invocations("c1") == 2);
  CHECK(script->invocations("c2") == 2);  // downstream suffix re-ran
}

TEST_CASE("review_loop hits the round bound on an always-failing node") {
  auto graph = chain(2);
  loom::ExecutorRegistry executors;
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior bad;
  bad.artifact = Json{{"text", "never good"}};
  bad.confidence = 0.1;
  script->add_behavior("c1", bad);
  executors.set_default(script);

  auto outcome = loom::review_loop(graph, loop_spec(3), executors, loom::default_policies(), {});
  CHECK(outcome.stop_reason == StopReason::MaxRoundsReached);
  CHECK(outcome.rounds_used == 3);
  CHECK(outcome.patches.size() == 3);
}

TEST_CASE("a clean first pass uses zero rounds") {
  auto graph = chain(2);
  loom::ExecutorRegistry executors;
  executors.set_default(std::make_shared<loom::ScriptedExecutor>());
  auto outcome = loom::review_loop(graph, loop_spec(3), executors, loom::default_policies(), {});
  CHECK(outcome.stop_reason == StopReason::ValidationSucceeded);
  CHECK(outcome.rounds_used == 0);
  CHECK(outcome.patches.empty());
}

TEST_CASE("the persistent graph is never modified by review_loop") {
  auto graph = chain(3);
  std::string before = loom::serialize_graph(graph);
  loom::ExecutorRegistry executors;
  executors.set_default(flaky_script("c1", 2));
  auto outcome = loom::review_loop(graph, loop_spec(5), executors, loom::default_policies(), {});
  CHECK(outcome.rounds_used == 2);
  CHECK(loom::serialize_graph(graph) == before);
  // The per-instance copy did change, and was handed back for inspection.
  CHECK_FALSE(loom::structurally_equal(graph, outcome.instance_graph));
}

TEST_CASE("budget exhaustion stops the loop") {
  auto graph = chain(2);
  loom::ExecutorRegistry executors;
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior costly;
  costly.artifact = Json{{"text", "x"}};
  costly.cost = 60;
  costly.confidence = 0.1;  // would trigger repair if budget allowed
  script->add_behavior("c0", costly);
  script->add_behavior("c1", costly);
  executors.set_default(script);

  auto outcome = loom::review_loop(graph, loop_spec(5, 100), executors, loom::default_policies(), {});
  CHECK(outcome.stop_reason == StopReason::BudgetExhausted);
  CHECK(outcome.final_trace.outcome == loom::RunOutcome::BudgetExhausted);
}

TEST_CASE("escalation surfaces as no_matching_policy") {
  auto graph = chain(2);
  loom::ExecutorRegistry executors;
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior bad;
  bad.artifact = Json{{"text", "x"}};
  bad.confidence = 0.1;
  script->add_behavior("c1", bad);
  executors.set_default(script);

  // Empty policy list: nothing matches any flag.
  auto outcome = loom::review_loop(graph, loop_spec(3), executors, {}, {});
  CHECK(outcome.stop_reason == StopReason::NoMatchingPolicy);
  CHECK(outcome.rounds_used == 0);
}

TEST_CASE("persistent test failures escalate to a parallel solver") {
  auto graph = chain(3);
  loom::ExecutorRegistry executors;
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior failing_tests;
  failing_tests.artifact = Json{{"text", "code"}};
  failing_tests.tests = {{0, 5}};
  script->add_behavior("c1", failing_tests);
  executors.set_default(script);

  auto outcome = loom::review_loop(graph, loop_spec(4), executors, loom::default_policies(), {});
  // Round 1 retries; round 2 sees the second consecutive failing ratio and
  // adds the sibling.
  bool sibling_added = false;
  for (const auto& patch : outcome.patches) {
    for (const auto& change : patch.node_changes) {
      if (change.op == loom::ChangeOp::Add && change.node.id == "c1_alt") sibling_added = true;
    }
  }
  CHECK(sibling_added);
  CHECK(outcome.instance_graph.has_node("c1_alt"));
}

TEST_CASE("rounds_used never exceeds the bound on random failure scripts") {
  std::mt19937 rng(112358);
  std::uniform_int_distribution<int> failure_count(0, 6);
  std::uniform_int_distribution<int> bound(0, 5);
  std::uniform_int_distribution<int> length(2, 4);
  for (int trial = 0; trial < 200; ++trial) {
    int failures = failure_count(rng);
    int max_rounds = bound(rng);
    auto graph = chain(length(rng));
    loom::ExecutorRegistry executors;
    auto script = flaky_script("c1", failures);
    executors.set_default(script);

    auto outcome =
        loom::review_loop(graph, loop_spec(max_rounds), executors, loom::default_policies(), {});
    REQUIRE(outcome.rounds_used <= max_rounds);
    REQUIRE(outcome.rounds_used == static_cast<std::int64_t>(outcome.patches.size()));
    if (failures <= max_rounds) {
      REQUIRE(outcome.stop_reason == StopReason::ValidationSucceeded);
      REQUIRE(outcome.rounds_used == failures);
    } else {
      REQUIRE(outcome.stop_reason == StopReason::MaxRoundsReached);
      REQUIRE(outcome.rounds_used == max_rounds);
    }
  }
}

TEST_CASE("policy and threshold files round-trip canonically") {
  auto policies = loom::default_policies();
  std::string first = loom::serialize_policies(policies);
  auto parsed = loom::parse_policies(loom::parse_document(first));
  CHECK(loom::serialize_policies(parsed) == first);

  Thresholds thresholds;
  thresholds.min_output_confidence = 0.65;
  std::string threshold_text = loom::canonical_dump(loom::to_json(thresholds));
  auto parsed_thresholds = loom::parse_thresholds(loom::parse_document(threshold_text));
  CHECK(loom::canonical_dump(loom::to_json(parsed_thresholds)) == threshold_text);

  SECTION("duplicate policy ids are rejected") {
    try {
      loom::parse_policies(loom::parse_document(
          R"([{"id":"p","priority":1,"pattern":[],"action":"escalate_no_action"},
              {"id":"p","priority":2,"pattern":[],"action":"escalate_no_action"}])"));
      FAIL("expected DuplicateId");
    } catch (const loom::Error& error) {
      CHECK(error.code() == loom::ErrorCode::DuplicateId);
    }
  }

  SECTION("out-of-range thresholds are rejected") {
    CHECK_THROWS_AS(loom::parse_thresholds(loom::parse_document(
                        R"({"min_output_confidence":1.5,"max_test_fail_ratio":0.4,
                            "max_tool_errors":2,"budget_warn_ratio":0.9})")),
                    loom::Error);
  }

  SECTION("ill-typed files stay inside the error contract") {
    try {
      loom::parse_thresholds(loom::parse_document(R"({"min_output_confidence":"high"})"));
      FAIL("accepted ill-typed thresholds");
    } catch (const loom::Error& error) {
      CHECK(error.code() == loom::ErrorCode::MalformedDocument);
    }
    try {
      loom::ScriptedExecutor::from_json(
          loom::parse_document(R"({"nodes":{"a":[{"confidence":"sky high"}]}})"));
      FAIL("accepted ill-typed script");
    } catch (const loom::Error& error) {
      CHECK(error.code() == loom::ErrorCode::MalformedDocument);
    }
    try {
      loom::parse_trace_text(R"({"ledger":{"per_node":{"a":"lots"},"total":0}})");
      FAIL("accepted ill-typed trace ledger");
    } catch (const loom::Error& error) {
      CHECK(error.code() == loom::ErrorCode::MalformedDocument);
    }
  }
}

TEST_CASE("interface repair retargets the producer and clears the violation") {
  // c0 produces a malformed note artifact once, then a correct one.
  auto graph = chain(2);
  loom::ExecutorRegistry executors;
  auto script = std::make_shared<loom::ScriptedExecutor>();
  loom::ScriptedBehavior malformed;
  malformed.artifact = Json{{"body", 12}};
  malformed.confidence = 0.9;
  script->add_behavior("c0", malformed);
  loom::ScriptedBehavior fixed;
  fixed.artifact = Json{{"text", "correct"}};
  fixed.confidence = 0.9;
  script->add_behavior("c0", fixed);
  executors.set_default(script);

  auto outcome = loom::review_loop(graph, loop_spec(3), executors, loom::default_policies(), {});
  CHECK(outcome.stop_reason == StopReason::ValidationSucceeded);
  CHECK(outcome.rounds_used == 1);
  REQUIRE(outcome.patches.size() == 1);
  REQUIRE(outcome.patches[0].node_changes.size() == 1);
  CHECK(outcome.patches[0].node_changes[0].node.id == "c0");
  CHECK(outcome.patches[0].node_changes[0].node.instruction.find("[reformat]") !=
        std::string::npos);
}
