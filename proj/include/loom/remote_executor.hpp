#pragma once

#include <string>

#include <httplib.h>

#include "loom/canonical.hpp"
#include "loom/executors.hpp"

namespace loom {

/// Adapter for a remote text-generation endpoint speaking the executor
/// contract over HTTP. POSTs {node, instruction, attachments, inputs} to
/// <endpoint>/run and expects {artifact, confidence?, cost}. Not part of the
/// core test suite; the scripted executor covers the contract there.
class RemoteExecutor : public Executor {
 public:
  explicit RemoteExecutor(std::string endpoint) : endpoint_(std::move(endpoint)) {}

  ExecutorResult run(const NodeContext& context) override {
    Json request{{"node", context.node_id},
                 {"instruction", context.instruction},
                 {"attachments", context.attachments},
                 {"inputs", Json::object()}};
    for (const auto& [producer, artifact] : context.inputs) {
      request["inputs"][producer] = artifact;
    }

    httplib::Client client(endpoint_);
    client.set_read_timeout(120, 0);
    auto response = client.Post("/run", canonical_dump(request), "application/json");

    ExecutorResult result;
    if (!response || response->status != 200) {
      result.failed = true;
      result.failure = "remote executor unreachable or returned an error";
      return result;
    }
    Json body = parse_document(response->body);
    if (body.contains("artifact")) result.artifact = body.at("artifact");
    result.cost = body.value("cost", 0);
    if (body.contains("confidence")) {
      result.signals.push_back({SignalKind::Output, "", Severity::Info,
                                Json{{"confidence", body.at("confidence").get<double>()}}});
    }
    return result;
  }

 private:
  std::string endpoint_;
};

}  // namespace loom
