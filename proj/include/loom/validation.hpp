#pragma once

#include <string>
#include <vector>

namespace loom {

struct Violation {
  std::string code;     // stable category, e.g. "cycle", "interface", "budget"
  std::string subject;  // node id, edge "a->b", or field name
  std::string message;
};

/// Violations are data, not failures; an empty report means the subject is
/// acceptable as-is.
struct ValidationReport {
  std::vector<Violation> violations;

  bool empty() const { return violations.empty(); }

  void add(std::string code, std::string subject, std::string message) {
    violations.push_back({std::move(code), std::move(subject), std::move(message)});
  }

  std::string to_text() const {
    std::string out;
    for (const auto& v : violations) {
      out += v.code;
      out += ": ";
      out += v.subject;
      out += ": ";
      out += v.message;
      out += "\n";
    }
    return out;
  }
};

}  // namespace loom
