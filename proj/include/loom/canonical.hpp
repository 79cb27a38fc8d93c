#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "loom/errors.hpp"

namespace loom {

using Json = nlohmann::json;

// Canonical form: lexicographically sorted object keys (nlohmann's default
// object backing is std::map) and no insignificant whitespace.
inline std::string canonical_dump(const Json& document) { return document.dump(); }

inline Json parse_document(const std::string& text) {
  Json document = Json::parse(text, nullptr, false);
  if (document.is_discarded()) {
    throw Error(ErrorCode::MalformedDocument, "invalid JSON");
  }
  return document;
}

// Translates json type errors from ill-typed values into MalformedDocument,
// so parsers expose one error surface.
template <typename Fn>
auto reject_malformed(const std::string& what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, what + ": " + e.what());
  }
}

inline void expect_object(const Json& document, const std::string& what) {
  if (!document.is_object()) {
    throw Error(ErrorCode::MalformedDocument, what + " must be a JSON object");
  }
}

// Unknown keys are rejected rather than ignored.
inline void expect_keys(const Json& object, std::initializer_list<const char*> allowed,
                        const std::string& what) {
  for (const auto& item : object.items()) {
    bool known = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw Error(ErrorCode::MalformedDocument, what + ": unknown key '" + item.key() + "'");
    }
  }
}

inline std::string get_string(const Json& object, const char* key, const std::string& fallback,
                              const std::string& what) {
  if (!object.contains(key)) return fallback;
  if (!object.at(key).is_string()) {
    throw Error(ErrorCode::MalformedDocument, what + ": '" + key + "' must be a string");
  }
  return object.at(key).get<std::string>();
}

inline std::int64_t get_integer(const Json& object, const char* key, std::int64_t fallback,
                                const std::string& what) {
  if (!object.contains(key)) return fallback;
  if (!object.at(key).is_number_integer()) {
    throw Error(ErrorCode::MalformedDocument, what + ": '" + key + "' must be an integer");
  }
  return object.at(key).get<std::int64_t>();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::MalformedDocument, "cannot read file: " + path);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::MalformedDocument, "cannot write file: " + path);
  }
  out << content;
}

// Identifiers name nodes, entries, and schemas; they double as file names and
// JSON object keys, so the charset stays conservative.
inline bool is_identifier(const std::string& text) {
  if (text.empty()) return false;
  for (char c : text) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

inline std::string trim_copy(const std::string& text) {
  std::size_t begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  std::size_t end = text.find_last_not_of(" \t\r\n");
  return text.substr(begin, end - begin + 1);
}

}  // namespace loom
