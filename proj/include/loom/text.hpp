#pragma once

#include <cctype>
#include <map>
#include <string>
#include <vector>

namespace loom {

// Lowercased maximal alphanumeric runs.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(current);
  return tokens;
}

inline std::map<std::string, int> term_frequencies(const std::string& text) {
  std::map<std::string, int> counts;
  for (const auto& token : tokenize(text)) ++counts[token];
  return counts;
}

// Clause groups of a goal sentence. ";" and "then" (including "and then")
// separate sequential groups; a bare "and" separates parallel clauses within
// a group.
inline std::vector<std::vector<std::string>> split_goal_clauses(const std::string& goal) {
  std::vector<std::string> words;
  {
    std::string current;
    for (char c : goal) {
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        if (!current.empty()) {
          words.push_back(current);
          current.clear();
        }
      } else {
        current.push_back(c);
      }
    }
    if (!current.empty()) words.push_back(current);
  }

  auto lowered = [](std::string word) {
    for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return word;
  };

  std::vector<std::vector<std::string>> groups;
  std::vector<std::string> group;
  std::string clause;

  auto flush_clause = [&]() {
    if (!clause.empty()) {
      group.push_back(clause);
      clause.clear();
    }
  };
  auto flush_group = [&]() {
    flush_clause();
    if (!group.empty()) {
      groups.push_back(group);
      group.clear();
    }
  };
  auto append_word = [&](const std::string& word) {
    if (!clause.empty()) clause.push_back(' ');
    clause += word;
  };

  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string word = words[i];
    bool ends_group = false;
    if (!word.empty() && word.back() == ';') {
      word.pop_back();
      ends_group = true;
    }
    std::string low = lowered(word);
    if (low == "then") {
      flush_group();
      continue;
    }
    if (low == "and") {
      if (i + 1 < words.size() && lowered(words[i + 1]) == "then") {
        flush_group();
        ++i;  // consume "then"
      } else {
        flush_clause();
      }
      continue;
    }
    if (low == ";") {
      flush_group();
      continue;
    }
    if (!word.empty()) append_word(word);
    if (ends_group) flush_group();
  }
  flush_group();
  return groups;
}

}  // namespace loom
