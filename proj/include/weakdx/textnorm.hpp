#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace weakdx {

/// Normalized word tokens: lowercase, no punctuation, no digits.
using TokenList = std::vector<std::string>;

namespace detail {

// Lowercases ASCII and Latin-1 letters (UTF-8), maps everything else to a
// space. Covers the Italian accented range; multiplication/division signs
// and bytes outside Latin-1 are treated as punctuation.
inline std::string fold_to_letters(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (c >= 'a' && c <= 'z') {
      out.push_back(static_cast<char>(c));
    } else if (c >= 'A' && c <= 'Z') {
      out.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (c == 0xC3 && i + 1 < text.size()) {
      unsigned char d = static_cast<unsigned char>(text[++i]);
      if (d >= 0x80 && d <= 0x9E && d != 0x97) {
        out.push_back(static_cast<char>(0xC3));
        out.push_back(static_cast<char>(d + 0x20));  // uppercase -> lowercase
      } else if (d >= 0xA0 && d <= 0xBF && d != 0xB7) {
        out.push_back(static_cast<char>(0xC3));
        out.push_back(static_cast<char>(d));
      } else {
        out.push_back(' ');
      }
    } else {
      out.push_back(' ');
    }
  }
  return out;
}

inline TokenList split_tokens(const std::string& folded) {
  TokenList tokens;
  std::size_t i = 0;
  while (i < folded.size()) {
    while (i < folded.size() && folded[i] == ' ') ++i;
    std::size_t start = i;
    while (i < folded.size() && folded[i] != ' ') ++i;
    if (i > start) tokens.emplace_back(folded.substr(start, i - start));
  }
  return tokens;
}

}  // namespace detail

/// Tokenize without abbreviation expansion: lowercase, punctuation and
/// digits replaced by spaces, split on whitespace.
inline TokenList normalize_tokens(std::string_view text) {
  return detail::split_tokens(detail::fold_to_letters(text));
}

/// Medical abbreviation dictionary. Keys are 2-3 letter lowercase tokens;
/// expansions are normalized phrases that contain no key (so expansion
/// terminates in one pass and normalize() is idempotent).
class AbbreviationTable {
 public:
  AbbreviationTable() = default;

  explicit AbbreviationTable(std::map<std::string, std::string> entries) {
    for (auto& [key, phrase] : entries) add(key, phrase);
  }

  void add(const std::string& key, const std::string& phrase) {
    if (key.size() < 2 || key.size() > 3)
      throw std::invalid_argument("abbreviation key '" + key +
                                  "' must be 2 or 3 characters");
    TokenList key_tok = normalize_tokens(key);
    if (key_tok.size() != 1 || key_tok[0] != key)
      throw std::invalid_argument("abbreviation key '" + key +
                                  "' must be a lowercase letter token");
    TokenList expansion = normalize_tokens(phrase);
    if (expansion.empty())
      throw std::invalid_argument("abbreviation '" + key +
                                  "' has an empty expansion");
    entries_[key] = expansion;
    validate_acyclic();
  }

  const std::vector<std::string>* find(const std::string& token) const {
    auto it = entries_.find(token);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }

  const std::map<std::string, TokenList>& entries() const { return entries_; }

  /// Abbreviations observed in the corpus diagnosis strings.
  static AbbreviationTable defaults() {
    return AbbreviationTable({{"dx", "destra"},
                              {"sx", "sinistra"},
                              {"sdr", "sindrome"},
                              {"vrs", "virus respiratorio sinciziale"},
                              {"ev", "endovena"},
                              {"os", "orale"}});
  }

  /// Loads a JSON object {"dx": "destra", ...}.
  static AbbreviationTable from_json(const nlohmann::json& j) {
    if (!j.is_object())
      throw std::runtime_error("abbreviation table must be a JSON object");
    std::map<std::string, std::string> entries;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!it.value().is_string())
        throw std::runtime_error("abbreviation '" + it.key() +
                                 "' must map to a string");
      entries[it.key()] = it.value().get<std::string>();
    }
    return AbbreviationTable(std::move(entries));
  }

  static AbbreviationTable from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open abbreviation file " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

 private:
  void validate_acyclic() const {
    for (const auto& [key, expansion] : entries_)
      for (const auto& tok : expansion)
        if (entries_.count(tok))
          throw std::invalid_argument("abbreviation expansion of '" + key +
                                      "' contains key '" + tok + "'");
  }

  std::map<std::string, TokenList> entries_;
};

/// Full diagnosis-string normalization: punctuation and digit removal,
/// lowercasing, tokenization, abbreviation expansion.
inline TokenList normalize(std::string_view text, const AbbreviationTable& abbr) {
  TokenList raw = normalize_tokens(text);
  TokenList out;
  out.reserve(raw.size());
  for (auto& tok : raw) {
    if (const auto* expansion = abbr.find(tok)) {
      out.insert(out.end(), expansion->begin(), expansion->end());
    } else {
      out.push_back(std::move(tok));
    }
  }
  return out;
}

/// Letter-text tokenization for the classifier: same normalization without
/// abbreviation expansion, truncated to the first max_tokens tokens.
inline TokenList tokenize_letter(std::string_view text, std::size_t max_tokens) {
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
  TokenList tokens = normalize_tokens(text);
  if (tokens.size() > max_tokens) tokens.resize(max_tokens);
  return tokens;
}

inline std::string join_tokens(const TokenList& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace weakdx
