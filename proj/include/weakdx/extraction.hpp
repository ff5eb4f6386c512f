#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "weakdx/corpus.hpp"

namespace weakdx {

/// Trigger phrases locating the diagnosis section, and trim phrases whose
/// clause gets cut out of the candidate string. A trim entry containing the
/// digit class "\d" is treated as a pattern and deleted as a whole match.
struct ExtractionRules {
  std::vector<std::string> section_keywords;
  std::vector<std::string> trim_keywords;

  static ExtractionRules defaults() {
    ExtractionRules r;
    r.section_keywords = {"diagnosi", "diagnosi di dimissione",
                          "diagnosi alla dimissione", "diagnosi testuale"};
    r.trim_keywords = {"decorso clinico", "consigli terapeutici", "consiglio",
                       "controllo",       "a domicilio",
                       "paziente: ( id: \\d+)"};
    return r;
  }

  static ExtractionRules from_json(const nlohmann::json& j) {
    ExtractionRules r;
    r.section_keywords = j.at("section_keywords").get<std::vector<std::string>>();
    r.trim_keywords = j.at("trim_keywords").get<std::vector<std::string>>();
    if (r.section_keywords.empty())
      throw std::runtime_error("rules: section_keywords must be non-empty");
    return r;
  }

  static ExtractionRules from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open rules file " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

  nlohmann::json to_json() const {
    return {{"section_keywords", section_keywords},
            {"trim_keywords", trim_keywords}};
  }
};

/// The diagnosis sentence found in one letter. raw is a literal slice of the
/// boilerplate-stripped letter text at [span_start, span_end).
struct DiagnosisString {
  std::string letter_id;
  std::string raw;
  std::string trimmed;
  std::size_t span_start = 0;
  std::size_t span_end = 0;
};

namespace detail {

// Longest trigger first so "diagnosi di dimissione" beats its prefix.
inline std::vector<std::string> triggers_by_length(
    const std::vector<std::string>& keywords) {
  std::vector<std::string> sorted;
  sorted.reserve(keywords.size());
  for (const auto& k : keywords) sorted.push_back(ascii_lower(k));
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() > b.size() : a < b;
  });
  return sorted;
}

struct LineSpan {
  std::size_t offset;  // within the full text
  std::string_view content;
};

inline std::vector<LineSpan> lines_with_offsets(std::string_view text) {
  std::vector<LineSpan> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    lines.push_back({start, text.substr(start, end - start)});
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return lines;
}

// Trims surrounding whitespace, returning the content and its offset shift.
inline std::pair<std::string_view, std::size_t> trim_with_offset(
    std::string_view s) {
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  std::size_t e = s.size();
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return {s.substr(b, e - b), b};
}

inline std::regex compile_trim_pattern(const std::string& keyword) {
  std::string pattern;
  for (std::size_t i = 0; i < keyword.size(); ++i) {
    char c = keyword[i];
    if (c == '\\' && i + 1 < keyword.size() && keyword[i + 1] == 'd') {
      pattern += "\\d+";
      ++i;
      if (i + 1 < keyword.size() && keyword[i + 1] == '+') ++i;
    } else if (c == ' ') {
      pattern += "\\s*";
    } else if (c == '(') {
      pattern += "\\(\\s*";
    } else if (c == ')') {
      pattern += "\\s*\\)";
    } else if (std::string("[]{}.*+?^$|").find(c) != std::string::npos) {
      pattern += '\\';
      pattern += c;
    } else {
      pattern += c;
    }
  }
  return std::regex(pattern, std::regex::icase);
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = true;  // swallow leading whitespace
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(c);
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace detail

/// Finds the diagnosis string: the first line beginning with a section
/// keyword (case-insensitive, longest keyword wins) followed by an optional
/// colon. The candidate is the rest of that line, or the next non-blank line
/// when the trigger line carries nothing. Absent when no section exists or
/// the section is empty.
inline std::optional<DiagnosisString> extract_diagnosis(
    std::string_view stripped_text, const ExtractionRules& rules) {
  const auto triggers = detail::triggers_by_length(rules.section_keywords);
  const auto lines = detail::lines_with_offsets(stripped_text);

  for (std::size_t li = 0; li < lines.size(); ++li) {
    auto [content, shift] = detail::trim_with_offset(lines[li].content);
    if (content.empty()) continue;
    std::string lc = detail::ascii_lower(content);
    for (const auto& trigger : triggers) {
      if (lc.size() < trigger.size()) continue;
      if (lc.compare(0, trigger.size(), trigger) != 0) continue;
      std::size_t pos = trigger.size();
      if (pos < lc.size() &&
          detail::is_word_byte(static_cast<unsigned char>(lc[pos])))
        continue;  // keyword must end at a word boundary
      while (pos < content.size() && (content[pos] == ' ' || content[pos] == '\t'))
        ++pos;
      if (pos < content.size() && content[pos] == ':') ++pos;

      auto [rest, rest_shift] = detail::trim_with_offset(content.substr(pos));
      if (!rest.empty()) {
        DiagnosisString out;
        out.raw = std::string(rest);
        out.span_start = lines[li].offset + shift + pos + rest_shift;
        out.span_end = out.span_start + rest.size();
        return out;
      }
      // Empty trigger line: the diagnosis may sit on the next non-blank line.
      for (std::size_t lj = li + 1; lj < lines.size(); ++lj) {
        auto [next, next_shift] = detail::trim_with_offset(lines[lj].content);
        if (next.empty()) continue;
        DiagnosisString out;
        out.raw = std::string(next);
        out.span_start = lines[lj].offset + next_shift;
        out.span_end = out.span_start + next.size();
        return out;
      }
      return std::nullopt;  // section present but empty
    }
  }
  return std::nullopt;
}

/// Cuts each trim-keyword clause (keyword up to and including the next '.'
/// or ';', or end of string), collapses whitespace, and returns the rest.
/// Absent when nothing survives. Idempotent.
inline std::optional<std::string> trim_diagnosis(std::string_view raw,
                                                 const ExtractionRules& rules) {
  std::string work = detail::collapse_whitespace(raw);

  std::vector<std::string> phrases;
  std::vector<std::regex> patterns;
  for (const auto& kw : rules.trim_keywords) {
    if (kw.find("\\d") != std::string::npos)
      patterns.push_back(detail::compile_trim_pattern(kw));
    else
      phrases.push_back(detail::ascii_lower(kw));
  }

  bool changed = true;
  while (changed && !work.empty()) {
    changed = false;
    std::string lc = detail::ascii_lower(work);

    // Earliest match wins; among equal starts the longest keyword.
    std::size_t best_pos = std::string::npos;
    std::size_t best_end = 0;
    for (const auto& phrase : phrases) {
      std::size_t from = 0;
      while (true) {
        std::size_t pos = lc.find(phrase, from);
        if (pos == std::string::npos) break;
        bool left_ok = pos == 0 || !detail::is_word_byte(static_cast<unsigned char>(
                                        lc[pos - 1]));
        std::size_t after = pos + phrase.size();
        bool right_ok = after == lc.size() ||
                        !detail::is_word_byte(static_cast<unsigned char>(lc[after]));
        if (left_ok && right_ok) {
          std::size_t cut_end = lc.find_first_of(".;", pos);
          cut_end = cut_end == std::string::npos ? lc.size() : cut_end + 1;
          if (pos < best_pos || (pos == best_pos && cut_end > best_end)) {
            best_pos = pos;
            best_end = cut_end;
          }
          break;
        }
        from = pos + 1;
      }
    }
    for (const auto& re : patterns) {
      std::smatch m;
      if (std::regex_search(work, m, re)) {
        std::size_t pos = static_cast<std::size_t>(m.position(0));
        std::size_t end = pos + static_cast<std::size_t>(m.length(0));
        if (pos < best_pos || (pos == best_pos && end > best_end)) {
          best_pos = pos;
          best_end = end;  // whole-match deletion, no clause extension
        }
      }
    }

    if (best_pos != std::string::npos) {
      work.erase(best_pos, best_end - best_pos);
      work = detail::collapse_whitespace(work);
      changed = true;
    }
  }

  if (work.empty()) return std::nullopt;
  return work;
}

/// Extraction results over a corpus: per-letter diagnosis strings (only those
/// with a surviving trimmed form), coverage, and the unique-string count.
struct ExtractionOutput {
  std::vector<DiagnosisString> strings;  // in letter order
  std::unordered_map<std::string, std::size_t> by_letter;
  double coverage = 0.0;
  std::size_t unique_trimmed = 0;

  const DiagnosisString* for_letter(const std::string& letter_id) const {
    auto it = by_letter.find(letter_id);
    return it == by_letter.end() ? nullptr : &strings[it->second];
  }
};

inline ExtractionOutput extract_all(
    const Corpus& corpus, const ExtractionRules& rules,
    const std::vector<BoilerplateMarker>& markers = default_boilerplate_markers()) {
  ExtractionOutput out;
  std::unordered_set<std::string> uniques;
  for (const auto& letter : corpus.letters) {
    std::string stripped = strip_boilerplate(letter.text, markers);
    auto found = extract_diagnosis(stripped, rules);
    if (!found) continue;
    auto trimmed = trim_diagnosis(found->raw, rules);
    if (!trimmed) continue;
    found->letter_id = letter.id;
    found->trimmed = *trimmed;
    uniques.insert(*trimmed);
    out.by_letter.emplace(letter.id, out.strings.size());
    out.strings.push_back(std::move(*found));
  }
  out.coverage = corpus.letters.empty()
                     ? 0.0
                     : static_cast<double>(out.strings.size()) /
                           static_cast<double>(corpus.letters.size());
  out.unique_trimmed = uniques.size();
  return out;
}

}  // namespace weakdx
