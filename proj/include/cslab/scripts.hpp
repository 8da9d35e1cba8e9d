#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cslab {

using LanguageId = std::string;
using ScriptId = std::string;

struct ScriptRange {
  ScriptId script_id;
  char32_t lo = 0;
  char32_t hi = 0;
};

struct ScriptOverlapError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct UnknownLanguageError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Codepoint-range table backing the code-switch predicate. Ranges never overlap, so a
// codepoint resolves to at most one script.
class ScriptRegistry {
 public:
  void add_range(ScriptRange range);
  void map_language(const LanguageId& lang, const ScriptId& script);

  std::optional<ScriptId> script_of(char32_t cp) const;
  const ScriptId& script_for(const LanguageId& lang) const;
  bool has_language(const LanguageId& lang) const { return language_to_script_.count(lang) != 0; }

  bool contains_script(const ScriptId& script, std::u32string_view text) const;
  bool contains_language(const LanguageId& lang, std::string_view utf8_text) const;
  bool contains_language(const LanguageId& lang, std::u32string_view text) const;
  // Index of the first codepoint belonging to lang's script, if any.
  std::optional<std::size_t> first_in_language(const LanguageId& lang, std::u32string_view text) const;

  const std::vector<ScriptRange>& ranges() const { return ranges_; }
  bool empty() const { return ranges_.empty(); }

 private:
  const ScriptRange* find(char32_t cp) const;

  std::vector<ScriptRange> ranges_;  // sorted by lo
  std::map<LanguageId, ScriptId> language_to_script_;
};

// Han, Cyrillic, Hangul and the synthetic private-use blocks, with zh/ru/ko and the
// synthetic language ids mapped onto them.
void register_builtin_scripts(ScriptRegistry& registry);
ScriptRegistry builtin_registry();

// CSV with header script_id,lo_hex,hi_hex.
void load_script_table(ScriptRegistry& registry, const std::filesystem::path& path);
void parse_script_table(ScriptRegistry& registry, std::string_view csv);

}  // namespace cslab
