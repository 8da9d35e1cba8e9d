#include "cslab/scripts.hpp"

#include <algorithm>
#include <sstream>

#include "cslab/synthetic_blocks.hpp"
#include "cslab/util.hpp"

namespace cslab {

namespace {
std::string hex(char32_t cp) {
  std::ostringstream ss;
  ss << "U+" << std::uppercase << std::hex << static_cast<unsigned long>(cp);
  return ss.str();
}
}  // namespace

void ScriptRegistry::add_range(ScriptRange range) {
  if (range.lo > range.hi) {
    throw std::invalid_argument("script range " + range.script_id + ": lo " + hex(range.lo) + " > hi " +
                                hex(range.hi));
  }
  auto it = std::lower_bound(ranges_.begin(), ranges_.end(), range.lo,
                             [](const ScriptRange& r, char32_t lo) { return r.lo < lo; });
  const bool clash_next = it != ranges_.end() && it->lo <= range.hi;
  const bool clash_prev = it != ranges_.begin() && std::prev(it)->hi >= range.lo;
  if (clash_next || clash_prev) {
    const ScriptRange& other = clash_next ? *it : *std::prev(it);
    throw ScriptOverlapError("script range " + range.script_id + " [" + hex(range.lo) + ", " + hex(range.hi) +
                             "] overlaps " + other.script_id + " [" + hex(other.lo) + ", " + hex(other.hi) + "]");
  }
  ranges_.insert(it, std::move(range));
}

void ScriptRegistry::map_language(const LanguageId& lang, const ScriptId& script) {
  const bool known = std::any_of(ranges_.begin(), ranges_.end(),
                                 [&](const ScriptRange& r) { return r.script_id == script; });
  if (!known) throw std::invalid_argument("language " + lang + " mapped to unregistered script " + script);
  auto [it, inserted] = language_to_script_.emplace(lang, script);
  if (!inserted && it->second != script) {
    throw std::invalid_argument("language " + lang + " already mapped to " + it->second);
  }
}

const ScriptRange* ScriptRegistry::find(char32_t cp) const {
  auto it = std::upper_bound(ranges_.begin(), ranges_.end(), cp,
                             [](char32_t c, const ScriptRange& r) { return c < r.lo; });
  if (it == ranges_.begin()) return nullptr;
  --it;
  return cp <= it->hi ? &*it : nullptr;
}

std::optional<ScriptId> ScriptRegistry::script_of(char32_t cp) const {
  if (const ScriptRange* r = find(cp)) return r->script_id;
  return std::nullopt;
}

const ScriptId& ScriptRegistry::script_for(const LanguageId& lang) const {
  auto it = language_to_script_.find(lang);
  if (it == language_to_script_.end()) throw UnknownLanguageError("language not registered: " + lang);
  return it->second;
}

bool ScriptRegistry::contains_script(const ScriptId& script, std::u32string_view text) const {
  return std::any_of(text.begin(), text.end(), [&](char32_t cp) {
    const ScriptRange* r = find(cp);
    return r != nullptr && r->script_id == script;
  });
}

bool ScriptRegistry::contains_language(const LanguageId& lang, std::u32string_view text) const {
  return contains_script(script_for(lang), text);
}

bool ScriptRegistry::contains_language(const LanguageId& lang, std::string_view utf8_text) const {
  return contains_language(lang, std::u32string_view(utf8::decode(utf8_text)));
}

std::optional<std::size_t> ScriptRegistry::first_in_language(const LanguageId& lang,
                                                             std::u32string_view text) const {
  const ScriptId& script = script_for(lang);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const ScriptRange* r = find(text[i]);
    if (r != nullptr && r->script_id == script) return i;
  }
  return std::nullopt;
}

void register_builtin_scripts(ScriptRegistry& registry) {
  registry.add_range({"Han", 0x4E00, 0x9FFF});
  registry.add_range({"Cyrillic", 0x0400, 0x04FF});
  registry.add_range({"Hangul", 0xAC00, 0xD7A3});
  registry.add_range({"Hangul", 0x1100, 0x11FF});
  for (const auto& block : kSyntheticBlocks) {
    registry.add_range({std::string(block.id), block.lo, block.hi});
  }
  registry.map_language("zh", "Han");
  registry.map_language("ru", "Cyrillic");
  registry.map_language("ko", "Hangul");
  for (const auto& block : kSyntheticBlocks) {
    registry.map_language(std::string(block.id), std::string(block.id));
  }
}

ScriptRegistry builtin_registry() {
  ScriptRegistry registry;
  register_builtin_scripts(registry);
  return registry;
}

void parse_script_table(ScriptRegistry& registry, std::string_view csv) {
  std::istringstream in{std::string(csv)};
  std::string line;
  bool header = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string row = trim(line);
    if (row.empty()) continue;
    if (header) {
      header = false;
      if (row != "script_id,lo_hex,hi_hex") {
        throw ValidationError("script table: expected header script_id,lo_hex,hi_hex, got '" + row + "'");
      }
      continue;
    }
    const auto cols = split(row, ',');
    if (cols.size() != 3) throw ValidationError("script table line " + std::to_string(line_no) + ": need 3 columns");
    try {
      const auto lo = static_cast<char32_t>(std::stoul(cols[1], nullptr, 16));
      const auto hi = static_cast<char32_t>(std::stoul(cols[2], nullptr, 16));
      registry.add_range({cols[0], lo, hi});
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ScriptOverlapError*>(&e) != nullptr) throw;
      throw ValidationError("script table line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void load_script_table(ScriptRegistry& registry, const std::filesystem::path& path) {
  parse_script_table(registry, read_file(path));
}

}  // namespace cslab
