#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cslab/scripts.hpp"
#include "cslab/util.hpp"

namespace cslab {

inline constexpr char32_t kSpace = U' ';
inline constexpr char32_t kPeriod = U'.';
inline constexpr char32_t kBosCodepoint = 0x0002;

// Shape of the first-order chain: letters continue a word or emit a space; a space
// starts a word or (rarely) a period; a period is always followed by a space.
struct ChainShape {
  double letter_concentration = 0.5;
  double space_after_letter = 0.15;
  double word_start_concentration = 1.0;
  double period_after_space = 0.03;
};

// States 0..A-1 are letters, A is space, A+1 is period.
struct SyntheticLanguage {
  LanguageId lang_id;
  std::vector<char32_t> alphabet;
  std::vector<std::vector<double>> transition;
  std::uint64_t seed = 0;

  std::size_t num_states() const { return alphabet.size() + 2; }
  std::size_t space_state() const { return alphabet.size(); }
  std::size_t period_state() const { return alphabet.size() + 1; }
  char32_t symbol(std::size_t state) const;
  // Draws `length` symbols starting from `state` (not emitted); updates `state`.
  std::u32string walk(std::size_t length, std::size_t& state, Rng& rng) const;
};

// Throws if the block collides with a script registered to another language.
SyntheticLanguage make_language(const LanguageId& lang_id, char32_t block_base, std::size_t alphabet_size,
                                std::uint64_t seed, const ScriptRegistry& registry, const ChainShape& shape = {});
SyntheticLanguage make_language(const LanguageId& lang_id, char32_t block_base, std::size_t alphabet_size,
                                std::uint64_t seed);

enum class DocRole { train, prompt, heldout };
std::string_view to_string(DocRole role);
DocRole parse_doc_role(std::string_view s);

struct Document {
  LanguageId lang;
  std::string text;
  DocRole role = DocRole::train;
};

Document sample_document(const SyntheticLanguage& lang, std::size_t length, Rng& rng,
                         DocRole role = DocRole::train);

// uniform: the foreign span replaces tokens at a uniformly random interior position.
// sentence_break: the span starts at a uniformly random interior word start and is
// introduced by ". " so that the foreign text follows a sentence boundary.
enum class InjectionSite { uniform, sentence_break };
std::string_view to_string(InjectionSite site);
InjectionSite parse_injection_site(std::string_view s);

struct MixtureConfig {
  std::vector<LanguageId> languages;
  std::size_t docs_per_language = 0;
  std::size_t doc_length = 0;
  double injection_rate = 0.0;
  LanguageId injection_lang;
  std::size_t injection_span = 0;
  InjectionSite injection_site = InjectionSite::uniform;
  // Host languages that receive injections; empty means every language but injection_lang.
  std::vector<LanguageId> injection_hosts;

  void validate() const;
  bool is_host(const LanguageId& lang) const;
};

struct CorpusManifest {
  std::map<LanguageId, std::size_t> counts;
  std::vector<std::size_t> injected;            // document indices
  std::vector<std::size_t> injection_positions;  // codepoint offset of each injected span
};

struct Corpus {
  std::vector<Document> documents;
  CorpusManifest manifest;

  bool is_injected(std::size_t doc_index) const;
};

// `languages` must hold a SyntheticLanguage for every id in cfg.languages.
Corpus build_corpus(const MixtureConfig& cfg, const std::map<LanguageId, SyntheticLanguage>& languages, Rng& rng);

// Character-level vocabulary: BOS, space, period, then each alphabet in order.
using TokenId = std::int32_t;

class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;

  Vocabulary() = default;
  static Vocabulary from_languages(std::span<const SyntheticLanguage> languages);
  static Vocabulary from_csv(std::string_view csv);

  std::size_t size() const { return codepoints_.size(); }
  TokenId token_of(char32_t cp) const;
  char32_t codepoint_of(TokenId id) const;
  std::vector<TokenId> encode(std::u32string_view text) const;
  std::vector<TokenId> encode_utf8(std::string_view text) const;
  std::u32string decode(std::span<const TokenId> tokens) const;
  std::string to_csv() const;

 private:
  void add(char32_t cp);
  std::vector<char32_t> codepoints_;
  std::map<char32_t, TokenId> ids_;
};

std::string corpus_to_jsonl(std::span<const Document> docs);
std::vector<Document> corpus_from_jsonl(std::string_view jsonl);
std::string manifest_to_json(const CorpusManifest& manifest);
CorpusManifest manifest_from_json(std::string_view json);

}  // namespace cslab
