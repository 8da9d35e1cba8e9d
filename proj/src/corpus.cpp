#include "cslab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

namespace cslab {

using nlohmann::json;

namespace {

std::vector<double> dirichlet(std::size_t n, double concentration, Rng& rng) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& v : w) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(n));
    return w;
  }
  for (auto& v : w) v /= total;
  return w;
}

std::size_t draw(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding left u above the final cumulative sum; pick the last state with mass.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return probs.size() - 1;
}

}  // namespace

char32_t SyntheticLanguage::symbol(std::size_t state) const {
  if (state < alphabet.size()) return alphabet[state];
  if (state == space_state()) return kSpace;
  if (state == period_state()) return kPeriod;
  throw std::out_of_range("chain state out of range");
}

std::u32string SyntheticLanguage::walk(std::size_t length, std::size_t& state, Rng& rng) const {
  std::u32string out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    state = draw(transition[state], rng);
    out.push_back(symbol(state));
  }
  return out;
}

SyntheticLanguage make_language(const LanguageId& lang_id, char32_t block_base, std::size_t alphabet_size,
                                std::uint64_t seed, const ScriptRegistry& registry, const ChainShape& shape) {
  if (alphabet_size < 2) throw ValidationError("make_language: alphabet_size must be >= 2");
  const std::optional<ScriptId> own =
      registry.has_language(lang_id) ? std::optional<ScriptId>(registry.script_for(lang_id)) : std::nullopt;
  SyntheticLanguage lang;
  lang.lang_id = lang_id;
  lang.seed = seed;
  for (std::size_t i = 0; i < alphabet_size; ++i) {
    const char32_t cp = block_base + static_cast<char32_t>(i);
    const auto script = registry.script_of(cp);
    if (script && script != own) {
      throw ValidationError("make_language: block for " + lang_id + " collides with script " + *script);
    }
    lang.alphabet.push_back(cp);
  }
  const std::size_t a = alphabet_size;
  lang.transition.assign(a + 2, std::vector<double>(a + 2, 0.0));
  Rng rng(seed);
  for (std::size_t i = 0; i < a; ++i) {
    const auto w = dirichlet(a, shape.letter_concentration, rng);
    for (std::size_t j = 0; j < a; ++j) lang.transition[i][j] = w[j] * (1.0 - shape.space_after_letter);
    lang.transition[i][a] = shape.space_after_letter;
  }
  const auto starts = dirichlet(a, shape.word_start_concentration, rng);
  for (std::size_t j = 0; j < a; ++j) lang.transition[a][j] = starts[j] * (1.0 - shape.period_after_space);
  lang.transition[a][a + 1] = shape.period_after_space;
  lang.transition[a + 1][a] = 1.0;
  return lang;
}

SyntheticLanguage make_language(const LanguageId& lang_id, char32_t block_base, std::size_t alphabet_size,
                                std::uint64_t seed) {
  return make_language(lang_id, block_base, alphabet_size, seed, builtin_registry());
}

std::string_view to_string(DocRole role) {
  switch (role) {
    case DocRole::train: return "train";
    case DocRole::prompt: return "prompt";
    case DocRole::heldout: return "heldout";
  }
  return "train";
}

DocRole parse_doc_role(std::string_view s) {
  if (s == "train") return DocRole::train;
  if (s == "prompt") return DocRole::prompt;
  if (s == "heldout") return DocRole::heldout;
  throw ValidationError("unknown document role: " + std::string(s));
}

Document sample_document(const SyntheticLanguage& lang, std::size_t length, Rng& rng, DocRole role) {
  if (length < 1) throw ValidationError("sample_document: length must be >= 1");
  std::size_t state = lang.space_state();
  return Document{lang.lang_id, utf8::encode(lang.walk(length, state, rng)), role};
}

std::string_view to_string(InjectionSite site) {
  return site == InjectionSite::uniform ? "uniform" : "sentence_break";
}

InjectionSite parse_injection_site(std::string_view s) {
  if (s == "uniform") return InjectionSite::uniform;
  if (s == "sentence_break") return InjectionSite::sentence_break;
  throw ValidationError("unknown injection site: " + std::string(s));
}

void MixtureConfig::validate() const {
  if (languages.empty()) throw ValidationError("mixture: no languages");
  if (!(injection_rate >= 0.0 && injection_rate <= 1.0)) throw ValidationError("mixture: injection_rate outside [0, 1]");
  if (doc_length < 1) throw ValidationError("mixture: doc_length must be >= 1");
  if (injection_rate > 0.0) {
    if (std::find(languages.begin(), languages.end(), injection_lang) == languages.end()) {
      throw ValidationError("mixture: injection_lang " + injection_lang + " not among languages");
    }
    const std::size_t min_len = injection_span + 2;
    if (injection_span < 1 || doc_length < min_len) {
      throw ValidationError("mixture: doc_length must exceed injection_span by at least 2");
    }
    if (injection_site == InjectionSite::sentence_break && injection_span < 3) {
      throw ValidationError("mixture: sentence_break spans need at least 3 tokens");
    }
    for (const auto& h : injection_hosts) {
      if (std::find(languages.begin(), languages.end(), h) == languages.end()) {
        throw ValidationError("mixture: injection host " + h + " not among languages");
      }
    }
  }
}

bool MixtureConfig::is_host(const LanguageId& lang) const {
  if (lang == injection_lang) return false;
  if (injection_hosts.empty()) return true;
  return std::find(injection_hosts.begin(), injection_hosts.end(), lang) != injection_hosts.end();
}

bool Corpus::is_injected(std::size_t doc_index) const {
  return std::binary_search(manifest.injected.begin(), manifest.injected.end(), doc_index);
}

Corpus build_corpus(const MixtureConfig& cfg, const std::map<LanguageId, SyntheticLanguage>& languages, Rng& rng) {
  cfg.validate();
  auto lookup = [&](const LanguageId& id) -> const SyntheticLanguage& {
    auto it = languages.find(id);
    if (it == languages.end()) throw ValidationError("mixture: no synthetic language for " + id);
    return it->second;
  };
  Corpus corpus;
  const SyntheticLanguage* foreign = cfg.injection_rate > 0.0 ? &lookup(cfg.injection_lang) : nullptr;
  for (const auto& id : cfg.languages) {
    const SyntheticLanguage& lang = lookup(id);
    const bool host = foreign != nullptr && cfg.is_host(id);
    for (std::size_t d = 0; d < cfg.docs_per_language; ++d) {
      std::size_t state = lang.space_state();
      std::u32string text = lang.walk(cfg.doc_length, state, rng);
      if (host && uniform01(rng) < cfg.injection_rate) {
        const std::size_t span = cfg.injection_span;
        const std::size_t last = cfg.doc_length - span - 1;  // keeps one host token after the span
        std::vector<std::size_t> sites;
        if (cfg.injection_site == InjectionSite::sentence_break) {
          for (std::size_t p = 1; p <= last; ++p) {
            if (text[p - 1] == kSpace) sites.push_back(p);
          }
        }
        if (sites.empty()) {
          for (std::size_t p = 1; p <= last; ++p) sites.push_back(p);
        }
        const std::size_t pos = sites[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(sites.size()))];
        std::u32string insert;
        std::size_t fstate = foreign->space_state();
        if (cfg.injection_site == InjectionSite::sentence_break) {
          insert = {kPeriod, kSpace};
          insert += foreign->walk(span - 2, fstate, rng);
        } else {
          insert = foreign->walk(span, fstate, rng);
        }
        text.replace(pos, span, insert);
        corpus.manifest.injected.push_back(corpus.documents.size());
        corpus.manifest.injection_positions.push_back(pos);
      }
      corpus.documents.push_back(Document{id, utf8::encode(text), DocRole::train});
      ++corpus.manifest.counts[id];
    }
  }
  return corpus;
}

Vocabulary Vocabulary::from_languages(std::span<const SyntheticLanguage> languages) {
  Vocabulary v;
  v.add(kBosCodepoint);
  v.add(kSpace);
  v.add(kPeriod);
  for (const auto& lang : languages) {
    for (char32_t cp : lang.alphabet) v.add(cp);
  }
  return v;
}

void Vocabulary::add(char32_t cp) {
  auto [it, inserted] = ids_.emplace(cp, static_cast<TokenId>(codepoints_.size()));
  if (!inserted) throw ValidationError("vocabulary: duplicate codepoint");
  codepoints_.push_back(cp);
}

TokenId Vocabulary::token_of(char32_t cp) const {
  auto it = ids_.find(cp);
  if (it == ids_.end()) {
    std::ostringstream ss;
    ss << "vocabulary: codepoint U+" << std::uppercase << std::hex << static_cast<unsigned long>(cp)
       << " not in vocabulary";
    throw ValidationError(ss.str());
  }
  return it->second;
}

char32_t Vocabulary::codepoint_of(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= codepoints_.size()) {
    throw std::out_of_range("vocabulary: token id " + std::to_string(id) + " out of range");
  }
  return codepoints_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::u32string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (char32_t cp : text) out.push_back(token_of(cp));
  return out;
}

std::vector<TokenId> Vocabulary::encode_utf8(std::string_view text) const { return encode(utf8::decode(text)); }

std::u32string Vocabulary::decode(std::span<const TokenId> tokens) const {
  std::u32string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) out.push_back(codepoint_of(t));
  return out;
}

std::string Vocabulary::to_csv() const {
  std::ostringstream ss;
  ss << "codepoint_hex,token_id\n";
  for (std::size_t i = 0; i < codepoints_.size(); ++i) {
    ss << std::uppercase << std::hex << static_cast<unsigned long>(codepoints_[i]) << std::dec << ',' << i << '\n';
  }
  return ss.str();
}

Vocabulary Vocabulary::from_csv(std::string_view csv) {
  Vocabulary v;
  std::istringstream in{std::string(csv)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    const std::string row = trim(line);
    if (row.empty()) continue;
    if (header) {
      header = false;
      if (row != "codepoint_hex,token_id") throw ValidationError("vocabulary: bad header '" + row + "'");
      continue;
    }
    const auto cols = split(row, ',');
    if (cols.size() != 2) throw ValidationError("vocabulary: bad row '" + row + "'");
    const auto cp = static_cast<char32_t>(std::stoul(cols[0], nullptr, 16));
    const auto id = std::stoul(cols[1]);
    if (id != v.size()) throw ValidationError("vocabulary: token ids must be contiguous from 0");
    v.add(cp);
  }
  return v;
}

std::string corpus_to_jsonl(std::span<const Document> docs) {
  std::string out;
  for (const auto& d : docs) {
    json j = {{"lang", d.lang}, {"role", std::string(to_string(d.role))}, {"text", d.text}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Document> corpus_from_jsonl(std::string_view jsonl) {
  std::vector<Document> docs;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      docs.push_back(Document{j.at("lang").get<std::string>(), j.at("text").get<std::string>(),
                              parse_doc_role(j.at("role").get<std::string>())});
    } catch (const json::exception& e) {
      throw ValidationError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return docs;
}

std::string manifest_to_json(const CorpusManifest& manifest) {
  json j;
  j["counts"] = manifest.counts;
  j["injected"] = manifest.injected;
  j["injection_positions"] = manifest.injection_positions;
  return j.dump(2) + "\n";
}

CorpusManifest manifest_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    CorpusManifest m;
    m.counts = j.at("counts").get<std::map<LanguageId, std::size_t>>();
    m.injected = j.at("injected").get<std::vector<std::size_t>>();
    m.injection_positions = j.value("injection_positions", std::vector<std::size_t>{});
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("corpus manifest: ") + e.what());
  }
}

}  // namespace cslab
