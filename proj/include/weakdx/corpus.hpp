#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "weakdx/rng.hpp"
#include "weakdx/textnorm.hpp"

namespace weakdx {

// ---------------------------------------------------------------------------
// Boilerplate stripping
// ---------------------------------------------------------------------------

/// A header/footer line marker. Lines whose leading text matches the prefix
/// (case-insensitive, word-bounded) are dropped. start_only markers apply
/// only while no regular content line has been kept yet.
struct BoilerplateMarker {
  std::string prefix;
  bool start_only = false;
};

inline const std::vector<BoilerplateMarker>& default_boilerplate_markers() {
  static const std::vector<BoilerplateMarker> markers = {
      {"regione", false},
      {"azienda", false},
      {"dipartimento", true},
      {"pronto soccorso pediatrico", true},
      {"u.o.c", true},
      {"uoc ", true},
      {"operativa", true},
      {"accettazione", true},
      {"u.o", true},
      {"uo ", true},
      {"uo.", true},
      {"u.l.s.s.", true},
      {"ulss", true},
      {"ospedale", true},
      {"presidio ospedaliero", true},
      {"via", true},
      {"punto di primo intervento", false},
      {"pediatria", true},
      {"verbale", true},
      {"pag.", false},
      {"pag ", false},
      {"pagina", false},
      {"nato", true},
      {"tess.san", false},
      {"codice fiscale", false},
      {"comune di nascita", false},
      {"cap", false},
      {"indirizzo", false},
      {"cartella dea", false},
      {"documento firmato digitalmente", false},
      {"informazione ai sensi", false},
      {"il medico dimettente", false},
      {"gentile signor", false},
      {"copia di documento firmato e conservato", false},
      {"desideriamo renderla partecipe", false},
      {"modulo di pronto soccorso", false},
      {"direttore", true},
      {"ai genitori", false},
      {"al medico", false},
      {"residente", false},
      {"residenza", false},
      {"nome", false},
      {"cognome", false},
      {"firma", false},
      {"consegnare al proprio pediatra", false},
      {"l'orario di alcune prestazioni", false},
      {"verbale di pronto soccorso", false},
      {"della cartella", true},
      {"modulo di", false},
      {"numero di certificato", false},
      {"firmatario", false},
      {"il referto e' conservato", false},
      {"id documento", false},
      {"gentile signore", false},
      {"informazione", false},
      {"dettagli paziente", false},
      {"verbale n", false},
      {"priorita", true},
      {"tel", false},
      {"fax", false},
      {"domicilio", false},
      {"segreteria", false},
      {"data e ora", false},
  };
  return markers;
}

namespace detail {

inline bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline std::string_view trim_left(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

inline std::string_view trim_view(std::string_view s) {
  s = trim_left(s);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline bool marker_matches(const std::string& line_lc, const std::string& prefix) {
  if (line_lc.size() < prefix.size()) return false;
  if (line_lc.compare(0, prefix.size(), prefix) != 0) return false;
  // Word boundary after markers ending in a letter: "cap" must not hit "capo".
  char last = prefix.back();
  if (last >= 'a' && last <= 'z' && line_lc.size() > prefix.size() &&
      is_word_byte(static_cast<unsigned char>(line_lc[prefix.size()])))
    return false;
  return true;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace detail

struct StripResult {
  std::vector<std::string> kept;
  std::vector<std::string> removed;

  std::string text() const {
    std::string out;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (i) out.push_back('\n');
      out += kept[i];
    }
    return out;
  }
};

/// Removes header/footer lines whose leading text matches a marker.
/// start_only markers stop applying once a non-blank content line has been
/// kept; blank lines pass through without ending the start region.
inline StripResult strip_boilerplate_lines(
    std::string_view text,
    const std::vector<BoilerplateMarker>& markers = default_boilerplate_markers()) {
  StripResult result;
  bool at_start = true;
  for (std::string_view line : detail::split_lines(text)) {
    std::string lc = detail::ascii_lower(detail::trim_view(line));
    bool matched = false;
    if (!lc.empty()) {
      for (const auto& m : markers) {
        if (m.start_only && !at_start) continue;
        if (detail::marker_matches(lc, m.prefix)) {
          matched = true;
          break;
        }
      }
    }
    if (matched) {
      result.removed.emplace_back(line);
    } else {
      result.kept.emplace_back(line);
      if (!lc.empty()) at_start = false;
    }
  }
  return result;
}

inline std::string strip_boilerplate(
    std::string_view text,
    const std::vector<BoilerplateMarker>& markers = default_boilerplate_markers()) {
  return strip_boilerplate_lines(text, markers).text();
}

// ---------------------------------------------------------------------------
// Pediatric detection
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& default_pediatric_keywords() {
  static const std::vector<std::string> kw = {"pediatria", "pediatrico",
                                              "pediatrica"};
  return kw;
}

/// True iff a pediatric keyword occurs (case-insensitive, whole word) in the
/// header region: the boilerplate lines plus the first 10 kept lines.
inline bool detect_pediatric(
    std::string_view text,
    const std::vector<std::string>& keywords = default_pediatric_keywords()) {
  StripResult stripped = strip_boilerplate_lines(text);
  std::string region;
  for (const auto& line : stripped.removed) {
    region += line;
    region.push_back('\n');
  }
  std::size_t head = std::min<std::size_t>(10, stripped.kept.size());
  for (std::size_t i = 0; i < head; ++i) {
    region += stripped.kept[i];
    region.push_back('\n');
  }
  TokenList tokens = normalize_tokens(region);
  for (const auto& kw : keywords) {
    TokenList kw_tokens = normalize_tokens(kw);
    if (kw_tokens.size() != 1) continue;
    if (std::find(tokens.begin(), tokens.end(), kw_tokens[0]) != tokens.end())
      return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Corpus data model
// ---------------------------------------------------------------------------

struct Letter {
  std::string id;
  std::string hospital_id = "UNKNOWN";
  std::string lhu_id = "UNKNOWN";
  std::string date;  // ISO-8601, YYYY-MM-DD
  std::string text;
  std::optional<bool> gold_label;
  bool is_pediatric = false;  // derived from text, cached

  friend bool operator==(const Letter&, const Letter&) = default;
};

enum class Provenance { ingested, synthetic };

struct Corpus {
  std::vector<Letter> letters;
  Provenance provenance = Provenance::ingested;
  std::optional<std::uint64_t> seed;  // set iff synthetic

  std::size_t size() const { return letters.size(); }

  const Letter* find(const std::string& id) const {
    for (const auto& l : letters)
      if (l.id == id) return &l;
    return nullptr;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// ---------------------------------------------------------------------------
// JSONL ingestion / serialization
// ---------------------------------------------------------------------------

/// Loads a JSONL corpus: one {id, text, ...} object per line. A first-line
/// object without "id" is a comment record; "_synthetic_seed" in it marks a
/// generated corpus. Missing group ids default to "UNKNOWN".
inline Corpus load_corpus(
    const std::string& path,
    const std::vector<std::string>& pediatric_keywords = default_pediatric_keywords()) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file " + path);

  Corpus corpus;
  std::unordered_map<std::string, std::size_t> first_seen;  // id -> line no
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim_view(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": malformed JSON: " + e.what());
    }
    if (!j.is_object())
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": expected a JSON object");
    if (!j.contains("id")) {
      if (line_no == 1) {  // comment record
        if (j.contains("_synthetic_seed")) {
          corpus.provenance = Provenance::synthetic;
          corpus.seed = j.at("_synthetic_seed").get<std::uint64_t>();
        }
        continue;
      }
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": missing field id");
    }
    Letter letter;
    letter.id = j.at("id").get<std::string>();
    if (auto it = first_seen.find(letter.id); it != first_seen.end())
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": duplicate id " + letter.id +
                               " (first seen line " + std::to_string(it->second) +
                               ")");
    first_seen.emplace(letter.id, line_no);
    if (!j.contains("text"))
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": missing field text");
    letter.text = j.at("text").get<std::string>();
    if (letter.text.empty())
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": empty text");
    letter.hospital_id = j.value("hospital_id", std::string("UNKNOWN"));
    letter.lhu_id = j.value("lhu_id", std::string("UNKNOWN"));
    letter.date = j.value("date", std::string());
    if (j.contains("gold_label") && !j.at("gold_label").is_null())
      letter.gold_label = j.at("gold_label").get<bool>();
    letter.is_pediatric = detect_pediatric(letter.text, pediatric_keywords);
    corpus.letters.push_back(std::move(letter));
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file " + path);
  if (corpus.provenance == Provenance::synthetic && corpus.seed) {
    nlohmann::json comment{{"_synthetic_seed", *corpus.seed}};
    out << comment.dump() << '\n';
  }
  for (const auto& l : corpus.letters) {
    nlohmann::json j{{"id", l.id},
                     {"hospital_id", l.hospital_id},
                     {"lhu_id", l.lhu_id},
                     {"date", l.date},
                     {"text", l.text}};
    if (l.gold_label) j["gold_label"] = *l.gold_label;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

inline std::map<std::string, std::vector<std::string>> default_disease_templates() {
  return {
      {"bronchiolite",
       {"bronchiolite lieve",
        "bronchiolite acuta con insufficienza respiratoria",
        "bronchiolite con difficolta di alimentazione",
        "broncospasmo in corso di febbre"}},
      {"trauma cranico",
       {"trauma cranico minore", "trauma cranico non commotivo"}},
      {"gastroenterite",
       {"gastroenterite acuta", "gastroenterite con disidratazione"}},
      {"otite", {"otite media acuta"}},
      {"febbre",
       {"rialzo termico di recente insorgenza",
        "iperpiressia isolata in benessere"}},
      {"virosi", {"virosi delle alte vie aeree"}},
      {"dolore addominale", {"dolore addominale diffuso"}},
      {"ferita", {"ferita lacero contusa della mano destra"}},
      {"pronazione", {"pronazione dolorosa"}},
  };
}

struct SynthesisConfig {
  std::size_t n_letters = 2000;
  double target_prevalence = 0.03;
  std::size_t n_hospitals = 6;
  std::size_t n_lhus = 3;
  double pediatric_fraction = 0.30;
  double diagnosis_section_rate = 0.89;  // share of letters with a Diagnosi section
  double noise_rate = 0.10;
  std::string target_disease = "bronchiolite";
  std::map<std::string, std::vector<std::string>> disease_templates =
      default_disease_templates();

  void validate() const {
    if (n_letters < 1) throw std::invalid_argument("n_letters must be positive");
    if (!(target_prevalence > 0.0 && target_prevalence < 1.0))
      throw std::invalid_argument("target_prevalence must be in (0,1)");
    if (target_prevalence * static_cast<double>(n_letters) < 1.0)
      throw std::invalid_argument("target_prevalence * n_letters must be >= 1");
    if (n_hospitals < 1 || n_lhus < 1)
      throw std::invalid_argument("n_hospitals and n_lhus must be positive");
    if (pediatric_fraction < 0.0 || pediatric_fraction > 1.0)
      throw std::invalid_argument("pediatric_fraction must be in [0,1]");
    if (!(diagnosis_section_rate > 0.0 && diagnosis_section_rate <= 1.0))
      throw std::invalid_argument("diagnosis_section_rate must be in (0,1]");
    if (noise_rate < 0.0 || noise_rate > 1.0)
      throw std::invalid_argument("noise_rate must be in [0,1]");
    auto it = disease_templates.find(target_disease);
    if (it == disease_templates.end() || it->second.empty())
      throw std::invalid_argument("disease_templates must contain templates for " +
                                  target_disease);
    if (disease_templates.size() < 2)
      throw std::invalid_argument(
          "disease_templates needs at least one non-target disease");
    for (const auto& [name, phrases] : disease_templates)
      if (phrases.empty())
        throw std::invalid_argument("disease " + name + " has no templates");
  }
};

namespace detail {

inline std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(x + 0.5);
}

inline std::vector<bool> planted_flags(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<bool> flags(n, false);
  for (std::size_t i = 0; i < std::min(count, n); ++i) flags[i] = true;
  rng.shuffle(flags);
  return flags;
}

// Decorations stay short so the disease words keep dominating the strings;
// long filler words would drown the n-gram signal the clustering relies on.
inline const std::vector<std::string>& synth_common_prefixes() {
  static const std::vector<std::string> v = {"", "", "",
                                             "quadro di ", "esiti di ", "noto "};
  return v;
}

inline const std::vector<std::string>& synth_common_suffixes() {
  static const std::vector<std::string> v = {"",         "",        " in atto",
                                             " da ieri", " di ndd", " da ore"};
  return v;
}

// Course text shared by every planted positive, regardless of which
// diagnosis template it carries.
inline const std::vector<std::string>& synth_positive_course() {
  static const std::vector<std::string> v = {
      "Lattante con tosse insistente e rinite da alcuni giorni.",
      "Al torace rantoli fini diffusi con distress respiratorio.",
      "Saturazione ai limiti inferiori in aria ambiente.",
      "Eseguita terapia aerosolica con broncovaleas con discreta risposta.",
      "Necessaria ossigenoterapia a basso flusso per alcune ore.",
      "Tampone nasofaringeo positivo per virus respiratorio sinciziale.",
      "Monitoraggio cardiorespiratorio continuo durante la degenza.",
  };
  return v;
}

// Flavor lines per target template family, so excluding one cluster of weak
// labels removes a recognizably distinct slice of training text.
inline const std::vector<std::vector<std::string>>& synth_positive_flavors() {
  static const std::vector<std::vector<std::string>> v = {
      {"Quadro respiratorio di grado lieve in miglioramento.",
       "Buona risposta alla detersione nasale.",
       "Lattante di pochi mesi in buone condizioni generali."},
      {"Episodi di desaturazione con necessita di supporto.",
       "Rientramenti intercostali e alitamento delle pinne nasali.",
       "Emogasanalisi con iniziale acidosi respiratoria."},
      {"Pasti ridotti con calo ponderale riferito.",
       "Idratazione endovenosa di supporto durante la degenza.",
       "Ripresa graduale della alimentazione per bocca."},
      {"Febbre elevata con sibili espiratori diffusi.",
       "Broncospasmo responsivo alla terapia inalatoria.",
       "Puntate febbrili ricorrenti nelle prime ore."},
  };
  return v;
}

// Mild respiratory lines for virosi/febbre distractors; these letters also
// borrow an occasional positive-course line so the classes overlap.
inline const std::vector<std::string>& synth_mild_respiratory_course() {
  static const std::vector<std::string> v = {
      "Rinite sierosa con faringe iperemico.",
      "Tosse lieve senza segni di impegno delle basse vie.",
      "Febbre responsiva agli antipiretici.",
      "Buone condizioni di idratazione e di perfusione.",
      "Obiettivita toracica nella norma alla dimissione.",
  };
  return v;
}

inline const std::vector<std::string>& synth_generic_course() {
  static const std::vector<std::string> v = {
      "Parametri vitali stabili durante tutta la degenza.",
      "Esame obiettivo generale nella norma per eta.",
      "Si dimette in buone condizioni generali.",
      "I genitori sono stati informati del decorso clinico.",
  };
  return v;
}

inline const std::map<std::string, std::vector<std::string>>&
synth_distractor_course() {
  static const std::map<std::string, std::vector<std::string>> m = {
      {"trauma cranico",
       {"Riscontro di tumefazione del cuoio capelluto senza segni di lato.",
        "Esame neurologico nella norma senza perdita di coscienza.",
        "Osservazione breve intensiva con parametri stabili.",
        "Nessun episodio di vomito durante la permanenza."}},
      {"gastroenterite",
       {"Alvo diarroico con scariche liquide da alcuni giorni.",
        "Buone condizioni di idratazione dopo reidratazione orale.",
        "Addome trattabile non dolente alla palpazione.",
        "Assenza di sangue nelle feci riferita dai genitori."}},
      {"otite",
       {"Membrana timpanica iperemica e estroflessa a destra.",
        "Otalgia intensa con febbre da due giorni.",
        "Avviata terapia antibiotica per via orale.",
        "Faringe lievemente iperemico senza essudato."}},
      {"dolore addominale",
       {"Dolore addominale diffuso senza segni di peritonismo.",
        "Ecografia addominale nella norma.",
        "Alvo e diuresi regolari riferiti dai genitori.",
        "Rivalutazione chirurgica non necessaria."}},
      {"ferita",
       {"Ferita suturata con punti riassorbibili.",
        "Profilassi antitetanica verificata in corso di validita.",
        "Medicazione compressiva ben tollerata.",
        "Indicazioni per la gestione domiciliare della ferita."}},
      {"pronazione",
       {"Riduzione della pronazione con manovra di supinazione.",
        "Ripresa completa della motilita del braccio.",
        "Nessun segno di frattura alla valutazione clinica.",
        "Bambino tranquillo alla dimissione."}},
  };
  return m;
}

inline std::string synth_diagnosis_phrase(const std::string& base, Rng& rng) {
  const auto& prefixes = synth_common_prefixes();
  const auto& suffixes = synth_common_suffixes();
  std::string phrase = prefixes[rng.next_below(prefixes.size())] + base +
                       suffixes[rng.next_below(suffixes.size())];
  return phrase;
}

inline std::string synth_apply_noise(std::string phrase, Rng& rng) {
  double r = rng.next_double();
  if (r < 0.35) {
    std::string code = std::to_string(100 + rng.next_below(900)) + "." +
                       std::to_string(rng.next_below(100));
    phrase = code + " " + phrase;
  } else if (r < 0.60) {
    static const std::vector<std::string> advice = {
        "terapia aerosolica al bisogno", "antipiretico secondo necessita",
        "controlli seriati della temperatura"};
    phrase += "; a domicilio " + advice[rng.next_below(advice.size())];
  } else if (r < 0.80) {
    static const std::vector<std::string> follow = {"dal curante a breve",
                                                    "clinico tra una settimana"};
    phrase += ". controllo " + follow[rng.next_below(follow.size())];
  } else if (r < 0.90) {
    static const std::vector<std::string> extra = {"febbre", "vomito", "tosse",
                                                   "irritabilita"};
    phrase += " con " + extra[rng.next_below(extra.size())];
  } else {
    phrase += " paziente: ( id: " + std::to_string(1000 + rng.next_below(9000)) +
              " )";
  }
  return phrase;
}

inline std::string synth_to_upper(std::string s) {
  for (char& c : s)
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  return s;
}

}  // namespace detail

/// Deterministic synthetic discharge-letter corpus. Gold labels mark exactly
/// the letters planted with the target disease; the planted positive count is
/// target_prevalence * n_letters rounded half up.
inline Corpus generate_synthetic(const SynthesisConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "synth"));
  const std::size_t n = cfg.n_letters;

  const std::size_t n_pos = detail::round_half_up(cfg.target_prevalence * n);
  const std::size_t n_sect = detail::round_half_up(cfg.diagnosis_section_rate * n);
  const std::size_t n_ped = detail::round_half_up(cfg.pediatric_fraction * n);
  const std::size_t n_noise = detail::round_half_up(cfg.noise_rate * n);

  std::vector<bool> positive = detail::planted_flags(n, n_pos, rng);
  std::vector<bool> has_section = detail::planted_flags(n, n_sect, rng);
  std::vector<bool> pediatric = detail::planted_flags(n, n_ped, rng);
  std::vector<bool> noisy = detail::planted_flags(n, n_noise, rng);

  const auto& target_templates = cfg.disease_templates.at(cfg.target_disease);
  // (disease, template) pairs for distractor draws.
  std::vector<std::pair<std::string, std::string>> distractors;
  for (const auto& [disease, phrases] : cfg.disease_templates) {
    if (disease == cfg.target_disease) continue;
    for (const auto& p : phrases) distractors.emplace_back(disease, p);
  }

  // Skewed hospital sizes: a few hospitals cover most records.
  std::vector<double> hosp_cdf(cfg.n_hospitals);
  {
    double total = 0.0;
    for (std::size_t h = 0; h < cfg.n_hospitals; ++h)
      total += 1.0 / static_cast<double>(h + 1);
    double acc = 0.0;
    for (std::size_t h = 0; h < cfg.n_hospitals; ++h) {
      acc += 1.0 / static_cast<double>(h + 1) / total;
      hosp_cdf[h] = acc;
    }
    hosp_cdf.back() = 1.0;
  }
  static const std::vector<std::string> cities = {
      "Padova",  "Verona",  "Treviso",    "Vicenza", "Venezia",
      "Rovigo",  "Belluno", "Conegliano", "Mirano",  "Este"};

  Corpus corpus;
  corpus.provenance = Provenance::synthetic;
  corpus.seed = seed;
  corpus.letters.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    Letter letter;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "S%06zu", i + 1);
    letter.id = idbuf;

    double hr = rng.next_double();
    std::size_t hosp = 0;
    while (hosp + 1 < cfg.n_hospitals && hr > hosp_cdf[hosp]) ++hosp;
    letter.hospital_id = "H-" + std::to_string(hosp);
    letter.lhu_id = "LHU-" + std::to_string(hosp % cfg.n_lhus);

    int year = 2017 + static_cast<int>(rng.next_below(4));
    int month = 1 + static_cast<int>(rng.next_below(12));
    int day = 1 + static_cast<int>(rng.next_below(28));
    char datebuf[16];
    std::snprintf(datebuf, sizeof(datebuf), "%04d-%02d-%02d", year, month, day);
    letter.date = datebuf;

    // Diagnosis phrase and course pool for this letter.
    std::string disease;
    std::string base;
    std::size_t family = 0;
    if (positive[i]) {
      disease = cfg.target_disease;
      // The first template dominates so that one cluster carries most of the
      // planted cases, mirroring the skewed cluster sizes seen in practice;
      // the last template gets a slightly larger slice than the middle ones
      // so its strings reach clusterable density on their own.
      if (target_templates.size() > 1) {
        double r = rng.next_double();
        if (r >= 0.80)
          family = target_templates.size() - 1;
        else if (r >= 0.50)
          family = 1 + static_cast<std::size_t>((r - 0.50) / 0.30 *
                                                static_cast<double>(
                                                    target_templates.size() - 2));
      }
      if (family >= target_templates.size()) family = target_templates.size() - 1;
      base = target_templates[family];
    } else {
      const auto& pick = distractors[rng.next_below(distractors.size())];
      disease = pick.first;
      base = pick.second;
    }
    std::string phrase = detail::synth_diagnosis_phrase(base, rng);
    if (noisy[i] && has_section[i])
      phrase = detail::synth_apply_noise(std::move(phrase), rng);

    // --- header ---
    std::string text;
    text += "SERVIZIO SANITARIO NAZIONALE - REGIONE VENETO\n";
    text += "Azienda ULSS n. " + std::to_string(hosp % cfg.n_lhus + 1) + "\n";
    text += "Presidio Ospedaliero di " + cities[hosp % cities.size()] + "\n";
    text += pediatric[i] ? "Unita' Operativa di Pediatria Degenze\n"
                         : "Unita' Operativa di Medicina Generale\n";
    text += "Data: " + letter.date + "\n";
    text += "Egregio Collega,\n";
    text += "si dimette in data odierna il piccolo paziente nato il " +
            std::to_string(2010 + rng.next_below(10)) + "\n";

    // --- diagnosis section ---
    if (has_section[i]) {
      double kr = rng.next_double();
      std::string keyword = kr < 0.50   ? "Diagnosi"
                            : kr < 0.70 ? "Diagnosi di dimissione"
                            : kr < 0.85 ? "Diagnosi alla dimissione"
                                        : "Diagnosi testuale";
      bool same_line = rng.next_double() < 0.5;
      bool upper = rng.next_double() < 0.3;
      std::string shown = upper ? detail::synth_to_upper(phrase) : phrase;
      if (same_line) {
        text += keyword + ": " + shown + "\n";
      } else {
        text += keyword + ":\n";
        text += " " + shown + "\n";
      }
    }

    // --- clinical course ---
    text += "Decorso Clinico e Conclusioni:\n";
    auto sample_lines = [&](const std::vector<std::string>& pool,
                            std::size_t count) {
      std::vector<std::size_t> order(pool.size());
      for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
      rng.shuffle(order);
      for (std::size_t j = 0; j < std::min(count, order.size()); ++j)
        text += pool[order[j]] + "\n";
    };
    const bool mild_respiratory = disease == "virosi" || disease == "febbre";
    if (positive[i]) {
      sample_lines(detail::synth_positive_course(), 1);
      const auto& flavors = detail::synth_positive_flavors();
      sample_lines(flavors[family % flavors.size()], 3);
      if (rng.next_double() < 0.45)
        text += "Quadro clinico compatibile con bronchiolite del lattante.\n";
    } else if (mild_respiratory) {
      const auto& flavors = detail::synth_positive_flavors();
      if (rng.next_double() < 0.04) {
        // A few admissions read exactly like the target disease even though
        // the reviewed diagnosis is something else; they cap what any text
        // classifier can reach.
        sample_lines(detail::synth_positive_course(), 1);
        sample_lines(flavors[rng.next_below(flavors.size())], 3);
      } else {
        sample_lines(detail::synth_mild_respiratory_course(), 2);
        if (rng.next_double() < 0.40)
          sample_lines(detail::synth_positive_course(), 1);
        if (rng.next_double() < 0.25)
          sample_lines(flavors[rng.next_below(flavors.size())], 1);
      }
      if (rng.next_double() < 0.05)
        text += "Escluso il quadro di bronchiolite alla valutazione clinica.\n";
    } else {
      const auto& courses = detail::synth_distractor_course();
      auto it = courses.find(disease);
      sample_lines(it != courses.end() ? it->second
                                       : detail::synth_generic_course(),
                   3);
      if (rng.next_double() < 0.01)
        text += "Riferito contatto con fratello affetto da bronchiolite.\n";
    }
    const auto& generic = detail::synth_generic_course();
    text += generic[rng.next_below(generic.size())] + "\n";

    // --- discharge advice ---
    text += "Programma alla dimissione:\n";
    text += rng.next_double() < 0.5
                ? "A domicilio si consiglia aerosol con soluzione fisiologica piu volte al giorno.\n"
                : "A domicilio si consiglia osservazione e terapia sintomatica al bisogno.\n";
    text += "Si consiglia rivalutazione presso il curante nei prossimi giorni.\n";
    text += "Cordiali saluti\n";

    // --- footer ---
    text += "INFORMAZIONE\n";
    text += "Gentile signore/ signora, desideriamo renderla partecipe che per il percorso di cura\n";
    text += "Paziente: ( ID: " + std::to_string(100000 + rng.next_below(900000)) +
            " )\n";
    text += "pag. 1 di 1\n";

    letter.text = std::move(text);
    letter.gold_label = positive[i];
    letter.is_pediatric = detect_pediatric(letter.text);
    corpus.letters.push_back(std::move(letter));
  }
  return corpus;
}

}  // namespace weakdx
