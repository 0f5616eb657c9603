#pragma once

// Dataset schema and persistence (JSON-Lines), plus a synthetic corpus
// generator shaped like a self-reported-depression post dataset: labeled
// posts where positives carry a templated gold explanation tying symptom
// phrases in the text to symptom names.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtd/error.hpp"
#include "mtd/metrics.hpp"
#include "mtd/rng.hpp"

namespace mtd {

struct PostRecord {
  std::string id;
  std::string text;
  int label = 0;
  std::optional<std::string> explanation;
  std::size_t word_count = 0;  // whitespace token count of text, derived

  static std::size_t count_words(const std::string& text) {
    std::size_t count = 0;
    bool in_word = false;
    for (unsigned char ch : text) {
      const bool space = std::isspace(ch) != 0;
      if (!space && !in_word) ++count;
      in_word = !space;
    }
    return count;
  }

  static PostRecord make(std::string id, std::string text, int label,
                         std::optional<std::string> explanation = {}) {
    require_label(label, "PostRecord");
    PostRecord r;
    r.id = std::move(id);
    r.text = std::move(text);
    r.label = label;
    r.explanation = std::move(explanation);
    r.word_count = count_words(r.text);
    return r;
  }
};

inline LengthBin length_bin(const PostRecord& record) {
  return length_bin(record.word_count);
}

struct LoadResult {
  std::vector<PostRecord> records;
  // One entry per positive record that lacks a gold explanation.
  std::vector<std::string> warnings;
};

inline LoadResult load_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset: " + path);
  LoadResult result;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw ParseError(where + ": record is not an object");
    for (const auto& [key, value] : j.items()) {
      if (key != "id" && key != "text" && key != "label" &&
          key != "explanation")
        throw ParseError(where + ": unknown field '" + key + "'");
    }
    if (!j.contains("id") || !j["id"].is_string() ||
        j["id"].get<std::string>().empty())
      throw ParseError(where + ": missing or invalid 'id'");
    if (!j.contains("text") || !j["text"].is_string())
      throw ParseError(where + ": missing or invalid 'text'");
    if (!j.contains("label") || !j["label"].is_number_integer())
      throw ParseError(where + ": missing or invalid 'label'");
    const int label = j["label"].get<int>();
    if (label != 0 && label != 1)
      throw ParseError(where + ": label must be 0 or 1, got " +
                       std::to_string(label));
    std::optional<std::string> explanation;
    if (j.contains("explanation")) {
      if (!j["explanation"].is_string())
        throw ParseError(where + ": 'explanation' must be a string");
      explanation = j["explanation"].get<std::string>();
    }
    PostRecord record = PostRecord::make(j["id"].get<std::string>(),
                                         j["text"].get<std::string>(), label,
                                         std::move(explanation));
    if (!seen_ids.insert(record.id).second)
      throw SchemaError(where + ": duplicate id '" + record.id + "'");
    if (record.label == 1 && !record.explanation)
      result.warnings.push_back(where + ": positive record '" + record.id +
                                "' has no gold explanation");
    result.records.push_back(std::move(record));
  }
  return result;
}

inline void save_records(const std::vector<PostRecord>& records,
                         const std::string& path) {
  std::set<std::string> seen_ids;
  for (const PostRecord& r : records)
    if (!seen_ids.insert(r.id).second)
      throw SchemaError("save_records: duplicate id '" + r.id + "'");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset: " + path);
  for (const PostRecord& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["text"] = r.text;
    j["label"] = r.label;
    if (r.explanation) j["explanation"] = *r.explanation;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("failed writing dataset: " + path);
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t n_records = 1000;
  double positive_fraction = 0.2;
  // Weights over {short, medium, long} posts; must sum to 1.
  std::array<double, 3> length_mix{0.4, 0.4, 0.2};
  double noise_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_records == 0) throw ConfigError("SyntheticSpec: n_records is zero");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
      throw ConfigError("SyntheticSpec: positive_fraction must be in (0,1)");
    double total = 0.0;
    for (double w : length_mix) {
      if (w < 0.0) throw ConfigError("SyntheticSpec: negative length weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw ConfigError("SyntheticSpec: length_mix must sum to 1");
    if (!(noise_rate >= 0.0 && noise_rate < 1.0))
      throw ConfigError("SyntheticSpec: noise_rate must be in [0,1)");
  }
};

struct SymptomTemplate {
  const char* name;
  std::vector<const char*> phrases;
};

inline const std::vector<SymptomTemplate>& symptom_bank() {
  static const std::vector<SymptomTemplate> bank = {
      {"hopelessness",
       {"feeling so hopeless lately",
        "everything feels pointless these days",
        "i cant see things ever getting better",
        "nothing seems worth trying anymore"}},
      {"loss of interest",
       {"nothing seems to bring me joy anymore",
        "i stopped caring about the hobbies i used to love",
        "even my favorite meals taste like nothing now"}},
      {"fatigue or low energy",
       {"just want to stay in bed all day",
        "getting out of bed takes everything i have",
        "im drained no matter how much i sleep"}},
      {"persistent worry",
       {"constantly worried about everything",
        "cant seem to relax my mind",
        "my thoughts keep racing and i cant switch off"}},
      {"feelings of worthlessness",
       {"i feel like a burden to everyone around me",
        "i keep blaming myself for every little thing"}},
  };
  return bank;
}

inline const std::vector<const char*>& activity_bank() {
  static const std::vector<const char*> bank = {
      "had a great day out with friends",
      "just finished a tough workout feeling exhausted but accomplished",
      "made a delicious pasta dinner tonight",
      "the hiking trail was beautiful this morning",
      "finally fixed my bike after weeks of tinkering",
      "started reading a new novel this weekend",
      "the concert last night was amazing",
      "cleaned the whole apartment and it feels great",
      "planted some tomatoes in the garden today",
      "watched a really fun movie with my family",
  };
  return bank;
}

inline const std::vector<const char*>& filler_bank() {
  static const std::vector<const char*> bank = {
      "the weather has been changing a lot this week",
      "i took the usual route into town again",
      "the neighbors are repainting their fence",
      "there was a lot of traffic near the market",
      "my phone battery keeps running low these days",
      "the coffee shop on the corner was crowded",
      "someone left a package at the front door",
      "the bus arrived a few minutes late today",
      "i still need to sort out the laundry at some point",
      "the news keeps repeating the same stories",
      "my cousin called about plans for next month",
      "the printer at the office jammed twice",
  };
  return bank;
}

// Fixed fallback for positives whose indicative phrases were stripped; it
// quotes no phrase, so the substring property over explanations stays valid.
inline constexpr const char* kNoisedExplanation =
    "the post reads as flat and withdrawn overall, which is indicative of a "
    "persistently low mood";

namespace detail {

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string word;
  for (char ch : text) {
    if (ch == ' ') {
      if (!word.empty()) words.push_back(word);
      word.clear();
    } else {
      word.push_back(ch);
    }
  }
  if (!word.empty()) words.push_back(word);
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

inline void append_filler(std::vector<std::string>& words,
                          std::size_t target_words, Rng& rng) {
  const auto& fillers = filler_bank();
  std::size_t cursor = static_cast<std::size_t>(rng.below(fillers.size()));
  while (words.size() < target_words) {
    for (const std::string& w :
         split_words(fillers[cursor % fillers.size()]))
      words.push_back(w);
    ++cursor;
  }
  words.resize(target_words);
}

}  // namespace detail

inline std::vector<PostRecord> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x5e1fc0de));
  const std::size_t n = spec.n_records;
  const std::size_t n_pos = static_cast<std::size_t>(
      std::llround(spec.positive_fraction * static_cast<double>(n)));

  // Exact-count noise assignment over a seeded permutation of all records.
  const std::size_t n_noised = static_cast<std::size_t>(
      std::llround(spec.noise_rate * static_cast<double>(n)));
  std::vector<std::size_t> noise_order(n);
  for (std::size_t i = 0; i < n; ++i) noise_order[i] = i;
  rng.shuffle(noise_order);
  std::vector<bool> noised(n, false);
  for (std::size_t i = 0; i < n_noised; ++i) noised[noise_order[i]] = true;

  std::vector<PostRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < n_pos ? 1 : 0;

    // Target length from the requested bin mix.
    const double draw = rng.uniform01();
    std::size_t target;
    if (draw < spec.length_mix[0]) {
      target = 10 + static_cast<std::size_t>(rng.below(40));  // 10..49
    } else if (draw < spec.length_mix[0] + spec.length_mix[1]) {
      target = 50 + static_cast<std::size_t>(rng.below(101));  // 50..150
    } else {
      target = 151 + static_cast<std::size_t>(rng.below(100));  // 151..250
    }

    std::vector<std::string> words;
    std::optional<std::string> explanation;

    if (noised[i]) {
      // Indicative phrases stripped: filler only.
      detail::append_filler(words, target, rng);
      if (label == 1) explanation = kNoisedExplanation;
    } else if (label == 1) {
      const auto& bank = symptom_bank();
      const std::size_t wanted = 1 + static_cast<std::size_t>(rng.below(2));
      std::vector<std::size_t> symptom_ids;
      while (symptom_ids.size() < wanted) {
        const std::size_t s = static_cast<std::size_t>(rng.below(bank.size()));
        if (std::find(symptom_ids.begin(), symptom_ids.end(), s) ==
            symptom_ids.end())
          symptom_ids.push_back(s);
      }
      std::string expl;
      for (std::size_t s : symptom_ids) {
        const auto& symptom = bank[s];
        const std::string phrase =
            symptom.phrases[rng.below(symptom.phrases.size())];
        const auto phrase_words = detail::split_words(phrase);
        if (words.size() + phrase_words.size() > target) continue;
        for (const std::string& w : phrase_words) words.push_back(w);
        if (!expl.empty()) expl.push_back(' ');
        expl += "the post expresses " + phrase + ", which is indicative of " +
                symptom.name + ".";
      }
      if (expl.empty()) {
        // Target too small for the drawn phrases; fall back to the shortest
        // phrase of the first drawn symptom.
        const auto& symptom = bank[symptom_ids.front()];
        const char* phrase = symptom.phrases.front();
        for (const char* p : symptom.phrases)
          if (detail::split_words(p).size() <
              detail::split_words(phrase).size())
            phrase = p;
        for (const std::string& w : detail::split_words(phrase))
          words.push_back(w);
        expl = std::string("the post expresses ") + phrase +
               ", which is indicative of " + symptom.name + ".";
      }
      detail::append_filler(words, target, rng);
      explanation = expl;
    } else {
      const auto& bank = activity_bank();
      const std::size_t wanted = 1 + static_cast<std::size_t>(rng.below(2));
      for (std::size_t a = 0; a < wanted; ++a) {
        const auto phrase_words =
            detail::split_words(bank[rng.below(bank.size())]);
        if (words.size() + phrase_words.size() > target) break;
        for (const std::string& w : phrase_words) words.push_back(w);
      }
      detail::append_filler(words, target, rng);
    }

    PostRecord r;
    r.text = detail::join_words(words);
    r.label = label;
    r.explanation = std::move(explanation);
    records.push_back(std::move(r));
  }

  rng.shuffle(records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth-%06zu", i + 1);
    records[i].id = buf;
    records[i].word_count = PostRecord::count_words(records[i].text);
  }
  return records;
}

}  // namespace mtd
