#pragma once

// Word-level tokenization: lowercase, strip punctuation, split on whitespace.
// A Vocabulary is a frozen bijection between tokens and dense ids with five
// reserved ids in front; a SegmentedSequence pairs ids with the segment each
// position belongs to (post, prompt, explanation, special glue).

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtd/error.hpp"

namespace mtd {

// Generation is conditioned on this fixed instruction; override only via
// explicit argument.
inline constexpr const char* kDefaultPrompt =
    "Explain why this post might indicate depression based on medical "
    "knowledge:";

constexpr int kPadId = 0;
constexpr int kUnkId = 1;
constexpr int kBosId = 2;
constexpr int kEosId = 3;
constexpr int kSepId = 4;
constexpr int kReservedTokens = 5;

enum class Segment { Post, Prompt, Explanation, Special };

inline const char* segment_name(Segment s) {
  switch (s) {
    case Segment::Post: return "POST";
    case Segment::Prompt: return "PROMPT";
    case Segment::Explanation: return "EXPLANATION";
    case Segment::Special: return "SPECIAL";
  }
  return "?";
}

// Lowercases ASCII letters, drops ASCII punctuation, keeps digits and bytes
// >= 0x80, and splits on whitespace.
inline std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      if (!current.empty()) {
        words.push_back(current);
        current.clear();
      }
    } else if (ch < 0x80 && std::ispunct(ch)) {
      // dropped
    } else {
      current.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  if (!current.empty()) words.push_back(current);
  return words;
}

inline std::string normalize_text(const std::string& text) {
  const auto words = tokenize_words(text);
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

class Vocabulary {
 public:
  Vocabulary() {
    for (const char* name : {"<pad>", "<unk>", "<bos>", "<eos>", "<sep>"})
      push_token(name);
  }

  // Builds from a corpus: every token with frequency >= min_freq survives,
  // ordered by frequency descending then lexicographically.
  static Vocabulary build(const std::vector<std::string>& corpus,
                          std::size_t min_freq) {
    if (min_freq < 1)
      throw ConfigError("build_vocab: min_freq must be at least 1");
    if (corpus.empty())
      throw EmptyCorpusError("build_vocab: corpus is empty");
    std::map<std::string, std::size_t> freq;
    for (const std::string& text : corpus)
      for (const std::string& word : tokenize_words(text)) ++freq[word];
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [word, count] : freq)
      if (count >= min_freq) kept.emplace_back(word, count);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [word, count] : kept) v.push_token(word);
    return v;
  }

  std::size_t size() const { return id_to_token_.size(); }

  int id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
  }

  const std::string& token_of(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
      throw SchemaError("Vocabulary: id " + std::to_string(id) +
                        " out of range (V=" + std::to_string(size()) + ")");
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const std::string& word : tokenize_words(text))
      ids.push_back(id_of(word));
    return ids;
  }

  // Joins tokens with single spaces; reserved ids are rendered by name.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out.push_back(' ');
      out += token_of(ids[i]);
    }
    return out;
  }

  // One non-reserved token per line; line number = id - kReservedTokens.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    for (std::size_t i = kReservedTokens; i < id_to_token_.size(); ++i)
      out << id_to_token_[i] << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty())
        throw ParseError("vocabulary file " + path + ": empty token on line " +
                         std::to_string(line_no));
      if (v.contains(line))
        throw ParseError("vocabulary file " + path + ": duplicate token '" +
                         line + "' on line " + std::to_string(line_no));
      v.push_token(line);
    }
    return v;
  }

 private:
  void push_token(const std::string& token) {
    token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(token);
  }

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct SegmentedSequence {
  std::vector<int> ids;
  std::vector<Segment> segments;

  std::size_t size() const { return ids.size(); }

  bool has_segment(Segment s) const {
    return std::find(segments.begin(), segments.end(), s) != segments.end();
  }

  std::vector<std::size_t> positions_of(Segment s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < segments.size(); ++i)
      if (segments[i] == s) out.push_back(i);
    return out;
  }

  void push(int id, Segment s) {
    ids.push_back(id);
    segments.push_back(s);
  }
};

// Layout: BOS, post tokens, SEP, prompt tokens, SEP[, explanation tokens, EOS].
// Truncation drops post tokens from the right first, then explanation tokens
// (EOS is kept last); the prompt is never trimmed.
inline SegmentedSequence build_training_sequence(
    const Vocabulary& vocab, const std::string& post,
    const std::optional<std::string>& explanation, std::size_t max_len,
    const std::string& prompt = kDefaultPrompt) {
  if (max_len < 8)
    throw ConfigError("build_training_sequence: max_len must be >= 8");
  const std::vector<int> prompt_ids = vocab.encode(prompt);
  const std::size_t overhead = 3 + prompt_ids.size();  // BOS + 2 SEP + prompt
  if (overhead > max_len)
    throw CapacityError(
        "build_training_sequence: max_len " + std::to_string(max_len) +
        " cannot hold BOS+SEP+prompt (" + std::to_string(overhead) +
        " tokens)");

  std::vector<int> expl_ids;
  if (explanation) {
    expl_ids = vocab.encode(*explanation);
    expl_ids.push_back(kEosId);
  }
  std::size_t expl_take = std::min(expl_ids.size(), max_len - overhead);
  if (explanation && expl_take == 0) expl_ids.clear();
  if (explanation && expl_take > 0 && expl_take < expl_ids.size()) {
    // Trim explanation words from the right but keep EOS terminal.
    expl_ids.resize(expl_take);
    expl_ids.back() = kEosId;
  }

  std::vector<int> post_ids = vocab.encode(post);
  const std::size_t post_budget = max_len - overhead - expl_ids.size();
  if (post_ids.size() > post_budget) post_ids.resize(post_budget);

  SegmentedSequence seq;
  seq.push(kBosId, Segment::Special);
  for (int id : post_ids) seq.push(id, Segment::Post);
  seq.push(kSepId, Segment::Special);
  for (int id : prompt_ids) seq.push(id, Segment::Prompt);
  seq.push(kSepId, Segment::Special);
  for (int id : expl_ids) seq.push(id, Segment::Explanation);
  return seq;
}

}  // namespace mtd
