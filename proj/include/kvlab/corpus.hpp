#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace kvlab {

// Reserved token ids, fixed across the whole lab.
constexpr int kEosId = 0;
constexpr int kUnkId = 1;

// A synthetic topic: named word slots plus sentence templates that reference
// them as {slot}. Content words are the union of all slot words; everything
// else in a template is shared scaffolding.
struct TopicSpec {
  std::string name;
  std::map<std::string, std::vector<std::string>> slots;
  std::vector<std::string> templates;
  uint64_t seed = 0;

  std::vector<std::string> content_words() const;  // sorted, unique
  void validate() const;
};

// Built-in topic pair: the default experiment swaps a coffee conversation
// toward stellar evolution.
TopicSpec espresso_topic();
TopicSpec stellar_topic();

// One sentence per element, deterministic in spec.seed.
std::vector<std::string> generate_corpus(const TopicSpec& spec, int n_sentences);

struct Vocab {
  std::vector<std::string> id_to_word;  // [0]=EOS, [1]=UNK
  std::unordered_map<std::string, int> word_to_id;

  int size() const { return static_cast<int>(id_to_word.size()); }
  int id_of(const std::string& w) const;  // kUnkId when absent
};

// Stable: words are sorted, so identical corpora give identical maps.
Vocab build_vocab(const std::vector<std::vector<std::string>>& corpora);

std::vector<int> tokenize(const std::string& text, const Vocab& vocab);
// Whole corpus: every sentence (line) terminates with EOS.
std::vector<int> tokenize_corpus(const std::vector<std::string>& lines, const Vocab& vocab);
std::string detokenize(const std::vector<int>& ids, const Vocab& vocab);

double content_word_overlap(const TopicSpec& a, const TopicSpec& b);

// TopicSpec JSON round-trip.
void save_topic_spec(const std::filesystem::path& path, const TopicSpec& spec);
TopicSpec load_topic_spec(const std::filesystem::path& path);

}  // namespace kvlab
