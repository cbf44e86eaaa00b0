#pragma once

#include <map>
#include <string>
#include <vector>

namespace battta::clip {

inline constexpr const char* kClassPlaceholder = "<CLS>";

// A text template with a single <CLS> slot and the ordered class names.
struct PromptTemplate {
  std::string template_text;
  std::vector<std::string> class_names;

  // Throws ConfigError unless the placeholder occurs exactly once and C >= 2.
  void validate() const;
  std::size_t num_classes() const { return class_names.size(); }
  std::string render(std::size_t class_index) const;
};

// Lowercase word-level split. Runs of letters, digits, '-' and '_' form
// words; whitespace separates; every other character is its own token.
std::vector<std::string> split_words(const std::string& text);

// Closed word-level vocabulary. Ids 0 and 1 are reserved for <pad> and <unk>;
// <unk> is never emitted because unknown words are rejected.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary();
  // Words in first-appearance order over the templates (placeholder removed)
  // followed by the class names.
  static Vocabulary build(const std::vector<std::string>& templates, const std::vector<std::string>& class_names);
  static Vocabulary from_words(const std::vector<std::string>& words);

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  bool contains(const std::string& word) const { return index_.contains(word); }
  // Throws TokenizerError for a word outside the vocabulary.
  int id(const std::string& word) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

// Token ids for prompt `class_index`, padded with kPad or truncated to
// `max_len`. Unknown words raise TokenizerError naming the class.
std::vector<int> tokenize(const PromptTemplate& prompt, std::size_t class_index, const Vocabulary& vocab,
                          std::size_t max_len);

}  // namespace battta::clip
