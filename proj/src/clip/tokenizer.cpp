#include "battta/tokenizer.hpp"

#include <cctype>

#include "battta/errors.hpp"

namespace battta::clip {

void PromptTemplate::validate() const {
  const std::string ph = kClassPlaceholder;
  const auto first = template_text.find(ph);
  if (first == std::string::npos || template_text.find(ph, first + ph.size()) != std::string::npos) {
    throw ConfigError("prompt template must contain exactly one " + ph + ": \"" + template_text + "\"");
  }
  if (class_names.size() < 2) throw ConfigError("prompt needs at least 2 classes");
}

std::string PromptTemplate::render(std::size_t class_index) const {
  if (class_index >= class_names.size()) {
    throw DimensionError("class index " + std::to_string(class_index) + " >= " +
                         std::to_string(class_names.size()));
  }
  std::string out = template_text;
  out.replace(out.find(kClassPlaceholder), std::string(kClassPlaceholder).size(), class_names[class_index]);
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isalnum(ch) || ch == '-' || ch == '_') {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (std::isspace(ch)) {
      flush();
    } else {
      flush();
      words.emplace_back(1, raw);
    }
  }
  flush();
  return words;
}

Vocabulary::Vocabulary() : words_{"<pad>", "<unk>"} {
  index_["<pad>"] = kPad;
  index_["<unk>"] = kUnk;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& templates,
                             const std::vector<std::string>& class_names) {
  std::vector<std::string> words;
  for (const auto& t : templates) {
    std::string stripped = t;
    for (auto pos = stripped.find(kClassPlaceholder); pos != std::string::npos;
         pos = stripped.find(kClassPlaceholder)) {
      stripped.replace(pos, std::string(kClassPlaceholder).size(), " ");
    }
    for (auto& w : split_words(stripped)) words.push_back(std::move(w));
  }
  for (const auto& name : class_names)
    for (auto& w : split_words(name)) words.push_back(std::move(w));
  return from_words(words);
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words) {
    if (v.index_.contains(w)) continue;
    v.index_[w] = static_cast<int>(v.words_.size());
    v.words_.push_back(w);
  }
  return v;
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw TokenizerError("word '" + word + "' is not in the vocabulary");
  return it->second;
}

std::vector<int> tokenize(const PromptTemplate& prompt, std::size_t class_index, const Vocabulary& vocab,
                          std::size_t max_len) {
  std::vector<int> ids;
  for (const auto& w : split_words(prompt.render(class_index))) {
    if (!vocab.contains(w)) {
      throw TokenizerError("class '" + prompt.class_names[class_index] + "': word '" + w +
                           "' is not in the vocabulary");
    }
    ids.push_back(vocab.id(w));
  }
  ids.resize(max_len, Vocabulary::kPad);
  return ids;
}

}  // namespace battta::clip
