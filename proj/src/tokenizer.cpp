#include "vlaforge/tokenizer.hpp"

#include "vlaforge/errors.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace vlaforge::backbone {
namespace {

// Reserved markers first (ids 0..4), then the prompt vocabulary.
const std::vector<std::string>& base_words() {
  static const std::vector<std::string> words = {
      "<pad>", "<unk>", "<sot>", "<eot>", "<id>",
      "this",  "is",    "a",     "an",    "the",   "real",     "fake",   "photo",  "picture",
      "image", "of",    "person", "face", "man",   "woman",    ".",      ",",      "authentic",
      "forged", "manipulated", "genuine", "deepfake", "pristine", "synthetic", "video", "frame"};
  return words;
}

}  // namespace

Tokenizer::Tokenizer(int64_t vocab_size) : vocab_size_(vocab_size), words_(base_words()) {
  if (vocab_size_ < static_cast<int64_t>(words_.size())) {
    throw ValidationError("text_vocab must be at least " + std::to_string(words_.size()));
  }
  for (size_t i = 0; i < words_.size(); ++i) {
    index_.emplace(words_[i], static_cast<int64_t>(i));
  }
}

int64_t Tokenizer::lookup(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int64_t> Tokenizer::encode(std::string_view text) const {
  std::vector<int64_t> ids{kStart};
  std::istringstream stream{std::string(text)};
  std::string word;
  while (stream >> word) {
    std::vector<std::string> trailing;
    while (!word.empty() && (word.back() == '.' || word.back() == ',')) {
      trailing.insert(trailing.begin(), std::string(1, word.back()));
      word.pop_back();
    }
    if (!word.empty()) {
      if (word.front() != '<') {
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      }
      ids.push_back(lookup(word));
    }
    for (const auto& t : trailing) {
      ids.push_back(lookup(t));
    }
  }
  ids.push_back(kEnd);
  return ids;
}

std::string Tokenizer::decode(const std::vector<int64_t>& ids) const {
  std::string out;
  for (auto id : ids) {
    if (!out.empty()) {
      out += ' ';
    }
    out += (id >= 0 && id < static_cast<int64_t>(words_.size())) ? words_[id] : "<unk>";
  }
  return out;
}

}  // namespace vlaforge::backbone
