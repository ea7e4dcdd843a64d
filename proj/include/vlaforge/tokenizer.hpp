#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vlaforge::backbone {

// Whitespace word-level tokenizer over a fixed vocabulary. Periods and commas
// split off as their own tokens; text is lowercased except for reserved
// markers such as <id>. Unknown words map to <unk>.
class Tokenizer {
 public:
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kUnk = 1;
  static constexpr int64_t kStart = 2;
  static constexpr int64_t kEnd = 3;
  static constexpr int64_t kId = 4;

  explicit Tokenizer(int64_t vocab_size = 256);

  // Wraps the words in <sot> ... <eot>.
  std::vector<int64_t> encode(std::string_view text) const;
  std::string decode(const std::vector<int64_t>& ids) const;

  int64_t vocab_size() const { return vocab_size_; }
  int64_t lookup(const std::string& word) const;

 private:
  int64_t vocab_size_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int64_t> index_;
};

}  // namespace vlaforge::backbone
