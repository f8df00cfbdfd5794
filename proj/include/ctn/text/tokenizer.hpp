#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ctn::text {

/// Words separated by ASCII whitespace after trimming; punctuation stays attached.
std::vector<std::string> split_words(std::string_view text);
std::size_t word_count(std::string_view text);
std::string trim(std::string_view text);

/// Shared caption tokenizer: lowercase, punctuation split into its own tokens
/// (apostrophes inside a word are kept). Used by the caption model and the metrics.
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(std::span<const std::string> tokens);
/// tokenize then detokenize; the canonical comparison form of a caption.
std::string normalize(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kUnk = 3;

  Vocabulary();
  /// Specials plus every token of the given texts, in first-seen order.
  static Vocabulary build(std::span<const std::string> texts);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  std::size_t add(const std::string& token);

  std::vector<std::size_t> encode(std::string_view text) const;
  /// Drops special tokens.
  std::string decode(std::span<const std::size_t> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace ctn::text
