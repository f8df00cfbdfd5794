#include "ctn/text/tokenizer.hpp"

#include <cctype>

#include "ctn/error.hpp"

namespace ctn::text {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

std::string trim(std::string_view text) {
  std::size_t b = 0, e = text.size();
  while (b < e && is_space(text[b])) ++b;
  while (e > b && is_space(text[e - 1])) --e;
  return std::string(text.substr(b, e - b));
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_space(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::size_t word_count(std::string_view text) { return split_words(text).size(); }

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(static_cast<char>(c))) {
      flush();
    } else if (is_word_char(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (c == '\'' && !cur.empty() && i + 1 < text.size() &&
               is_word_char(static_cast<unsigned char>(text[i + 1]))) {
      cur += '\'';
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string normalize(std::string_view text) {
  const auto toks = tokenize(text);
  return detokenize(toks);
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(s);
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  Vocabulary v;
  for (const auto& t : texts)
    for (const auto& tok : tokenize(t)) v.add(tok);
  return v;
}

std::size_t Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const std::size_t id = tokens_.size();
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.find(token) != index_.end(); }

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw Error(ErrorCode::out_of_vocabulary, "token id " + std::to_string(id));
  return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text) const {
  std::vector<std::size_t> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(std::span<const std::size_t> ids) const {
  std::vector<std::string> toks;
  for (auto id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    toks.push_back(token(id));
  }
  return detokenize(toks);
}

nlohmann::json Vocabulary::to_json() const { return tokens_; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  const auto toks = j.get<std::vector<std::string>>();
  if (toks.size() < 4 || toks[0] != "<pad>" || toks[1] != "<bos>" || toks[2] != "<eos>" || toks[3] != "<unk>")
    throw Error(ErrorCode::parse_error, "vocabulary must start with the four special tokens");
  for (std::size_t i = 4; i < toks.size(); ++i) v.add(toks[i]);
  if (v.size() != toks.size()) throw Error(ErrorCode::parse_error, "duplicate tokens in vocabulary");
  return v;
}

}  // namespace ctn::text
