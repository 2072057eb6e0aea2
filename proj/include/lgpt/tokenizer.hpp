#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgpt/common.hpp"

namespace lgpt {

// ---------------------------------------------------------------------------
// Byte-pair tokenizer in the standard vocab.json + merges.txt distribution
// format, plus a self-contained byte-level fallback (ids 0..255 and one
// end-of-text id) so the test suite and smoke training need no external
// files. Encode/decode round-trips arbitrary byte strings exactly: every
// byte has a base token, and decode concatenates token bytes verbatim.
//
// Pre-tokenization follows the usual contraction / letter-run / digit-run /
// punctuation-run / whitespace splitting. Classification is ASCII-based;
// bytes >= 0x80 are treated as letter continuations, which preserves the
// round-trip guarantee for all inputs.
// ---------------------------------------------------------------------------

namespace detail {

// Byte <-> printable-codepoint mapping used by the vocab files: printable
// latin bytes map to themselves, the rest to 256+n in byte order.
inline const std::array<char32_t, 256>& byte_to_codepoint() {
  static const std::array<char32_t, 256> table = [] {
    std::array<char32_t, 256> t{};
    std::array<bool, 256> printable{};
    auto mark = [&](int lo, int hi) {
      for (int b = lo; b <= hi; ++b) printable[std::size_t(b)] = true;
    };
    mark('!', '~');
    mark(0xa1, 0xac);
    mark(0xae, 0xff);
    char32_t next = 256;
    for (int b = 0; b < 256; ++b)
      t[std::size_t(b)] =
          printable[std::size_t(b)] ? char32_t(b) : next++;
    return t;
  }();
  return table;
}

inline std::string codepoint_to_utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(char(cp));
  } else if (cp < 0x800) {
    out.push_back(char(0xc0 | (cp >> 6)));
    out.push_back(char(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(char(0xe0 | (cp >> 12)));
    out.push_back(char(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(char(0x80 | (cp & 0x3f)));
  }
  return out;
}

inline std::string byte_symbol(unsigned char b) {
  return codepoint_to_utf8(byte_to_codepoint()[b]);
}

// Decodes the UTF-8 codepoints of a token string back into raw bytes.
inline std::string symbols_to_bytes(const std::string& token) {
  static const auto reverse = [] {
    std::unordered_map<char32_t, unsigned char> r;
    const auto& fwd = byte_to_codepoint();
    for (int b = 0; b < 256; ++b) r[fwd[std::size_t(b)]] = (unsigned char)b;
    return r;
  }();
  std::string out;
  std::size_t i = 0;
  while (i < token.size()) {
    unsigned char c = (unsigned char)token[i];
    char32_t cp = 0;
    std::size_t len = 1;
    if (c < 0x80) {
      cp = c;
    } else if ((c >> 5) == 0x6 && i + 1 < token.size()) {
      cp = char32_t(c & 0x1f) << 6 | (token[i + 1] & 0x3f);
      len = 2;
    } else if ((c >> 4) == 0xe && i + 2 < token.size()) {
      cp = char32_t(c & 0x0f) << 12 | char32_t(token[i + 1] & 0x3f) << 6 |
           (token[i + 2] & 0x3f);
      len = 3;
    } else {
      throw ParseError("tokenizer: malformed UTF-8 in token string");
    }
    auto it = reverse.find(cp);
    if (it == reverse.end())
      throw ParseError("tokenizer: token contains a non-byte codepoint");
    out.push_back(char(it->second));
    i += len;
  }
  return out;
}

inline bool is_ws(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}
inline bool is_letter(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}
inline bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

// Splits text into the chunks the merge loop runs over. Mirrors the usual
// GPT-2 pattern: contractions, optional-space letter/digit/punctuation runs,
// and whitespace runs that donate a trailing plain space to the next chunk.
inline std::vector<std::string> pretokenize(const std::string& s) {
  static const char* kContractions[] = {"'s", "'t", "'re", "'ve",
                                        "'m", "'ll", "'d"};
  std::vector<std::string> chunks;
  std::size_t pos = 0;
  const std::size_t len = s.size();

  auto emit_word = [&](std::size_t start) -> std::size_t {
    std::size_t p = start;
    if (s[p] == ' ') ++p;  // the optional leading space
    if (p == len) {
      chunks.push_back(s.substr(start));
      return len;
    }
    unsigned char c = (unsigned char)s[p];
    auto cls = is_letter(c) ? 0 : is_digit(c) ? 1 : 2;
    ++p;
    while (p < len) {
      unsigned char n = (unsigned char)s[p];
      if (is_ws(n)) break;
      int ncls = is_letter(n) ? 0 : is_digit(n) ? 1 : 2;
      if (ncls != cls) break;
      ++p;
    }
    chunks.push_back(s.substr(start, p - start));
    return p;
  };

  while (pos < len) {
    unsigned char c = (unsigned char)s[pos];
    if (!is_ws(c)) {
      if (c == '\'') {
        bool matched = false;
        for (const char* contraction : kContractions) {
          std::size_t l = std::char_traits<char>::length(contraction);
          if (s.compare(pos, l, contraction) == 0) {
            chunks.push_back(s.substr(pos, l));
            pos += l;
            matched = true;
            break;
          }
        }
        if (matched) continue;
      }
      pos = emit_word(pos);
      continue;
    }
    std::size_t j = pos;
    while (j < len && is_ws((unsigned char)s[j])) ++j;
    if (j == len) {  // trailing whitespace is one chunk
      chunks.push_back(s.substr(pos, j - pos));
      pos = j;
      continue;
    }
    if (s[j - 1] == ' ') {  // last space joins the following word
      if (j - 1 > pos) chunks.push_back(s.substr(pos, j - 1 - pos));
      pos = emit_word(j - 1);
    } else {
      if (j - 1 > pos) chunks.push_back(s.substr(pos, j - 1 - pos));
      chunks.push_back(s.substr(j - 1, 1));
      pos = j;
    }
  }
  return chunks;
}

}  // namespace detail

class BpeTokenizer {
 public:
  static BpeTokenizer byte_fallback() {
    BpeTokenizer t;
    t.byte_level_ = true;
    t.vocab_size_ = 257;  // 256 bytes + end-of-text
    return t;
  }

  static BpeTokenizer from_files(const std::string& vocab_path,
                                 const std::string& merges_path) {
    BpeTokenizer t;
    t.byte_level_ = false;

    std::ifstream vf(vocab_path);
    if (!vf) throw IoError("tokenizer: cannot open vocab file " + vocab_path);
    nlohmann::json vocab_json;
    try {
      vf >> vocab_json;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("tokenizer: invalid vocab JSON in " + vocab_path +
                       ": " + e.what());
    }
    for (auto it = vocab_json.begin(); it != vocab_json.end(); ++it) {
      int id = it.value().get<int>();
      t.token_to_id_[it.key()] = id;
      if (std::size_t(id) >= t.id_to_token_.size())
        t.id_to_token_.resize(std::size_t(id) + 1);
      t.id_to_token_[std::size_t(id)] = it.key();
    }
    t.vocab_size_ = t.id_to_token_.size();

    std::ifstream mf(merges_path);
    if (!mf) throw IoError("tokenizer: cannot open merges file " + merges_path);
    std::string line;
    std::size_t line_no = 0;
    int rank = 0;
    while (std::getline(mf, line)) {
      ++line_no;
      if (line_no == 1 && line.rfind("#version", 0) == 0) continue;
      if (line.empty()) continue;
      auto space = line.find(' ');
      if (space == std::string::npos || space == 0 ||
          space + 1 >= line.size() ||
          line.find(' ', space + 1) != std::string::npos)
        throw ParseError("tokenizer: malformed merge at " + merges_path +
                         ":" + std::to_string(line_no) + ": '" + line + "'");
      t.merge_rank_[line.substr(0, space) + "\n" + line.substr(space + 1)] =
          rank++;
    }
    return t;
  }

  bool is_byte_level() const { return byte_level_; }
  std::size_t vocab_size() const { return vocab_size_; }
  // Separator appended between documents when building a training stream.
  int end_token() const {
    if (byte_level_) return 256;
    auto it = token_to_id_.find("<|endoftext|>");
    return it == token_to_id_.end() ? -1 : it->second;
  }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    if (byte_level_) {
      ids.reserve(text.size());
      for (unsigned char c : text) ids.push_back(int(c));
      return ids;
    }
    for (const auto& chunk : detail::pretokenize(text)) {
      std::vector<std::string> word;
      word.reserve(chunk.size());
      for (unsigned char c : chunk) word.push_back(detail::byte_symbol(c));
      merge(word);
      for (const auto& token : word) {
        auto it = token_to_id_.find(token);
        if (it == token_to_id_.end())
          throw DataError("tokenizer: token '" + token + "' not in vocab");
        ids.push_back(it->second);
      }
    }
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id < 0 || std::size_t(id) >= vocab_size_)
        throw IndexError("tokenizer: id " + std::to_string(id) +
                         " out of range [0," + std::to_string(vocab_size_) +
                         ")");
      if (byte_level_) {
        if (id < 256) out.push_back(char(id));
        // end-of-text decodes to nothing
      } else {
        out += detail::symbols_to_bytes(id_to_token_[std::size_t(id)]);
      }
    }
    return out;
  }

 private:
  // Repeatedly merges the lowest-ranked adjacent pair, every occurrence per
  // round, until no adjacent pair is mergeable.
  void merge(std::vector<std::string>& word) const {
    if (word.size() < 2) return;
    while (true) {
      int best_rank = std::numeric_limits<int>::max();
      std::size_t best = 0;
      for (std::size_t i = 0; i + 1 < word.size(); ++i) {
        auto it = merge_rank_.find(word[i] + "\n" + word[i + 1]);
        if (it != merge_rank_.end() && it->second < best_rank) {
          best_rank = it->second;
          best = i;
        }
      }
      if (best_rank == std::numeric_limits<int>::max()) return;
      const std::string first = word[best], second = word[best + 1];
      std::vector<std::string> merged;
      merged.reserve(word.size());
      std::size_t i = 0;
      while (i < word.size()) {
        if (i + 1 < word.size() && word[i] == first && word[i + 1] == second) {
          merged.push_back(first + second);
          i += 2;
        } else {
          merged.push_back(word[i]);
          ++i;
        }
      }
      word = std::move(merged);
      if (word.size() < 2) return;
    }
  }

  bool byte_level_ = false;
  std::size_t vocab_size_ = 0;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> merge_rank_;  // "left\nright" -> rank
};

// Empty paths select the built-in byte-level fallback.
inline BpeTokenizer load_tokenizer(const std::string& vocab_path,
                                   const std::string& merges_path) {
  if (vocab_path.empty() && merges_path.empty())
    return BpeTokenizer::byte_fallback();
  if (vocab_path.empty() || merges_path.empty())
    throw ConfigError(
        "tokenizer: vocab and merges paths must be given together");
  return BpeTokenizer::from_files(vocab_path, merges_path);
}

}  // namespace lgpt
