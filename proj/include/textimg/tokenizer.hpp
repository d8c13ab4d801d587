#pragma once

#include "textimg/embeddings.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace textimg {

/// One labeled document. Labels are kept as strings (CSV class indices, newsgroup names).
struct Document {
  std::string id;
  std::string label;
  std::string text;
};

struct TokenSequence {
  std::vector<std::string> tokens;
  std::size_t oov_count = 0;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

struct TokenizerOptions {
  bool keep_case = false;
};

/// Splits UTF-8 text into maximal runs of Unicode letters and digits.
/// Everything else, including malformed UTF-8, separates tokens.
inline TokenSequence tokenize(std::string_view text, const TokenizerOptions& opts = {}) {
  TokenSequence out;
  std::string current;
  const auto* s = reinterpret_cast<const std::uint8_t*>(text.data());
  const auto length = static_cast<std::int32_t>(text.size());
  std::int32_t i = 0;
  while (i < length) {
    UChar32 c = 0;
    U8_NEXT(s, i, length, c);
    if (c >= 0 && u_isalnum(c)) {
      if (!opts.keep_case)
        c = u_tolower(c);
      char buf[U8_MAX_LENGTH];
      std::int32_t n = 0;
      U8_APPEND_UNSAFE(buf, n, c);
      current.append(buf, static_cast<std::size_t>(n));
    } else if (!current.empty()) {
      out.tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty())
    out.tokens.push_back(std::move(current));
  return out;
}

inline TokenSequence tokenize(const Document& doc, const TokenizerOptions& opts = {}) {
  return tokenize(doc.text, opts);
}

/// Drops tokens absent from the table, preserving order, and counts them in oov_count.
inline TokenSequence filter_in_vocabulary(const TokenSequence& seq, const EmbeddingTable& table) {
  TokenSequence out;
  out.tokens.reserve(seq.tokens.size());
  for (const auto& t : seq.tokens) {
    if (table.contains(t))
      out.tokens.push_back(t);
    else
      ++out.oov_count;
  }
  return out;
}

} // namespace textimg
