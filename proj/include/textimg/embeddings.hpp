#pragma once

// Word-embedding dictionary: parsing (text and binary word2vec layouts),
// per-dimension normalization statistics, and byte quantization.

#include "textimg/common.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace textimg {

/// Per-dimension extrema over the whole vocabulary.
struct NormalizationStats {
  std::vector<double> min;
  std::vector<double> max;

  std::size_t dim() const { return min.size(); }

  void validate() const {
    if (min.size() != max.size())
      throw InvalidParams("normalization stats: min/max length mismatch");
    for (std::size_t j = 0; j < min.size(); ++j) {
      if (!(min[j] <= max[j]))
        throw InvalidParams("normalization stats: min > max at dimension " + std::to_string(j));
    }
  }

  bool operator==(const NormalizationStats&) const = default;
};

/// d bytes, one per embedding component, read in RGB triplets.
struct QuantizedVector {
  std::vector<std::uint8_t> bytes;

  std::size_t size() const { return bytes.size(); }
  std::uint8_t operator[](std::size_t i) const { return bytes[i]; }
  bool operator==(const QuantizedVector&) const = default;
};

namespace detail {

inline std::string format_real(double v, int precision) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, precision);
  return std::string(buf, res.ptr);
}

inline bool parse_real(std::string_view text, double& out) {
  if (!text.empty() && text.front() == '+')
    text.remove_prefix(1);
  auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc{} && res.ptr == text.data() + text.size();
}

inline bool parse_count(std::string_view text, long long& out) {
  auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc{} && res.ptr == text.data() + text.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t'))
      ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t')
      ++i;
    if (i > start)
      fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

inline std::string read_all(std::istream& in) {
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace detail

/// Computes min/max per dimension over a row-major [rows x dim] block.
inline NormalizationStats compute_normalization(std::span<const double> values, std::size_t dim) {
  if (dim == 0 || values.empty() || values.size() % dim != 0)
    throw InvalidParams("compute_normalization: empty or ragged vocabulary");
  NormalizationStats stats;
  stats.min.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(dim));
  stats.max = stats.min;
  for (std::size_t off = dim; off < values.size(); off += dim) {
    for (std::size_t j = 0; j < dim; ++j) {
      stats.min[j] = std::min(stats.min[j], values[off + j]);
      stats.max[j] = std::max(stats.max[j], values[off + j]);
    }
  }
  return stats;
}

/// The word -> vector dictionary. Immutable once built; safe for concurrent reads.
class EmbeddingTable {
public:
  EmbeddingTable(std::vector<std::string> words, std::vector<double> values, std::size_t dim)
      : words_(std::move(words)), values_(std::move(values)), dim_(dim) {
    if (dim_ == 0)
      throw InvalidParams("embedding table: dimension must be positive");
    if (words_.empty())
      throw InvalidParams("embedding table: empty vocabulary");
    if (values_.size() != words_.size() * dim_)
      throw InvalidParams("embedding table: vector block does not match vocabulary size x dim");
    index_.reserve(words_.size());
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], i).second)
        throw InvalidParams("embedding table: duplicate word '" + words_[i] + "'");
    }
    stats_ = compute_normalization(values_, dim_);
  }

  /// Replaces the normalization statistics, e.g. with training-split stats loaded from a sidecar.
  EmbeddingTable with_stats(NormalizationStats stats) && {
    stats.validate();
    if (stats.dim() != dim_)
      throw InvalidParams("normalization stats cover " + std::to_string(stats.dim()) +
                          " dimensions, table has " + std::to_string(dim_));
    EmbeddingTable out = std::move(*this);
    out.stats_ = std::move(stats);
    return out;
  }

  std::size_t size() const { return words_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& words() const { return words_; }
  const std::string& word(std::size_t i) const { return words_[i]; }
  std::span<const double> vector(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * dim_, dim_);
  }
  std::span<const double> values() const { return values_; }
  const NormalizationStats& stats() const { return stats_; }

  std::optional<std::size_t> index_of(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end())
      return std::nullopt;
    return it->second;
  }

  /// Case-sensitive; absence means out-of-vocabulary.
  std::optional<std::span<const double>> lookup(std::string_view word) const {
    if (auto i = index_of(word))
      return vector(*i);
    return std::nullopt;
  }

  bool contains(std::string_view word) const { return index_of(word).has_value(); }

  bool operator==(const EmbeddingTable& o) const {
    return dim_ == o.dim_ && words_ == o.words_ && values_ == o.values_ && stats_ == o.stats_;
  }

private:
  std::vector<std::string> words_;
  std::vector<double> values_;
  std::size_t dim_;
  std::unordered_map<std::string, std::size_t> index_;
  NormalizationStats stats_;
};

inline NormalizationStats compute_normalization(const EmbeddingTable& table) {
  return compute_normalization(table.values(), table.dim());
}

struct ParseOptions {
  /// Strict mode turns header/record-count mismatches and trailing bytes into errors.
  bool strict = true;
  WarningSink warn = default_warning_sink();
};

/// Parses "word v1 ... vD" lines with an optional leading "N D" header line.
inline EmbeddingTable parse_embedding_text(std::istream& in, const ParseOptions& opts = {}) {
  std::vector<std::string> words;
  std::vector<double> values;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t dim = 0;
  long long declared = -1;
  bool first = true;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError("embedding text: line " + std::to_string(lineno) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    auto fields = detail::split_ws(line);
    if (fields.empty())
      continue;
    if (first) {
      first = false;
      long long n = 0;
      long long d = 0;
      if (fields.size() == 2 && detail::parse_count(fields[0], n) && detail::parse_count(fields[1], d)) {
        if (n <= 0 || d <= 0)
          throw fail("header declares non-positive count or dimension");
        declared = n;
        dim = static_cast<std::size_t>(d);
        continue;
      }
      if (fields.size() < 2)
        throw fail("record has no vector components");
      dim = fields.size() - 1;
    }
    if (fields.size() != dim + 1)
      throw fail("expected " + std::to_string(dim) + " components, got " + std::to_string(fields.size() - 1));
    std::string word(fields[0]);
    if (!seen.emplace(word, words.size()).second)
      throw fail("duplicate word '" + word + "'");
    for (std::size_t j = 1; j < fields.size(); ++j) {
      double v = 0;
      if (!detail::parse_real(fields[j], v))
        throw fail("cannot parse component " + std::to_string(j) + " '" + std::string(fields[j]) + "'");
      if (!std::isfinite(v))
        throw fail("non-finite component " + std::to_string(j));
      values.push_back(v);
    }
    words.push_back(std::move(word));
  }
  if (words.empty())
    throw ParseError("embedding text: empty vocabulary");
  if (declared >= 0 && static_cast<std::size_t>(declared) != words.size()) {
    std::string msg = "embedding text: header declares " + std::to_string(declared) + " words, found " +
                      std::to_string(words.size());
    if (opts.strict)
      throw ParseError(msg);
    opts.warn(msg);
  }
  return EmbeddingTable(std::move(words), std::move(values), dim);
}

/// Parses the word2vec binary layout: "N D\n" then per record "word " + D little-endian float32.
inline EmbeddingTable parse_embedding_binary(std::istream& in, const ParseOptions& opts = {}) {
  const std::string buf = detail::read_all(in);
  std::size_t pos = buf.find('\n');
  if (pos == std::string::npos)
    throw ParseError("embedding binary: missing header line");
  auto header = detail::split_ws(std::string_view(buf).substr(0, pos));
  long long n = 0;
  long long d = 0;
  if (header.size() != 2 || !detail::parse_count(header[0], n) || !detail::parse_count(header[1], d))
    throw ParseError("embedding binary: malformed header");
  if (n <= 0 || d <= 0)
    throw ParseError("embedding binary: header declares non-positive count or dimension");
  ++pos;

  const auto count = static_cast<std::size_t>(n);
  const auto dim = static_cast<std::size_t>(d);
  std::vector<std::string> words;
  std::vector<double> values;
  words.reserve(count);
  values.reserve(count * dim);
  std::unordered_map<std::string, std::size_t> seen;

  for (std::size_t r = 0; r < count; ++r) {
    while (pos < buf.size() && (buf[pos] == '\n' || buf[pos] == '\r'))
      ++pos;
    const std::size_t word_start = pos;
    const std::size_t space = buf.find(' ', pos);
    if (space == std::string::npos)
      throw ParseError("embedding binary: truncated stream at byte offset " + std::to_string(buf.size()) +
                       " (record " + std::to_string(r) + " word)");
    std::string word = buf.substr(word_start, space - word_start);
    if (word.empty())
      throw ParseError("embedding binary: empty word at byte offset " + std::to_string(word_start));
    pos = space + 1;
    if (buf.size() - pos < dim * 4)
      throw ParseError("embedding binary: truncated stream at byte offset " + std::to_string(buf.size()) +
                       " (record " + std::to_string(r) + " needs " + std::to_string(dim * 4) +
                       " vector bytes from offset " + std::to_string(pos) + ")");
    for (std::size_t j = 0; j < dim; ++j, pos += 4) {
      const auto* b = reinterpret_cast<const unsigned char*>(buf.data() + pos);
      const std::uint32_t bits = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
                                 (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
      const float v = std::bit_cast<float>(bits);
      if (!std::isfinite(v))
        throw ParseError("embedding binary: non-finite component at byte offset " + std::to_string(pos));
      values.push_back(static_cast<double>(v));
    }
    if (!seen.emplace(word, r).second)
      throw ParseError("embedding binary: duplicate word '" + word + "' at byte offset " +
                       std::to_string(word_start));
    words.push_back(std::move(word));
  }
  while (pos < buf.size() && (buf[pos] == '\n' || buf[pos] == '\r' || buf[pos] == ' '))
    ++pos;
  if (pos < buf.size()) {
    std::string msg = "embedding binary: " + std::to_string(buf.size() - pos) +
                      " trailing bytes after declared records at byte offset " + std::to_string(pos);
    if (opts.strict)
      throw ParseError(msg);
    opts.warn(msg);
  }
  return EmbeddingTable(std::move(words), std::move(values), dim);
}

/// Writes the text layout with a header and 9 significant digits per component.
inline void write_embedding_text(const EmbeddingTable& table, std::ostream& out) {
  out << table.size() << ' ' << table.dim() << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.word(i);
    for (double v : table.vector(i))
      out << ' ' << detail::format_real(v, 9);
    out << '\n';
  }
}

inline void write_embedding_binary(const EmbeddingTable& table, std::ostream& out) {
  out << table.size() << ' ' << table.dim() << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.word(i) << ' ';
    for (double v : table.vector(i)) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      const char le[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                          static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
      out.write(le, 4);
    }
    out << '\n';
  }
}

/// Stats sidecar: one "j min_j max_j" line per dimension, exact to 17 digits.
inline void write_stats(const NormalizationStats& stats, std::ostream& out) {
  for (std::size_t j = 0; j < stats.dim(); ++j)
    out << j << ' ' << detail::format_real(stats.min[j], 17) << ' ' << detail::format_real(stats.max[j], 17)
        << '\n';
}

inline NormalizationStats read_stats(std::istream& in) {
  NormalizationStats stats;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = detail::split_ws(line);
    if (fields.empty())
      continue;
    long long j = 0;
    double lo = 0;
    double hi = 0;
    if (fields.size() != 3 || !detail::parse_count(fields[0], j) || !detail::parse_real(fields[1], lo) ||
        !detail::parse_real(fields[2], hi))
      throw ParseError("stats sidecar: line " + std::to_string(lineno) + ": expected 'j min max'");
    if (j != static_cast<long long>(stats.dim()))
      throw ParseError("stats sidecar: line " + std::to_string(lineno) + ": dimension index out of sequence");
    if (!std::isfinite(lo) || !std::isfinite(hi))
      throw ParseError("stats sidecar: line " + std::to_string(lineno) + ": non-finite bound");
    stats.min.push_back(lo);
    stats.max.push_back(hi);
  }
  if (stats.dim() == 0)
    throw ParseError("stats sidecar: no dimensions");
  stats.validate();
  return stats;
}

inline std::string stats_digest(const NormalizationStats& stats) {
  std::ostringstream os;
  write_stats(stats, os);
  return sha256_hex(os.str());
}

/// Digest of the canonical serialization: dim, then "word v..." per record at full precision.
inline std::string table_digest(const EmbeddingTable& table) {
  Sha256 h;
  h.update(std::to_string(table.dim())).update("\n");
  std::string line;
  for (std::size_t i = 0; i < table.size(); ++i) {
    line = table.word(i);
    for (double v : table.vector(i)) {
      line.push_back(' ');
      line += detail::format_real(v, 17);
    }
    line.push_back('\n');
    h.update(line);
  }
  return h.hex();
}

inline void check_feature_count(std::size_t d, std::size_t available) {
  if (d == 0 || d % 3 != 0)
    throw InvalidParams("feature count must be a multiple of 3");
  if (d > available)
    throw InvalidParams("feature count " + std::to_string(d) + " exceeds available dimensions " +
                        std::to_string(available));
}

/// Maps one component to a byte; round half away from zero, degenerate range -> 0.
inline std::uint8_t quantize_component(double v, double lo, double hi) {
  if (!(hi > lo))
    return 0;
  const double scaled = std::round((v - lo) / (hi - lo) * 255.0);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

/// Quantizes the first d components of v. Values outside [min, max] saturate.
inline QuantizedVector quantize(std::span<const double> v, const NormalizationStats& stats, std::size_t d) {
  check_feature_count(d, v.size());
  if (stats.dim() < d)
    throw InvalidParams("normalization stats do not cover " + std::to_string(d) + " dimensions");
  QuantizedVector q;
  q.bytes.resize(d);
  for (std::size_t j = 0; j < d; ++j)
    q.bytes[j] = quantize_component(v[j], stats.min[j], stats.max[j]);
  return q;
}

inline std::vector<double> dequantize(const QuantizedVector& q, const NormalizationStats& stats) {
  if (stats.dim() < q.size())
    throw InvalidParams("normalization stats do not cover " + std::to_string(q.size()) + " dimensions");
  std::vector<double> v(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) {
    const double range = stats.max[j] - stats.min[j];
    v[j] = range > 0 ? stats.min[j] + q[j] / 255.0 * range : stats.min[j];
  }
  return v;
}

/// Quantizes every vocabulary vector at feature count d into one row-major byte block.
inline std::vector<std::uint8_t> quantize_table(const EmbeddingTable& table, std::size_t d) {
  check_feature_count(d, table.dim());
  const auto& stats = table.stats();
  std::vector<std::uint8_t> out(table.size() * d);
  for (std::size_t i = 0; i < table.size(); ++i) {
    auto v = table.vector(i);
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = quantize_component(v[j], stats.min[j], stats.max[j]);
  }
  return out;
}

} // namespace textimg
