#pragma once

// Inverse of the encoding: read superpixel colors back out of an encoded image
// and map each visual word to its nearest vocabulary word in byte space.

#include "textimg/embeddings.hpp"
#include "textimg/layout.hpp"
#include "textimg/raster.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace textimg {

struct DecodedToken {
  std::string word;
  double distance = 0;
};

struct DecodedDocument {
  std::vector<DecodedToken> tokens;
  double mean_distance = 0;
};

/// Per-slot rounded mean color of every placed word, in placement order.
inline std::vector<QuantizedVector> extract_superpixels(const EncodedImage& img, const LayoutPlan& plan,
                                                        const EncodingParams& params) {
  validate(params);
  if (img.width != params.image_width || img.height != params.image_height)
    throw EncodeError("extract: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      ", parameters expect " + std::to_string(params.image_width) + "x" +
                      std::to_string(params.image_height));
  const auto geom = word_geometry(params);
  const int sp = params.superpixel;
  const std::uint32_t area = static_cast<std::uint32_t>(sp) * static_cast<std::uint32_t>(sp);
  std::vector<QuantizedVector> out;
  out.reserve(plan.placements.size());
  for (const auto& pl : plan.placements) {
    if (pl.x < 0 || pl.y < 0 || pl.x + geom.width_px > img.width || pl.y + geom.height_px > img.height)
      throw EncodeError("extract: placement at (" + std::to_string(pl.x) + "," + std::to_string(pl.y) +
                        ") lies outside the image");
    QuantizedVector q;
    q.bytes.resize(static_cast<std::size_t>(params.feature_count));
    for (std::size_t i = 0; i < geom.slots.size(); ++i) {
      const int x0 = pl.x + geom.slots[i].col * sp;
      const int y0 = pl.y + geom.slots[i].row * sp;
      std::uint32_t sum[3] = {0, 0, 0};
      for (int y = y0; y < y0 + sp; ++y) {
        const std::uint8_t* p = img.at(x0, y);
        for (int x = 0; x < sp; ++x, p += 3) {
          sum[0] += p[0];
          sum[1] += p[1];
          sum[2] += p[2];
        }
      }
      for (int c = 0; c < 3; ++c)
        q.bytes[3 * i + c] = static_cast<std::uint8_t>((2 * sum[c] + area) / (2 * area));
    }
    out.push_back(std::move(q));
  }
  return out;
}

/// Quantized view of a whole vocabulary for nearest-neighbor lookup.
class QuantizedCodebook {
public:
  QuantizedCodebook(const EmbeddingTable& table, std::size_t d)
      : table_(&table), d_(d), codes_(quantize_table(table, d)) {
    exact_.reserve(table.size());
    for (std::size_t i = 0; i < table.size(); ++i)
      exact_.emplace(key(i), i); // keeps the earliest index on duplicates
  }

  std::size_t feature_count() const { return d_; }
  std::size_t size() const { return table_->size(); }
  std::span<const std::uint8_t> code(std::size_t i) const {
    return std::span<const std::uint8_t>(codes_).subspan(i * d_, d_);
  }

  /// Index of the nearest code by Euclidean distance; ties go to the earliest word.
  /// Exact hits are served from a hash index, otherwise a linear scan with partial-distance pruning.
  std::pair<std::size_t, std::uint64_t> nearest_index(std::span<const std::uint8_t> q) const {
    if (q.size() != d_)
      throw InvalidParams("nearest_word: query has " + std::to_string(q.size()) + " bytes, codebook uses " +
                          std::to_string(d_));
    if (auto it = exact_.find(std::string(reinterpret_cast<const char*>(q.data()), q.size())); it != exact_.end())
      return {it->second, 0};
    std::size_t best = 0;
    std::uint64_t best_d2 = std::numeric_limits<std::uint64_t>::max();
    const std::uint8_t* base = codes_.data();
    for (std::size_t i = 0; i < size(); ++i, base += d_) {
      std::uint64_t d2 = 0;
      for (std::size_t j = 0; j < d_ && d2 < best_d2; ++j) {
        const int diff = int{base[j]} - int{q[j]};
        d2 += static_cast<std::uint64_t>(diff * diff);
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    return {best, best_d2};
  }

  std::pair<std::string, double> nearest_word(const QuantizedVector& q) const {
    const auto [i, d2] = nearest_index(q.bytes);
    return {table_->word(i), std::sqrt(static_cast<double>(d2))};
  }

  /// Pairs (earlier, later) of distinct words with identical codes; each later word appears once,
  /// paired with the first word carrying its code.
  std::vector<std::pair<std::size_t, std::size_t>> collisions() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < size(); ++i) {
      const auto first = exact_.at(key(i));
      if (first != i)
        out.emplace_back(first, i);
    }
    return out;
  }

private:
  std::string key(std::size_t i) const {
    return std::string(reinterpret_cast<const char*>(codes_.data() + i * d_), d_);
  }

  const EmbeddingTable* table_;
  std::size_t d_;
  std::vector<std::uint8_t> codes_;
  std::unordered_map<std::string, std::size_t> exact_;
};

inline std::pair<std::string, double> nearest_word(const QuantizedVector& q, const EmbeddingTable& table) {
  return QuantizedCodebook(table, q.size()).nearest_word(q);
}

inline DecodedDocument decode_document(const EncodedImage& img, const LayoutPlan& plan,
                                       const EncodingParams& params, const QuantizedCodebook& codebook) {
  if (codebook.feature_count() != static_cast<std::size_t>(params.feature_count))
    throw InvalidParams("decode: codebook feature count differs from parameters");
  DecodedDocument doc;
  double total = 0;
  for (const auto& q : extract_superpixels(img, plan, params)) {
    auto [word, dist] = codebook.nearest_word(q);
    total += dist;
    doc.tokens.push_back({std::move(word), dist});
  }
  if (!doc.tokens.empty())
    doc.mean_distance = total / static_cast<double>(doc.tokens.size());
  return doc;
}

inline DecodedDocument decode_document(const EncodedImage& img, const LayoutPlan& plan,
                                       const EncodingParams& params, const EmbeddingTable& table) {
  return decode_document(img, plan, params,
                         QuantizedCodebook(table, static_cast<std::size_t>(params.feature_count)));
}

/// "index word distance" lines followed by a summary line.
inline void write_decoded(const DecodedDocument& doc, std::ostream& out) {
  for (std::size_t i = 0; i < doc.tokens.size(); ++i)
    out << i << ' ' << doc.tokens[i].word << ' ' << detail::format_real(doc.tokens[i].distance, 6) << '\n';
  out << "# tokens=" << doc.tokens.size() << " mean_distance=" << detail::format_real(doc.mean_distance, 6)
      << '\n';
}

} // namespace textimg
