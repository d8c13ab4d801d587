#pragma once

// Visual-word geometry, canvas placement and capacity.

#include "textimg/common.hpp"
#include "textimg/embeddings.hpp"
#include "textimg/tokenizer.hpp"

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace textimg {

enum class ShapeVariant { vw1 = 1, vw2 = 2, vw3 = 3, vw4 = 4, vw5 = 5 };

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Superpixel position inside a visual word, in superpixel units.
struct Slot {
  int row = 0;
  int col = 0;
  bool operator==(const Slot&) const = default;
};

/// Geometry knobs for one encoding. Defaults are the 256x256, d=36, s=12, V=4, P=4 configuration.
struct EncodingParams {
  int image_width = 256;
  int image_height = 256;
  int superpixel = 4;   // P, side of one superpixel in pixels
  int word_width = 4;   // V, superpixels per visual-word row
  int spacing = 12;     // s, blank pixels between words
  int feature_count = 36;
  ShapeVariant shape = ShapeVariant::vw5;
  Rgb background{};
  std::optional<int> margin; // defaults to spacing / 2

  int effective_margin() const { return margin.value_or(spacing / 2); }
  std::size_t superpixel_count() const { return static_cast<std::size_t>(feature_count / 3); }
};

struct WordGeometry {
  int width_px = 0;
  int height_px = 0;
  std::vector<Slot> slots;
};

struct Placement {
  std::size_t token_index = 0;
  int x = 0;
  int y = 0;
  bool operator==(const Placement&) const = default;
};

struct LayoutPlan {
  std::vector<Placement> placements;
  std::size_t overflow_count = 0;
  std::string params_digest;
  bool operator==(const LayoutPlan&) const = default;
};

namespace shapes {

// Alternative superpixel arrangements for 36-feature words (12 superpixels).
// VW-1 and VW-2 are 4 superpixels wide, VW-3 and VW-4 are 6 wide.
// These tables approximate the published drawings; VW-5 is the plain rectangle.
struct ShapeTable {
  int width;
  std::span<const Slot> slots;
};

inline constexpr std::array<Slot, 12> vw1_slots{{
    {0, 0}, {0, 2}, {1, 1}, {1, 3}, {2, 0}, {2, 2}, {3, 1}, {3, 3}, {4, 0}, {4, 2}, {5, 1}, {5, 3},
}};
inline constexpr std::array<Slot, 12> vw2_slots{{
    {0, 0}, {0, 1}, {0, 2}, {0, 3}, {1, 0}, {1, 3}, {2, 0}, {2, 3}, {3, 0}, {3, 1}, {3, 2}, {3, 3},
}};
inline constexpr std::array<Slot, 12> vw3_slots{{
    {0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {1, 3}, {2, 2}, {2, 3}, {2, 4}, {3, 3}, {3, 4}, {3, 5},
}};
inline constexpr std::array<Slot, 12> vw4_slots{{
    {0, 0}, {0, 2}, {0, 4}, {1, 1}, {1, 3}, {1, 5}, {2, 0}, {2, 2}, {2, 4}, {3, 1}, {3, 3}, {3, 5},
}};

inline std::optional<ShapeTable> table_for(ShapeVariant shape) {
  switch (shape) {
  case ShapeVariant::vw1:
    return ShapeTable{4, vw1_slots};
  case ShapeVariant::vw2:
    return ShapeTable{4, vw2_slots};
  case ShapeVariant::vw3:
    return ShapeTable{6, vw3_slots};
  case ShapeVariant::vw4:
    return ShapeTable{6, vw4_slots};
  case ShapeVariant::vw5:
    break;
  }
  return std::nullopt;
}

} // namespace shapes

inline std::string to_string(ShapeVariant shape) { return "VW-" + std::to_string(static_cast<int>(shape)); }

inline ShapeVariant parse_shape(std::string_view text) {
  if (text.size() == 4 && (text.substr(0, 3) == "VW-" || text.substr(0, 3) == "vw-") && text[3] >= '1' &&
      text[3] <= '5')
    return static_cast<ShapeVariant>(text[3] - '0');
  if (text.size() == 1 && text[0] >= '1' && text[0] <= '5')
    return static_cast<ShapeVariant>(text[0] - '0');
  throw InvalidParams("unknown visual-word shape '" + std::string(text) + "' (expected VW-1..VW-5)");
}

inline WordGeometry word_geometry(const EncodingParams& p) {
  if (p.feature_count <= 0 || p.feature_count % 3 != 0)
    throw InvalidParams("feature count must be a multiple of 3");
  if (p.superpixel <= 0 || p.word_width <= 0)
    throw InvalidParams("superpixel size and word width must be positive");
  const auto n = p.superpixel_count();
  WordGeometry g;
  if (auto table = shapes::table_for(p.shape)) {
    if (table->slots.size() != n)
      throw InvalidParams(to_string(p.shape) + " defines " + std::to_string(table->slots.size()) +
                          " superpixels but feature count " + std::to_string(p.feature_count) + " needs " +
                          std::to_string(n));
    if (table->width != p.word_width)
      throw InvalidParams(to_string(p.shape) + " is " + std::to_string(table->width) +
                          " superpixels wide, word width is " + std::to_string(p.word_width));
    g.slots.assign(table->slots.begin(), table->slots.end());
    int rows = 0;
    for (const auto& s : g.slots)
      rows = std::max(rows, s.row + 1);
    g.width_px = table->width * p.superpixel;
    g.height_px = rows * p.superpixel;
    return g;
  }
  const int v = p.word_width;
  const int count = static_cast<int>(n);
  g.slots.reserve(n);
  for (int i = 0; i < count; ++i)
    g.slots.push_back({i / v, i % v});
  g.width_px = v * p.superpixel;
  g.height_px = ((count + v - 1) / v) * p.superpixel;
  return g;
}

/// Throws InvalidParams on any violated invariant, including "no word fits".
inline void validate(const EncodingParams& p) {
  if (p.image_width <= 0 || p.image_height <= 0)
    throw InvalidParams("image width and height must be positive");
  if (p.spacing < 0)
    throw InvalidParams("spacing must be non-negative");
  if (p.effective_margin() < 0)
    throw InvalidParams("margin must be non-negative");
  const auto g = word_geometry(p);
  const int m = p.effective_margin();
  if (2 * m + g.width_px > p.image_width || 2 * m + g.height_px > p.image_height)
    throw InvalidParams("a single visual word (" + std::to_string(g.width_px) + "x" + std::to_string(g.height_px) +
                        " px) does not fit a " + std::to_string(p.image_width) + "x" +
                        std::to_string(p.image_height) + " canvas with margin " + std::to_string(m));
}

inline std::string canonical_params(const EncodingParams& p) {
  std::ostringstream os;
  os << "W=" << p.image_width << " H=" << p.image_height << " P=" << p.superpixel << " V=" << p.word_width
     << " s=" << p.spacing << " d=" << p.feature_count << " shape=" << to_string(p.shape) << " bg="
     << int{p.background.r} << ',' << int{p.background.g} << ',' << int{p.background.b}
     << " margin=" << p.effective_margin();
  return os.str();
}

inline std::string params_digest(const EncodingParams& p) { return sha256_hex(canonical_params(p)); }

inline Rgb parse_rgb(std::string_view text) {
  Rgb c;
  int parts[3] = {0, 0, 0};
  std::size_t k = 0;
  std::size_t start = 0;
  while (k < 3) {
    const std::size_t comma = text.find(',', start);
    const auto field = text.substr(start, comma == std::string_view::npos ? text.size() - start : comma - start);
    long long v = -1;
    if (!detail::parse_count(field, v) || v < 0 || v > 255)
      throw InvalidParams("malformed color '" + std::string(text) + "' (expected r,g,b in 0..255)");
    parts[k++] = static_cast<int>(v);
    if (comma == std::string_view::npos)
      break;
    start = comma + 1;
  }
  if (k != 3 || text.find(',', start) != std::string_view::npos)
    throw InvalidParams("malformed color '" + std::string(text) + "' (expected r,g,b in 0..255)");
  c.r = static_cast<std::uint8_t>(parts[0]);
  c.g = static_cast<std::uint8_t>(parts[1]);
  c.b = static_cast<std::uint8_t>(parts[2]);
  return c;
}

/// Inverse of canonical_params.
inline EncodingParams parse_canonical_params(std::string_view text) {
  EncodingParams p;
  std::string s(text);
  std::istringstream is(s);
  std::string kv;
  unsigned seen = 0;
  while (is >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ParseError("params: malformed field '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    auto as_int = [&](unsigned bit) {
      long long v = 0;
      if (!detail::parse_count(value, v))
        throw ParseError("params: malformed integer for " + key);
      seen |= bit;
      return static_cast<int>(v);
    };
    if (key == "W")
      p.image_width = as_int(1u << 0);
    else if (key == "H")
      p.image_height = as_int(1u << 1);
    else if (key == "P")
      p.superpixel = as_int(1u << 2);
    else if (key == "V")
      p.word_width = as_int(1u << 3);
    else if (key == "s")
      p.spacing = as_int(1u << 4);
    else if (key == "d")
      p.feature_count = as_int(1u << 5);
    else if (key == "margin")
      p.margin = as_int(1u << 6);
    else if (key == "shape") {
      p.shape = parse_shape(value);
      seen |= 1u << 7;
    } else if (key == "bg") {
      p.background = parse_rgb(value);
      seen |= 1u << 8;
    } else
      throw ParseError("params: unknown field '" + key + "'");
  }
  if (seen != 0x1FF)
    throw ParseError("params: incomplete parameter record");
  return p;
}

/// Horizontal and vertical distance between consecutive word origins.
inline std::pair<int, int> pitches(const EncodingParams& p, const WordGeometry& g) {
  return {g.width_px + p.spacing, g.height_px + p.spacing};
}

/// Words per row and rows per canvas under the placement rule.
inline std::pair<std::size_t, std::size_t> grid_shape(const EncodingParams& p) {
  const auto g = word_geometry(p);
  const int m = p.effective_margin();
  const int usable_w = p.image_width - 2 * m;
  const int usable_h = p.image_height - 2 * m;
  const auto [pitch_x, pitch_y] = pitches(p, g);
  if (usable_w < g.width_px || usable_h < g.height_px)
    return {0, 0};
  return {static_cast<std::size_t>((usable_w + p.spacing) / pitch_x),
          static_cast<std::size_t>((usable_h + p.spacing) / pitch_y)};
}

/// Maximum number of visual words one canvas holds.
inline std::size_t capacity(const EncodingParams& p) {
  validate(p);
  const auto [cols, rows] = grid_shape(p);
  return cols * rows;
}

/// Places words left-to-right, top-to-bottom from (margin, margin). Words past the
/// bottom edge are dropped and counted in overflow_count.
inline LayoutPlan plan_layout(std::size_t token_count, const EncodingParams& p) {
  validate(p);
  const auto g = word_geometry(p);
  const int m = p.effective_margin();
  const int right = p.image_width - m;
  const int bottom = p.image_height - m;
  const auto [pitch_x, pitch_y] = pitches(p, g);
  if (m + g.width_px > right || m + g.height_px > bottom)
    throw InvalidParams("zero-capacity parameters: no visual word fits");

  LayoutPlan plan;
  plan.params_digest = params_digest(p);
  plan.placements.reserve(std::min(token_count, capacity(p)));
  int x = m;
  int y = m;
  for (std::size_t i = 0; i < token_count; ++i) {
    if (x + g.width_px > right) {
      x = m;
      y += pitch_y;
    }
    if (y + g.height_px > bottom) {
      plan.overflow_count = token_count - i;
      break;
    }
    plan.placements.push_back({i, x, y});
    x += pitch_x;
  }
  return plan;
}

inline LayoutPlan plan_layout(const TokenSequence& tokens, const EncodingParams& p) {
  return plan_layout(tokens.size(), p);
}

/// Number of distinct placement rows in a plan.
inline std::size_t rows_used(const LayoutPlan& plan) {
  std::size_t rows = 0;
  int last_y = -1;
  for (const auto& pl : plan.placements) {
    if (pl.y != last_y) {
      ++rows;
      last_y = pl.y;
    }
  }
  return rows;
}

/// Plan sidecar: header lines, then one "token_index x y" line per placement.
inline void write_plan(const LayoutPlan& plan, const EncodingParams& p, std::ostream& out) {
  out << "textimg-plan 1\n";
  out << "params " << canonical_params(p) << '\n';
  out << "params_digest " << plan.params_digest << '\n';
  out << "overflow_count " << plan.overflow_count << '\n';
  out << "placements " << plan.placements.size() << '\n';
  for (const auto& pl : plan.placements)
    out << pl.token_index << ' ' << pl.x << ' ' << pl.y << '\n';
}

struct PlanFile {
  EncodingParams params;
  LayoutPlan plan;
};

inline PlanFile read_plan(std::istream& in) {
  PlanFile f;
  std::string line;
  std::size_t lineno = 0;
  auto next = [&](std::string_view key) {
    if (!std::getline(in, line))
      throw ParseError("plan sidecar: missing '" + std::string(key) + "' line");
    ++lineno;
    if (line.rfind(std::string(key) + " ", 0) != 0)
      throw ParseError("plan sidecar: line " + std::to_string(lineno) + ": expected '" + std::string(key) + "'");
    return line.substr(key.size() + 1);
  };
  if (!std::getline(in, line) || line != "textimg-plan 1")
    throw ParseError("plan sidecar: missing 'textimg-plan 1' header");
  ++lineno;
  f.params = parse_canonical_params(next("params"));
  f.plan.params_digest = next("params_digest");
  if (f.plan.params_digest != params_digest(f.params))
    throw ParseError("plan sidecar: params_digest does not match params");
  long long overflow = 0;
  long long count = 0;
  if (!detail::parse_count(next("overflow_count"), overflow) || overflow < 0)
    throw ParseError("plan sidecar: malformed overflow_count");
  if (!detail::parse_count(next("placements"), count) || count < 0)
    throw ParseError("plan sidecar: malformed placements count");
  f.plan.overflow_count = static_cast<std::size_t>(overflow);
  for (long long k = 0; k < count; ++k) {
    if (!std::getline(in, line))
      throw ParseError("plan sidecar: expected " + std::to_string(count) + " placements, got " + std::to_string(k));
    ++lineno;
    auto fields = detail::split_ws(line);
    long long idx = 0;
    long long x = 0;
    long long y = 0;
    if (fields.size() != 3 || !detail::parse_count(fields[0], idx) || !detail::parse_count(fields[1], x) ||
        !detail::parse_count(fields[2], y) || idx < 0)
      throw ParseError("plan sidecar: line " + std::to_string(lineno) + ": expected 'token_index x y'");
    f.plan.placements.push_back({static_cast<std::size_t>(idx), static_cast<int>(x), static_cast<int>(y)});
  }
  return f;
}

} // namespace textimg
