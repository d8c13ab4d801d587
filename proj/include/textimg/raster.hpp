#pragma once

// Pixel buffers: rendering layout plans, PNG I/O, crop augmentation and
// text-over-photo composition. There is intentionally no mirror/flip
// operation: mirroring reverses reading order inside and across visual words.

#include "textimg/embeddings.hpp"
#include "textimg/layout.hpp"
#include "textimg/tokenizer.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace textimg {

/// Provenance stored in PNG tEXt chunks under the keys "doc_id", "params", "overflow", "oov"
/// (plus "crop" on crop outputs).
struct ImageMeta {
  std::string doc_id;
  std::string params_digest;
  std::size_t overflow_count = 0;
  std::size_t oov_count = 0;
  std::string crop; // "x,y,size" when the image is a crop of an encoded image
  bool operator==(const ImageMeta&) const = default;
};

/// Row-major 8-bit RGB.
struct EncodedImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  ImageMeta meta;

  EncodedImage() = default;
  EncodedImage(int w, int h, Rgb fill = {}) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
      pixels[i] = fill.r;
      pixels[i + 1] = fill.g;
      pixels[i + 2] = fill.b;
    }
  }

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  std::size_t row_bytes() const { return static_cast<std::size_t>(width) * 3; }
};

inline void fill_rect(EncodedImage& img, int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g,
                      std::uint8_t b) {
  for (int y = y0; y < y0 + h; ++y) {
    std::uint8_t* p = img.at(x0, y);
    for (int x = 0; x < w; ++x, p += 3) {
      p[0] = r;
      p[1] = g;
      p[2] = b;
    }
  }
}

/// Paints each placed word's superpixels with its quantized RGB triplets over a background canvas.
inline EncodedImage render(const LayoutPlan& plan, const TokenSequence& tokens, const EmbeddingTable& table,
                           const EncodingParams& params) {
  validate(params);
  const auto geom = word_geometry(params);
  const auto d = static_cast<std::size_t>(params.feature_count);
  check_feature_count(d, table.dim());
  const int sp = params.superpixel;

  EncodedImage img(params.image_width, params.image_height, params.background);
  img.meta.params_digest = plan.params_digest;
  img.meta.overflow_count = plan.overflow_count;
  img.meta.oov_count = tokens.oov_count;

  for (const auto& pl : plan.placements) {
    if (pl.token_index >= tokens.size())
      throw EncodeError("render: placement refers to token " + std::to_string(pl.token_index) + " of " +
                        std::to_string(tokens.size()));
    if (pl.x < 0 || pl.y < 0 || pl.x + geom.width_px > img.width || pl.y + geom.height_px > img.height)
      throw EncodeError("render: placement outside the canvas");
    const auto& word = tokens.tokens[pl.token_index];
    const auto idx = table.index_of(word);
    if (!idx)
      throw EncodeError("render: token '" + word + "' is not in the embedding table");
    const auto q = quantize(table.vector(*idx), table.stats(), d);
    for (std::size_t i = 0; i < geom.slots.size(); ++i) {
      const auto& slot = geom.slots[i];
      fill_rect(img, pl.x + slot.col * sp, pl.y + slot.row * sp, sp, sp, q[3 * i], q[3 * i + 1], q[3 * i + 2]);
    }
  }
  return img;
}

namespace detail {

struct PngErrorState {
  char message[256];
};

inline void png_error_cb(png_structp png, png_const_charp msg) {
  auto* state = static_cast<PngErrorState*>(png_get_error_ptr(png));
  std::snprintf(state->message, sizeof state->message, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_cb(png_structp, png_const_charp) {}

inline void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

inline void png_flush_cb(png_structp) {}

struct PngReadCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->size - cur->pos < len)
    png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->data + cur->pos, len);
  cur->pos += len;
}

struct RawPng {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::pair<std::string, std::string>> text;
};

// libpng reports errors via longjmp; only trivially destructible locals live in these frames.
inline bool png_encode(const EncodedImage& img, const png_text* texts, int ntext, int level,
                       std::vector<std::uint8_t>* out, PngErrorState* err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, png_error_cb, png_warning_cb);
  if (png == nullptr) {
    std::snprintf(err->message, sizeof err->message, "cannot create PNG writer");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, out, png_write_cb, png_flush_cb);
  png_set_compression_level(png, level);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (ntext > 0)
    png_set_text(png, info, texts, ntext);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3);
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return true;
}

// When `convert` is set any PNG is normalized to 8-bit RGB; otherwise only 8-bit RGB is accepted.
inline bool png_decode(const std::uint8_t* data, std::size_t size, bool convert, RawPng* out,
                       PngErrorState* err) {
  if (size < 8 || png_sig_cmp(data, 0, 8) != 0) {
    std::snprintf(err->message, sizeof err->message, "not a PNG stream");
    return false;
  }
  PngReadCursor cursor{data, size, 0};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, png_error_cb, png_warning_cb);
  if (png == nullptr) {
    std::snprintf(err->message, sizeof err->message, "cannot create PNG reader");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &cursor, png_read_cb);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  const int interlace = png_get_interlace_type(png, info);
  if (!convert) {
    if (depth != 8 || color != PNG_COLOR_TYPE_RGB)
      png_error(png, "unsupported PNG format: expected 8-bit RGB");
    if (interlace != PNG_INTERLACE_NONE)
      png_error(png, "unsupported PNG format: interlaced");
  } else {
    if (color == PNG_COLOR_TYPE_PALETTE)
      png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
      png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
      png_set_tRNS_to_alpha(png);
    if (depth == 16)
      png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
  }
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(w) * 3)
    png_error(png, "unexpected PNG row layout");
  out->width = static_cast<int>(w);
  out->height = static_cast<int>(h);
  out->pixels.resize(static_cast<std::size_t>(w) * h * 3);
  const int passes = convert ? png_set_interlace_handling(png) : 1;
  for (int pass = 0; pass < passes; ++pass)
    for (png_uint_32 y = 0; y < h; ++y)
      png_read_row(png, out->pixels.data() + static_cast<std::size_t>(y) * w * 3, nullptr);
  png_read_end(png, info);
  png_textp texts = nullptr;
  int ntext = 0;
  png_get_text(png, info, &texts, &ntext);
  for (int i = 0; i < ntext; ++i)
    out->text.emplace_back(texts[i].key, std::string(texts[i].text, texts[i].text_length));
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline std::size_t parse_meta_count(const std::string& v) {
  long long n = 0;
  if (!parse_count(v, n) || n < 0)
    throw ParseError("png metadata: malformed count '" + v + "'");
  return static_cast<std::size_t>(n);
}

} // namespace detail

/// Default deflate level; fixed so that PNG bytes are reproducible.
inline constexpr int kPngCompressionLevel = 6;

inline std::vector<std::uint8_t> encode_png(const EncodedImage& img, int compression_level = kPngCompressionLevel) {
  if (img.width <= 0 || img.height <= 0 || img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw EncodeError("write_png: pixel buffer does not match image dimensions");
  std::vector<std::pair<std::string, std::string>> kv;
  if (!img.meta.doc_id.empty())
    kv.emplace_back("doc_id", img.meta.doc_id);
  if (!img.meta.params_digest.empty())
    kv.emplace_back("params", img.meta.params_digest);
  kv.emplace_back("overflow", std::to_string(img.meta.overflow_count));
  kv.emplace_back("oov", std::to_string(img.meta.oov_count));
  if (!img.meta.crop.empty())
    kv.emplace_back("crop", img.meta.crop);
  std::vector<png_text> texts(kv.size());
  for (std::size_t i = 0; i < kv.size(); ++i) {
    texts[i].compression = PNG_TEXT_COMPRESSION_NONE;
    texts[i].key = kv[i].first.data();
    texts[i].text = kv[i].second.data();
    texts[i].text_length = kv[i].second.size();
  }
  std::vector<std::uint8_t> out;
  out.reserve(img.pixels.size() / 4 + 256);
  detail::PngErrorState err{};
  if (!detail::png_encode(img, texts.data(), static_cast<int>(texts.size()), compression_level, &out, &err))
    throw EncodeError(std::string("write_png: ") + err.message);
  return out;
}

namespace detail {

inline EncodedImage decode_png_impl(std::span<const std::uint8_t> bytes, bool convert) {
  RawPng raw;
  PngErrorState err{};
  if (!png_decode(bytes.data(), bytes.size(), convert, &raw, &err))
    throw ParseError(std::string("read_png: ") + err.message);
  EncodedImage img;
  img.width = raw.width;
  img.height = raw.height;
  img.pixels = std::move(raw.pixels);
  for (const auto& [key, value] : raw.text) {
    if (key == "doc_id")
      img.meta.doc_id = value;
    else if (key == "params")
      img.meta.params_digest = value;
    else if (key == "overflow")
      img.meta.overflow_count = parse_meta_count(value);
    else if (key == "oov")
      img.meta.oov_count = parse_meta_count(value);
    else if (key == "crop")
      img.meta.crop = value;
  }
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ParseError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace detail

/// Strict reader for encoded images: 8-bit RGB, non-interlaced.
inline EncodedImage decode_png(std::span<const std::uint8_t> bytes) { return detail::decode_png_impl(bytes, false); }

/// Lenient reader for photos: any PNG is converted to 8-bit RGB (alpha dropped).
inline EncodedImage decode_photo_png(std::span<const std::uint8_t> bytes) {
  return detail::decode_png_impl(bytes, true);
}

inline void write_png(const EncodedImage& img, std::ostream& out) {
  const auto bytes = encode_png(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw EncodeError("write_png: stream write failed");
}

inline EncodedImage read_png(std::istream& in) {
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
  return decode_png(bytes);
}

inline void write_png_file(const EncodedImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw EncodeError("cannot create '" + path + "'");
  write_png(img, out);
}

inline EncodedImage read_png_file(const std::string& path) { return decode_png(detail::read_file_bytes(path)); }
inline EncodedImage read_photo_file(const std::string& path) {
  return decode_photo_png(detail::read_file_bytes(path));
}

enum class CropMode { random, center };

struct CropPolicy {
  int crop_size = 227;
  int count = 10;
  std::uint64_t seed = 0;
  CropMode mode = CropMode::random;
};

struct CropOffset {
  int x = 0;
  int y = 0;
  bool operator==(const CropOffset&) const = default;
};

/// SplitMix64; small, portable and fully specified, so crop offsets match across platforms.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t v = 0;
    do {
      v = next();
    } while (v >= limit);
    return v % bound;
  }

private:
  std::uint64_t state_;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Per-document generator seed derived from the run seed and the document id.
inline std::uint64_t crop_seed(std::uint64_t seed, std::string_view doc_id) {
  SplitMix64 mix(seed ^ fnv1a64(doc_id));
  return mix.next();
}

inline void validate(const CropPolicy& policy, int width, int height) {
  if (policy.crop_size <= 0)
    throw InvalidParams("crop size must be positive");
  if (policy.crop_size > std::min(width, height))
    throw InvalidParams("crop size " + std::to_string(policy.crop_size) + " exceeds image " + std::to_string(width) +
                        "x" + std::to_string(height));
  if (policy.mode == CropMode::random && policy.count < 1)
    throw InvalidParams("random crop count must be at least 1");
}

inline std::vector<CropOffset> crop_offsets(int width, int height, const CropPolicy& policy,
                                            std::string_view doc_id) {
  validate(policy, width, height);
  const int span_x = width - policy.crop_size;
  const int span_y = height - policy.crop_size;
  if (policy.mode == CropMode::center)
    return {{span_x / 2, span_y / 2}};
  SplitMix64 rng(crop_seed(policy.seed, doc_id));
  std::vector<CropOffset> out;
  out.reserve(static_cast<std::size_t>(policy.count));
  for (int i = 0; i < policy.count; ++i) {
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(span_x) + 1));
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(span_y) + 1));
    out.push_back({x, y});
  }
  return out;
}

inline EncodedImage crop(const EncodedImage& img, CropOffset at, int size) {
  EncodedImage out;
  out.width = size;
  out.height = size;
  out.pixels.resize(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y)
    std::memcpy(out.pixels.data() + static_cast<std::size_t>(y) * size * 3, img.at(at.x, at.y + y),
                static_cast<std::size_t>(size) * 3);
  out.meta = img.meta;
  out.meta.crop = std::to_string(at.x) + "," + std::to_string(at.y) + "," + std::to_string(size);
  return out;
}

/// Square crops per the policy; random offsets are seeded by (policy.seed, img.meta.doc_id).
inline std::vector<EncodedImage> crops(const EncodedImage& img, const CropPolicy& policy) {
  std::vector<EncodedImage> out;
  for (const auto& off : crop_offsets(img.width, img.height, policy, img.meta.doc_id))
    out.push_back(crop(img, off, policy.crop_size));
  return out;
}

/// Bilinear resampling with pixel-center alignment; identity when sizes match.
inline EncodedImage resize_bilinear(const EncodedImage& src, int width, int height) {
  if (width <= 0 || height <= 0)
    throw InvalidParams("resize: target size must be positive");
  if (src.width == width && src.height == height)
    return src;
  EncodedImage out(width, height);
  out.meta = src.meta;
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      std::uint8_t* o = out.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(x0, y0)[c] * (1 - wx) + src.at(x1, y0)[c] * wx;
        const double bot = src.at(x0, y1)[c] * (1 - wx) + src.at(x1, y1)[c] * wx;
        o[c] = static_cast<std::uint8_t>(std::clamp(std::round(top * (1 - wy) + bot * wy), 0.0, 255.0));
      }
    }
  }
  return out;
}

/// Height of the text band a plan occupies: used rows times the vertical pitch plus the top margin.
inline int text_band_height(const LayoutPlan& plan, const EncodingParams& params) {
  const auto rows = rows_used(plan);
  if (rows == 0)
    return 0;
  const auto [pitch_x, pitch_y] = pitches(params, word_geometry(params));
  (void)pitch_x;
  const auto band = static_cast<long long>(rows) * pitch_y + params.effective_margin();
  return static_cast<int>(std::min<long long>(band, params.image_height));
}

/// Overwrites the top band of the (resized) photo with the rendered encoded text.
inline EncodedImage compose_multimodal(const EncodedImage& photo, const TokenSequence& tokens,
                                       const EmbeddingTable& table, const EncodingParams& params) {
  validate(params);
  EncodedImage out = resize_bilinear(photo, params.image_width, params.image_height);
  const auto plan = plan_layout(tokens, params);
  if (plan.overflow_count > 0)
    throw EncodeError("compose: text needs more rows than the photo allows; " +
                      std::to_string(plan.overflow_count) + " of " + std::to_string(tokens.size()) +
                      " words overflow (capacity " + std::to_string(capacity(params)) + ")");
  const int band = text_band_height(plan, params);
  if (band > 0) {
    const auto text = render(plan, tokens, table, params);
    std::copy_n(text.pixels.begin(), static_cast<std::size_t>(band) * text.row_bytes(), out.pixels.begin());
  }
  out.meta.params_digest = plan.params_digest;
  out.meta.oov_count = tokens.oov_count;
  out.meta.overflow_count = 0;
  return out;
}

} // namespace textimg
