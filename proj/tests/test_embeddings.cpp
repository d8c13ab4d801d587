#include "test_support.hpp"

#include "textimg/embeddings.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <sstream>

using namespace textimg;
using textimg::testing::oracle_quantize;
using textimg::testing::random_table;
using textimg::testing::table_from_text;

namespace {

std::string binary_bytes(const std::vector<std::pair<std::string, std::vector<float>>>& records,
                         const std::string& header) {
  std::string out = header;
  for (const auto& [word, vec] : records) {
    out += word;
    out.push_back(' ');
    for (float f : vec) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int b = 0; b < 4; ++b)
        out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
    out.push_back('\n');
  }
  return out;
}

} // namespace

TEST(ParseText, MinimalWithHeader) {
  auto t = table_from_text("2 3\na 0 0 0\nb 1 1 1");
  EXPECT_EQ(t.dim(), 3u);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.word(0), "a");
  EXPECT_EQ(t.word(1), "b");
  EXPECT_EQ(t.stats().min, (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(t.stats().max, (std::vector<double>{1, 1, 1}));
}

TEST(ParseText, Headerless) {
  auto t = table_from_text("a 1 2\nb 3 4\n\n");
  EXPECT_EQ(t.dim(), 2u);
  EXPECT_EQ(t.size(), 2u);
}

TEST(ParseText, ComponentCountMismatchReportsLine) {
  try {
    table_from_text("a 1 2\nb 3");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(ParseText, EmptyStreamIsError) { EXPECT_THROW(table_from_text(""), ParseError); }

TEST(ParseText, DuplicateWordIsError) { EXPECT_THROW(table_from_text("a 1\nb 2\na 3\n"), ParseError); }

TEST(ParseText, NonFiniteIsError) {
  EXPECT_THROW(table_from_text("a 1 nan\n"), ParseError);
  EXPECT_THROW(table_from_text("a inf 1\n"), ParseError);
}

TEST(ParseText, HeaderCountMismatchStrictVsLenient) {
  EXPECT_THROW(table_from_text("3 1\na 1\nb 2\n"), ParseError);
  std::istringstream in("3 1\na 1\nb 2\n");
  std::vector<std::string> warnings;
  ParseOptions opts;
  opts.strict = false;
  opts.warn = [&](std::string_view m) { warnings.emplace_back(m); };
  auto t = parse_embedding_text(in, opts);
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(ParseBinary, MatchesTextParser) {
  const auto bytes = binary_bytes({{"a", {0, 0, 0}}, {"b", {1, 1, 1}}}, "2 3\n");
  std::istringstream in(bytes);
  auto bin = parse_embedding_binary(in);
  auto txt = table_from_text("2 3\na 0 0 0\nb 1 1 1");
  EXPECT_EQ(bin, txt);
}

TEST(ParseBinary, TruncatedReportsOffset) {
  auto bytes = binary_bytes({{"a", {0, 0, 0}}, {"b", {1, 1, 1}}}, "2 3\n");
  bytes.resize(bytes.size() - 6);
  std::istringstream in(bytes);
  try {
    parse_embedding_binary(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
    EXPECT_NE(msg.find("offset"), std::string::npos) << msg;
  }
}

TEST(ParseBinary, ExtraRecordStrictErrorsLenientWarns) {
  const auto bytes = binary_bytes({{"a", {0, 0, 0}}, {"b", {1, 1, 1}}}, "1 3\n");
  {
    std::istringstream in(bytes);
    EXPECT_THROW(parse_embedding_binary(in), ParseError);
  }
  std::istringstream in(bytes);
  int warned = 0;
  ParseOptions opts;
  opts.strict = false;
  opts.warn = [&](std::string_view) { ++warned; };
  auto t = parse_embedding_binary(in, opts);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(warned, 1);
}

TEST(ParseBinary, NonPositiveHeaderIsError) {
  std::istringstream zero("0 3\n");
  EXPECT_THROW(parse_embedding_binary(zero), ParseError);
  std::istringstream neg("2 -1\n");
  EXPECT_THROW(parse_embedding_binary(neg), ParseError);
}

TEST(Formats, TextRoundTripAndCrossFormatAgreement) {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> n(0.0f, 3.0f);
  std::vector<std::string> words;
  std::vector<double> values;
  for (int i = 0; i < 200; ++i) {
    words.push_back("tok" + std::to_string(i));
    for (int j = 0; j < 12; ++j)
      values.push_back(static_cast<double>(n(rng)));
  }
  const EmbeddingTable table(words, values, 12);

  // text keeps 9 significant digits: compare against the values rounded the same way
  std::vector<double> rounded;
  for (double v : values) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    rounded.push_back(std::strtod(buf, nullptr));
  }
  std::stringstream text;
  write_embedding_text(table, text);
  EXPECT_EQ(parse_embedding_text(text), EmbeddingTable(words, rounded, 12));

  std::stringstream bin;
  write_embedding_binary(table, bin);
  EXPECT_EQ(parse_embedding_binary(bin), table);
}

TEST(Normalization, Extrema) {
  auto t = table_from_text("a 0 5\nb 10 5\n");
  EXPECT_EQ(t.stats().min, (std::vector<double>{0, 5}));
  EXPECT_EQ(t.stats().max, (std::vector<double>{10, 5}));
  auto single = table_from_text("x 3 3 3\n");
  EXPECT_EQ(single.stats().min, single.stats().max);
}

TEST(Normalization, BoundsEveryStoredValue) {
  const auto t = random_table(500, 9, 3);
  const auto s = compute_normalization(t);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t.dim(); ++j) {
      EXPECT_LE(s.min[j], t.vector(i)[j]);
      EXPECT_GE(s.max[j], t.vector(i)[j]);
    }
}

TEST(Normalization, SidecarRoundTrip) {
  const auto t = random_table(50, 6, 5);
  std::stringstream ss;
  write_stats(t.stats(), ss);
  EXPECT_EQ(read_stats(ss), t.stats());
  std::istringstream bad("0 1 0\n");
  EXPECT_THROW(read_stats(bad), InvalidParams);
}

TEST(Quantize, EndpointsAndMidpoint) {
  NormalizationStats s{{0, 0, -1}, {10, 10, 1}};
  auto q = quantize(std::vector<double>{0, 10, 0}, s, 3);
  EXPECT_EQ(q[0], 0);
  EXPECT_EQ(q[1], 255);
  EXPECT_EQ(q[2], 128); // 127.5 rounds away from zero
}

TEST(Quantize, DegenerateDimensionIsZero) {
  NormalizationStats s{{2, 2, 2}, {2, 2, 2}};
  auto q = quantize(std::vector<double>{2, 2, 2}, s, 3);
  EXPECT_EQ(q.bytes, (std::vector<std::uint8_t>{0, 0, 0}));
}

TEST(Quantize, RejectsBadFeatureCount) {
  NormalizationStats s{{0, 0, 0, 0}, {1, 1, 1, 1}};
  std::vector<double> v{0.1, 0.2, 0.3, 0.4};
  EXPECT_THROW(quantize(v, s, 2), InvalidParams);
  EXPECT_THROW(quantize(v, s, 6), InvalidParams);
  EXPECT_NO_THROW(quantize(v, s, 3));
}

TEST(Quantize, MatchesOracleOnRandomInput) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int trial = 0; trial < 2000; ++trial) {
    NormalizationStats s;
    std::vector<double> v;
    for (int j = 0; j < 6; ++j) {
      double a = u(rng);
      double b = u(rng);
      if (trial % 17 == 0 && j == 2)
        b = a;
      s.min.push_back(std::min(a, b));
      s.max.push_back(std::max(a, b));
      std::uniform_real_distribution<double> inside(s.min.back(), std::nextafter(s.max.back(), 1e9));
      v.push_back(inside(rng));
    }
    const auto q = quantize(v, s, 6);
    for (int j = 0; j < 6; ++j)
      ASSERT_EQ(q[j], oracle_quantize(v[j], s.min[j], s.max[j]));
  }
}

TEST(Quantize, DeterministicAcrossCalls) {
  const auto t = random_table(20, 12, 9);
  for (std::size_t i = 0; i < t.size(); ++i)
    EXPECT_EQ(quantize(t.vector(i), t.stats(), 12), quantize(t.vector(i), t.stats(), 12));
}

TEST(Dequantize, Endpoints) {
  NormalizationStats s{{0, 0}, {10, 10}};
  QuantizedVector q{{0, 255}};
  EXPECT_EQ(dequantize(q, s), (std::vector<double>{0, 10}));
  NormalizationStats flat{{4}, {4}};
  EXPECT_EQ(dequantize(QuantizedVector{{200}}, flat), (std::vector<double>{4}));
}

TEST(Dequantize, ReconstructionWithinHalfStep) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    NormalizationStats s;
    std::vector<double> v;
    for (int j = 0; j < 3; ++j) {
      double a = u(rng);
      double b = u(rng);
      s.min.push_back(std::min(a, b));
      s.max.push_back(std::max(a, b));
      v.push_back(std::uniform_real_distribution<double>(s.min[j], s.max[j])(rng));
    }
    const auto back = dequantize(quantize(v, s, 3), s);
    for (int j = 0; j < 3; ++j)
      ASSERT_LE(std::abs(back[j] - v[j]), (s.max[j] - s.min[j]) / 255.0 / 2.0 + 1e-9);
  }
}

TEST(Dequantize, QuantizeInvertsDequantizeForEveryByte) {
  NormalizationStats s{{-3.7, 0.0, 1e-3}, {12.1, 1e6, 2e-3}};
  for (int b = 0; b < 256; ++b) {
    QuantizedVector q{{static_cast<std::uint8_t>(b), static_cast<std::uint8_t>(b), static_cast<std::uint8_t>(b)}};
    EXPECT_EQ(quantize(dequantize(q, s), s, 3), q) << "byte " << b;
  }
}

TEST(Lookup, PresentAbsentAndCaseSensitive) {
  auto t = table_from_text("a 1 2 3\nb 4 5 6\n");
  auto v = t.lookup("a");
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ((*v)[2], 3);
  EXPECT_FALSE(t.lookup("zzz").has_value());
  EXPECT_FALSE(t.lookup("A").has_value());
}

TEST(Table, WithStatsValidatesDimension) {
  auto t = table_from_text("a 0 0 0\nb 1 1 1\n");
  NormalizationStats wrong{{0, 0}, {1, 1}};
  EXPECT_THROW(std::move(t).with_stats(wrong), InvalidParams);
  auto t2 = table_from_text("a 0 0 0\nb 1 1 1\n");
  NormalizationStats wider{{-1, -1, -1}, {1, 1, 1}};
  auto t3 = std::move(t2).with_stats(wider);
  EXPECT_EQ(t3.stats(), wider);
  EXPECT_EQ(quantize(*t3.lookup("a"), t3.stats(), 3).bytes, (std::vector<std::uint8_t>{128, 128, 128}));
}
