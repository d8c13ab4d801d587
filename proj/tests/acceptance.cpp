// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "test_support.hpp"

#include "textimg/corpus.hpp"
#include "textimg/decode.hpp"
#include "textimg_cli.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

using namespace textimg;
using textimg::testing::oracle_greedy_pack;
using textimg::testing::slurp;
using textimg::testing::TempDir;

namespace {

// Pinned limits.
constexpr double kQuantizeSeconds = 1.0;
constexpr double kRoundTripSeconds = 30.0;
constexpr double kCapacitySeconds = 10.0;
constexpr double kDeterminismSeconds = 60.0;
constexpr double kSeparabilitySeconds = 60.0;
constexpr double kMinAccuracy = 0.95;
constexpr double kMinChiSquareP = 0.001;
constexpr double kMinDocsPerSecond = 150.0;
constexpr std::size_t kMinCapacityCombos = 500;

struct Outcome {
  bool ok = true;
  std::string detail;

  void fail(const std::string& why) {
    if (ok)
      detail = why;
    ok = false;
  }
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void check_time(Outcome& o, double seconds, double limit) {
  if (seconds >= limit)
    o.fail("took " + std::to_string(seconds) + " s, limit " + std::to_string(limit) + " s");
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (auto x : v)
    s += (s.empty() ? "" : "/") + std::to_string(x);
  return s;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  return out;
}

// 1
Outcome quantization_bound() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-100, 100);
  constexpr std::size_t kDim = 36;
  double worst = 0;
  for (int n = 0; n < 10000 && o.ok; ++n) {
    NormalizationStats s;
    std::vector<double> v(kDim);
    for (std::size_t j = 0; j < kDim; ++j) {
      const double a = u(rng);
      const double b = u(rng);
      s.min.push_back(std::min(a, b));
      s.max.push_back(std::max(a, b));
      v[j] = std::uniform_real_distribution<double>(s.min[j], s.max[j])(rng);
    }
    const auto back = dequantize(quantize(v, s, kDim), s);
    for (std::size_t j = 0; j < kDim; ++j) {
      const double bound = (s.max[j] - s.min[j]) / 255.0 / 2.0 + 1e-9;
      const double err = std::abs(back[j] - v[j]);
      worst = std::max(worst, err / bound);
      if (err > bound)
        o.fail("vector " + std::to_string(n) + " dim " + std::to_string(j) + " error exceeds bound");
    }
    const auto lo = quantize(s.min, s, kDim);
    const auto hi = quantize(s.max, s, kDim);
    for (std::size_t j = 0; j < kDim; ++j)
      if (lo[j] != 0 || hi[j] != 255)
        o.fail("endpoints do not map to 0 and 255");
  }
  const double secs = since(t0);
  check_time(o, secs, kQuantizeSeconds);
  if (o.ok)
    o.detail = "10000 vectors, worst error/bound " + std::to_string(worst) + ", " + std::to_string(secs) + " s";
  return o;
}

/// 5000 words, 36 dims; the first two components spell the word index in base 256 so no two words share a code.
EmbeddingTable collision_free_table() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<std::string> words;
  std::vector<double> values;
  for (int i = 0; i < 5000; ++i) {
    words.push_back("v" + std::to_string(i));
    for (int j = 0; j < 36; ++j) {
      int b = byte(rng);
      if (j == 0)
        b = i / 256;
      else if (j == 1)
        b = i % 256;
      if (i == 0 && j >= 2)
        b = 0;
      if (i == 1 && j >= 2)
        b = 255;
      values.push_back(b / 255.0);
    }
  }
  // pin the range of the index components
  values[0] = 0;
  values[36 * 4999] = 1.0;
  values[36 * 255 + 1] = 1.0;
  return EmbeddingTable(words, values, 36);
}

// 2
Outcome round_trip() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto table = collision_free_table();
  const QuantizedCodebook book(table, 36);
  if (!book.collisions().empty())
    o.fail("vocabulary has " + std::to_string(book.collisions().size()) + " code collisions");
  const EncodingParams p;
  std::mt19937_64 rng(3);
  std::size_t placed = 0;
  std::size_t recovered = 0;
  double distance = 0;
  for (int doc = 0; doc < 1000; ++doc) {
    TokenSequence tokens;
    const std::size_t len = rng() % 121;
    for (std::size_t k = 0; k < len; ++k)
      tokens.tokens.push_back(table.word(rng() % table.size()));
    const auto plan = plan_layout(tokens, p);
    const auto img = decode_png(encode_png(render(plan, tokens, table, p)));
    const auto out = decode_document(img, plan, p, book);
    placed += plan.placements.size();
    for (std::size_t k = 0; k < out.tokens.size(); ++k) {
      recovered += out.tokens[k].word == tokens.tokens[k] ? 1 : 0;
      distance += out.tokens[k].distance;
    }
  }
  if (recovered != placed)
    o.fail("recovered " + std::to_string(recovered) + " of " + std::to_string(placed) + " placed tokens");
  if (distance != 0)
    o.fail("nonzero total distance");
  const double secs = since(t0);
  check_time(o, secs, kRoundTripSeconds);
  if (o.ok)
    o.detail = "1000 docs, " + std::to_string(placed) + " tokens recovered in order, mean distance 0, " +
               std::to_string(secs) + " s";
  return o;
}

EncodingParams make(int size, int d, int s, int sp, int v) {
  EncodingParams p;
  p.image_width = p.image_height = size;
  p.feature_count = d;
  p.spacing = s;
  p.superpixel = sp;
  p.word_width = v;
  return p;
}

// 3
Outcome capacity_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  std::size_t combos = 0;
  for (int size : {64, 100, 128, 200, 256})
    for (int d : {12, 24, 36, 48, 60})
      for (int s : {0, 4, 8, 12})
        for (int sp : {1, 2, 4})
          for (int v : {2, 4, 6}) {
            const auto p = make(size, d, s, sp, v);
            const auto g = word_geometry(p);
            const auto oracle = oracle_greedy_pack(size, size, p.effective_margin(), s, g.width_px, g.height_px);
            const auto cap = capacity(p);
            const auto placed = plan_layout(cap + 1, p).placements.size();
            ++combos;
            if (cap != oracle.size() || placed != cap)
              o.fail(canonical_params(p) + ": closed form " + std::to_string(cap) + ", oracle " +
                     std::to_string(oracle.size()) + ", placed " + std::to_string(placed));
          }
  if (combos < kMinCapacityCombos)
    o.fail("only " + std::to_string(combos) + " combinations");
  std::vector<std::size_t> trend;
  for (int d : {12, 24, 36, 48, 60})
    trend.push_back(capacity(make(256, d, 12, 4, 4)));
  for (std::size_t i = 1; i < trend.size(); ++i)
    if (trend[i] > trend[i - 1])
      o.fail("capacity increases with d: " + join(trend));
  if (trend.front() <= trend.back())
    o.fail("capacity does not fall with d: " + join(trend));
  const double secs = since(t0);
  check_time(o, secs, kCapacitySeconds);
  if (o.ok)
    o.detail = std::to_string(combos) + " combinations match the greedy oracle; Mw for d=12..60 at defaults: " +
               join(trend) + ", " + std::to_string(secs) + " s";
  return o;
}

// 4
Outcome geometry_fixtures() {
  Outcome o;
  for (auto [v, rows] : {std::pair{2, 3}, {3, 2}, {6, 1}}) {
    auto p = make(256, 15, 12, 1, v);
    const auto g = word_geometry(p);
    if (g.height_px != rows || g.width_px != v)
      o.fail("d=15 V=" + std::to_string(v) + " gives " + std::to_string(g.width_px) + "x" +
             std::to_string(g.height_px));
  }
  const auto g = word_geometry(make(256, 12, 12, 4, 4));
  if (g.width_px != 16 || g.height_px != 4)
    o.fail("d=12 V=4 P=4 gives " + std::to_string(g.width_px) + "x" + std::to_string(g.height_px));
  if (o.ok)
    o.detail = "d=15 heights 3/2/1 for V=2/3/6; d=12 V=4 P=4 word is 16x4 px";
  return o;
}

std::vector<CorpusRecord> synthetic_records(const EmbeddingTable& table, std::size_t n, std::size_t mean_len,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(mean_len / 2, mean_len + mean_len / 2);
  std::vector<CorpusRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CorpusRecord r;
    r.split = i % 10 == 0 ? Split::test : Split::train;
    r.document.id = "doc" + std::to_string(i);
    r.document.label = std::to_string(1 + i % 4);
    const std::size_t k = len(rng);
    for (std::size_t t = 0; t < k; ++t) {
      if (t)
        r.document.text += rng() % 7 == 0 ? ", " : " ";
      r.document.text += rng() % 20 == 0 ? "Unseen" + std::to_string(rng() % 50) : table.word(rng() % table.size());
    }
    out.push_back(std::move(r));
  }
  return out;
}

// 5
Outcome determinism() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto table = textimg::testing::random_table(3000, 36, 4);
  const auto records = synthetic_records(table, 1000, 60, 5);
  const unsigned n = std::max(4u, std::thread::hardware_concurrency());
  TempDir one("accept-w1");
  TempDir many("accept-wn");
  auto run = [&](const fs::path& root, unsigned workers) {
    CorpusOptions opts;
    opts.output_root = root;
    opts.workers = workers;
    opts.crops = CropPolicy{227, 2, 77, CropMode::random};
    opts.warn = [](std::string_view) {};
    return encode_corpus(source_from(records), table, EncodingParams{}, opts);
  };
  const auto a = run(one.path(), 1);
  const auto b = run(many.path(), n);
  const auto ta = read_tree(one.path());
  const auto tb = read_tree(many.path());
  if (!(a.manifest == b.manifest))
    o.fail("manifests differ");
  if (ta.size() != tb.size())
    o.fail("file counts differ: " + std::to_string(ta.size()) + " vs " + std::to_string(tb.size()));
  std::size_t differing = 0;
  for (const auto& [path, bytes] : ta) {
    auto it = tb.find(path);
    if (it == tb.end() || it->second != bytes)
      ++differing;
  }
  if (differing > 0)
    o.fail(std::to_string(differing) + " files differ");
  if (ta.size() != records.size() * 4 + 2)
    o.fail("unexpected file count " + std::to_string(ta.size()));
  const double secs = since(t0);
  check_time(o, secs, kDeterminismSeconds);
  if (o.ok)
    o.detail = "1000 docs, 1 vs " + std::to_string(n) + " workers: " + std::to_string(ta.size()) +
               " files byte-identical incl. manifest, " + std::to_string(secs) + " s";
  return o;
}

template <class T>
concept has_mirror_op = requires(T img) { mirror(img); } || requires(T img) { flip(img); } ||
                        requires(T img) { flip_horizontal(img); } || requires(T img) { mirror_horizontal(img); };

// 6
Outcome crop_policy() {
  Outcome o;
  const auto center = crop_offsets(256, 256, {227, 1, 0, CropMode::center}, "any");
  if (center.size() != 1 || center[0] != CropOffset{14, 14})
    o.fail("center crop not at (14,14)");

  const CropPolicy policy{227, 10, 2024, CropMode::random};
  std::vector<std::size_t> cells(30 * 30, 0);
  std::size_t draws = 0;
  for (int doc = 0; doc < 1000; ++doc) {
    const auto id = "doc" + std::to_string(doc);
    const auto offs = crop_offsets(256, 256, policy, id);
    if (offs != crop_offsets(256, 256, policy, id))
      o.fail("random crops not reproducible for " + id);
    if (offs.size() != 10)
      o.fail("expected 10 crops");
    for (const auto& c : offs) {
      if (c.x < 0 || c.x > 29 || c.y < 0 || c.y > 29) {
        o.fail("offset out of range");
        continue;
      }
      ++cells[static_cast<std::size_t>(c.y * 30 + c.x)];
      ++draws;
    }
  }
  const double expected = static_cast<double>(draws) / cells.size();
  double stat = 0;
  for (auto c : cells)
    stat += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(static_cast<double>(cells.size() - 1));
  const double p = boost::math::cdf(boost::math::complement(dist, stat));
  if (!(p > kMinChiSquareP))
    o.fail("chi-square p = " + std::to_string(p));

  if constexpr (has_mirror_op<EncodedImage>)
    o.fail("a mirror operation exists");
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run_cli({"textimg", "encode", "--mirror", "--emb", "e", "--in", "i", "--out", "o"}, out, err);
  if (code != cli::kExitUsage || err.str().find("mirror augmentation") == std::string::npos)
    o.fail("mirror flag not rejected (exit " + std::to_string(code) + ")");
  if (o.ok)
    o.detail = "center (14,14); " + std::to_string(draws) + " draws over [0,29]^2, chi-square p = " +
               std::to_string(p) + "; mirror flag rejected with exit 1";
  return o;
}

// 7
Outcome composition() {
  Outcome o;
  std::istringstream emb("kidco 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1\n"
                         "safeway 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0 1 0\n"
                         "white 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1\n"
                         "g2000 0.5 0 0.5 0 0.5 0 0.5 0 0.5 0 0.5 0 0.5 0 0.5 0 0.5 0 0.5 0 0.5 0 0.5 0 0.5 "
                         "0 0.5 0 0.5 0 0.5 0 0.5 0 0.5 0\n");
  const auto table = parse_embedding_text(emb);
  const EncodingParams p;
  const auto tokens = filter_in_vocabulary(tokenize("Kidco Safeway white G2000"), table);
  if (tokens.size() != 4)
    o.fail("expected 4 tokens");
  const auto photo = textimg::testing::solid_photo(320, 240, 9);
  const auto composed = compose_multimodal(photo, tokens, table, p);
  const auto resized = resize_bilinear(photo, 256, 256);
  const auto plan = plan_layout(tokens, p);
  const auto standalone = render(plan, tokens, table, p);
  const int band = text_band_height(plan, p);
  const std::size_t split = static_cast<std::size_t>(band) * composed.row_bytes();
  if (band <= 0 || band >= 256)
    o.fail("band height " + std::to_string(band));
  if (!std::equal(composed.pixels.begin() + split, composed.pixels.end(), resized.pixels.begin() + split))
    o.fail("pixels outside the band differ from the resized photo");
  if (!std::equal(composed.pixels.begin(), composed.pixels.begin() + split, standalone.pixels.begin()))
    o.fail("band pixels differ from the standalone rendering");
  if (o.ok)
    o.detail = "4 tokens, band rows 0.." + std::to_string(band - 1) + " match the rendering, rows " +
               std::to_string(band) + "..255 match the resized 320x240 photo";
  return o;
}

// 8
Outcome separability() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0.0, 0.6);
  std::vector<std::string> words;
  std::vector<double> values;
  std::vector<std::vector<std::string>> vocab(2);
  for (int cls = 0; cls < 2; ++cls) {
    // opposite signs on alternating dimensions: same mean brightness, separated in direction
    std::vector<double> center(36);
    for (std::size_t j = 0; j < center.size(); ++j)
      center[j] = (j % 2 == 0 ? 1.0 : -1.0) * (cls == 0 ? 1.0 : -1.0) + noise(rng) * 0.5;
    for (int i = 0; i < 400; ++i) {
      const auto w = std::string(cls == 0 ? "alpha" : "beta") + std::to_string(i);
      words.push_back(w);
      vocab[cls].push_back(w);
      for (int j = 0; j < 36; ++j)
        values.push_back(center[j] + noise(rng));
    }
  }
  const EmbeddingTable table(words, values, 36);
  const EncodingParams p;
  auto image_of = [&](int cls) {
    TokenSequence t;
    const std::size_t len = 10 + rng() % 81;
    for (std::size_t k = 0; k < len; ++k)
      t.tokens.push_back(vocab[cls][rng() % vocab[cls].size()]);
    return render(plan_layout(t, p), t, table, p).pixels;
  };
  const std::size_t n_pixels = 256u * 256u * 3u;
  std::vector<std::vector<double>> centroid(2, std::vector<double>(n_pixels, 0.0));
  constexpr int kTrainPerClass = 500;
  for (int cls = 0; cls < 2; ++cls)
    for (int i = 0; i < kTrainPerClass; ++i) {
      const auto px = image_of(cls);
      for (std::size_t k = 0; k < n_pixels; ++k)
        centroid[cls][k] += px[k];
    }
  for (auto& c : centroid)
    for (auto& v : c)
      v /= kTrainPerClass;
  int correct = 0;
  constexpr int kHeldOut = 500;
  for (int i = 0; i < kHeldOut; ++i) {
    const int cls = i % 2;
    const auto px = image_of(cls);
    double d[2] = {0, 0};
    for (int c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < n_pixels; ++k)
        d[c] += (px[k] - centroid[c][k]) * (px[k] - centroid[c][k]);
    correct += (d[0] < d[1] ? 0 : 1) == cls ? 1 : 0;
  }
  const double acc = static_cast<double>(correct) / kHeldOut;
  if (acc < kMinAccuracy)
    o.fail("accuracy " + std::to_string(acc));
  const double secs = since(t0);
  check_time(o, secs, kSeparabilitySeconds);
  if (o.ok)
    o.detail = "nearest-centroid accuracy " + std::to_string(acc) + " on 500 held-out docs, " +
               std::to_string(secs) + " s";
  return o;
}

// 9
Outcome throughput() {
  Outcome o;
  // word2vec-sized table: 20000 words x 300 dims, the first 36 components are encoded
  const auto table = textimg::testing::random_table(20000, 300, 10);
  const auto records = synthetic_records(table, 10000, 100, 11);
  TempDir dir("accept-throughput");
  CorpusOptions opts;
  opts.output_root = dir.path();
  opts.workers = std::max(1u, std::thread::hardware_concurrency());
  opts.warn = [](std::string_view) {};
  const auto result = encode_corpus(source_from(records), table, EncodingParams{}, opts);
  if (result.failures != 0)
    o.fail(std::to_string(result.failures) + " documents failed");
  if (result.docs_per_second < kMinDocsPerSecond)
    o.fail(std::to_string(result.docs_per_second) + " docs/s below " + std::to_string(kMinDocsPerSecond));
  const std::string rate = std::to_string(result.docs_per_second) + " docs/s over " +
                           std::to_string(result.manifest.entries.size()) + " docs (" +
                           std::to_string(result.tokens / std::max<std::size_t>(1, result.manifest.entries.size())) +
                           " tokens avg) with " + std::to_string(opts.workers) + " worker(s)";
  o.detail = o.ok ? rate : o.detail + "; " + rate;
  return o;
}

} // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"quantization bound", quantization_bound},
      {"round-trip decoding", round_trip},
      {"capacity oracle", capacity_oracle},
      {"geometry fixtures", geometry_fixtures},
      {"determinism under parallelism", determinism},
      {"crop policy", crop_policy},
      {"multi-modal composition", composition},
      {"separability proxy", separability},
      {"throughput", throughput},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    std::printf("%s %zu %s: %s\n", o.ok ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failed += o.ok ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
