#pragma once

// Command-line front end. Kept in a header so tests can drive run_cli() in-process.

#include "textimg/corpus.hpp"
#include "textimg/decode.hpp"
#include "textimg/embeddings.hpp"
#include "textimg/layout.hpp"
#include "textimg/raster.hpp"
#include "textimg/tokenizer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace textimg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr std::string_view kMirrorRejected =
    "mirror augmentation breaks encoding semantics: flipping reverses word order and the "
    "superpixel order inside every visual word";

/// Configuration errors: bad flags, missing inputs, violated parameter invariants (exit 1).
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ParamFlags {
  std::optional<int> size;
  std::optional<int> width;
  std::optional<int> height;
  int superpixel = 4;
  int word_width = 4;
  int spacing = 12;
  int feature_count = 36;
  std::string shape = "VW-5";
  std::string background = "0,0,0";
  std::optional<int> margin;

  void add_to(CLI::App& app) {
    app.add_option("--size", size, "Square image side in pixels (sets width and height)")->default_str("256");
    app.add_option("--width", width, "Image width in pixels (overrides --size)");
    app.add_option("--height", height, "Image height in pixels (overrides --size)");
    app.add_option("--P", superpixel, "Superpixel side in pixels")->capture_default_str();
    app.add_option("--V", word_width, "Visual-word width in superpixels")->capture_default_str();
    app.add_option("--s", spacing, "Blank pixels between visual words")->capture_default_str();
    app.add_option("--d", feature_count, "Embedding components per word (multiple of 3)")->capture_default_str();
    app.add_option("--shape", shape, "Visual-word shape VW-1..VW-5 (VW-5 is the rectangle)")->capture_default_str();
    app.add_option("--background", background, "Background color r,g,b")->capture_default_str();
    app.add_option("--margin", margin, "Outer canvas margin in pixels")->default_str("s/2");
  }

  EncodingParams build() const {
    EncodingParams p;
    p.image_width = width.value_or(size.value_or(256));
    p.image_height = height.value_or(size.value_or(256));
    p.superpixel = superpixel;
    p.word_width = word_width;
    p.spacing = spacing;
    p.feature_count = feature_count;
    p.shape = parse_shape(shape);
    p.background = parse_rgb(background);
    p.margin = margin;
    validate(p);
    return p;
  }
};

struct EmbeddingFlags {
  std::string path;
  std::string format = "auto";
  std::string stats_path;
  bool lenient = false;

  void add_to(CLI::App& app, bool with_lenient = true) {
    app.add_option("--emb", path, "Word-embedding file (text or word2vec binary)")->required();
    app.add_option("--emb-format", format, "Embedding format: auto, text or binary")
        ->check(CLI::IsMember({"auto", "text", "binary"}))
        ->capture_default_str();
    app.add_option("--stats", stats_path, "Normalization stats sidecar to use instead of the table's own");
    if (with_lenient)
      app.add_flag("--lenient", lenient, "Warn instead of failing on inconsistent inputs and failed records");
  }

  EmbeddingTable load(std::ostream& err) const {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw UsageError("cannot open embedding file '" + path + "'");
    std::string fmt = format;
    if (fmt == "auto") {
      const auto ext = fs::path(path).extension().string();
      fmt = (ext == ".bin") ? "binary" : "text";
    }
    ParseOptions opts;
    opts.strict = !lenient;
    opts.warn = [&err](std::string_view msg) { err << "warning: " << msg << '\n'; };
    EmbeddingTable table = fmt == "binary" ? parse_embedding_binary(in, opts) : parse_embedding_text(in, opts);
    if (!stats_path.empty()) {
      std::ifstream sin(stats_path);
      if (!sin)
        throw UsageError("cannot open stats file '" + stats_path + "'");
      table = std::move(table).with_stats(read_stats(sin));
    }
    return table;
  }
};

struct CropFlags {
  std::uint64_t seed = 0;
  int size = 0;
  int count = 10;
  std::string mode = "random";

  void add_to(CLI::App& app) {
    app.add_option("--seed", seed, "Seed for random crops")->capture_default_str();
    app.add_option("--crop-size", size, "Also write square crops of this size (0: none)")->capture_default_str();
    app.add_option("--crops", count, "Number of random crops per image")->capture_default_str();
    app.add_option("--crop-mode", mode, "Crop mode: random or center")
        ->check(CLI::IsMember({"random", "center"}))
        ->capture_default_str();
  }

  std::optional<CropPolicy> policy(const EncodingParams& params) const {
    if (size <= 0)
      return std::nullopt;
    CropPolicy p;
    p.crop_size = size;
    p.count = count;
    p.seed = seed;
    p.mode = mode == "center" ? CropMode::center : CropMode::random;
    validate(p, params.image_width, params.image_height);
    return p;
  }
};

inline void set_log_level(const std::string& level) {
  static const std::map<std::string, LogLevel> levels{{"debug", LogLevel::debug},
                                                      {"info", LogLevel::info},
                                                      {"warn", LogLevel::warn},
                                                      {"error", LogLevel::error},
                                                      {"off", LogLevel::off}};
  log::threshold() = levels.at(level);
}

/// Warning sink that serializes writes from worker threads.
inline WarningSink locked_sink(std::ostream& err) {
  auto mu = std::make_shared<std::mutex>();
  return [mu, &err](std::string_view msg) {
    std::lock_guard lock(*mu);
    err << "warning: " << msg << '\n';
  };
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline int cmd_encode(const ParamFlags& pf, const EmbeddingFlags& ef, const std::string& csv_path,
                      const std::string& news_root, const std::string& categories, const std::string& split,
                      std::size_t label_field, const std::vector<std::size_t>& text_fields, const std::string& out_dir,
                      unsigned workers, const CropFlags& cf, bool keep_case, bool no_plans, std::ostream& out, std::ostream& err) {
  if (csv_path.empty() == news_root.empty())
    throw UsageError("exactly one of --in or --news20 is required");
  const auto params = pf.build();
  const auto table = ef.load(err);
  check_feature_count(static_cast<std::size_t>(params.feature_count), table.dim());

  CorpusOptions opts;
  opts.output_root = out_dir;
  opts.workers = workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : workers;
  opts.strict = !ef.lenient;
  opts.write_plans = !no_plans;
  opts.tokenizer.keep_case = keep_case;
  opts.warn = locked_sink(err);
  opts.crops = cf.policy(params);

  CorpusResult result;
  if (!csv_path.empty()) {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in)
      throw UsageError("cannot open corpus '" + csv_path + "'");
    CsvFieldSpec spec;
    spec.label_field = label_field;
    spec.text_fields = text_fields;
    CsvCorpusReader reader(in, spec, parse_split(split));
    result = encode_corpus(reader.as_source(), table, params, opts);
  } else {
    std::set<std::string> cats;
    std::stringstream cs(categories);
    for (std::string c; std::getline(cs, c, ',');)
      if (!c.empty())
        cats.insert(c);
    auto news = read_20news(news_root, cats, opts.warn);
    if (news.skipped > 0)
      err << "warning: skipped " << news.skipped << " unreadable messages\n";
    result = encode_corpus(source_from(std::move(news.records)), table, params, opts);
  }

  const auto n = result.manifest.entries.size();
  const double oov_rate = result.tokens ? static_cast<double>(result.oov) / result.tokens : 0.0;
  const double kept = static_cast<double>(result.tokens - result.oov);
  const double overflow_rate = kept > 0 ? static_cast<double>(result.overflow) / kept : 0.0;
  out << "records " << n << '\n'
      << "failures " << result.failures << '\n'
      << "oov_rate " << fixed(oov_rate, 4) << '\n'
      << "overflow_rate " << fixed(overflow_rate, 4) << '\n'
      << "docs_per_second " << fixed(result.docs_per_second, 1) << '\n'
      << "manifest " << (fs::path(out_dir) / "manifest.tsv").string() << '\n';
  return kExitOk;
}

inline int cmd_decode(const EmbeddingFlags& ef, const std::string& image_path, std::string plan_path,
                      std::ostream& out, std::ostream& err) {
  if (plan_path.empty())
    plan_path = fs::path(image_path).replace_extension(".plan").string();
  std::ifstream plan_in(plan_path);
  if (!plan_in)
    throw UsageError("missing plan sidecar '" + plan_path + "'");
  const auto plan_file = read_plan(plan_in);
  EncodedImage img;
  try {
    img = read_png_file(image_path);
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  if (!img.meta.crop.empty() || img.width != plan_file.params.image_width ||
      img.height != plan_file.params.image_height)
    throw UsageError("decoding cropped or resized images is not supported (image " + std::to_string(img.width) +
                     "x" + std::to_string(img.height) + ", plan expects " +
                     std::to_string(plan_file.params.image_width) + "x" +
                     std::to_string(plan_file.params.image_height) + ")");
  if (!img.meta.params_digest.empty() && img.meta.params_digest != plan_file.plan.params_digest)
    throw UsageError("image and plan sidecar were produced with different parameters");
  const auto table = ef.load(err);
  check_feature_count(static_cast<std::size_t>(plan_file.params.feature_count), table.dim());
  const auto doc = decode_document(img, plan_file.plan, plan_file.params, table);
  write_decoded(doc, out);
  if (doc.mean_distance > 0)
    err << "warning: mean distance " << doc.mean_distance
        << " > 0; the embedding or stats differ from the ones used for encoding\n";
  return kExitOk;
}

inline int cmd_capacity(const ParamFlags& pf, bool sweep, std::ostream& out) {
  const auto params = pf.build();
  if (!sweep) {
    const auto g = word_geometry(params);
    const auto [cols, rows] = grid_shape(params);
    out << "word_px " << g.width_px << "x" << g.height_px << '\n'
        << "grid " << cols << "x" << rows << '\n'
        << "capacity " << capacity(params) << '\n'
        << "params_digest " << params_digest(params) << '\n';
    return kExitOk;
  }
  out << "d\tword_px\tgrid\tMw\tplaced\n";
  for (int d : {12, 24, 36, 48, 60}) {
    auto p = params;
    p.feature_count = d;
    const auto g = word_geometry(p);
    const auto [cols, rows] = grid_shape(p);
    const auto cap = capacity(p);
    const auto placed = plan_layout(cap + 1, p).placements.size();
    out << d << '\t' << g.width_px << 'x' << g.height_px << '\t' << cols << 'x' << rows << '\t' << cap << '\t'
        << placed << '\n';
  }
  return kExitOk;
}

inline int cmd_compose(const ParamFlags& pf, const EmbeddingFlags& ef, const std::string& photo_path,
                       std::optional<std::string> text, const std::string& text_file, const std::string& out_path,
                       const std::string& doc_id, bool keep_case, const CropFlags& cf, std::ostream& out,
                       std::ostream& err) {
  if (text.has_value() == !text_file.empty())
    throw UsageError("exactly one of --text or --text-file is required");
  if (!text_file.empty()) {
    std::ifstream tin(text_file, std::ios::binary);
    if (!tin)
      throw UsageError("cannot open text file '" + text_file + "'");
    text = detail::read_all(tin);
  }
  const auto params = pf.build();
  const auto crop_policy = cf.policy(params);
  EncodedImage photo;
  try {
    photo = read_photo_file(photo_path);
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  const auto table = ef.load(err);
  check_feature_count(static_cast<std::size_t>(params.feature_count), table.dim());
  TokenizerOptions tok;
  tok.keep_case = keep_case;
  const auto tokens = filter_in_vocabulary(tokenize(*text, tok), table);
  EncodedImage composed;
  try {
    composed = compose_multimodal(photo, tokens, table, params);
  } catch (const EncodeError& e) {
    throw UsageError(e.what());
  }
  composed.meta.doc_id = doc_id;
  write_png_file(composed, out_path);
  std::size_t crop_count = 0;
  if (crop_policy) {
    // <stem>_<k>.png next to the composite
    const fs::path base(out_path);
    for (const auto& c : crops(composed, *crop_policy)) {
      auto name = base;
      name.replace_filename(base.stem().string() + "_" + std::to_string(crop_count++) + ".png");
      write_png_file(c, name.string());
    }
  }
  const auto band = text_band_height(plan_layout(tokens, params), params);
  out << "tokens " << tokens.size() << '\n'
      << "oov " << tokens.oov_count << '\n'
      << "band_rows " << band << '\n'
      << "crops " << crop_count << '\n'
      << "output " << out_path << '\n';
  return kExitOk;
}

inline int cmd_inspect(const ParamFlags& pf, const EmbeddingFlags& ef, std::ostream& out, std::ostream& err) {
  const auto params = pf.build();
  const auto table = ef.load(err);
  const auto& stats = table.stats();
  double lo = stats.min[0];
  double hi = stats.max[0];
  double range_sum = 0;
  std::size_t degenerate = 0;
  for (std::size_t j = 0; j < stats.dim(); ++j) {
    lo = std::min(lo, stats.min[j]);
    hi = std::max(hi, stats.max[j]);
    range_sum += stats.max[j] - stats.min[j];
    if (!(stats.max[j] > stats.min[j]))
      ++degenerate;
  }
  auto d = static_cast<std::size_t>(params.feature_count);
  if (d > table.dim())
    d = table.dim() - table.dim() % 3;
  out << "vocab " << table.size() << '\n'
      << "dim " << table.dim() << '\n'
      << "min " << detail::format_real(lo, 9) << '\n'
      << "max " << detail::format_real(hi, 9) << '\n'
      << "mean_range " << detail::format_real(range_sum / static_cast<double>(stats.dim()), 9) << '\n'
      << "degenerate_dims " << degenerate << '\n';
  if (d >= 3) {
    const QuantizedCodebook codebook(table, d);
    out << "collisions " << codebook.collisions().size() << " (d=" << d << ")\n";
  } else {
    out << "collisions n/a (dim < 3)\n";
  }
  out << "params_digest " << params_digest(params) << '\n'
      << "table_digest " << table_digest(table) << '\n'
      << "stats_digest " << stats_digest(stats) << '\n';
  return kExitOk;
}

/// Runs the CLI on argv-style arguments (args[0] is the program name). Returns the exit status.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--mirror" || args[i] == "--flip" || args[i].rfind("--mirror=", 0) == 0) {
      err << "error: " << kMirrorRejected << '\n';
      return kExitUsage;
    }
  }

  CLI::App app{"Encode text documents as images of word-embedding colors"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "Log level: debug, info, warn, error, off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}))
      ->capture_default_str();

  // encode
  auto* encode = app.add_subcommand("encode", "Encode a corpus into a PNG tree plus manifest");
  ParamFlags enc_params;
  EmbeddingFlags enc_emb;
  enc_params.add_to(*encode);
  enc_emb.add_to(*encode);
  std::string csv_path;
  std::string news_root;
  std::string categories = "comp,politics,rec,religion";
  std::string split = "train";
  std::size_t label_field = 1;
  std::vector<std::size_t> text_fields{2, 3};
  std::string out_dir;
  unsigned workers = 0;
  CropFlags enc_crops;
  bool keep_case = false;
  bool no_plans = false;
  encode->add_option("--in", csv_path, "CSV corpus: class index, then text fields");
  encode->add_option("--news20", news_root, "20news-bydate root directory");
  encode->add_option("--categories", categories, "20news super-categories (empty: all 20 groups)")
      ->capture_default_str();
  encode->add_option("--split", split, "Split assigned to CSV records")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  encode->add_option("--label-field", label_field, "1-based CSV column of the class index")->capture_default_str();
  encode->add_option("--text-fields", text_fields, "1-based CSV columns joined as document text")
      ->delimiter(',')
      ->default_str("2,3");
  encode->add_option("--out", out_dir, "Output root")->envname("TEXTIMG_OUT")->required();
  encode->add_option("--workers", workers, "Worker threads (0: all cores)")
      ->envname("TEXTIMG_WORKERS")
      ->capture_default_str();
  enc_crops.add_to(*encode);
  encode->add_flag("--keep-case", keep_case, "Do not lowercase tokens");
  encode->add_flag("--no-plans", no_plans, "Do not write .plan layout sidecars");

  // decode
  auto* decode = app.add_subcommand("decode", "Recover the words of an encoded image");
  EmbeddingFlags dec_emb;
  dec_emb.add_to(*decode);
  std::string image_path;
  std::string plan_path;
  decode->add_option("--image", image_path, "Encoded PNG")->required();
  decode->add_option("--plan", plan_path, "Layout sidecar (default: image path with .plan)");

  // capacity
  auto* cap = app.add_subcommand("capacity", "Maximum number of visual words per image");
  ParamFlags cap_params;
  cap_params.add_to(*cap);
  bool sweep = false;
  cap->add_flag("--sweep", sweep, "Tabulate capacity for d in {12,24,36,48,60}");

  // compose
  auto* compose = app.add_subcommand("compose", "Overlay encoded text on the top band of a photo");
  ParamFlags comp_params;
  EmbeddingFlags comp_emb;
  comp_params.add_to(*compose);
  comp_emb.add_to(*compose);
  std::string photo_path;
  std::optional<std::string> text;
  std::string text_file;
  std::string compose_out;
  std::string doc_id;
  bool comp_keep_case = false;
  compose->add_option("--photo", photo_path, "Photo PNG (resized to the image size)")->required();
  compose->add_option("--text", text, "Inline document text");
  compose->add_option("--text-file", text_file, "File holding the document text");
  compose->add_option("--out", compose_out, "Output PNG")->required();
  compose->add_option("--doc-id", doc_id, "Document id stored in the PNG metadata");
  compose->add_flag("--keep-case", comp_keep_case, "Do not lowercase tokens");
  CropFlags comp_crops;
  comp_crops.add_to(*compose);

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Summarize an embedding file and parameter digest");
  ParamFlags ins_params;
  EmbeddingFlags ins_emb;
  ins_params.add_to(*inspect);
  ins_emb.add_to(*inspect);

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << '\n';
    return kExitUsage;
  }

  try {
    set_log_level(log_level);
    if (*encode)
      return cmd_encode(enc_params, enc_emb, csv_path, news_root, categories, split, label_field, text_fields, out_dir,
                        workers, enc_crops, keep_case, no_plans, out, err);
    if (*decode)
      return cmd_decode(dec_emb, image_path, plan_path, out, err);
    if (*cap)
      return cmd_capacity(cap_params, sweep, out);
    if (*compose)
      return cmd_compose(comp_params, comp_emb, photo_path, text, text_file, compose_out, doc_id, comp_keep_case,
                         comp_crops, out, err);
    if (*inspect)
      return cmd_inspect(ins_params, ins_emb, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidParams& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

} // namespace textimg::cli
