#pragma once

// Dataset ingestion (class-index CSV, 20news-bydate tree) and the parallel
// encode pipeline that writes a PNG tree plus a manifest.

#include "textimg/embeddings.hpp"
#include "textimg/layout.hpp"
#include "textimg/raster.hpp"
#include "textimg/tokenizer.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

namespace textimg {

namespace fs = std::filesystem;

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train")
    return Split::train;
  if (s == "test")
    return Split::test;
  throw InvalidParams("unknown split '" + std::string(s) + "' (expected train or test)");
}

struct CorpusRecord {
  Document document;
  Split split = Split::train;
};

/// Pull-style record stream; returns nullopt at end of input.
using RecordSource = std::function<std::optional<CorpusRecord>()>;

inline RecordSource source_from(std::vector<CorpusRecord> records) {
  auto shared = std::make_shared<std::vector<CorpusRecord>>(std::move(records));
  auto pos = std::make_shared<std::size_t>(0);
  return [shared, pos]() -> std::optional<CorpusRecord> {
    if (*pos >= shared->size())
      return std::nullopt;
    return std::move((*shared)[(*pos)++]);
  };
}

/// Which CSV columns (1-based) hold the class index and the text.
struct CsvFieldSpec {
  std::size_t label_field = 1;
  std::vector<std::size_t> text_fields{2, 3};
};

/// Reads comma-separated, double-quote-quoted rows ("" escapes a quote; quoted fields may span lines).
class CsvCorpusReader {
public:
  CsvCorpusReader(std::istream& in, CsvFieldSpec spec, Split split) : in_(in), spec_(std::move(spec)), split_(split) {
    if (spec_.label_field == 0 || std::find(spec_.text_fields.begin(), spec_.text_fields.end(), 0) !=
                                      spec_.text_fields.end())
      throw InvalidParams("csv: field indices are 1-based");
    if (spec_.text_fields.empty())
      throw InvalidParams("csv: no text fields configured");
  }

  std::optional<CorpusRecord> next() {
    std::vector<std::string> fields;
    while (true) {
      if (!read_row(fields))
        return std::nullopt;
      ++row_;
      if (!(fields.size() == 1 && fields[0].empty()))
        break;
    }
    auto field = [&](std::size_t k) -> const std::string& {
      if (k > fields.size())
        throw ParseError("csv: row " + std::to_string(row_) + ": unknown field index " + std::to_string(k) +
                         " (row has " + std::to_string(fields.size()) + " fields)");
      return fields[k - 1];
    };
    long long label = 0;
    const auto& label_text = field(spec_.label_field);
    if (!detail::parse_count(label_text, label) || label < 1)
      throw ParseError("csv: row " + std::to_string(row_) + ": class index '" + label_text +
                       "' is not a positive integer");
    CorpusRecord rec;
    rec.split = split_;
    rec.document.id = to_string(split_) + "-" + std::to_string(row_);
    rec.document.label = std::to_string(label);
    for (std::size_t k : spec_.text_fields) {
      const auto& t = field(k);
      if (t.empty())
        continue;
      if (!rec.document.text.empty())
        rec.document.text.push_back(' ');
      rec.document.text += t;
    }
    return rec;
  }

  RecordSource as_source() {
    return [this] { return next(); };
  }

  std::size_t rows_read() const { return row_; }

private:
  bool read_row(std::vector<std::string>& fields) {
    fields.clear();
    int c = in_.get();
    if (c == EOF)
      return false;
    const std::size_t row = row_ + 1;
    auto malformed = [&](const std::string& why) {
      return ParseError("csv: row " + std::to_string(row) + ": " + why);
    };
    std::string cur;
    while (true) {
      if (c == '"') {
        // quoted field
        while (true) {
          c = in_.get();
          if (c == EOF)
            throw malformed("unterminated quoted field");
          if (c == '"') {
            if (in_.peek() == '"') {
              in_.get();
              cur.push_back('"');
            } else {
              break;
            }
          } else {
            cur.push_back(static_cast<char>(c));
          }
        }
        c = in_.get();
        if (c == '\r' && in_.peek() == '\n')
          c = in_.get();
        if (c != ',' && c != '\n' && c != EOF)
          throw malformed("unexpected character after closing quote");
      } else {
        while (c != ',' && c != '\n' && c != EOF) {
          if (c == '"')
            throw malformed("quote inside unquoted field");
          if (c == '\r' && in_.peek() == '\n') {
            c = in_.get();
            break;
          }
          cur.push_back(static_cast<char>(c));
          c = in_.get();
        }
      }
      fields.push_back(std::move(cur));
      cur.clear();
      if (c == ',') {
        c = in_.get();
        continue;
      }
      return true;
    }
  }

  std::istream& in_;
  CsvFieldSpec spec_;
  Split split_;
  std::size_t row_ = 0;
};

inline std::vector<CorpusRecord> read_csv_corpus(std::istream& in, const CsvFieldSpec& spec, Split split) {
  CsvCorpusReader reader(in, spec, split);
  std::vector<CorpusRecord> out;
  while (auto rec = reader.next())
    out.push_back(std::move(*rec));
  return out;
}

/// Newsgroup -> super-category used for the 4-way 20news task (plus sci and misc for completeness).
inline std::optional<std::string> news20_category(std::string_view group) {
  auto starts = [&](std::string_view p) { return group.substr(0, p.size()) == p; };
  if (starts("comp."))
    return "comp";
  if (starts("talk.politics."))
    return "politics";
  if (starts("rec."))
    return "rec";
  if (group == "alt.atheism" || group == "soc.religion.christian" || group == "talk.religion.misc")
    return "religion";
  if (starts("sci."))
    return "sci";
  if (group == "misc.forsale")
    return "misc";
  return std::nullopt;
}

struct News20Corpus {
  std::vector<CorpusRecord> records;
  std::size_t skipped = 0;
};

/// Reads a 20news-bydate tree: <root>/<*train*|*test*>/<newsgroup>/<message>.
/// With a non-empty filter, newsgroups map to super-categories and only the listed ones are kept;
/// with an empty filter every newsgroup is its own label.
inline News20Corpus read_20news(const fs::path& root, const std::set<std::string>& categories,
                                const WarningSink& warn = default_warning_sink()) {
  static const std::set<std::string> known{"comp", "politics", "rec", "religion", "sci", "misc"};
  for (const auto& c : categories)
    if (!known.contains(c))
      throw InvalidParams("20news: unknown category '" + c + "'");
  if (!fs::is_directory(root))
    throw ParseError("20news: root '" + root.string() + "' is not a directory");

  struct Item {
    Split split;
    std::string group;
    std::string file;
    fs::path path;
    std::string label;
  };
  std::vector<Item> items;
  for (const auto& split_dir : fs::directory_iterator(root)) {
    if (!split_dir.is_directory())
      continue;
    const auto name = split_dir.path().filename().string();
    std::optional<Split> split;
    if (name.find("train") != std::string::npos)
      split = Split::train;
    else if (name.find("test") != std::string::npos)
      split = Split::test;
    if (!split)
      continue;
    for (const auto& group_dir : fs::directory_iterator(split_dir.path())) {
      if (!group_dir.is_directory())
        continue;
      const auto group = group_dir.path().filename().string();
      std::string label = group;
      if (!categories.empty()) {
        auto cat = news20_category(group);
        if (!cat || !categories.contains(*cat))
          continue;
        label = *cat;
      }
      for (const auto& msg : fs::directory_iterator(group_dir.path())) {
        if (msg.is_regular_file())
          items.push_back({*split, group, msg.path().filename().string(), msg.path(), label});
      }
    }
  }
  if (items.empty())
    throw ParseError("20news: no messages found under '" + root.string() + "'");
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    return std::tie(a.split, a.group, a.file) < std::tie(b.split, b.group, b.file);
  });

  News20Corpus out;
  for (auto& it : items) {
    std::ifstream in(it.path, std::ios::binary);
    if (!in) {
      ++out.skipped;
      warn("20news: cannot read '" + it.path.string() + "', skipped");
      continue;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    CorpusRecord rec;
    rec.split = it.split;
    rec.document.id = it.group + "." + it.file;
    rec.document.label = it.label;
    rec.document.text = buf.str();
    out.records.push_back(std::move(rec));
  }
  return out;
}

struct ManifestEntry {
  std::string id;
  std::string label;
  Split split = Split::train;
  std::string path; // relative to the output root
  std::size_t token_count = 0;
  std::size_t oov_count = 0;
  std::size_t overflow_count = 0;
  std::size_t crop_count = 0;
  std::string error; // empty on success
  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::string params_digest;
  std::string table_digest;
  std::string stats_digest;
  std::vector<ManifestEntry> entries;
  bool operator==(const Manifest&) const = default;
};

namespace detail {

inline std::string path_component(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    out.push_back(ok ? c : '_');
  }
  if (out.empty() || out == "." || out == "..")
    out = "_" + out;
  return out;
}

inline std::string one_line(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c == '\t' || c == '\n' || c == '\r')
      c = ' ';
  return out;
}

} // namespace detail

inline constexpr std::string_view kManifestColumns =
    "id\tlabel\tsplit\tpath\ttoken_count\toov_count\toverflow_count\tcrops\tstatus";

/// Line-delimited manifest: one fixed header line, a column line, then one row per input record.
inline void write_manifest(const Manifest& m, std::ostream& out) {
  out << "#textimg-manifest\tversion=1\tparams_digest=" << m.params_digest << "\ttable_digest=" << m.table_digest
      << "\tstats_digest=" << m.stats_digest << "\trecords=" << m.entries.size() << '\n';
  out << kManifestColumns << '\n';
  for (const auto& e : m.entries) {
    out << detail::one_line(e.id) << '\t' << detail::one_line(e.label) << '\t' << to_string(e.split) << '\t'
        << e.path << '\t' << e.token_count << '\t' << e.oov_count << '\t' << e.overflow_count << '\t'
        << e.crop_count << '\t' << (e.error.empty() ? "ok" : "error: " + detail::one_line(e.error)) << '\n';
  }
}

inline Manifest read_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  if (!std::getline(in, line) || line.rfind("#textimg-manifest\t", 0) != 0)
    throw ParseError("manifest: missing header line");
  std::size_t declared = 0;
  {
    std::istringstream hs(line);
    std::string kv;
    std::getline(hs, kv, '\t');
    while (std::getline(hs, kv, '\t')) {
      const auto eq = kv.find('=');
      const auto key = kv.substr(0, eq);
      const auto value = eq == std::string::npos ? std::string{} : kv.substr(eq + 1);
      if (key == "params_digest")
        m.params_digest = value;
      else if (key == "table_digest")
        m.table_digest = value;
      else if (key == "stats_digest")
        m.stats_digest = value;
      else if (key == "records")
        declared = detail::parse_meta_count(value);
    }
  }
  if (!std::getline(in, line) || line != kManifestColumns)
    throw ParseError("manifest: missing column line");
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t'))
      f.push_back(cell);
    if (f.size() != 9)
      throw ParseError("manifest: malformed entry '" + line + "'");
    ManifestEntry e;
    e.id = f[0];
    e.label = f[1];
    e.split = parse_split(f[2]);
    e.path = f[3];
    e.token_count = detail::parse_meta_count(f[4]);
    e.oov_count = detail::parse_meta_count(f[5]);
    e.overflow_count = detail::parse_meta_count(f[6]);
    e.crop_count = detail::parse_meta_count(f[7]);
    if (f[8] != "ok")
      e.error = f[8].rfind("error: ", 0) == 0 ? f[8].substr(7) : f[8];
    m.entries.push_back(std::move(e));
  }
  if (m.entries.size() != declared)
    throw ParseError("manifest: header declares " + std::to_string(declared) + " records, found " +
                     std::to_string(m.entries.size()));
  return m;
}

struct CorpusOptions {
  fs::path output_root;
  unsigned workers = 1;
  std::optional<CropPolicy> crops;
  bool strict = true;
  bool write_plans = true;
  TokenizerOptions tokenizer;
  WarningSink warn = default_warning_sink();
};

struct CorpusResult {
  Manifest manifest;
  std::size_t failures = 0;
  std::size_t tokens = 0;
  std::size_t oov = 0;
  std::size_t overflow = 0;
  double seconds = 0;
  double docs_per_second = 0;
};

/// Encoded artifacts for one document, before anything touches the filesystem.
struct EncodedDocument {
  EncodedImage image;
  LayoutPlan plan;
  std::size_t token_count = 0;
};

/// tokenize -> filter -> plan -> render for a single document.
inline EncodedDocument encode_document(const Document& doc, const EmbeddingTable& table,
                                       const EncodingParams& params, const TokenizerOptions& tok = {}) {
  const auto raw = tokenize(doc.text, tok);
  const auto kept = filter_in_vocabulary(raw, table);
  EncodedDocument out;
  out.token_count = raw.size();
  out.plan = plan_layout(kept, params);
  out.image = render(out.plan, kept, table, params);
  out.image.meta.doc_id = doc.id;
  return out;
}

namespace detail {

inline void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw EncodeError("cannot write '" + path.string() + "'");
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out)
    throw EncodeError("cannot write '" + path.string() + "'");
}

} // namespace detail

/// Encodes every record to <root>/<split>/<label>/<id>.png (plus <id>.plan sidecars and optional
/// crops under <root>/crops/), then writes <root>/stats.txt and, last, <root>/manifest.tsv.
/// Output bytes do not depend on the worker count; manifest rows follow input order.
inline CorpusResult encode_corpus(const RecordSource& source, const EmbeddingTable& table,
                                  const EncodingParams& params, const CorpusOptions& opts) {
  validate(params);
  check_feature_count(static_cast<std::size_t>(params.feature_count), table.dim());
  if (opts.crops)
    validate(*opts.crops, params.image_width, params.image_height);
  const auto start = std::chrono::steady_clock::now();
  const fs::path root = opts.output_root;
  fs::create_directories(root);

  CorpusResult result;
  result.manifest.params_digest = params_digest(params);
  result.manifest.table_digest = table_digest(table);
  result.manifest.stats_digest = stats_digest(table.stats());

  std::mutex source_mu;
  std::mutex out_mu;
  std::vector<ManifestEntry> entries;
  std::unordered_set<std::string> ids;
  std::unordered_set<std::string> paths;
  std::set<fs::path> made_dirs;

  auto ensure_dir = [&](const fs::path& dir) {
    {
      std::lock_guard lock(out_mu);
      if (made_dirs.contains(dir))
        return;
    }
    fs::create_directories(dir);
    std::lock_guard lock(out_mu);
    made_dirs.insert(dir);
  };

  auto worker = [&] {
    while (true) {
      std::optional<CorpusRecord> rec;
      std::size_t seq = 0;
      ManifestEntry e;
      std::string clash;
      {
        std::lock_guard lock(source_mu);
        rec = source();
        if (!rec)
          return;
        e.id = rec->document.id;
        e.label = rec->document.label;
        e.split = rec->split;
        e.path = (fs::path(to_string(e.split)) / detail::path_component(e.label) /
                  (detail::path_component(e.id) + ".png"))
                     .generic_string();
        // checked in input order so the first occurrence wins regardless of scheduling
        if (!ids.insert(e.id).second)
          clash = "duplicate document id '" + e.id + "'";
        else if (!paths.insert(e.path).second)
          clash = "output path '" + e.path + "' already used by another document";
        std::lock_guard out_lock(out_mu);
        seq = entries.size();
        entries.emplace_back();
      }
      const std::string id_part = detail::path_component(e.id);
      const fs::path rel_dir = fs::path(to_string(e.split)) / detail::path_component(e.label);
      try {
        if (!clash.empty())
          throw EncodeError(clash);
        auto enc = encode_document(rec->document, table, params, opts.tokenizer);
        e.token_count = enc.token_count;
        e.oov_count = enc.image.meta.oov_count;
        e.overflow_count = enc.plan.overflow_count;
        if (e.token_count > 0 && e.oov_count == e.token_count)
          opts.warn("document '" + e.id + "': all " + std::to_string(e.token_count) +
                    " tokens are out of vocabulary; image is background only");
        ensure_dir(root / rel_dir);
        detail::write_bytes(root / e.path, encode_png(enc.image));
        if (opts.write_plans) {
          std::ostringstream plan_text;
          write_plan(enc.plan, params, plan_text);
          detail::write_text(root / rel_dir / (id_part + ".plan"), plan_text.str());
        }
        if (opts.crops) {
          const fs::path crop_dir = root / "crops" / rel_dir;
          ensure_dir(crop_dir);
          const auto parts = crops(enc.image, *opts.crops);
          for (std::size_t k = 0; k < parts.size(); ++k)
            detail::write_bytes(crop_dir / (id_part + "_" + std::to_string(k) + ".png"), encode_png(parts[k]));
          e.crop_count = parts.size();
        }
      } catch (const std::exception& ex) {
        e.error = ex.what();
        opts.warn("document '" + e.id + "': " + e.error);
      }
      std::lock_guard lock(out_mu);
      entries[seq] = std::move(e);
    }
  };

  const unsigned n = std::max(1u, opts.workers);
  std::vector<std::exception_ptr> worker_errors(n);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < n; ++w)
      pool.emplace_back([&, w] {
        try {
          worker();
        } catch (...) {
          worker_errors[w] = std::current_exception();
        }
      });
  }
  for (auto& err : worker_errors)
    if (err)
      std::rethrow_exception(err);

  result.manifest.entries = std::move(entries);
  for (const auto& e : result.manifest.entries) {
    result.tokens += e.token_count;
    result.oov += e.oov_count;
    result.overflow += e.overflow_count;
    if (!e.error.empty())
      ++result.failures;
  }

  {
    std::ostringstream stats_text;
    write_stats(table.stats(), stats_text);
    detail::write_text(root / "stats.txt", stats_text.str());
    std::ostringstream manifest_text;
    write_manifest(result.manifest, manifest_text);
    detail::write_text(root / "manifest.tsv", manifest_text.str());
  }

  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.docs_per_second =
      result.seconds > 0 ? static_cast<double>(result.manifest.entries.size()) / result.seconds : 0.0;
  if (opts.strict && result.failures > 0)
    throw EncodeError(std::to_string(result.failures) + " of " + std::to_string(result.manifest.entries.size()) +
                      " records failed (first: " +
                      std::find_if(result.manifest.entries.begin(), result.manifest.entries.end(),
                                   [](const ManifestEntry& e) { return !e.error.empty(); })
                          ->error +
                      ")");
  return result;
}

} // namespace textimg
