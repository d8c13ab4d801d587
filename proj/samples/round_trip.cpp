// Encode one short document, write it as PNG, read it back and decode the words.

#include "textimg/decode.hpp"
#include "textimg/raster.hpp"
#include "textimg/tokenizer.hpp"

#include <iostream>
#include <sstream>

int main(int argc, char** argv) {
  using namespace textimg;
  std::istringstream emb("kidco 0.9 0.1 0.4 0.2 0.8 0.3 0.5 0.7 0.6 0.1 0.9 0.2\n"
                         "safeway 0.2 0.8 0.6 0.9 0.1 0.4 0.3 0.2 0.7 0.8 0.5 0.6\n"
                         "white 1 1 1 1 1 1 1 1 1 1 1 1\n"
                         "g2000 0 0 0 0 0 0 0 0 0 0 0 0\n");
  const auto table = parse_embedding_text(emb);

  EncodingParams params;
  params.feature_count = 12;
  const auto tokens = filter_in_vocabulary(tokenize(argc > 1 ? argv[1] : "Kidco Safeway white G2000"), table);
  const auto plan = plan_layout(tokens, params);
  auto img = render(plan, tokens, table, params);
  img.meta.doc_id = "sample";

  const std::string path = argc > 2 ? argv[2] : "sample.png";
  write_png_file(img, path);
  const auto doc = decode_document(read_png_file(path), plan, params, table);
  std::cout << path << ": " << plan.placements.size() << " words placed, " << tokens.oov_count << " dropped\n";
  write_decoded(doc, std::cout);
}
