#include "fresh/corpus.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "fresh/discretize.h"
#include "fresh/error.h"
#include "fresh/rng.h"
#include "json.hpp"

namespace fresh {

namespace {

using json = nlohmann::ordered_json;

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)); }

// Byte length of the UTF-8 sequence introduced by lead byte c.
std::size_t utf8_length(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c >> 5) == 0x6) return 2;
  if ((c >> 4) == 0xE) return 3;
  if ((c >> 3) == 0x1E) return 4;
  return 1;
}

Token make_token(std::string_view word, int max_piece_len) {
  Token token;
  token.surface.reserve(word.size());
  for (char c : word) {
    token.surface.push_back(static_cast<char>(
        std::tolower(static_cast<unsigned char>(c))));
  }
  std::size_t pos = 0;
  while (pos < token.surface.size()) {
    std::size_t end = pos;
    for (int n = 0; n < max_piece_len && end < token.surface.size(); ++n) {
      end += utf8_length(static_cast<unsigned char>(token.surface[end]));
    }
    end = std::min(end, token.surface.size());
    token.pieces.push_back(token.surface.substr(pos, end - pos));
    pos = end;
  }
  return token;
}

struct WordSpan {
  std::size_t begin;
  std::size_t end;
};

std::vector<WordSpan> word_spans(std::string_view text) {
  std::vector<WordSpan> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i >= text.size()) break;
    std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    spans.push_back({start, i});
  }
  return spans;
}

Error line_error(ErrorKind kind, std::size_t line, const std::string& what) {
  return Error(kind, "line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::size_t Document::piece_count() const {
  std::size_t n = 0;
  for (const auto& t : tokens) n += t.piece_count();
  return n;
}

Vocabulary::Vocabulary() {
  pieces_ = {"<pad>", "<unk>", "<sep>"};
  for (int i = 0; i < kNumReservedIds; ++i) ids_[pieces_[i]] = i;
}

Vocabulary Vocabulary::from_pieces(const std::vector<std::string>& pieces) {
  Vocabulary vocab;
  std::set<std::string> sorted(pieces.begin(), pieces.end());
  for (const auto& p : sorted) {
    if (vocab.ids_.count(p)) continue;
    vocab.ids_[p] = static_cast<int>(vocab.pieces_.size());
    vocab.pieces_.push_back(p);
  }
  return vocab;
}

int Vocabulary::id(std::string_view piece) const {
  auto it = ids_.find(std::string(piece));
  return it == ids_.end() ? kUnknownId : it->second;
}

const std::string& Vocabulary::piece(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
    throw Error(ErrorKind::kInvalidArgument,
                "piece id out of range: " + std::to_string(id));
  }
  return pieces_[id];
}

bool Vocabulary::contains(std::string_view piece) const {
  return ids_.count(std::string(piece)) > 0;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  std::vector<std::pair<std::string, int>> entries;
  for (const auto& [piece, id] : ids_) entries.emplace_back(piece, id);
  std::sort(entries.begin(), entries.end());
  for (const auto& [piece, id] : entries) out << piece << '\t' << id << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path);
  std::vector<std::pair<int, std::string>> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw line_error(ErrorKind::kParse, line_no, "expected piece<TAB>id");
    }
    int id = 0;
    try {
      id = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw line_error(ErrorKind::kParse, line_no, "bad id");
    }
    entries.emplace_back(id, line.substr(0, tab));
  }
  std::sort(entries.begin(), entries.end());
  Vocabulary vocab;
  vocab.pieces_.clear();
  vocab.ids_.clear();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first != static_cast<int>(i)) {
      throw Error(ErrorKind::kParse, path + ": ids are not dense");
    }
    vocab.ids_[entries[i].second] = entries[i].first;
    vocab.pieces_.push_back(entries[i].second);
  }
  if (vocab.pieces_.size() < kNumReservedIds || vocab.pieces_[0] != "<pad>" ||
      vocab.pieces_[1] != "<unk>" || vocab.pieces_[2] != "<sep>") {
    throw Error(ErrorKind::kParse, path + ": missing reserved entries");
  }
  return vocab;
}

std::string_view split_name(SplitName name) {
  switch (name) {
    case SplitName::kTrain:
      return "train";
    case SplitName::kDev:
      return "dev";
    case SplitName::kTest:
      return "test";
  }
  return "unknown";
}

bool DatasetSplit::operator==(const DatasetSplit& other) const {
  if (name != other.name || num_classes != other.num_classes ||
      documents != other.documents) {
    return false;
  }
  if (!vocabulary || !other.vocabulary) return vocabulary == other.vocabulary;
  return *vocabulary == *other.vocabulary;
}

std::vector<Token> tokenize(std::string_view text, int max_piece_len) {
  if (max_piece_len < 1) {
    throw Error(ErrorKind::kInvalidArgument, "max_piece_len must be >= 1");
  }
  std::vector<Token> tokens;
  for (const auto& span : word_spans(text)) {
    tokens.push_back(
        make_token(text.substr(span.begin, span.end - span.begin),
                   max_piece_len));
  }
  if (tokens.empty()) {
    throw Error(ErrorKind::kEmptyDocument, "text has no tokens");
  }
  return tokens;
}

std::string detokenize(const std::vector<Token>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i].surface;
  }
  return out;
}

void encode_tokens(std::vector<Token>& tokens, const Vocabulary& vocab) {
  for (auto& t : tokens) {
    t.piece_ids.clear();
    for (const auto& p : t.pieces) t.piece_ids.push_back(vocab.id(p));
  }
}

void encode_document(Document& doc, const Vocabulary& vocab) {
  encode_tokens(doc.tokens, vocab);
  if (doc.query) encode_tokens(*doc.query, vocab);
}

Vocabulary build_vocabulary(const std::vector<Document>& docs) {
  std::vector<std::string> pieces;
  for (const auto& d : docs) {
    for (const auto& t : d.tokens) {
      pieces.insert(pieces.end(), t.pieces.begin(), t.pieces.end());
    }
    if (d.query) {
      for (const auto& t : *d.query) {
        pieces.insert(pieces.end(), t.pieces.begin(), t.pieces.end());
      }
    }
  }
  return Vocabulary::from_pieces(pieces);
}

Document make_document(std::string id, std::string_view text, int label,
                       const Vocabulary& vocab, int max_piece_len) {
  Document doc;
  doc.id = std::move(id);
  doc.tokens = tokenize(text, max_piece_len);
  doc.label = label;
  encode_document(doc, vocab);
  return doc;
}

DatasetSplit parse_jsonl(std::string_view content, const IngestConfig& cfg,
                         SplitName name,
                         std::shared_ptr<const Vocabulary> vocab) {
  if (cfg.num_classes < 2) {
    throw Error(ErrorKind::kConfig, "num_classes must be >= 2");
  }
  DatasetSplit split;
  split.name = name;
  split.num_classes = cfg.num_classes;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (std::all_of(line.begin(), line.end(), is_space)) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw line_error(ErrorKind::kParse, line_no, e.what());
    }
    if (!obj.is_object()) {
      throw line_error(ErrorKind::kParse, line_no, "not a JSON object");
    }
    for (const char* field : {"id", "text", "label"}) {
      if (!obj.contains(field)) {
        throw line_error(ErrorKind::kSchema, line_no,
                         std::string("missing field '") + field + "'");
      }
    }
    Document doc;
    try {
      doc.id = obj["id"].is_string() ? obj["id"].get<std::string>()
                                     : obj["id"].dump();
      if (!obj["label"].is_number_integer()) {
        throw line_error(ErrorKind::kSchema, line_no, "label must be integer");
      }
      doc.label = obj["label"].get<int>();
      const std::string text = obj["text"].get<std::string>();
      try {
        doc.tokens = tokenize(text, cfg.max_piece_len);
      } catch (const Error& e) {
        throw line_error(e.kind(), line_no, e.what());
      }
      if (obj.contains("query") && !obj["query"].is_null()) {
        doc.query = tokenize(obj["query"].get<std::string>(),
                             cfg.max_piece_len);
      }
      if (obj.contains("rationale_spans") && !obj["rationale_spans"].is_null()) {
        std::set<int> gold;
        const auto words = word_spans(text);
        for (const auto& span : obj["rationale_spans"]) {
          if (!span.is_array() || span.size() != 2) {
            throw line_error(ErrorKind::kSchema, line_no,
                             "rationale span must be [start, end)");
          }
          const long start = span[0].get<long>();
          const long end = span[1].get<long>();
          if (start < 0 || end <= start) {
            throw line_error(ErrorKind::kSchema, line_no, "empty span");
          }
          if (cfg.span_unit == SpanUnit::kToken) {
            if (end > static_cast<long>(doc.tokens.size())) {
              throw line_error(ErrorKind::kSchema, line_no,
                               "token span exceeds document length");
            }
            for (long i = start; i < end; ++i) gold.insert(static_cast<int>(i));
          } else {
            for (std::size_t w = 0; w < words.size(); ++w) {
              if (static_cast<long>(words[w].begin) < end &&
                  static_cast<long>(words[w].end) > start) {
                gold.insert(static_cast<int>(w));
              }
            }
          }
        }
        if (!gold.empty()) doc.gold_rationale.emplace(gold.begin(), gold.end());
      }
    } catch (const json::exception& e) {
      throw line_error(ErrorKind::kSchema, line_no, e.what());
    }
    if (doc.label < 0 || doc.label >= cfg.num_classes) {
      throw line_error(ErrorKind::kSchema, line_no,
                       "label " + std::to_string(doc.label) +
                           " outside declared class set");
    }
    if (doc.piece_count() > static_cast<std::size_t>(cfg.max_pieces)) {
      throw line_error(ErrorKind::kSchema, line_no,
                       "document exceeds " + std::to_string(cfg.max_pieces) +
                           " pieces");
    }
    split.documents.push_back(std::move(doc));
  }

  if (!vocab) vocab = std::make_shared<Vocabulary>(build_vocabulary(split.documents));
  for (auto& doc : split.documents) encode_document(doc, *vocab);
  split.vocabulary = std::move(vocab);
  return split;
}

DatasetSplit load_jsonl(const std::string& path, const IngestConfig& cfg,
                        SplitName name,
                        std::shared_ptr<const Vocabulary> vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_jsonl(buffer.str(), cfg, name, std::move(vocab));
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

std::string serialize_jsonl(const DatasetSplit& split) {
  std::string out;
  for (const auto& doc : split.documents) {
    json obj;
    obj["id"] = doc.id;
    obj["text"] = detokenize(doc.tokens);
    obj["label"] = doc.label;
    if (doc.query) obj["query"] = detokenize(*doc.query);
    if (doc.gold_rationale) {
      json spans = json::array();
      const auto& g = *doc.gold_rationale;
      for (std::size_t i = 0; i < g.size();) {
        std::size_t j = i + 1;
        while (j < g.size() && g[j] == g[j - 1] + 1) ++j;
        spans.push_back({g[i], g[j - 1] + 1});
        i = j;
      }
      obj["rationale_spans"] = spans;
    }
    out += obj.dump();
    out.push_back('\n');
  }
  return out;
}

void save_jsonl(const DatasetSplit& split, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << serialize_jsonl(split);
}

Splits load_splits(const std::string& dir, const IngestConfig& cfg) {
  Splits s;
  s.train = load_jsonl(dir + "/train.jsonl", cfg, SplitName::kTrain);
  s.dev = load_jsonl(dir + "/dev.jsonl", cfg, SplitName::kDev, s.train.vocabulary);
  s.test =
      load_jsonl(dir + "/test.jsonl", cfg, SplitName::kTest, s.train.vocabulary);
  return s;
}

void save_splits(const Splits& splits, const std::string& dir) {
  save_jsonl(splits.train, dir + "/train.jsonl");
  save_jsonl(splits.dev, dir + "/dev.jsonl");
  save_jsonl(splits.test, dir + "/test.jsonl");
  splits.train.vocabulary->save(dir + "/vocab.txt");
}

namespace {

std::string base26(std::size_t value, int width) {
  std::string s(width, 'a');
  for (int i = width - 1; i >= 0; --i) {
    s[i] = static_cast<char>('a' + value % 26);
    value /= 26;
  }
  return s;
}

struct SyntheticLexicon {
  // signal[c] holds the words owned by class c.
  std::vector<std::vector<std::string>> signal;
  std::vector<std::string> neutral;
};

SyntheticLexicon make_lexicon(const SyntheticConfig& cfg) {
  SyntheticLexicon lex;
  const std::size_t signal_total = std::max<std::size_t>(
      cfg.vocab_size / 5, static_cast<std::size_t>(cfg.num_classes));
  const std::size_t per_class = signal_total / cfg.num_classes;
  lex.signal.resize(cfg.num_classes);
  for (int c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t j = 0; j < per_class; ++j) {
      lex.signal[c].push_back("s" + std::string(1, static_cast<char>('a' + c)) +
                              base26(j, 2));
    }
  }
  const std::size_t neutral_total =
      std::max<std::size_t>(cfg.vocab_size - signal_total, 1);
  for (std::size_t j = 0; j < neutral_total; ++j) {
    // Every third neutral word is six letters long and splits into two pieces.
    lex.neutral.push_back(j % 3 == 2 ? "m" + base26(j, 5) : "n" + base26(j, 3));
  }
  return lex;
}

std::vector<Document> synth_documents(const SyntheticConfig& cfg,
                                      const SyntheticLexicon& lex,
                                      std::size_t count, std::string_view prefix,
                                      Rng& rng) {
  std::vector<Document> docs;
  docs.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t length =
        cfg.min_length + rng.below(cfg.max_length - cfg.min_length + 1);
    const int label = static_cast<int>(rng.below(cfg.num_classes));
    const std::size_t k = resolve_k(length, cfg.planted_ratio);
    const std::size_t start = rng.below(length - k + 1);

    std::vector<std::string> words(length);
    std::vector<bool> is_signal(length, false);
    bool any_signal = false;
    for (std::size_t i = 0; i < length; ++i) {
      if (i >= start && i < start + k && rng.bernoulli(cfg.signal_density)) {
        is_signal[i] = true;
        any_signal = true;
      }
    }
    if (!any_signal) is_signal[start + rng.below(k)] = true;
    for (std::size_t i = 0; i < length; ++i) {
      if (is_signal[i]) {
        const auto& pool = lex.signal[label];
        words[i] = pool[rng.below(pool.size())];
      } else {
        words[i] = lex.neutral[rng.below(lex.neutral.size())];
      }
    }

    int observed = label;
    if (cfg.noise_rate > 0.0 && rng.bernoulli(cfg.noise_rate)) {
      observed = static_cast<int>(
          (label + 1 + rng.below(cfg.num_classes - 1)) % cfg.num_classes);
    }

    Document doc;
    doc.id = std::string(prefix) + std::to_string(n);
    for (const auto& w : words) doc.tokens.push_back(make_token(w, kDefaultMaxPieceLen));
    doc.label = observed;
    std::vector<int> gold(k);
    for (std::size_t i = 0; i < k; ++i) gold[i] = static_cast<int>(start + i);
    doc.gold_rationale = std::move(gold);
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace

Splits make_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  if (!(cfg.planted_ratio > 0.0 && cfg.planted_ratio < 1.0)) {
    throw Error(ErrorKind::kConfig, "planted ratio must lie in (0, 1)");
  }
  if (cfg.noise_rate < 0.0 || cfg.noise_rate > 1.0) {
    throw Error(ErrorKind::kConfig, "noise rate must lie in [0, 1]");
  }
  if (cfg.signal_density <= 0.0 || cfg.signal_density > 1.0) {
    throw Error(ErrorKind::kConfig, "signal density must lie in (0, 1]");
  }
  if (cfg.num_classes < 2 || cfg.num_classes > 26) {
    throw Error(ErrorKind::kConfig, "num_classes must lie in [2, 26]");
  }
  if (cfg.min_length < 1 || cfg.max_length < cfg.min_length) {
    throw Error(ErrorKind::kConfig, "invalid document length range");
  }
  if (cfg.vocab_size < static_cast<std::size_t>(2 * cfg.num_classes)) {
    throw Error(ErrorKind::kConfig, "vocab size too small for class count");
  }

  const SyntheticLexicon lex = make_lexicon(cfg);
  Rng root(seed);
  Rng train_rng = root.fork(1);
  Rng dev_rng = root.fork(2);
  Rng test_rng = root.fork(3);

  Splits s;
  s.train.name = SplitName::kTrain;
  s.dev.name = SplitName::kDev;
  s.test.name = SplitName::kTest;
  s.train.documents = synth_documents(cfg, lex, cfg.train_docs, "train-", train_rng);
  s.dev.documents = synth_documents(cfg, lex, cfg.dev_docs, "dev-", dev_rng);
  s.test.documents = synth_documents(cfg, lex, cfg.test_docs, "test-", test_rng);

  auto vocab = std::make_shared<const Vocabulary>(build_vocabulary(s.train.documents));
  for (DatasetSplit* split : {&s.train, &s.dev, &s.test}) {
    split->num_classes = cfg.num_classes;
    split->vocabulary = vocab;
    for (auto& d : split->documents) encode_document(d, *vocab);
  }
  return s;
}

int synthetic_signal_class(const Document& doc, int num_classes) {
  for (const auto& t : doc.tokens) {
    if (t.surface.size() == 4 && t.surface[0] == 's') {
      const int c = t.surface[1] - 'a';
      if (c >= 0 && c < num_classes) return c;
    }
  }
  return -1;
}

CorpusStats stats(const DatasetSplit& split) {
  if (split.documents.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "stats of an empty split");
  }
  CorpusStats st;
  st.count = split.documents.size();
  st.label_distribution.assign(split.num_classes, 0.0);
  double length_sum = 0.0;
  double query_sum = 0.0;
  double ratio_sum = 0.0;
  std::size_t with_gold = 0;
  for (const auto& d : split.documents) {
    length_sum += static_cast<double>(d.length());
    st.doc_length_max = std::max(st.doc_length_max, d.length());
    const std::size_t q = d.query ? d.query->size() : 0;
    query_sum += static_cast<double>(q);
    st.query_length_max = std::max(st.query_length_max, q);
    if (d.gold_rationale) {
      const double r = static_cast<double>(d.gold_rationale->size()) /
                       static_cast<double>(d.length());
      ratio_sum += r;
      st.rationale_ratio_max = std::max(st.rationale_ratio_max, r);
      ++with_gold;
    }
    if (d.label >= 0 && d.label < split.num_classes) {
      st.label_distribution[d.label] += 1.0;
    }
  }
  const double n = static_cast<double>(st.count);
  st.doc_length_mean = length_sum / n;
  st.query_length_mean = query_sum / n;
  st.rationale_ratio_mean = with_gold ? ratio_sum / static_cast<double>(with_gold) : 0.0;
  for (auto& p : st.label_distribution) p /= n;
  return st;
}

}  // namespace fresh
