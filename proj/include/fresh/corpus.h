#ifndef FRESH_CORPUS_H_
#define FRESH_CORPUS_H_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fresh {

inline constexpr int kPadId = 0;
inline constexpr int kUnknownId = 1;
inline constexpr int kSeparatorId = 2;
inline constexpr int kNumReservedIds = 3;

inline constexpr int kDefaultMaxPieceLen = 4;
inline constexpr int kDefaultMaxPieces = 512;

// A whitespace-delimited word and its sub-token pieces. piece_ids is filled
// in when the token is encoded against a vocabulary.
struct Token {
  std::string surface;
  std::vector<std::string> pieces;
  std::vector<int> piece_ids;

  std::size_t piece_count() const { return pieces.size(); }
  bool operator==(const Token&) const = default;
};

struct Document {
  std::string id;
  std::vector<Token> tokens;
  std::optional<std::vector<Token>> query;
  int label = 0;
  // Sorted, unique token indices.
  std::optional<std::vector<int>> gold_rationale;

  std::size_t length() const { return tokens.size(); }
  std::size_t piece_count() const;
  bool operator==(const Document&) const = default;
};

// Piece string <-> id map. Ids 0..2 are reserved for padding, unknown and
// separator; the remaining ids are assigned in sorted piece order.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary from_pieces(const std::vector<std::string>& pieces);

  // Returns kUnknownId for out-of-vocabulary pieces.
  int id(std::string_view piece) const;
  const std::string& piece(int id) const;
  std::size_t size() const { return pieces_.size(); }
  bool contains(std::string_view piece) const;

  bool operator==(const Vocabulary& other) const {
    return pieces_ == other.pieces_;
  }

  // One "piece<TAB>id" line per entry, sorted by piece.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> ids_;
};

enum class SplitName { kTrain, kDev, kTest };
std::string_view split_name(SplitName name);

struct DatasetSplit {
  SplitName name = SplitName::kTrain;
  std::vector<Document> documents;
  int num_classes = 2;
  std::shared_ptr<const Vocabulary> vocabulary;

  std::size_t size() const { return documents.size(); }
  bool operator==(const DatasetSplit& other) const;
};

struct Splits {
  DatasetSplit train;
  DatasetSplit dev;
  DatasetSplit test;
};

struct CorpusStats {
  std::size_t count = 0;
  double doc_length_mean = 0.0;
  std::size_t doc_length_max = 0;
  double query_length_mean = 0.0;
  std::size_t query_length_max = 0;
  double rationale_ratio_mean = 0.0;
  double rationale_ratio_max = 0.0;
  std::vector<double> label_distribution;
};

// Lowercases, splits on whitespace, and chunks each word into pieces of at
// most max_piece_len bytes. Throws kEmptyDocument on blank input.
std::vector<Token> tokenize(std::string_view text,
                            int max_piece_len = kDefaultMaxPieceLen);

// Inverse of tokenize up to whitespace normalization.
std::string detokenize(const std::vector<Token>& tokens);

void encode_tokens(std::vector<Token>& tokens, const Vocabulary& vocab);
void encode_document(Document& doc, const Vocabulary& vocab);

// Builds a vocabulary from every document and query piece in the given docs.
Vocabulary build_vocabulary(const std::vector<Document>& docs);

Document make_document(std::string id, std::string_view text, int label,
                       const Vocabulary& vocab,
                       int max_piece_len = kDefaultMaxPieceLen);

enum class SpanUnit { kToken, kCharacter };

struct IngestConfig {
  int num_classes = 2;
  SpanUnit span_unit = SpanUnit::kToken;
  int max_piece_len = kDefaultMaxPieceLen;
  int max_pieces = kDefaultMaxPieces;
};

// Parses one JSONL file. When vocab is null the vocabulary is built from this
// file (train split); otherwise it is used frozen and unknown pieces map to
// kUnknownId.
DatasetSplit load_jsonl(const std::string& path, const IngestConfig& cfg,
                        SplitName name,
                        std::shared_ptr<const Vocabulary> vocab = nullptr);
DatasetSplit parse_jsonl(std::string_view content, const IngestConfig& cfg,
                         SplitName name,
                         std::shared_ptr<const Vocabulary> vocab = nullptr);

// Writes documents back in the ingestion schema, with token spans.
std::string serialize_jsonl(const DatasetSplit& split);
void save_jsonl(const DatasetSplit& split, const std::string& path);

Splits load_splits(const std::string& dir, const IngestConfig& cfg);
void save_splits(const Splits& splits, const std::string& dir);

struct SyntheticConfig {
  std::size_t train_docs = 2000;
  std::size_t dev_docs = 500;
  std::size_t test_docs = 500;
  std::size_t min_length = 40;
  std::size_t max_length = 40;
  // Number of distinct words. A fifth of them carry class signal.
  std::size_t vocab_size = 400;
  // With two classes the attention can key on one class alone and predict
  // the other from absence, which leaves half the rationales unattended.
  int num_classes = 4;
  double planted_ratio = 0.2;
  double noise_rate = 0.05;
  // Probability that a planted-span position holds a signal word rather than
  // a neutral filler word. The first span position is always a signal word.
  double signal_density = 0.75;
};

// Pure function of (cfg, seed). The planted span is recorded as the gold
// rationale.
Splits make_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

// The generator's lookup rule: the class owning the first signal word of the
// document, or -1 when there is none.
int synthetic_signal_class(const Document& doc, int num_classes);

CorpusStats stats(const DatasetSplit& split);

}  // namespace fresh

#endif  // FRESH_CORPUS_H_
