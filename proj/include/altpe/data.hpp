#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace altpe {

using TokenList = std::vector<std::string>;
using IdSeq = std::vector<int>;

/// Reserved vocabulary indices.
inline constexpr int kSos = 0;
inline constexpr int kEos = 1;
inline constexpr int kUnk = 2;
inline constexpr int kPad = 3;
inline constexpr int kNumSpecials = 4;

/// Longest sequence (including <sos>/<eos>) a batch may hold.
inline constexpr std::size_t kMaxSequenceLength = 256;

enum class Lang { Source, Target };

/// Lowercases and splits a line into word tokens.
///
/// Rules, applied identically to both languages:
///   - ASCII letters are lowercased, as are the UTF-8 Latin-1 capitals
///     U+00C0..U+00DE (except U+00D7), so "Ä" -> "ä";
///   - whitespace separates tokens;
///   - every ASCII punctuation character is a token on its own;
///   - all other bytes (digits, non-ASCII letters) stay inside words.
/// Throws DataError on invalid UTF-8, naming `line_no` when it is non-zero.
TokenList tokenize(std::string_view line, Lang lang, std::size_t line_no = 0);

/// Token <-> index map with four reserved specials at 0..3
/// (<sos>, <eos>, <unk>, <pad>).
class Vocab {
 public:
  /// Builds from training token lists only. Non-special tokens with frequency
  /// >= min_freq are indexed by descending frequency, ties broken
  /// lexicographically. Throws DataError for an empty corpus.
  static Vocab build(std::span<const TokenList> corpus, std::size_t min_freq = 2);

  /// Restores a vocabulary from its index-ordered token list (specials first).
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  int index(std::string_view token) const;
  const std::string& token(int index) const;
  std::size_t count(int index) const { return counts_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  IdSeq encode(const TokenList& tokens) const;
  /// Drops specials; stops at the first <eos>.
  TokenList decode(std::span<const int> ids) const;

  /// `token<TAB>count` per line, in index order.
  void write_tsv(std::ostream& out) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, int> index_;
};

inline Vocab build_vocab(std::span<const TokenList> corpus, std::size_t min_freq = 2) {
  return Vocab::build(corpus, min_freq);
}

/// One parallel sentence pair as vocabulary indices, without specials.
struct Example {
  IdSeq src;
  IdSeq tgt;
};

/// Row-major int matrix.
struct IdMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> data;

  int operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  int& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
};

/// Dynamically padded batch. Each row is <sos> tokens... <eos> followed by <pad>.
/// Masks are true exactly at padded slots.
struct Batch {
  IdMatrix src;
  IdMatrix tgt;
  std::vector<bool> src_pad_mask;
  std::vector<bool> tgt_pad_mask;

  std::size_t size() const { return src.rows; }
  /// tgt without its last column (teacher-forcing input).
  IdMatrix decoder_input() const;
  /// Pad mask of decoder_input().
  std::vector<bool> decoder_input_pad_mask() const;
  /// tgt shifted left by one, flattened (prediction targets; <pad> where ignored).
  std::vector<int> decoder_target() const;
};

/// Wraps each sequence with <sos>/<eos> and pads to the longest in the batch.
/// Content longer than kMaxSequenceLength - 2 is truncated.
Batch make_batch(std::span<const Example> examples);

struct FoldPlan {
  std::uint64_t seed = 0;
  std::size_t n_folds = 0;
  std::vector<std::vector<std::size_t>> folds;
};

/// Shuffles [0, n_examples) with `seed` and deals it into n_folds folds whose
/// sizes differ by at most one. Throws ConfigError for n_folds < 2 or
/// n_examples < n_folds.
FoldPlan make_folds(std::size_t n_examples, std::size_t n_folds, std::uint64_t seed);

struct FoldView {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Held-out fold `fold`, training on the union of the others (in fold order).
FoldView fold_view(const FoldPlan& plan, std::size_t fold);

/// CSV `fold,index` in plan order.
void write_fold_plan_csv(std::ostream& out, const FoldPlan& plan);

/// Shuffles `indices` with `seed` and groups consecutive runs of batch_size
/// examples into independently padded batches.
std::vector<Batch> iterate_batches(std::span<const Example> examples,
                                   std::span<const std::size_t> indices,
                                   std::size_t batch_size, std::uint64_t seed);

enum class SynthKind { Copy, Reverse };

SynthKind parse_synth_kind(std::string_view name);

struct SynthPair {
  std::vector<int> src;
  std::vector<int> tgt;
};

/// n random sequences over [0, vocab_size) with lengths in [min_len, max_len];
/// target is the source (Copy) or its reverse (Reverse).
std::vector<SynthPair> synth_task(SynthKind kind, int vocab_size, int min_len, int max_len,
                                  std::size_t n, std::uint64_t seed);

/// Raw text corpus: one tokenized sentence pair per entry.
struct ParallelCorpus {
  std::vector<TokenList> src;
  std::vector<TokenList> tgt;

  std::size_t size() const { return src.size(); }
};

/// Renders synthetic ids as decimal word tokens so they share the text pipeline.
ParallelCorpus to_parallel_corpus(std::span<const SynthPair> pairs);

/// UTF-8 TSV, one `source<TAB>target` pair per line; blank lines skipped.
ParallelCorpus load_tsv(const std::filesystem::path& path);
ParallelCorpus parse_tsv(std::istream& in);

/// Encodes every pair of `corpus`; out-of-vocabulary tokens become <unk>.
std::vector<Example> encode_corpus(const ParallelCorpus& corpus, const Vocab& src_vocab,
                                   const Vocab& tgt_vocab);

/// Encoded examples with their vocabularies and a train/validation split.
struct Dataset {
  Vocab src_vocab;
  Vocab tgt_vocab;
  std::vector<Example> examples;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

struct SynthSpec {
  SynthKind kind = SynthKind::Copy;
  int vocab_size = 50;
  int min_len = 3;
  int max_len = 16;
  std::size_t n_train = 2000;
  std::size_t n_val = 200;
  std::uint64_t seed = 11;
};

/// Training pairs drawn with spec.seed, validation pairs with spec.seed + 1.
/// Vocabularies come from the training pairs (min_freq 1).
Dataset synth_dataset(const SynthSpec& spec);

/// Holds out round(val_fraction * n) pairs chosen with `seed`; vocabularies
/// are built from the remaining training pairs only.
Dataset corpus_dataset(const ParallelCorpus& corpus, double val_fraction, std::uint64_t seed,
                       std::size_t min_freq = 2);

}  // namespace altpe
