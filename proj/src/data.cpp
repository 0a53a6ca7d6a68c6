#include "altpe/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "altpe/errors.hpp"

namespace altpe {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"<sos>", "<eos>", "<unk>", "<pad>"};
  return specials;
}

bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
         (c >= 123 && c <= 126);
}

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Length of the UTF-8 sequence starting at s[i], or 0 when malformed.
std::size_t utf8_sequence_length(std::string_view s, std::size_t i) {
  const auto lead = static_cast<unsigned char>(s[i]);
  std::size_t len = 0;
  std::uint32_t cp = 0;
  if (lead < 0x80) return 1;
  if ((lead & 0xE0) == 0xC0) {
    len = 2;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    len = 3;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    len = 4;
    cp = lead & 0x07;
  } else {
    return 0;
  }
  if (i + len > s.size()) return 0;
  for (std::size_t k = 1; k < len; ++k) {
    const auto c = static_cast<unsigned char>(s[i + k]);
    if ((c & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (c & 0x3F);
  }
  // overlong forms, surrogates, out of range
  static constexpr std::uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  return len;
}

}  // namespace

TokenList tokenize(std::string_view line, Lang /*lang*/, std::size_t line_no) {
  TokenList tokens;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) tokens.push_back(std::move(word));
    word.clear();
  };
  for (std::size_t i = 0; i < line.size();) {
    const std::size_t len = utf8_sequence_length(line, i);
    if (len == 0) {
      throw DataError("invalid UTF-8" +
                      (line_no ? " on line " + std::to_string(line_no) : std::string()));
    }
    const auto c = static_cast<unsigned char>(line[i]);
    if (len == 1) {
      if (is_space(c)) {
        flush();
      } else if (is_ascii_punct(c)) {
        flush();
        tokens.emplace_back(1, static_cast<char>(c));
      } else {
        word.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
      }
    } else {
      std::string cp(line.substr(i, len));
      const auto second = static_cast<unsigned char>(cp.size() == 2 ? cp[1] : 0);
      if (c == 0xC3 && second >= 0x80 && second <= 0x9E && second != 0x97) {
        cp[1] = static_cast<char>(second + 0x20);
      }
      word += cp;
    }
    i += len;
  }
  flush();
  return tokens;
}

// ---- vocabulary ---------------------------------------------------------------

Vocab Vocab::build(std::span<const TokenList> corpus, std::size_t min_freq) {
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> freq;
  std::size_t special_counts[kNumSpecials] = {};
  for (const auto& sentence : corpus) {
    for (const auto& tok : sentence) ++freq[tok];
  }
  const auto& specials = special_tokens();
  for (int s = 0; s < kNumSpecials; ++s) {
    auto it = freq.find(specials[static_cast<std::size_t>(s)]);
    if (it != freq.end()) {
      special_counts[s] = it->second;
      freq.erase(it);
    }
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab v;
  for (int s = 0; s < kNumSpecials; ++s) {
    v.tokens_.push_back(specials[static_cast<std::size_t>(s)]);
    v.counts_.push_back(special_counts[s]);
  }
  for (auto& [tok, n] : kept) {
    v.tokens_.push_back(tok);
    v.counts_.push_back(n);
  }
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    v.index_.emplace(v.tokens_[i], static_cast<int>(i));
  }
  return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), tokens.begin())) {
    throw DataError("vocabulary must start with <sos>, <eos>, <unk>, <pad>");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.counts_.assign(v.tokens_.size(), 0);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

int Vocab::index(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= tokens_.size()) {
    throw DataError("vocabulary index " + std::to_string(index) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(index)];
}

IdSeq Vocab::encode(const TokenList& tokens) const {
  IdSeq ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(index(t));
  return ids;
}

TokenList Vocab::decode(std::span<const int> ids) const {
  TokenList out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kSos || id == kPad) continue;
    out.push_back(token(id));
  }
  return out;
}

void Vocab::write_tsv(std::ostream& out) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out << tokens_[i] << '\t' << counts_[i] << '\n';
  }
}

// ---- batching -----------------------------------------------------------------

IdMatrix Batch::decoder_input() const {
  IdMatrix in{tgt.rows, tgt.cols - 1, {}};
  in.data.reserve(in.rows * in.cols);
  for (std::size_t r = 0; r < tgt.rows; ++r) {
    for (std::size_t c = 0; c + 1 < tgt.cols; ++c) in.data.push_back(tgt(r, c));
  }
  return in;
}

std::vector<bool> Batch::decoder_input_pad_mask() const {
  std::vector<bool> mask;
  mask.reserve(tgt.rows * (tgt.cols - 1));
  for (std::size_t r = 0; r < tgt.rows; ++r) {
    for (std::size_t c = 0; c + 1 < tgt.cols; ++c) mask.push_back(tgt_pad_mask[r * tgt.cols + c]);
  }
  return mask;
}

std::vector<int> Batch::decoder_target() const {
  std::vector<int> out;
  out.reserve(tgt.rows * (tgt.cols - 1));
  for (std::size_t r = 0; r < tgt.rows; ++r) {
    for (std::size_t c = 1; c < tgt.cols; ++c) out.push_back(tgt(r, c));
  }
  return out;
}

namespace {

void fill_padded(std::span<const IdSeq* const> seqs, IdMatrix& m, std::vector<bool>& mask) {
  constexpr std::size_t kMaxContent = kMaxSequenceLength - 2;
  std::size_t longest = 0;
  for (const auto* s : seqs) longest = std::max(longest, std::min(s->size(), kMaxContent));
  m.rows = seqs.size();
  m.cols = longest + 2;
  m.data.assign(m.rows * m.cols, kPad);
  mask.assign(m.rows * m.cols, true);
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    const std::size_t n = std::min(seqs[r]->size(), kMaxContent);
    m(r, 0) = kSos;
    for (std::size_t c = 0; c < n; ++c) m(r, c + 1) = (*seqs[r])[c];
    m(r, n + 1) = kEos;
    for (std::size_t c = 0; c < n + 2; ++c) mask[r * m.cols + c] = false;
  }
}

}  // namespace

Batch make_batch(std::span<const Example> examples) {
  if (examples.empty()) throw DataError("cannot build an empty batch");
  std::vector<const IdSeq*> src, tgt;
  for (const auto& e : examples) {
    src.push_back(&e.src);
    tgt.push_back(&e.tgt);
  }
  Batch b;
  fill_padded(src, b.src, b.src_pad_mask);
  fill_padded(tgt, b.tgt, b.tgt_pad_mask);
  return b;
}

// ---- folds ---------------------------------------------------------------------

FoldPlan make_folds(std::size_t n_examples, std::size_t n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (n_examples < n_folds) {
    throw ConfigError("cannot split " + std::to_string(n_examples) + " examples into " +
                      std::to_string(n_folds) + " folds");
  }
  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  FoldPlan plan{seed, n_folds, {}};
  const std::size_t base = n_examples / n_folds, extra = n_examples % n_folds;
  std::size_t at = 0;
  for (std::size_t f = 0; f < n_folds; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    plan.folds.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                            order.begin() + static_cast<std::ptrdiff_t>(at + len));
    at += len;
  }
  return plan;
}

FoldView fold_view(const FoldPlan& plan, std::size_t fold) {
  if (fold >= plan.folds.size()) {
    throw ConfigError("fold " + std::to_string(fold) + " out of range");
  }
  FoldView view;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    auto& dst = f == fold ? view.validation : view.train;
    dst.insert(dst.end(), plan.folds[f].begin(), plan.folds[f].end());
  }
  return view;
}

void write_fold_plan_csv(std::ostream& out, const FoldPlan& plan) {
  out << "fold,index\n";
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    for (auto i : plan.folds[f]) out << f << ',' << i << '\n';
  }
}

std::vector<Batch> iterate_batches(std::span<const Example> examples,
                                   std::span<const std::size_t> indices,
                                   std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  std::vector<Example> chunk;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    chunk.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      chunk.push_back(examples[order[i]]);
    }
    batches.push_back(make_batch(chunk));
  }
  return batches;
}

// ---- synthetic tasks -------------------------------------------------------------

SynthKind parse_synth_kind(std::string_view name) {
  if (name == "copy") return SynthKind::Copy;
  if (name == "reverse") return SynthKind::Reverse;
  throw ConfigError("unknown synthetic task '" + std::string(name) + "'");
}

std::vector<SynthPair> synth_task(SynthKind kind, int vocab_size, int min_len, int max_len,
                                  std::size_t n, std::uint64_t seed) {
  if (vocab_size < 2) throw ConfigError("synthetic vocabulary needs at least 2 symbols");
  if (min_len < 1 || max_len < min_len) throw ConfigError("invalid synthetic length range");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_dist(min_len, max_len);
  std::uniform_int_distribution<int> tok_dist(0, vocab_size - 1);
  std::vector<SynthPair> out(n);
  for (auto& p : out) {
    p.src.resize(static_cast<std::size_t>(len_dist(rng)));
    for (auto& t : p.src) t = tok_dist(rng);
    p.tgt = p.src;
    if (kind == SynthKind::Reverse) std::reverse(p.tgt.begin(), p.tgt.end());
  }
  return out;
}

ParallelCorpus to_parallel_corpus(std::span<const SynthPair> pairs) {
  ParallelCorpus c;
  auto render = [](const std::vector<int>& ids) {
    TokenList t;
    for (int id : ids) t.push_back(std::to_string(id));
    return t;
  };
  for (const auto& p : pairs) {
    c.src.push_back(render(p.src));
    c.tgt.push_back(render(p.tgt));
  }
  return c;
}

// ---- corpus files ----------------------------------------------------------------

ParallelCorpus parse_tsv(std::istream& in) {
  ParallelCorpus c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("line " + std::to_string(line_no) + ": expected source<TAB>target");
    }
    c.src.push_back(tokenize(std::string_view(line).substr(0, tab), Lang::Source, line_no));
    c.tgt.push_back(tokenize(std::string_view(line).substr(tab + 1), Lang::Target, line_no));
  }
  return c;
}

ParallelCorpus load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  auto c = parse_tsv(in);
  if (c.size() == 0) throw DataError("corpus file " + path.string() + " has no pairs");
  return c;
}

std::vector<Example> encode_corpus(const ParallelCorpus& corpus, const Vocab& src_vocab,
                                   const Vocab& tgt_vocab) {
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    out.push_back({src_vocab.encode(corpus.src[i]), tgt_vocab.encode(corpus.tgt[i])});
  }
  return out;
}

// ---- datasets -------------------------------------------------------------------------

Dataset synth_dataset(const SynthSpec& spec) {
  auto pairs = synth_task(spec.kind, spec.vocab_size, spec.min_len, spec.max_len, spec.n_train,
                          spec.seed);
  const auto val = synth_task(spec.kind, spec.vocab_size, spec.min_len, spec.max_len,
                              spec.n_val, spec.seed + 1);
  const ParallelCorpus train_text = to_parallel_corpus(pairs);
  pairs.insert(pairs.end(), val.begin(), val.end());

  Dataset d;
  d.src_vocab = Vocab::build(train_text.src, 1);
  d.tgt_vocab = Vocab::build(train_text.tgt, 1);
  d.examples = encode_corpus(to_parallel_corpus(pairs), d.src_vocab, d.tgt_vocab);
  for (std::size_t i = 0; i < spec.n_train; ++i) d.train.push_back(i);
  for (std::size_t i = 0; i < spec.n_val; ++i) d.validation.push_back(spec.n_train + i);
  return d;
}

Dataset corpus_dataset(const ParallelCorpus& corpus, double val_fraction, std::uint64_t seed,
                       std::size_t min_freq) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val =
      static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(corpus.size())));

  Dataset d;
  d.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  d.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(d.validation.begin(), d.validation.end());
  std::sort(d.train.begin(), d.train.end());
  if (d.train.empty()) throw DataError("corpus has no training pairs");

  std::vector<TokenList> src, tgt;
  for (std::size_t i : d.train) {
    src.push_back(corpus.src[i]);
    tgt.push_back(corpus.tgt[i]);
  }
  d.src_vocab = Vocab::build(src, min_freq);
  d.tgt_vocab = Vocab::build(tgt, min_freq);
  d.examples = encode_corpus(corpus, d.src_vocab, d.tgt_vocab);
  return d;
}

}  // namespace altpe
